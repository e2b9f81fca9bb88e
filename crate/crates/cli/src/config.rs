//! Run configuration: a single JSON document, SI units throughout.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use lfd_core::embed::EmbeddingConfig;
use lfd_core::learner::FeedbackMode;
use lfd_core::plant::{self, ExpertController, Plant, PresetParams};
use lfd_core::systems;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One affine basis from the first `n + 1` demonstrations.
    Single,
    /// Delaunay triangulation of the initial states, one basis per simplex.
    Multi,
    /// Integrator-chain embedding with auxiliary states (plants without full relative degree).
    Embed,
}

/// Diagonal LQR weights of the synthetic expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    pub q: Vec<f64>,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub initial_states: Vec<Vec<f64>>,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default = "default_track_duration")]
    pub duration: f64,
    /// Figure-eight axis followed by a single-channel plant.
    #[serde(default)]
    pub axis: Option<usize>,
}

fn default_frequency() -> f64 {
    0.1
}

fn default_track_duration() -> f64 {
    40.0
}

fn default_dt() -> f64 {
    lfd_core::sim::DEFAULT_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    #[serde(default)]
    pub params: PresetParams,
    #[serde(default)]
    pub expert: Option<ExpertConfig>,
    /// Demonstration starts; the trivial solution is always added as demonstration 0.
    #[serde(default)]
    pub initial_conditions: Option<Vec<Vec<f64>>>,
    /// Demonstration length.
    #[serde(rename = "T", default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Expected number of demonstrations including the trivial one.
    #[serde(rename = "M", default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub w: Option<Vec<f64>>,
    #[serde(default)]
    pub xi0: Option<Vec<f64>>,
    /// Controller period; defaults to the demonstration length.
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default)]
    pub t_tilde_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub feedback: FeedbackMode,
    /// Zero-order-hold period of the simulated controller.
    #[serde(default)]
    pub hold: Option<f64>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub track: Option<TrackConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Configuration with every default filled in and every invariant checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub plant: Arc<dyn Plant>,
    pub embedding: Option<EmbeddingConfig>,
    pub xi0: DVector<f64>,
    pub expert: ExpertController,
    pub initial_conditions: Vec<DVector<f64>>,
    pub horizon: f64,
    pub dt: f64,
    pub period: f64,
    pub t_tilde_grid: Vec<f64>,
    pub mode: Mode,
    pub feedback: FeedbackMode,
    pub hold: Option<f64>,
    pub simulate: SimulateConfig,
    pub track: Option<TrackConfig>,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, out: Option<&Path>) -> Result<Resolved, CliError> {
        let plant = plant::preset(&self.preset, &self.params)?;
        let n = plant.state_dim();
        let is_ball_beam = self.preset == "ball_beam";
        let is_quad = self.preset.starts_with("flat_quad");

        let mode = self
            .mode
            .unwrap_or(if is_ball_beam { Mode::Embed } else { Mode::Single });
        let embedding = match mode {
            Mode::Embed => {
                let w = self.w.clone().unwrap_or_else(|| systems::BALL_BEAM_W.to_vec());
                Some(EmbeddingConfig::new(plant.clone(), w)?)
            }
            _ if plant.normal_form().is_none() => {
                return Err(CliError::Validation(format!(
                    "`{}` is not feedback linearizable; use mode \"embed\"",
                    self.preset
                )))
            }
            _ => None,
        };
        let xi0 = match &self.xi0 {
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(n.saturating_sub(1)),
        };

        let expert = match &self.expert {
            Some(e) => {
                if e.q.len() != n {
                    return Err(CliError::Validation(format!(
                        "expert Q needs {n} diagonal entries, got {}",
                        e.q.len()
                    )));
                }
                let q = DMatrix::from_diagonal(&DVector::from_column_slice(&e.q));
                if plant.normal_form().is_some() {
                    plant::expert_lqr(plant.as_ref(), &q, e.r)?
                } else {
                    plant::expert_lqr_linearized(plant.as_ref(), &q, e.r)?
                }
            }
            None if is_ball_beam => systems::ball_beam_expert(plant.as_ref())?,
            None if is_quad => systems::quad_expert(plant.as_ref())?,
            None => plant::expert_lqr(plant.as_ref(), &DMatrix::identity(n, n), 1.0)?,
        };

        let initial_conditions: Vec<DVector<f64>> = match &self.initial_conditions {
            Some(rows) => rows.iter().map(|r| DVector::from_column_slice(r)).collect(),
            None if is_ball_beam => systems::ball_beam_initial_states(),
            None => systems::unit_initial_states(n),
        };
        if let Some(x) = initial_conditions.iter().find(|x| x.len() != n) {
            return Err(CliError::Validation(format!(
                "initial condition of length {} for a plant on R^{n}",
                x.len()
            )));
        }
        let count = initial_conditions.len() + 1;
        if let Some(m) = self.count {
            if m != count {
                return Err(CliError::Validation(format!(
                    "M = {m} but {count} demonstrations (including the trivial one) are configured"
                )));
            }
        }
        if count < n + 1 {
            return Err(CliError::Validation(format!("M = {count} < n + 1 = {}", n + 1)));
        }

        let horizon = self.horizon.unwrap_or(if is_ball_beam {
            systems::BALL_BEAM_HORIZON
        } else {
            2.0
        });
        let dt = self.dt;
        if !(horizon > 0.0) || !(dt > 0.0) {
            return Err(CliError::Validation("T and dt must be positive".into()));
        }
        let steps = horizon / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(CliError::Validation(format!(
                "T = {horizon} is not a multiple of dt = {dt}"
            )));
        }
        let period = self.period.unwrap_or(horizon);
        let t_tilde_grid = self
            .t_tilde_grid
            .clone()
            .unwrap_or_else(|| (1..=8).map(|k| horizon * k as f64 / 8.0).collect());

        let simulate = match &self.simulate {
            Some(s) => s.clone(),
            None if is_ball_beam => SimulateConfig {
                initial_states: vec![systems::ball_beam_start().iter().copied().collect()],
                duration: 40.0,
            },
            None => SimulateConfig {
                initial_states: vec![vec![0.5; n]],
                duration: 10.0 * period,
            },
        };
        if simulate.initial_states.iter().any(|x| x.len() != n) {
            return Err(CliError::Validation(format!(
                "simulation initial states must lie in R^{n}"
            )));
        }
        let track = match &self.track {
            Some(t) => Some(t.clone()),
            None if is_quad => Some(TrackConfig {
                frequency: default_frequency(),
                initial_state: None,
                duration: default_track_duration(),
                axis: None,
            }),
            None => None,
        };

        let output_dir = out
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));

        Ok(Resolved {
            plant,
            embedding,
            xi0,
            expert,
            initial_conditions,
            horizon,
            dt,
            period,
            t_tilde_grid,
            mode,
            feedback: self.feedback,
            hold: self.hold,
            simulate,
            track,
            output_dir,
        })
    }
}
