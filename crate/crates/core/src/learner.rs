//! Affine recombination of `n + 1` demonstrations: the `Z(t)`, `V(t)` matrices and the learned
//! controllers built on them.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::demos::{self, validate_affine_independence, DemonstrationSet};
use crate::error::{Error, Result};
use crate::geometry::{Triangulation, TriangulationFile};
use crate::linalg;
use crate::plant::{self, Plant};
use crate::sim::{self, SimOptions, Trajectory};

/// Factorizations with a larger 2-norm condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Grid-sampled difference matrices of one index set `I = (i_1, ..., i_{n+1})`.
///
/// Alongside `Z_I` and `V_I` the base demonstration `(z^{i_1}, v^{i_1})` is kept, so that
/// `v = v^{i_1}(tau) + V_I(tau) Z_I^{-1}(tau) (z - z^{i_1}(tau))`. For the trivial base this
/// is `V_I Z_I^{-1} z`.
#[derive(Debug, Clone)]
pub struct AffineBasis {
    pub indices: Vec<usize>,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub zs: Vec<DMatrix<f64>>,
    pub vs: Vec<DMatrix<f64>>,
    pub base_z: Vec<DVector<f64>>,
    pub base_v: Vec<DVector<f64>>,
    factors: Vec<LU<f64, Dyn, Dyn>>,
}

/// `Z(tau)`, `V(tau)` and the base sample at one time.
#[derive(Debug, Clone)]
pub struct BasisSample {
    pub z: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub base_z: DVector<f64>,
    pub base_v: DVector<f64>,
}

fn lerp_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    a * (1.0 - s) + b * s
}

fn lerp_vector(a: &DVector<f64>, b: &DVector<f64>, s: f64) -> DVector<f64> {
    a * (1.0 - s) + b * s
}

/// Builds `Z_I(t)`, `V_I(t)` on the demonstration grid and factorizes every `Z_I(t_k)`.
pub fn build_basis(set: &DemonstrationSet, idx: &[usize]) -> Result<AffineBasis> {
    let report = validate_affine_independence(set, idx)?;
    if !report.passed {
        return Err(Error::AffineDependence {
            t: report.argmin_time,
            cond: if report.min_sigma > 0.0 {
                report.max_sigma / report.min_sigma
            } else {
                f64::INFINITY
            },
        });
    }
    if report.max_condition > MAX_CONDITION {
        return Err(Error::AffineDependence {
            t: report.argmax_condition_time,
            cond: report.max_condition,
        });
    }
    let k_max = set.times().len();
    let mut zs = Vec::with_capacity(k_max);
    let mut vs = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let (z, v) = set.difference_matrices(idx, k);
        zs.push(z);
        vs.push(v);
    }
    let base = &set.demos[idx[0]];
    AffineBasis::from_parts(
        idx.to_vec(),
        set.times().to_vec(),
        zs,
        vs,
        base.z.clone(),
        base.v.clone(),
    )
}

impl AffineBasis {
    pub fn from_parts(
        indices: Vec<usize>,
        times: Vec<f64>,
        zs: Vec<DMatrix<f64>>,
        vs: Vec<DMatrix<f64>>,
        base_z: Vec<DVector<f64>>,
        base_v: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let len = times.len();
        if len < 2 || zs.len() != len || vs.len() != len || base_z.len() != len || base_v.len() != len
        {
            return Err(Error::Format("basis sample counts disagree".into()));
        }
        let n = zs[0].nrows();
        if indices.len() != n + 1 || zs.iter().any(|z| z.shape() != (n, n)) {
            return Err(Error::InvalidDimension("basis matrices must be n x n".into()));
        }
        let factors = zs.iter().map(|z| z.clone().lu()).collect();
        Ok(Self {
            indices,
            horizon: times[len - 1],
            times,
            zs,
            vs,
            base_z,
            base_v,
            factors,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.zs[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.vs[0].nrows()
    }

    /// Base demonstration index `i_1`.
    pub fn base(&self) -> usize {
        self.indices[0]
    }

    fn locate(&self, tau: f64) -> Result<(usize, f64)> {
        let slack = 1e-9 * self.horizon.max(1.0);
        if !(tau >= -slack && tau <= self.horizon + slack) {
            return Err(Error::OutOfRange {
                t: tau,
                horizon: self.horizon,
            });
        }
        demos::bracket(&self.times, tau.clamp(0.0, self.horizon))
    }

    /// Matrices at `tau`; linear interpolation of the entries between grid points.
    pub fn sample(&self, tau: f64) -> Result<BasisSample> {
        let (k, a) = self.locate(tau)?;
        if a == 0.0 {
            return Ok(BasisSample {
                z: self.zs[k].clone(),
                v: self.vs[k].clone(),
                base_z: self.base_z[k].clone(),
                base_v: self.base_v[k].clone(),
            });
        }
        Ok(BasisSample {
            z: lerp_matrix(&self.zs[k], &self.zs[k + 1], a),
            v: lerp_matrix(&self.vs[k], &self.vs[k + 1], a),
            base_z: lerp_vector(&self.base_z[k], &self.base_z[k + 1], a),
            base_v: lerp_vector(&self.base_v[k], &self.base_v[k + 1], a),
        })
    }

    fn solve_at(&self, tau: f64, rhs: &DVector<f64>) -> Result<(DVector<f64>, BasisSample)> {
        let (k, a) = self.locate(tau)?;
        let sample = self.sample(tau)?;
        let shifted = rhs - &sample.base_z;
        let x = if a == 0.0 {
            self.factors[k].solve(&shifted)
        } else {
            sample.z.clone().lu().solve(&shifted)
        }
        .ok_or(Error::AffineDependence {
            t: tau,
            cond: f64::INFINITY,
        })?;
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::AffineDependence {
                t: tau,
                cond: f64::INFINITY,
            });
        }
        Ok((x, sample))
    }

    /// Coefficients `zeta` with `z = z^{i_1}(tau) + Z(tau) zeta`.
    pub fn zeta(&self, tau: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.solve_at(tau, z)?.0)
    }

    /// `v = v^{i_1}(tau) + V(tau) Z^{-1}(tau) (z - z^{i_1}(tau))`.
    pub fn control(&self, tau: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        let (zeta, s) = self.solve_at(tau, z)?;
        Ok(s.base_v + s.v * zeta)
    }

    /// `v = v^{i_1}(tau) + V(tau) zeta` for coefficients fixed at the interval start.
    pub fn replay(&self, tau: f64, zeta: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.sample(tau)?;
        Ok(s.base_v + s.v * zeta)
    }

    /// Predicted state `z^{i_1}(tau) + Z(tau) zeta` under the replayed input.
    pub fn reconstruct(&self, zeta: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
        let s = self.sample(tau)?;
        Ok(s.base_z + s.z * zeta)
    }
}

/// Whether coefficients are recomputed from the current state or frozen at `t = pT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    OpenLoop,
    #[default]
    ClosedLoop,
}

/// Per-interval state fixed at `t = pT`.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    /// Basis (simplex) selected for the interval.
    pub basis: usize,
    pub z_start: DVector<f64>,
    /// Coefficients of `z(pT)` in that basis at `tau = 0`.
    pub zeta: DVector<f64>,
}

/// A controller that re-anchors every `T` seconds and is evaluated in local time `tau`.
pub trait IntervalPolicy: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn period(&self) -> f64;
    fn anchor(&self, z_pt: &DVector<f64>) -> Result<Anchor>;
    fn control(&self, anchor: &Anchor, tau: f64, z: &DVector<f64>) -> Result<DVector<f64>>;

    /// Global-time evaluation with `p = floor(t / T)`; at `t = (p + 1) T` the new interval
    /// applies. `z_pt` is the state recorded at the current interval start.
    fn control_at(&self, t: f64, z_pt: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        if t < 0.0 {
            return Err(Error::OutOfRange {
                t,
                horizon: f64::INFINITY,
            });
        }
        let period = self.period();
        let p = (t / period).floor();
        let tau = (t - p * period).max(0.0);
        let a = self.anchor(z_pt)?;
        self.control(&a, tau, z)
    }
}

/// The single-basis (`M = n + 1`) learned controller.
#[derive(Debug, Clone)]
pub struct LearnedController {
    pub basis: AffineBasis,
    pub feedback: FeedbackMode,
    pub period: f64,
}

impl LearnedController {
    /// Uses the first `n + 1` demonstrations with demonstration 0 as base and `T` equal to the
    /// demonstration length.
    pub fn from_set(set: &DemonstrationSet, feedback: FeedbackMode) -> Result<Self> {
        let idx: Vec<usize> = (0..=set.n).collect();
        Self::new(build_basis(set, &idx)?, feedback, set.horizon)
    }

    pub fn new(basis: AffineBasis, feedback: FeedbackMode, period: f64) -> Result<Self> {
        if !(period > 0.0) || period > basis.horizon * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "period {period} must lie in (0, {}]",
                basis.horizon
            )));
        }
        Ok(Self {
            basis,
            feedback,
            period,
        })
    }

    pub fn with_feedback(&self, feedback: FeedbackMode) -> Self {
        Self {
            feedback,
            ..self.clone()
        }
    }

    /// `v = V(t - pT) Z^{-1}(0) z(pT)` (frozen coefficients).
    pub fn control_open_loop(&self, t: f64, z_pt: &DVector<f64>) -> Result<DVector<f64>> {
        self.with_feedback(FeedbackMode::OpenLoop).control_at(t, z_pt, z_pt)
    }

    /// `v = V(t - pT) Z^{-1}(t - pT) z(t)`.
    pub fn control_closed_loop(&self, t: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.with_feedback(FeedbackMode::ClosedLoop).control_at(t, z, z)
    }
}

impl IntervalPolicy for LearnedController {
    fn state_dim(&self) -> usize {
        self.basis.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.basis.input_dim()
    }

    fn period(&self) -> f64 {
        self.period
    }

    fn anchor(&self, z_pt: &DVector<f64>) -> Result<Anchor> {
        Ok(Anchor {
            basis: 0,
            z_start: z_pt.clone(),
            zeta: self.basis.zeta(0.0, z_pt)?,
        })
    }

    fn control(&self, anchor: &Anchor, tau: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        match self.feedback {
            FeedbackMode::ClosedLoop => self.basis.control(tau, z),
            FeedbackMode::OpenLoop => self.basis.replay(tau, &anchor.zeta),
        }
    }
}

/// Simulates a feedback-linearizable plant under a learned policy: `z = Phi(x)`,
/// `v` from the policy, `u = b^{-1}(v - a)`.
pub fn simulate_learned(
    plant: &dyn Plant,
    policy: &dyn IntervalPolicy,
    x0: &DVector<f64>,
    duration: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    plant::feedback_linearize(plant, x0)?;
    sim::simulate_periodic(
        |x, u| plant.rhs(x, u),
        |x| plant.in_domain(x),
        |_, x: &DVector<f64>| policy.anchor(&plant::feedback_linearize(plant, x)?),
        |a: &Anchor, tau, x: &DVector<f64>| {
            let z = plant::feedback_linearize(plant, x)?;
            let v = policy.control(a, tau, &z)?;
            plant::linearizing_input(plant, x, &v)
        },
        x0,
        duration,
        policy.period(),
        opts,
    )
}

/// Simulates the Brunovsky chain `z' = A z + B v` directly under a learned policy.
pub fn simulate_chain(
    policy: &dyn IntervalPolicy,
    z0: &DVector<f64>,
    duration: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let n = policy.state_dim();
    let m = policy.input_dim();
    if n % m != 0 || z0.len() != n {
        return Err(Error::InvalidDimension(format!(
            "policy on R^{n} with {m} inputs, initial state in R^{}",
            z0.len()
        )));
    }
    let pair = plant::BrunovskyPair::stacked(n / m, m)?;
    sim::simulate_periodic(
        |z, v| pair.rhs(z, v),
        |_| true,
        |_, z: &DVector<f64>| policy.anchor(z),
        |a: &Anchor, tau, z: &DVector<f64>| policy.control(a, tau, z),
        z0,
        duration,
        policy.period(),
        opts,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisRecord {
    #[serde(rename = "I")]
    pub indices: Vec<usize>,
    #[serde(rename = "Zs")]
    pub zs: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Vs")]
    pub vs: Vec<Vec<Vec<f64>>>,
    pub base_z: Vec<Vec<f64>>,
    pub base_v: Vec<Vec<f64>>,
}

/// Serialized controller; numbers are written in shortest round-trip form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ControllerFile {
    Single {
        feedback: FeedbackMode,
        #[serde(rename = "T")]
        period: f64,
        grid: Vec<f64>,
        #[serde(flatten)]
        basis: BasisRecord,
    },
    Multi {
        feedback: FeedbackMode,
        #[serde(rename = "T")]
        period: f64,
        grid: Vec<f64>,
        triangulation: TriangulationFile,
        bases: Vec<BasisRecord>,
    },
}

impl AffineBasis {
    pub fn to_record(&self) -> BasisRecord {
        BasisRecord {
            indices: self.indices.clone(),
            zs: self.zs.iter().map(linalg::to_rows).collect(),
            vs: self.vs.iter().map(linalg::to_rows).collect(),
            base_z: demos::vectors_to_rows(&self.base_z),
            base_v: demos::vectors_to_rows(&self.base_v),
        }
    }

    pub fn from_record(rec: &BasisRecord, grid: &[f64]) -> Result<Self> {
        Self::from_parts(
            rec.indices.clone(),
            grid.to_vec(),
            rec.zs.iter().map(|m| linalg::from_rows(m)).collect::<Result<_>>()?,
            rec.vs.iter().map(|m| linalg::from_rows(m)).collect::<Result<_>>()?,
            demos::rows_to_vectors(&rec.base_z),
            demos::rows_to_vectors(&rec.base_v),
        )
    }
}

impl LearnedController {
    pub fn to_file(&self) -> ControllerFile {
        ControllerFile::Single {
            feedback: self.feedback,
            period: self.period,
            grid: self.basis.times.clone(),
            basis: self.basis.to_record(),
        }
    }
}

/// A controller loaded from disk.
#[derive(Debug, Clone)]
pub enum AnyController {
    Single(LearnedController),
    Multi(crate::multi::MultiController),
}

impl AnyController {
    pub fn policy(&self) -> &dyn IntervalPolicy {
        match self {
            AnyController::Single(c) => c,
            AnyController::Multi(c) => c,
        }
    }

    pub fn to_file(&self) -> ControllerFile {
        match self {
            AnyController::Single(c) => c.to_file(),
            AnyController::Multi(c) => c.to_file(),
        }
    }

    pub fn from_file(file: &ControllerFile) -> Result<Self> {
        match file {
            ControllerFile::Single {
                feedback,
                period,
                grid,
                basis,
            } => Ok(AnyController::Single(LearnedController::new(
                AffineBasis::from_record(basis, grid)?,
                *feedback,
                *period,
            )?)),
            ControllerFile::Multi {
                feedback,
                period,
                grid,
                triangulation,
                bases,
            } => {
                let tri = Triangulation::from_file(triangulation)?;
                let bases = bases
                    .iter()
                    .map(|b| AffineBasis::from_record(b, grid))
                    .collect::<Result<Vec<_>>>()?;
                Ok(AnyController::Multi(crate::multi::MultiController::from_parts(
                    tri, bases, *feedback, *period,
                )?))
            }
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_file(&serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
