//! Benchmark presets: the flat quadrotor with figure-eight tracking and the ball and beam
//! through the embedding.

use std::f64::consts::{FRAC_PI_8, PI};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::demos::{self, RawDemoSet};
use crate::embed::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::learner::{Anchor, IntervalPolicy};
use crate::plant::{self, BallBeam, ExpertController, FlatQuadrotor, Plant};
use crate::sim::{self, SimOptions, Trajectory};

/// A reference `z_R(t)` in stacked Brunovsky layout (`z[level * m + channel]`) together with its
/// feedforward `v_R(t)`, the next derivative of the top level.
pub trait Reference: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>);
    fn description(&self) -> String;
}

/// `p(t) = a sin(omega t) + c` for one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineAxis {
    pub amplitude: f64,
    pub omega: f64,
    pub offset: f64,
}

impl SineAxis {
    /// Derivative of order `k` at `t`.
    pub fn derivative(&self, k: usize, t: f64) -> f64 {
        let (a, w) = (self.amplitude, self.omega);
        let phase = w * t;
        let scale = a * w.powi(k as i32);
        let value = match k % 4 {
            0 => phase.sin(),
            1 => phase.cos(),
            2 => -phase.sin(),
            _ => -phase.cos(),
        } * scale;
        if k == 0 {
            value + self.offset
        } else {
            value
        }
    }
}

/// Figure eight `p_R(t) = (sin(4 pi f t), sin(2 pi f t), 0.1 sin(2 pi f t) + 0.7)` tracked by
/// triple integrators on the selected axes.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureEight {
    pub frequency: f64,
    pub axes: Vec<SineAxis>,
}

pub fn figure_eight(f: f64) -> Result<FigureEight> {
    if !(f > 0.0) || !f.is_finite() {
        return Err(Error::InvalidArgument(format!("frequency {f} must be positive")));
    }
    let slow = 2.0 * PI * f;
    Ok(FigureEight {
        frequency: f,
        axes: vec![
            SineAxis {
                amplitude: 1.0,
                omega: 2.0 * slow,
                offset: 0.0,
            },
            SineAxis {
                amplitude: 1.0,
                omega: slow,
                offset: 0.0,
            },
            SineAxis {
                amplitude: 0.1,
                omega: slow,
                offset: 0.7,
            },
        ],
    })
}

impl FigureEight {
    /// Restricts the reference to one axis (0, 1 or 2).
    pub fn axis(&self, axis: usize) -> Result<Self> {
        let a = *self
            .axes
            .get(axis)
            .ok_or_else(|| Error::InvalidArgument(format!("no axis {axis}")))?;
        Ok(Self {
            frequency: self.frequency,
            axes: vec![a],
        })
    }

    /// Position of every axis.
    pub fn position(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.axes.len(), self.axes.iter().map(|a| a.derivative(0, t)))
    }
}

impl Reference for FigureEight {
    fn state_dim(&self) -> usize {
        3 * self.axes.len()
    }

    fn input_dim(&self) -> usize {
        self.axes.len()
    }

    fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let m = self.axes.len();
        let z = DVector::from_fn(3 * m, |i, _| self.axes[i % m].derivative(i / m, t));
        let v = DVector::from_fn(m, |i, _| self.axes[i].derivative(3, t));
        (z, v)
    }

    fn description(&self) -> String {
        format!("figure eight at {} Hz on {} axes", self.frequency, self.axes.len())
    }
}

/// Constant reference with zero feedforward.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoint {
    pub z: DVector<f64>,
    pub channels: usize,
}

impl Reference for Setpoint {
    fn state_dim(&self) -> usize {
        self.z.len()
    }

    fn input_dim(&self) -> usize {
        self.channels
    }

    fn eval(&self, _t: f64) -> (DVector<f64>, DVector<f64>) {
        (self.z.clone(), DVector::zeros(self.channels))
    }

    fn description(&self) -> String {
        "constant setpoint".into()
    }
}

fn check_reference(plant: &dyn Plant, policy: &dyn IntervalPolicy, reference: &dyn Reference) -> Result<()> {
    let n = policy.state_dim();
    let m = policy.input_dim();
    if reference.state_dim() != n || reference.input_dim() != m || plant.input_dim() != m {
        return Err(Error::InvalidDimension(format!(
            "reference on R^{} with {} inputs, controller on R^{n} with {m}",
            reference.state_dim(),
            reference.input_dim()
        )));
    }
    Ok(())
}

/// Tracking input `u = b(x)^{-1}(v_R(t) + kappa(t, z - z_R(t)) - a(x))`; `e_pt` is the tracking
/// error recorded at the current interval start.
pub fn track(
    policy: &dyn IntervalPolicy,
    reference: &dyn Reference,
    plant: &dyn Plant,
    t: f64,
    e_pt: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_reference(plant, policy, reference)?;
    let (z_r, v_r) = reference.eval(t);
    let z = plant::feedback_linearize(plant, x)?;
    let v = policy.control_at(t, e_pt, &(z - z_r))?;
    plant::linearizing_input(plant, x, &(v_r + v))
}

/// Closed-loop tracking run and its error series `z(t) - z_R(t)`.
#[derive(Debug, Clone)]
pub struct TrackingRun {
    pub trajectory: Trajectory,
    pub errors: Vec<DVector<f64>>,
}

impl TrackingRun {
    pub fn error_norms(&self) -> Vec<f64> {
        self.errors.iter().map(|e| e.norm()).collect()
    }

    /// Largest error norm at or after time `t`.
    pub fn max_error_after(&self, t: f64) -> f64 {
        self.trajectory
            .times
            .iter()
            .zip(&self.errors)
            .filter(|(s, _)| **s >= t - 1e-12)
            .map(|(_, e)| e.norm())
            .fold(0.0, f64::max)
    }
}

/// Simulates `track` with the interval anchored on the tracking error.
pub fn simulate_tracking(
    plant: &dyn Plant,
    policy: &dyn IntervalPolicy,
    reference: &dyn Reference,
    x0: &DVector<f64>,
    duration: f64,
    opts: &SimOptions,
) -> Result<TrackingRun> {
    check_reference(plant, policy, reference)?;
    let period = policy.period();
    let error = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(plant::feedback_linearize(plant, x)? - reference.eval(t).0)
    };
    error(0.0, x0)?;
    let trajectory = sim::simulate_periodic(
        |x, u| plant.rhs(x, u),
        |x| plant.in_domain(x),
        |p, x: &DVector<f64>| {
            let start = p as f64 * period;
            Ok((start, policy.anchor(&error(start, x)?)?))
        },
        |(start, a): &(f64, Anchor), tau, x: &DVector<f64>| {
            let t = start + tau;
            let v = policy.control(a, tau, &error(t, x)?)?;
            plant::linearizing_input(plant, x, &(reference.eval(t).1 + v))
        },
        x0,
        duration,
        period,
        opts,
    )?;
    let errors = trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .map(|(t, x)| error(*t, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrackingRun { trajectory, errors })
}

/// Weights of the ball-and-beam embedding, giving `A_xi` a triple eigenvalue at `-1`.
pub const BALL_BEAM_W: [f64; 3] = [1.0, 3.0, 3.0];

/// Ball-and-beam plant and its embedding with weights `w`.
pub fn ball_beam_preset(b_bar: f64, g_bar: f64, w: &[f64]) -> Result<(Arc<dyn Plant>, EmbeddingConfig)> {
    if !(b_bar > 0.0) || !(g_bar > 0.0) {
        return Err(Error::InvalidArgument(
            "ball-and-beam constants must be positive".into(),
        ));
    }
    let plant: Arc<dyn Plant> = Arc::new(BallBeam { b_bar, g_bar });
    let cfg = EmbeddingConfig::new(plant.clone(), w.to_vec())?;
    Ok((plant, cfg))
}

/// Demonstration starts `(1,0,0,0)`, `(0,1,0,0)`, `(0,0,pi/8,0)`, `(0,0,0,10)`.
pub fn ball_beam_initial_states() -> Vec<DVector<f64>> {
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, FRAC_PI_8, 0.0],
        [0.0, 0.0, 0.0, 10.0],
    ]
    .iter()
    .map(|x| DVector::from_column_slice(x))
    .collect()
}

/// Closed-loop start of the ball-and-beam experiment.
pub fn ball_beam_start() -> DVector<f64> {
    DVector::from_column_slice(&[6.0, 0.0, 0.345, 0.0])
}

pub const BALL_BEAM_HORIZON: f64 = 8.0;

/// LQR on the origin linearization with `Q = diag(0.1, 0.1, 1, 10)`, `R = 0.1`.
pub fn ball_beam_expert(plant: &dyn Plant) -> Result<ExpertController> {
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.1, 0.1, 1.0, 10.0]));
    plant::expert_lqr_linearized(plant, &q, 0.1)
}

/// Expert demonstrations of the ball and beam, trivial solution first.
pub fn ball_beam_demos(plant: &dyn Plant, horizon: f64, dt: f64) -> Result<RawDemoSet> {
    let expert = ball_beam_expert(plant)?;
    demos::record_expert(plant, &expert, &ball_beam_initial_states(), horizon, dt)
}

pub fn flat_quad() -> Arc<dyn Plant> {
    Arc::new(FlatQuadrotor)
}

/// The unit vectors of the state space.
pub fn unit_initial_states(n: usize) -> Vec<DVector<f64>> {
    (0..n).map(|i| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })).collect()
}

pub const QUAD_HORIZON: f64 = 2.0;

/// Per-axis LQR in flat coordinates with `Q = diag(q_p, q_v, q_a)` on position, velocity and
/// acceleration of every axis and `R = r I`.
pub fn quad_expert(plant: &dyn Plant) -> Result<ExpertController> {
    let m = plant.input_dim();
    let levels = [20.0, 10.0, 1.0];
    let q = DMatrix::from_fn(3 * m, 3 * m, |i, j| if i == j { levels[i / m] } else { 0.0 });
    plant::expert_lqr(plant, &q, 0.5)
}

pub fn quad_demos(plant: &dyn Plant, horizon: f64, dt: f64) -> Result<RawDemoSet> {
    let expert = quad_expert(plant)?;
    demos::record_expert(plant, &expert, &unit_initial_states(plant.state_dim()), horizon, dt)
}
