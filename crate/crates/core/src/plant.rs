//! Plant models, their feedback-linearizing coordinates, and synthetic expert controllers.
//!
//! Every preset carries hand-written closed forms for the output `h` and the Lie derivatives
//! `L_f^k h`, `L_g L_f^k h` it needs. The flat quadrotor is the one multi-input preset; it is
//! already in normal form and exposes no scalar output.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Below this magnitude the decoupling term is treated as singular.
pub const DECOUPLING_TOLERANCE: f64 = 1e-9;

/// Integrator-chain pair `(A, B)`: `A` shifts, `B` injects into the last link.
#[derive(Debug, Clone, PartialEq)]
pub struct BrunovskyPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl BrunovskyPair {
    /// `channels` identical chains of length `order`, stacked so that the state reads
    /// `(y, y', ..., y^(order-1))` with each entry a `channels`-vector.
    pub fn stacked(order: usize, channels: usize) -> Result<Self> {
        if order == 0 || channels == 0 {
            return Err(Error::InvalidDimension(format!(
                "chain order {order} with {channels} channels"
            )));
        }
        let n = order * channels;
        let a = DMatrix::from_fn(n, n, |i, j| if j == i + channels { 1.0 } else { 0.0 });
        let b = DMatrix::from_fn(n, channels, |i, j| {
            if i == (order - 1) * channels + j {
                1.0
            } else {
                0.0
            }
        });
        Ok(Self { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `z' = A z + B v`.
    pub fn rhs(&self, z: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.a * z + &self.b * v
    }
}

/// Single-input Brunovsky pair of dimension `n`.
pub fn brunovsky_pair(n: usize) -> Result<BrunovskyPair> {
    BrunovskyPair::stacked(n, 1)
}

/// Scalar output `h` with closed-form Lie derivatives.
pub trait LieOutput {
    /// `L_f^k h(x)`, valid for `k = 0..=n`.
    fn lie_f(&self, k: usize, x: &DVector<f64>) -> f64;
    /// `L_g L_f^k h(x)`, valid for `k = 0..n`.
    fn lie_g_lie_f(&self, k: usize, x: &DVector<f64>) -> f64;

    fn output(&self, x: &DVector<f64>) -> f64 {
        self.lie_f(0, x)
    }
}

/// Coordinates in which the plant is an integrator chain under `u = b^{-1}(v - a)`.
pub trait NormalForm {
    fn brunovsky(&self) -> BrunovskyPair;
    /// `z = Phi(x)`.
    fn to_normal(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `x = Phi^{-1}(z)`, when available in closed form.
    fn from_normal(&self, _z: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
    /// `a(x) = L_f^n h(x)` (one entry per input channel).
    fn drift_term(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `b(x) = L_g L_f^{n-1} h(x)` (square, one row per channel).
    fn decoupling(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

pub trait Plant: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Input vector fields as columns, `n x m`.
    fn input_field(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn in_domain(&self, _x: &DVector<f64>) -> bool {
        true
    }
    fn lie(&self) -> Option<&dyn LieOutput> {
        None
    }
    /// Present only for plants that are feedback linearizable on their whole domain.
    fn normal_form(&self) -> Option<&dyn NormalForm> {
        None
    }

    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.input_field(x) * u
    }

    /// Central-difference linearization `(df/dx, g)` at `x` with zero input.
    fn linearize(&self, x: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.state_dim();
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            let eps = 1e-6 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += eps;
            xm[j] -= eps;
            let col = (self.drift(&xp) - self.drift(&xm)) / (2.0 * eps);
            a.set_column(j, &col);
        }
        (a, self.input_field(x))
    }
}

fn check_domain(plant: &dyn Plant, x: &DVector<f64>) -> Result<()> {
    if x.len() != plant.state_dim() {
        return Err(Error::InvalidDimension(format!(
            "state has length {}, plant `{}` expects {}",
            x.len(),
            plant.name(),
            plant.state_dim()
        )));
    }
    if plant.in_domain(x) {
        Ok(())
    } else {
        Err(Error::Domain {
            plant: plant.name(),
            state: x.iter().copied().collect(),
        })
    }
}

fn normal_form_of(plant: &dyn Plant) -> Result<&dyn NormalForm> {
    plant
        .normal_form()
        .ok_or_else(|| Error::NotFeedbackLinearizable(plant.name()))
}

/// `z_k = L_f^{k-1} h(x)` for `k = 1..n`.
pub fn feedback_linearize(plant: &dyn Plant, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_domain(plant, x)?;
    Ok(normal_form_of(plant)?.to_normal(x))
}

/// `v = L_f^n h(x) + L_g L_f^{n-1} h(x) u`.
pub fn normal_input(plant: &dyn Plant, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_domain(plant, x)?;
    let nf = normal_form_of(plant)?;
    Ok(nf.drift_term(x) + nf.decoupling(x) * u)
}

/// `u = b(x)^{-1} (v - a(x))`.
pub fn linearizing_input(
    plant: &dyn Plant,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_domain(plant, x)?;
    let nf = normal_form_of(plant)?;
    let b = nf.decoupling(x);
    let smallest = if b.nrows() == 1 {
        b[(0, 0)].abs()
    } else {
        linalg::singular_values(&b).last().copied().unwrap_or(0.0)
    };
    if smallest < DECOUPLING_TOLERANCE {
        return Err(Error::SingularDecoupling { value: smallest });
    }
    let rhs = v - nf.drift_term(x);
    if b.nrows() == 1 {
        Ok(rhs / b[(0, 0)])
    } else {
        linalg::solve(&b, &rhs)
    }
}

/// Integrator chain `x_k' = x_{k+1}`, `x_n' = gain * u` with output `x_1`.
#[derive(Debug, Clone)]
pub struct ChainPlant {
    n: usize,
    gain: f64,
    label: Option<String>,
}

impl ChainPlant {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_gain(n, 1.0)
    }

    pub fn with_gain(n: usize, gain: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("chain of length 0".into()));
        }
        if gain == 0.0 || !gain.is_finite() {
            return Err(Error::InvalidArgument(format!("input gain {gain}")));
        }
        Ok(Self {
            n,
            gain,
            label: None,
        })
    }

    /// The same chain under another preset name.
    pub fn labeled(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }
}

impl Plant for ChainPlant {
    fn name(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("chain{}", self.n))
    }

    fn state_dim(&self) -> usize {
        self.n
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| if i + 1 < self.n { x[i + 1] } else { 0.0 })
    }

    fn input_field(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, 1, |i, _| if i + 1 == self.n { self.gain } else { 0.0 })
    }

    fn lie(&self) -> Option<&dyn LieOutput> {
        Some(self)
    }

    fn normal_form(&self) -> Option<&dyn NormalForm> {
        Some(self)
    }
}

impl LieOutput for ChainPlant {
    fn lie_f(&self, k: usize, x: &DVector<f64>) -> f64 {
        if k < self.n {
            x[k]
        } else {
            0.0
        }
    }

    fn lie_g_lie_f(&self, k: usize, _x: &DVector<f64>) -> f64 {
        if k + 1 == self.n {
            self.gain
        } else {
            0.0
        }
    }
}

impl NormalForm for ChainPlant {
    fn brunovsky(&self) -> BrunovskyPair {
        brunovsky_pair(self.n).expect("n >= 1 checked at construction")
    }

    fn to_normal(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |k, _| self.lie_f(k, x))
    }

    fn from_normal(&self, z: &DVector<f64>) -> Option<DVector<f64>> {
        Some(z.clone())
    }

    fn drift_term(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.lie_f(self.n, x))
    }

    fn decoupling(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.lie_g_lie_f(self.n - 1, x))
    }
}

/// Ball on a beam, `x = (r, r', phi, omega)`, with output `h(x) = r`:
///
/// ```text
/// r''    = b (r omega^2 - g sin phi)
/// phi'   = omega
/// omega' = u
/// ```
///
/// Not feedback linearizable; handled through the embedding module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallBeam {
    pub b_bar: f64,
    pub g_bar: f64,
}

impl Default for BallBeam {
    fn default() -> Self {
        Self {
            b_bar: 0.7143,
            g_bar: 9.81,
        }
    }
}

impl Plant for BallBeam {
    fn name(&self) -> String {
        "ball_beam".into()
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let (b, g) = (self.b_bar, self.g_bar);
        DVector::from_vec(vec![
            x[1],
            b * (x[0] * x[3] * x[3] - g * x[2].sin()),
            x[3],
            0.0,
        ])
    }

    fn input_field(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 0.0, 1.0])
    }

    fn in_domain(&self, x: &DVector<f64>) -> bool {
        x.iter().all(|v| v.is_finite()) && x[2].abs() < FRAC_PI_2
    }

    fn lie(&self) -> Option<&dyn LieOutput> {
        Some(self)
    }
}

impl LieOutput for BallBeam {
    fn lie_f(&self, k: usize, x: &DVector<f64>) -> f64 {
        let (b, g) = (self.b_bar, self.g_bar);
        let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
        match k {
            0 => x1,
            1 => x2,
            2 => b * x1 * x4 * x4 - b * g * x3.sin(),
            3 => b * x2 * x4 * x4 - b * g * x4 * x3.cos(),
            4 => b * b * x4 * x4 * (x1 * x4 * x4 - g * x3.sin()) + b * g * x4 * x4 * x3.sin(),
            _ => panic!("ball-and-beam Lie derivatives are provided up to order 4"),
        }
    }

    fn lie_g_lie_f(&self, k: usize, x: &DVector<f64>) -> f64 {
        let (b, g) = (self.b_bar, self.g_bar);
        let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
        match k {
            0 | 1 => 0.0,
            2 => 2.0 * b * x1 * x4,
            3 => 2.0 * b * x2 * x4 - b * g * x3.cos(),
            _ => panic!("ball-and-beam L_g L_f^k h is provided for k <= 3"),
        }
    }
}

/// Quadrotor position dynamics in flat coordinates: three decoupled triple integrators with
/// state `(p, p', p'')` in R^9 and jerk input in R^3. The thrust/attitude back-map is taken as
/// the identity.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatQuadrotor;

impl FlatQuadrotor {
    fn pair() -> BrunovskyPair {
        BrunovskyPair::stacked(3, 3).expect("fixed dimensions")
    }
}

impl Plant for FlatQuadrotor {
    fn name(&self) -> String {
        "flat_quad_3d".into()
    }

    fn state_dim(&self) -> usize {
        9
    }

    fn input_dim(&self) -> usize {
        3
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        Self::pair().a * x
    }

    fn input_field(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        Self::pair().b
    }

    fn normal_form(&self) -> Option<&dyn NormalForm> {
        Some(self)
    }
}

impl NormalForm for FlatQuadrotor {
    fn brunovsky(&self) -> BrunovskyPair {
        Self::pair()
    }

    fn to_normal(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn from_normal(&self, z: &DVector<f64>) -> Option<DVector<f64>> {
        Some(z.clone())
    }

    fn drift_term(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(3)
    }

    fn decoupling(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(3, 3)
    }
}

/// Physical parameters a preset may take from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetParams {
    pub b_bar: f64,
    pub g_bar: f64,
    /// Input gain of the `chain{n}` presets.
    pub input_gain: f64,
}

impl Default for PresetParams {
    fn default() -> Self {
        let bb = BallBeam::default();
        Self {
            b_bar: bb.b_bar,
            g_bar: bb.g_bar,
            input_gain: 1.0,
        }
    }
}

/// Looks up `"chain{n}"`, `"ball_beam"`, `"flat_quad_axis"` or `"flat_quad_3d"`.
pub fn preset(name: &str, params: &PresetParams) -> Result<Arc<dyn Plant>> {
    match name {
        "ball_beam" => {
            if params.b_bar <= 0.0 || params.g_bar <= 0.0 {
                return Err(Error::InvalidArgument(
                    "ball-and-beam constants must be positive".into(),
                ));
            }
            Ok(Arc::new(BallBeam {
                b_bar: params.b_bar,
                g_bar: params.g_bar,
            }))
        }
        "flat_quad_axis" => Ok(Arc::new(ChainPlant::new(3)?.labeled("flat_quad_axis"))),
        "flat_quad_3d" => Ok(Arc::new(FlatQuadrotor)),
        other => {
            let n = other
                .strip_prefix("chain")
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown preset `{other}`")))?;
            Ok(Arc::new(ChainPlant::with_gain(n, params.input_gain)?))
        }
    }
}

/// Coordinates an expert's feedback gain acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertCoordinates {
    /// `v = -K z`, mapped to `u` through the linearizing feedback.
    Normal,
    /// `u = -K x` directly.
    State,
}

/// Smooth stabilizing expert built from a linear gain.
#[derive(Debug, Clone)]
pub struct ExpertController {
    pub gain: DMatrix<f64>,
    pub coordinates: ExpertCoordinates,
    pub description: String,
}

impl ExpertController {
    /// The plant input `u = k(x)`.
    pub fn input(&self, plant: &dyn Plant, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self.coordinates {
            ExpertCoordinates::State => {
                check_domain(plant, x)?;
                Ok(-(&self.gain * x))
            }
            ExpertCoordinates::Normal => {
                let z = feedback_linearize(plant, x)?;
                linearizing_input(plant, x, &self.kappa(&z))
            }
        }
    }

    /// The expert in normal coordinates, `kappa(z) = -K z`.
    pub fn kappa(&self, z: &DVector<f64>) -> DVector<f64> {
        -(&self.gain * z)
    }
}

/// Infinite-horizon LQR gain `K = R^{-1} B^T P` for `(A, B, Q, R)`.
///
/// The stabilizing Riccati solution comes from the matrix sign function of the Hamiltonian,
/// whose stable invariant subspace is spanned by `[I; P]`.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::InvalidDimension("inconsistent LQR problem".into()));
    }
    if q.clone().cholesky().is_none() {
        return Err(Error::InvalidArgument("Q must be symmetric positive definite".into()));
    }
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("R must be symmetric positive definite".into()))?
        .inverse();
    let s = b * &r_inv * b.transpose();

    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut w = h;
    let mut converged = false;
    for _ in 0..100 {
        let inv = w
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("Hamiltonian has imaginary-axis eigenvalues".into()))?;
        let det = w.clone().lu().determinant().abs();
        let c = if det > 0.0 && det.is_finite() {
            det.powf(1.0 / (2 * n) as f64)
        } else {
            1.0
        };
        let next = (&w / c + &inv * c) * 0.5;
        let change = (&next - &w).norm() / next.norm();
        w = next;
        if change < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("Riccati sign iteration did not converge".into()));
    }

    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n))
        .copy_from(&(-w.view((n, 0), (n, n))));
    let p = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Numerical(e.into()))?;
    let p = (&p + p.transpose()) * 0.5;

    let residual = a.transpose() * &p + &p * a - &p * &s * &p + q;
    if residual.norm() > 1e-6 * (1.0 + q.norm() + p.norm()) {
        return Err(Error::Numerical(format!(
            "Riccati residual {:e} too large",
            residual.norm()
        )));
    }
    let k = &r_inv * b.transpose() * &p;
    let closed = a - b * &k;
    if linalg::eigenvalues(&closed)?.iter().any(|l| l.re >= 0.0) {
        return Err(Error::Numerical("LQR closed loop is not stable".into()));
    }
    Ok(k)
}

/// LQR expert in normal coordinates for a feedback-linearizable plant; `R = r I`.
pub fn expert_lqr(plant: &dyn Plant, q: &DMatrix<f64>, r: f64) -> Result<ExpertController> {
    let nf = normal_form_of(plant)?;
    let pair = nf.brunovsky();
    let r_mat = DMatrix::identity(pair.input_dim(), pair.input_dim()) * r;
    if r <= 0.0 {
        return Err(Error::InvalidArgument(format!("R = {r} must be positive")));
    }
    let gain = lqr_gain(&pair.a, &pair.b, q, &r_mat)?;
    Ok(ExpertController {
        gain,
        coordinates: ExpertCoordinates::Normal,
        description: format!("LQR in normal coordinates of `{}`", plant.name()),
    })
}

/// LQR expert on the linearization at the origin, acting on the raw state.
pub fn expert_lqr_linearized(
    plant: &dyn Plant,
    q: &DMatrix<f64>,
    r: f64,
) -> Result<ExpertController> {
    if r <= 0.0 {
        return Err(Error::InvalidArgument(format!("R = {r} must be positive")));
    }
    let (a, b) = plant.linearize(&DVector::zeros(plant.state_dim()));
    let r_mat = DMatrix::identity(plant.input_dim(), plant.input_dim()) * r;
    let gain = lqr_gain(&a, &b, q, &r_mat)?;
    Ok(ExpertController {
        gain,
        coordinates: ExpertCoordinates::State,
        description: format!("LQR on the origin linearization of `{}`", plant.name()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn brunovsky_pairs() {
        let p = brunovsky_pair(2).unwrap();
        assert_eq!(p.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(p.b, DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));

        let p = brunovsky_pair(1).unwrap();
        assert_eq!(p.a, DMatrix::from_element(1, 1, 0.0));
        assert_eq!(p.b, DMatrix::from_element(1, 1, 1.0));

        let p = brunovsky_pair(3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if (i, j) == (0, 1) || (i, j) == (1, 2) { 1.0 } else { 0.0 };
                assert_eq!(p.a[(i, j)], expected);
            }
        }
        assert!(matches!(brunovsky_pair(0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn stacked_pair_matches_flat_coordinates() {
        let p = BrunovskyPair::stacked(3, 3).unwrap();
        // p' = p_dot for every axis, p_dot' = p_ddot, p_ddot' = v.
        assert_eq!(p.a[(0, 3)], 1.0);
        assert_eq!(p.a[(4, 7)], 1.0);
        assert_eq!(p.b[(6, 0)], 1.0);
        assert_eq!(p.b[(8, 2)], 1.0);
        assert_eq!(p.a.sum(), 6.0);
        assert_eq!(p.b.sum(), 3.0);
    }

    #[test]
    fn chain_is_its_own_normal_form() {
        let plant = ChainPlant::new(3).unwrap();
        let x = v(&[0.3, -1.2, 2.5]);
        assert_eq!(feedback_linearize(&plant, &x).unwrap(), x);
        let zero = DVector::zeros(3);
        assert_eq!(feedback_linearize(&plant, &zero).unwrap(), zero);
        let u = linearizing_input(&plant, &x, &v(&[0.7])).unwrap();
        assert_eq!(u[0], 0.7);
        assert_eq!(linearizing_input(&plant, &zero, &v(&[0.0])).unwrap()[0], 0.0);
    }

    #[test]
    fn scaled_input_field_divides_the_input() {
        let plant = ChainPlant::with_gain(2, 2.0).unwrap();
        let u = linearizing_input(&plant, &v(&[0.1, 0.2]), &v(&[4.0])).unwrap();
        assert!((u[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn flat_quadrotor_is_identity() {
        let plant = FlatQuadrotor;
        let x = DVector::from_fn(9, |i, _| i as f64 * 0.1 - 0.3);
        assert_eq!(feedback_linearize(&plant, &x).unwrap(), x);
        let jerk = v(&[1.0, -2.0, 0.5]);
        assert_eq!(linearizing_input(&plant, &x, &jerk).unwrap(), jerk);
    }

    #[test]
    fn ball_beam_is_rejected_by_linearizing_pipeline() {
        let plant = BallBeam::default();
        let x = DVector::zeros(4);
        assert!(matches!(
            feedback_linearize(&plant, &x),
            Err(Error::NotFeedbackLinearizable(_))
        ));
        let out = plant.drift(&x);
        assert_eq!(out, DVector::zeros(4));
        assert_eq!(plant.input_field(&x), DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 0.0, 1.0]));
        assert!(!plant.in_domain(&v(&[0.0, 0.0, 1.6, 0.0])));
    }

    #[test]
    fn domain_error_for_outside_states() {
        let plant = ChainPlant::new(2).unwrap();
        assert!(matches!(
            feedback_linearize(&plant, &v(&[1.0])),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn lqr_double_integrator_identity_weights() {
        let plant = ChainPlant::new(2).unwrap();
        let expert = expert_lqr(&plant, &DMatrix::identity(2, 2), 1.0).unwrap();
        assert!((expert.gain[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((expert.gain[(0, 1)] - 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn lqr_double_integrator_fixture_gain() {
        // Q = diag(1, 2) gives the critically damped gain K = [1, 2].
        let plant = ChainPlant::new(2).unwrap();
        let q = DMatrix::from_diagonal(&v(&[1.0, 2.0]));
        let expert = expert_lqr(&plant, &q, 1.0).unwrap();
        assert!((expert.gain[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((expert.gain[(0, 1)] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn lqr_scalar() {
        let plant = ChainPlant::new(1).unwrap();
        let expert = expert_lqr(&plant, &DMatrix::identity(1, 1), 1.0).unwrap();
        assert!((expert.gain[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lqr_rejects_bad_weights() {
        let plant = ChainPlant::new(2).unwrap();
        assert!(expert_lqr(&plant, &DMatrix::identity(2, 2), 0.0).is_err());
        assert!(expert_lqr(&plant, &-DMatrix::<f64>::identity(2, 2), 1.0).is_err());
    }

    #[test]
    fn lqr_on_ball_beam_linearization_is_stabilizing() {
        let plant = BallBeam::default();
        let q = DMatrix::from_diagonal(&v(&[1.0, 1.0, 10.0, 1.0]));
        let expert = expert_lqr_linearized(&plant, &q, 0.1).unwrap();
        let (a, b) = plant.linearize(&DVector::zeros(4));
        let closed = a - b * &expert.gain;
        assert!(linalg::eigenvalues(&closed).unwrap().iter().all(|l| l.re < 0.0));
        assert_eq!(expert.input(&plant, &DVector::zeros(4)).unwrap()[0], 0.0);
    }

    #[test]
    fn preset_registry() {
        let p = PresetParams::default();
        assert_eq!(preset("chain4", &p).unwrap().state_dim(), 4);
        assert_eq!(preset("ball_beam", &p).unwrap().name(), "ball_beam");
        assert_eq!(preset("flat_quad_axis", &p).unwrap().state_dim(), 3);
        assert_eq!(preset("flat_quad_3d", &p).unwrap().input_dim(), 3);
        assert!(preset("pendulum", &p).is_err());
        assert!(preset("chain0", &p).is_err());
    }
}
