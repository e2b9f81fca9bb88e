//! Embedding of a plant without full relative degree into an integrator chain through
//! auxiliary states `xi` and the dynamic feedback `u = (s(x, xi) + v) / r(x)`.
//!
//! With `L^k = L_f^k h` and `G^k = L_g L_f^k h`:
//!
//! ```text
//! z_k      = L^{k-1} + xi_k                      k < n
//! z_n      = L^{n-1} - sum_j w_j xi_j
//! xi_k'    = xi_{k+1} - G^{k-1} u                k < n - 1
//! xi_{n-1}' = -sum_i w_i xi_i - G^{n-2} u
//! r        = G^{n-1} + sum_j w_j G^{j-1}
//! s        = -L^n + sum_{j <= n-2} w_j xi_{j+1} - w_{n-1} sum_i w_i xi_i
//! ```
//!
//! so that `z' = A z + B v` holds along every solution with `v = r u - s`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::demos::{self, Demonstration, DemonstrationSet, RawDemoSet};
use crate::error::{Error, Result};
use crate::learner::{Anchor, IntervalPolicy};
use crate::linalg;
use crate::plant::{LieOutput, Plant};
use crate::sim::{self, SimOptions, Trajectory};

/// `|r(x)|` at or below this value is singular.
pub const R_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct EmbeddingConfig {
    plant: Arc<dyn Plant>,
    w: Vec<f64>,
}

impl EmbeddingConfig {
    /// Requires closed-form Lie derivatives and a Hurwitz companion matrix `A_xi(w)`.
    pub fn new(plant: Arc<dyn Plant>, w: Vec<f64>) -> Result<Self> {
        let n = plant.state_dim();
        if plant.input_dim() != 1 || plant.lie().is_none() {
            return Err(Error::InvalidArgument(format!(
                "`{}` has no scalar output with Lie derivatives",
                plant.name()
            )));
        }
        if n < 2 || w.len() != n - 1 {
            return Err(Error::InvalidDimension(format!(
                "expected {} coefficients w, got {}",
                n.saturating_sub(1),
                w.len()
            )));
        }
        let cfg = Self { plant, w };
        if !linalg::is_hurwitz(&cfg.a_xi())? {
            return Err(Error::InvalidArgument(format!(
                "companion matrix of w = {:?} is not Hurwitz",
                cfg.w
            )));
        }
        Ok(cfg)
    }

    pub fn plant(&self) -> &dyn Plant {
        self.plant.as_ref()
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    /// Plant state dimension; the chain has the same length.
    pub fn n(&self) -> usize {
        self.plant.state_dim()
    }

    fn lie(&self) -> &dyn LieOutput {
        self.plant.lie().expect("checked at construction")
    }

    fn check(&self, x: &DVector<f64>, xi: &DVector<f64>) -> Result<()> {
        let n = self.n();
        if x.len() != n || xi.len() != n - 1 {
            return Err(Error::InvalidDimension(format!(
                "extended state must be in R^{n} x R^{}",
                n - 1
            )));
        }
        if !self.plant.in_domain(x) {
            return Err(Error::Domain {
                plant: self.plant.name(),
                state: x.iter().copied().collect(),
            });
        }
        Ok(())
    }

    /// Companion matrix `A_xi` with last row `-w`.
    pub fn a_xi(&self) -> DMatrix<f64> {
        linalg::companion(&self.w)
    }

    /// `z = Phi_z(x, xi)`.
    pub fn phi(&self, x: &DVector<f64>, xi: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(x, xi)?;
        Ok(self.phi_unchecked(x, xi))
    }

    fn phi_unchecked(&self, x: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let lie = self.lie();
        let mut z = DVector::zeros(n);
        for k in 0..n - 1 {
            z[k] = lie.lie_f(k, x) + xi[k];
        }
        z[n - 1] = lie.lie_f(n - 1, x) - self.weighted(xi);
        z
    }

    fn weighted(&self, xi: &DVector<f64>) -> f64 {
        self.w.iter().zip(xi.iter()).map(|(w, x)| w * x).sum()
    }

    /// `r(x) = L_g L_f^{n-1} h + sum_j w_j L_g L_f^{j-1} h`.
    pub fn r(&self, x: &DVector<f64>) -> f64 {
        let n = self.n();
        let lie = self.lie();
        lie.lie_g_lie_f(n - 1, x)
            + self
                .w
                .iter()
                .enumerate()
                .map(|(j, w)| w * lie.lie_g_lie_f(j, x))
                .sum::<f64>()
    }

    /// `s(x, xi) = -L_f^n h + sum_{j <= n-2} w_j xi_{j+1} - w_{n-1} sum_i w_i xi_i`.
    pub fn s(&self, x: &DVector<f64>, xi: &DVector<f64>) -> f64 {
        let n = self.n();
        let shifted: f64 = (0..n - 2).map(|j| self.w[j] * xi[j + 1]).sum();
        -self.lie().lie_f(n, x) + shifted - self.w[n - 2] * self.weighted(xi)
    }

    /// Auxiliary dynamics `xi'`.
    pub fn aux_rhs(&self, x: &DVector<f64>, xi: &DVector<f64>, u: f64) -> DVector<f64> {
        let m = self.n() - 1;
        let lie = self.lie();
        DVector::from_fn(m, |k, _| {
            let next = if k + 1 < m { xi[k + 1] } else { -self.weighted(xi) };
            next - lie.lie_g_lie_f(k, x) * u
        })
    }

    /// `u = (s(x, xi) + v) / r(x)`.
    pub fn dynamic_feedback(&self, x: &DVector<f64>, xi: &DVector<f64>, v: f64) -> Result<f64> {
        self.check(x, xi)?;
        let r = self.r(x);
        if r.abs() <= R_TOLERANCE {
            return Err(Error::SingularEmbedding {
                r: r.abs(),
                t: None,
                demo: None,
            });
        }
        Ok((self.s(x, xi) + v) / r)
    }

    /// Right-hand side of the extended state `(x, xi)` under input `u`.
    pub fn extended_rhs(&self, y: &DVector<f64>, u: f64) -> DVector<f64> {
        let n = self.n();
        let x = y.rows(0, n).into_owned();
        let xi = y.rows(n, n - 1).into_owned();
        let dx = self.plant.rhs(&x, &DVector::from_element(1, u));
        let dxi = self.aux_rhs(&x, &xi, u);
        let mut out = DVector::zeros(2 * n - 1);
        out.rows_mut(0, n).copy_from(&dx);
        out.rows_mut(n, n - 1).copy_from(&dxi);
        out
    }

    pub fn split(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.n();
        (y.rows(0, n).into_owned(), y.rows(n, n - 1).into_owned())
    }

    pub fn join(&self, x: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(x.len() + xi.len());
        y.rows_mut(0, x.len()).copy_from(x);
        y.rows_mut(x.len(), xi.len()).copy_from(xi);
        y
    }

    /// Solves `Phi_z(x, xi) = z` for `x` by damped Newton iteration from `guess`.
    pub fn invert_phi(
        &self,
        z: &DVector<f64>,
        xi: &DVector<f64>,
        guess: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.n();
        let mut x = guess.clone();
        let residual = |x: &DVector<f64>| self.phi_unchecked(x, xi) - z;
        let mut res = residual(&x);
        for _ in 0..100 {
            if res.norm() <= 1e-13 * (1.0 + z.norm()) {
                return Ok(x);
            }
            let mut jac = DMatrix::zeros(n, n);
            for j in 0..n {
                let eps = 1e-7 * (1.0 + x[j].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += eps;
                xm[j] -= eps;
                jac.set_column(j, &((residual(&xp) - residual(&xm)) / (2.0 * eps)));
            }
            let step = jac
                .lu()
                .solve(&res)
                .ok_or_else(|| Error::Numerical("singular Jacobian while inverting Phi".into()))?;
            let mut alpha = 1.0;
            loop {
                let trial = &x - &step * alpha;
                let trial_res = residual(&trial);
                if self.plant.in_domain(&trial) && trial_res.norm() < res.norm() {
                    x = trial;
                    res = trial_res;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-10 {
                    return Err(Error::Numerical("Newton iteration for Phi stalled".into()));
                }
            }
        }
        if res.norm() <= 1e-9 * (1.0 + z.norm()) {
            Ok(x)
        } else {
            Err(Error::Numerical("Newton iteration for Phi did not converge".into()))
        }
    }

    /// Jacobian in `xi`, at `(z, xi) = (0, 0)` with `v = 0`, of the part of the `xi` dynamics
    /// not captured by `A_xi xi`: `-G(x) s(x, xi) / r(x)` with `x = Phi^{-1}(0, xi)` and
    /// `G = (G^0, ..., G^{n-2})`. `A_xi + A_w` is the linearization of the unforced
    /// auxiliary subsystem.
    pub fn a_w_numeric(&self, eps: f64) -> Result<DMatrix<f64>> {
        let n = self.n();
        let m = n - 1;
        let zero_z = DVector::zeros(n);
        let drift = |xi: &DVector<f64>| -> Result<DVector<f64>> {
            let x = self.invert_phi(&zero_z, xi, &DVector::zeros(n))?;
            let r = self.r(&x);
            if r.abs() <= R_TOLERANCE {
                return Err(Error::SingularEmbedding {
                    r: r.abs(),
                    t: None,
                    demo: None,
                });
            }
            let u = self.s(&x, xi) / r;
            let lie = self.lie();
            Ok(DVector::from_fn(m, |k, _| -lie.lie_g_lie_f(k, &x) * u))
        };
        let mut a_w = DMatrix::zeros(m, m);
        for j in 0..m {
            let mut e = DVector::zeros(m);
            e[j] = eps;
            a_w.set_column(j, &((drift(&e)? - drift(&-e)?) / (2.0 * eps)));
        }
        Ok(a_w)
    }

    /// Local surrogate for the input-to-state condition on the auxiliary subsystem.
    pub fn surrogate_hurwitz(&self) -> Result<bool> {
        linalg::is_hurwitz(&(self.a_xi() + self.a_w_numeric(1e-5)?))
    }
}

/// Demonstration in embedded coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDemonstration {
    pub times: Vec<f64>,
    pub z: Vec<DVector<f64>>,
    pub xi: Vec<DVector<f64>>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDemoSet {
    pub n: usize,
    pub w: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub demos: Vec<EmbeddedDemonstration>,
}

/// Cubic Lagrange interpolation through samples `k-1..k+2` (shifted at the ends).
fn cubic_at(samples: &[DVector<f64>], times: &[f64], k: usize, t: f64) -> DVector<f64> {
    let last = samples.len() - 1;
    let start = k.saturating_sub(1).min(last.saturating_sub(3));
    let idx: Vec<usize> = (start..=(start + 3).min(last)).collect();
    let mut out = DVector::zeros(samples[0].len());
    for &i in &idx {
        let mut weight = 1.0;
        for &j in &idx {
            if j != i {
                weight *= (t - times[j]) / (times[i] - times[j]);
            }
        }
        out += &samples[i] * weight;
    }
    out
}

/// Integrates the auxiliary dynamics along each recorded `(x, u)` from `xi(0) = xi0` and maps
/// every sample to `z = Phi_z(x, xi)`, `v = r u - s`.
pub fn transform_demos(
    cfg: &EmbeddingConfig,
    raw: &RawDemoSet,
    xi0: &DVector<f64>,
) -> Result<EmbeddedDemoSet> {
    let n = cfg.n();
    if xi0.len() != n - 1 {
        return Err(Error::InvalidDimension(format!("xi0 must be in R^{}", n - 1)));
    }
    for (d, traj) in raw.demos.iter().enumerate() {
        for (k, x) in traj.states.iter().enumerate() {
            if !cfg.plant().in_domain(x) {
                return Err(Error::Sample {
                    index: k,
                    source: Box::new(Error::Domain {
                        plant: cfg.plant().name(),
                        state: x.iter().copied().collect(),
                    }),
                });
            }
            let r = cfg.r(x);
            if r.abs() <= R_TOLERANCE {
                return Err(Error::SingularEmbedding {
                    r: r.abs(),
                    t: Some(traj.times[k] - traj.t0),
                    demo: Some(d),
                });
            }
        }
    }
    let mut demos = Vec::with_capacity(raw.demos.len());
    for traj in &raw.demos {
        let times: Vec<f64> = traj.times.iter().map(|t| t - traj.t0).collect();
        let len = times.len();
        let mut xi = Vec::with_capacity(len);
        xi.push(xi0.clone());
        for k in 0..len - 1 {
            let (t0, h) = (times[k], times[k + 1] - times[k]);
            let mid = t0 + 0.5 * h;
            let (x_mid, u_mid) = (
                cubic_at(&traj.states, &times, k, mid),
                cubic_at(&traj.inputs, &times, k, mid)[0],
            );
            let (x0, u0) = (&traj.states[k], traj.inputs[k][0]);
            let (x1, u1) = (&traj.states[k + 1], traj.inputs[k + 1][0]);
            let y = &xi[k];
            let k1 = cfg.aux_rhs(x0, y, u0);
            let k2 = cfg.aux_rhs(&x_mid, &(y + &k1 * (0.5 * h)), u_mid);
            let k3 = cfg.aux_rhs(&x_mid, &(y + &k2 * (0.5 * h)), u_mid);
            let k4 = cfg.aux_rhs(x1, &(y + &k3 * h), u1);
            xi.push(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0));
        }
        let z = traj
            .states
            .iter()
            .zip(&xi)
            .map(|(x, s)| cfg.phi_unchecked(x, s))
            .collect();
        let v = traj
            .states
            .iter()
            .zip(&xi)
            .zip(&traj.inputs)
            .map(|((x, s), u)| cfg.r(x) * u[0] - cfg.s(x, s))
            .collect();
        demos.push(EmbeddedDemonstration { times, z, xi, v });
    }
    Ok(EmbeddedDemoSet {
        n,
        w: cfg.w.clone(),
        horizon: raw.horizon,
        dt: raw.dt,
        demos,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedDemoRecord {
    pub z: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedDemoFile {
    pub n: usize,
    pub w: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub demos: Vec<EmbeddedDemoRecord>,
}

impl EmbeddedDemoSet {
    /// The `(z, v)` part, ready for learning.
    pub fn to_demo_set(&self) -> Result<DemonstrationSet> {
        let demos = self
            .demos
            .iter()
            .map(|d| Demonstration {
                times: d.times.clone(),
                z: d.z.clone(),
                v: d.v.iter().map(|v| DVector::from_element(1, *v)).collect(),
            })
            .collect();
        DemonstrationSet::new(self.n, self.dt, demos)
    }

    pub fn to_file(&self) -> EmbeddedDemoFile {
        EmbeddedDemoFile {
            n: self.n,
            w: self.w.clone(),
            horizon: self.horizon,
            dt: self.dt,
            demos: self
                .demos
                .iter()
                .map(|d| EmbeddedDemoRecord {
                    z: demos::vectors_to_rows(&d.z),
                    xi: demos::vectors_to_rows(&d.xi),
                    v: d.v.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &EmbeddedDemoFile) -> Result<Self> {
        let times = sim::time_grid(file.horizon, file.dt)?;
        let demos = file
            .demos
            .iter()
            .map(|d| {
                if d.z.len() != times.len() || d.xi.len() != times.len() || d.v.len() != times.len() {
                    return Err(Error::Format("embedded demonstration length mismatch".into()));
                }
                Ok(EmbeddedDemonstration {
                    times: times.clone(),
                    z: demos::rows_to_vectors(&d.z),
                    xi: demos::rows_to_vectors(&d.xi),
                    v: d.v.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n: file.n,
            w: file.w.clone(),
            horizon: file.horizon,
            dt: file.dt,
            demos,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_file(&serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Integrates `(x, xi)` with `u = (s + v) / r` and `v = law(t, x, xi)`.
pub fn simulate_embedded<L>(
    cfg: &EmbeddingConfig,
    mut law: L,
    x0: &DVector<f64>,
    xi0: &DVector<f64>,
    duration: f64,
    opts: &SimOptions,
) -> Result<Trajectory>
where
    L: FnMut(f64, &DVector<f64>, &DVector<f64>) -> Result<f64>,
{
    cfg.check(x0, xi0)?;
    sim::simulate_system(
        |y, u| cfg.extended_rhs(y, u[0]),
        |y| cfg.plant().in_domain(&y.rows(0, cfg.n()).into_owned()),
        |t, y: &DVector<f64>| {
            let (x, xi) = cfg.split(y);
            let v = law(t, &x, &xi)?;
            Ok(DVector::from_element(1, cfg.dynamic_feedback(&x, &xi, v)?))
        },
        &cfg.join(x0, xi0),
        0.0,
        duration,
        opts,
    )
}

/// Closed loop of the extended plant under a learned policy acting on `z = Phi_z(x, xi)`.
/// States of the returned trajectory are `(x, xi)`.
pub fn simulate_embedded_closed_loop(
    cfg: &EmbeddingConfig,
    policy: &dyn IntervalPolicy,
    x0: &DVector<f64>,
    xi0: &DVector<f64>,
    duration: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    cfg.check(x0, xi0)?;
    let z_of = |y: &DVector<f64>| {
        let (x, xi) = cfg.split(y);
        cfg.phi(&x, &xi)
    };
    sim::simulate_periodic(
        |y, u| cfg.extended_rhs(y, u[0]),
        |y| cfg.plant().in_domain(&y.rows(0, cfg.n()).into_owned()),
        |_, y: &DVector<f64>| policy.anchor(&z_of(y)?),
        |a: &Anchor, tau, y: &DVector<f64>| {
            let (x, xi) = cfg.split(y);
            let v = policy.control(a, tau, &cfg.phi(&x, &xi)?)?;
            Ok(DVector::from_element(1, cfg.dynamic_feedback(&x, &xi, v[0])?))
        },
        &cfg.join(x0, xi0),
        duration,
        policy.period(),
        opts,
    )
}
