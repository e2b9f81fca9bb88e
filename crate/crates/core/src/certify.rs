//! Monodromy matrices, the norm certificate, the certification-horizon search, and simulated
//! contraction checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{self, AffineBasis, IntervalPolicy};
use crate::linalg;
use crate::plant::BrunovskyPair;
use crate::sim::{self, SimOptions};

/// `Psi(T) = Z(T) Z^{-1}(0)`.
pub fn monodromy_from_data(basis: &AffineBasis, period: f64) -> Result<DMatrix<f64>> {
    let n = basis.state_dim();
    let z_end = basis.sample(period)?.z;
    if z_end == basis.zs[0] {
        return Ok(DMatrix::identity(n, n));
    }
    // Psi Z(0) = Z(T)  <=>  Z(0)^T Psi^T = Z(T)^T
    let psi_t = basis.zs[0]
        .transpose()
        .lu()
        .solve(&z_end.transpose())
        .ok_or(Error::AffineDependence {
            t: 0.0,
            cond: f64::INFINITY,
        })?;
    Ok(psi_t.transpose())
}

/// `Psi(T) = e^{AT} + int_0^T e^{A(T - tau)} B V(tau) Z^{-1}(0) dtau`, with the exact
/// nilpotent exponential and the trapezoidal rule on a grid of spacing `step`.
///
/// The trapezoidal sum carries the endpoint correction `-h^2/12 (f'(T) - f'(0))` with
/// second-order one-sided slopes, which lifts the rule from `O(h^2)` to `O(h^4)` on smooth
/// integrands. It is skipped on grids with fewer than three points or a short last step.
pub fn monodromy_from_integral(
    basis: &AffineBasis,
    pair: &BrunovskyPair,
    period: f64,
    step: f64,
) -> Result<DMatrix<f64>> {
    let n = basis.state_dim();
    if pair.state_dim() != n || pair.input_dim() != basis.input_dim() {
        return Err(Error::InvalidDimension("Brunovsky pair does not match the basis".into()));
    }
    let mut psi = linalg::nilpotent_exp(&pair.a, period)?;
    if period == 0.0 {
        return Ok(psi);
    }
    let z0_inv = basis.zs[0]
        .clone()
        .try_inverse()
        .ok_or(Error::AffineDependence {
            t: 0.0,
            cond: f64::INFINITY,
        })?;
    let grid = sim::time_grid(period, step)?;
    let integrand = |tau: f64| -> Result<DMatrix<f64>> {
        let e = linalg::nilpotent_exp(&pair.a, period - tau)?;
        Ok(e * &pair.b * basis.sample(tau)?.v * &z0_inv)
    };
    let values = grid.iter().map(|&tau| integrand(tau)).collect::<Result<Vec<_>>>()?;
    for (w, f) in grid.windows(2).zip(values.windows(2)) {
        psi += (&f[0] + &f[1]) * (0.5 * (w[1] - w[0]));
    }
    let k = grid.len();
    let h = grid[1] - grid[0];
    if k >= 3 && ((grid[k - 1] - grid[k - 2]) - h).abs() <= 1e-9 * h {
        let slope_start = (&values[1] * 4.0 - &values[0] * 3.0 - &values[2]) / (2.0 * h);
        let slope_end = (&values[k - 2] * -4.0 + &values[k - 1] * 3.0 + &values[k - 3]) / (2.0 * h);
        psi -= (slope_end - slope_start) * (h * h / 12.0);
    }
    Ok(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexCertificate {
    pub indices: Vec<usize>,
    pub norm: f64,
    pub spectral_radius: f64,
    pub psi: Vec<Vec<f64>>,
}

/// Per-simplex monodromy norms at one horizon; passes iff every norm is below one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonodromyCertificate {
    #[serde(rename = "T")]
    pub period: f64,
    pub per_simplex: Vec<SimplexCertificate>,
    pub verdict: Verdict,
    pub margin: f64,
}

impl MonodromyCertificate {
    pub fn max_norm(&self) -> f64 {
        self.per_simplex.iter().map(|s| s.norm).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

pub fn certify(bases: &[AffineBasis], period: f64) -> Result<MonodromyCertificate> {
    if bases.is_empty() {
        return Err(Error::InvalidArgument("nothing to certify".into()));
    }
    let mut per_simplex = Vec::with_capacity(bases.len());
    for b in bases {
        let psi = monodromy_from_data(b, period)?;
        per_simplex.push(SimplexCertificate {
            indices: b.indices.clone(),
            norm: linalg::spectral_norm(&psi),
            spectral_radius: linalg::spectral_radius(&psi)?,
            psi: linalg::to_rows(&psi),
        });
    }
    let max = per_simplex.iter().map(|s| s.norm).fold(0.0, f64::max);
    Ok(MonodromyCertificate {
        period,
        per_simplex,
        verdict: if max < 1.0 { Verdict::Pass } else { Verdict::Fail },
        margin: 1.0 - max,
    })
}

/// Smallest candidate horizon whose certificate passes.
pub fn find_t_tilde(bases: &[AffineBasis], candidates: &[f64]) -> Result<Option<f64>> {
    let horizon = bases.iter().map(|b| b.horizon).fold(f64::INFINITY, f64::min);
    let mut sorted: Vec<f64> = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    for t in sorted {
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::OutOfRange { t, horizon });
        }
        if certify(bases, t)?.passed() {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Sampled norms `|z(pT)|` of a simulated chain against the geometric bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub rate: f64,
    pub norms: Vec<f64>,
    pub bounds: Vec<f64>,
    /// `max_p |z((p+1)T) - Psi z(pT)|`, for single-basis policies.
    pub one_step_error: Option<f64>,
    pub passed: bool,
}

/// Simulates `z' = Az + Bv` under `policy` for `periods` intervals and compares
/// `|z(pT)|` with `rate^p |z(0)| (1 + 1e-3)`.
pub fn contraction_check(
    policy: &dyn IntervalPolicy,
    rate: f64,
    single_psi: Option<&DMatrix<f64>>,
    z0: &DVector<f64>,
    periods: usize,
    dt: f64,
) -> Result<ContractionReport> {
    let period = policy.period();
    let traj = learner::simulate_chain(
        policy,
        z0,
        period * periods as f64,
        &SimOptions { dt, hold: None },
    )?;
    let samples: Vec<&DVector<f64>> = (0..=periods)
        .map(|p| &traj.states[traj.index_at(p as f64 * period)])
        .collect();
    let norms: Vec<f64> = samples.iter().map(|z| z.norm()).collect();
    let bounds: Vec<f64> = (0..=periods)
        .map(|p| rate.powi(p as i32) * norms[0] * (1.0 + 1e-3))
        .collect();
    let one_step_error = single_psi.map(|psi| {
        samples
            .windows(2)
            .map(|w| (w[1] - psi * w[0]).norm())
            .fold(0.0, f64::max)
    });
    let passed = norms.iter().zip(&bounds).all(|(n, b)| n <= b);
    Ok(ContractionReport {
        rate,
        norms,
        bounds,
        one_step_error,
        passed,
    })
}
