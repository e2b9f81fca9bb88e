//! Fixed-step RK4 integration and closed-loop simulation.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::Plant;

pub const DEFAULT_DT: f64 = 1e-3;
/// States with a larger Euclidean norm count as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;
const MAX_STEPS: f64 = 1e8;

/// Sampled solution `(x, u)`; `inputs[k]` is the input applied from `times[k]` on.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

/// Plain-vector form used for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t0: f64,
    pub dt: f64,
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectories hold at least two samples")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectories hold at least two samples")
    }

    /// Index of the grid point closest to `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt).round().max(0.0) as usize;
        k.min(self.len() - 1)
    }

    pub fn to_record(&self) -> TrajectoryRecord {
        TrajectoryRecord {
            t0: self.t0,
            dt: self.dt,
            t: self.times.clone(),
            x: self.states.iter().map(|x| x.iter().copied().collect()).collect(),
            u: self.inputs.iter().map(|u| u.iter().copied().collect()).collect(),
        }
    }

    /// CSV with header `t,x1..xn,u` (or `u1..um` for vector inputs).
    pub fn to_csv(&self, state_label: &str) -> String {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("{state_label}{i}")));
        match m {
            0 => {}
            1 => header.push("u".into()),
            _ => header.extend((1..=m).map(|i| format!("u{i}"))),
        }
        let mut out = header.join(",");
        out.push('\n');
        for ((t, x), u) in self.times.iter().zip(&self.states).zip(&self.inputs) {
            let row: Vec<String> = std::iter::once(*t)
                .chain(x.iter().copied())
                .chain(u.iter().copied())
                .map(format_number)
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:?}")
}

/// Local sample times `0, dt, 2dt, ...` up to `span`, with a shortened final step.
pub fn time_grid(span: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("step dt = {dt} must be positive")));
    }
    if !(span > 0.0) || !span.is_finite() {
        return Err(Error::InvalidArgument(format!("integration span {span} must be positive")));
    }
    let ratio = span / dt;
    if ratio > MAX_STEPS {
        return Err(Error::InvalidArgument(format!(
            "{ratio:.3e} steps exceed the limit of {MAX_STEPS:e}"
        )));
    }
    let nearest = ratio.round();
    let full = if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) && nearest >= 1.0 {
        nearest as usize - 1
    } else {
        ratio.floor() as usize
    };
    let mut grid: Vec<f64> = (0..=full).map(|k| k as f64 * dt).collect();
    grid.push(span);
    Ok(grid)
}

fn check_state(x: &DVector<f64>, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) && x.norm() <= DIVERGENCE_BOUND {
        Ok(())
    } else {
        Err(Error::Divergence { t })
    }
}

fn rk4_step<F>(f: &mut F, t: f64, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Classical RK4 solution of `x' = rhs(t, x)` on `[t0, t1]`.
pub fn integrate<F>(rhs: F, x0: &DVector<f64>, t0: f64, t1: f64, dt: f64) -> Result<Trajectory>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let grid = time_grid(t1 - t0, dt)?;
    check_state(x0, t0)?;
    let mut f = |t: f64, x: &DVector<f64>| Ok(rhs(t, x));
    let mut states = Vec::with_capacity(grid.len());
    states.push(x0.clone());
    for w in grid.windows(2) {
        let x = states.last().unwrap();
        let next = rk4_step(&mut f, t0 + w[0], x, w[1] - w[0])?;
        check_state(&next, t0 + w[1])?;
        states.push(next);
    }
    Ok(Trajectory {
        t0,
        dt,
        times: grid.iter().map(|s| t0 + s).collect(),
        inputs: vec![DVector::zeros(0); states.len()],
        states,
    })
}

/// How the control law is sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    /// Zero-order-hold period; `None` re-evaluates the law at every RK4 stage.
    pub hold: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            hold: None,
        }
    }
}

impl SimOptions {
    fn hold_steps(&self) -> Result<Option<usize>> {
        let Some(h) = self.hold else { return Ok(None) };
        let ratio = h / self.dt;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
            return Err(Error::InvalidArgument(format!(
                "hold period {h} is not a positive multiple of dt = {}",
                self.dt
            )));
        }
        Ok(Some(k as usize))
    }
}

/// Closed loop of `x' = rhs(x, u)` over `[t0, t0 + span]`; `control` receives time measured
/// from `t0`.
pub fn simulate_system<R, D, C>(
    rhs: R,
    admissible: D,
    mut control: C,
    x0: &DVector<f64>,
    t0: f64,
    span: f64,
    opts: &SimOptions,
) -> Result<Trajectory>
where
    R: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    D: Fn(&DVector<f64>) -> bool,
    C: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let grid = time_grid(span, opts.dt)?;
    let hold = opts.hold_steps()?;
    check_state(x0, t0)?;
    if !admissible(x0) {
        return Err(Error::DomainExit { t: t0 });
    }
    let mut states = Vec::with_capacity(grid.len());
    let mut inputs = Vec::with_capacity(grid.len());
    let mut x = x0.clone();
    let mut held = None;
    for (k, w) in grid.windows(2).enumerate() {
        let u_k = match hold {
            Some(every) => {
                if k % every == 0 || held.is_none() {
                    held = Some(control(w[0], &x)?);
                }
                let u = held.clone().unwrap();
                let mut f = |_: f64, y: &DVector<f64>| Ok(rhs(y, &u));
                let next = rk4_step(&mut f, w[0], &x, w[1] - w[0])?;
                states.push(std::mem::replace(&mut x, next));
                u
            }
            None => {
                let u = control(w[0], &x)?;
                let mut first = Some(u.clone());
                let mut f = |s: f64, y: &DVector<f64>| {
                    let v = match first.take() {
                        Some(v) => v,
                        None if !admissible(y) => return Err(Error::DomainExit { t: t0 + s }),
                        None => control(s, y)?,
                    };
                    Ok(rhs(y, &v))
                };
                let next = rk4_step(&mut f, w[0], &x, w[1] - w[0])?;
                states.push(std::mem::replace(&mut x, next));
                u
            }
        };
        inputs.push(u_k);
        let t = t0 + w[1];
        check_state(&x, t)?;
        if !admissible(&x) {
            return Err(Error::DomainExit { t });
        }
    }
    let last = *grid.last().unwrap();
    let u_last = match (&held, hold) {
        (Some(u), Some(every)) if (grid.len() - 1) % every != 0 => u.clone(),
        _ => control(last, &x)?,
    };
    states.push(x);
    inputs.push(u_last);
    Ok(Trajectory {
        t0,
        dt: opts.dt,
        times: grid.iter().map(|s| t0 + s).collect(),
        states,
        inputs,
    })
}

/// `x' = f(x) + g(x) u` under `u = control(t, x)` for `duration` seconds from `t = 0`.
pub fn simulate_closed_loop<C>(
    plant: &dyn Plant,
    control: C,
    x0: &DVector<f64>,
    duration: f64,
    opts: &SimOptions,
) -> Result<Trajectory>
where
    C: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if x0.len() != plant.state_dim() {
        return Err(Error::InvalidDimension(format!(
            "initial state has length {}, plant expects {}",
            x0.len(),
            plant.state_dim()
        )));
    }
    if !plant.in_domain(x0) {
        return Err(Error::Domain {
            plant: plant.name(),
            state: x0.iter().copied().collect(),
        });
    }
    simulate_system(
        |x, u| plant.rhs(x, u),
        |x| plant.in_domain(x),
        control,
        x0,
        0.0,
        duration,
        opts,
    )
}

/// Closed loop under a law that re-anchors at every `t = pT`.
///
/// `anchor(p, x(pT))` runs once per interval; `control(&anchor, tau, x)` sees the local time
/// `tau = t - pT` in `[0, T]`. At each boundary the recorded input is the new interval's.
#[allow(clippy::too_many_arguments)]
pub fn simulate_periodic<R, D, S, C, A>(
    rhs: R,
    admissible: D,
    mut anchor: S,
    mut control: C,
    x0: &DVector<f64>,
    duration: f64,
    period: f64,
    opts: &SimOptions,
) -> Result<Trajectory>
where
    R: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    D: Fn(&DVector<f64>) -> bool,
    S: FnMut(usize, &DVector<f64>) -> Result<A>,
    C: FnMut(&A, f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(period > 0.0) {
        return Err(Error::InvalidArgument(format!("period {period} must be positive")));
    }
    time_grid(duration, opts.dt)?;
    let periods = (duration / period - 1e-9).ceil().max(1.0) as usize;
    let mut out: Option<Trajectory> = None;
    let mut x = x0.clone();
    for p in 0..periods {
        let start = p as f64 * period;
        let span = (duration - start).min(period);
        let a = anchor(p, &x)?;
        let seg = simulate_system(
            &rhs,
            &admissible,
            |tau, y: &DVector<f64>| control(&a, tau, y),
            &x,
            start,
            span,
            opts,
        )?;
        x = seg.final_state().clone();
        out = Some(match out {
            None => seg,
            Some(mut acc) => {
                *acc.inputs.last_mut().unwrap() = seg.inputs[0].clone();
                acc.times.extend_from_slice(&seg.times[1..]);
                acc.states.extend_from_slice(&seg.states[1..]);
                acc.inputs.extend_from_slice(&seg.inputs[1..]);
                acc
            }
        });
    }
    let mut traj = out.expect("at least one period");
    let end = traj.final_time();
    if (end / period - (end / period).round()).abs() < 1e-9 {
        let a = anchor(periods, &x)?;
        *traj.inputs.last_mut().unwrap() = control(&a, 0.0, &x)?;
    }
    traj.t0 = 0.0;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::ChainPlant;
    use nalgebra::DMatrix;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn grid_lands_on_the_endpoint() {
        let g = time_grid(1.0, 0.3).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!((g[3] - 0.9).abs() < 1e-15);
        let g = time_grid(1.0, 1e-3).unwrap();
        assert_eq!(g.len(), 1001);
        assert_eq!(g[1000], 1.0);
        assert!(time_grid(1.0, 0.0).is_err());
        assert!(time_grid(0.0, 0.1).is_err());
    }

    #[test]
    fn chain_at_rest_in_the_velocity_stays_put() {
        let traj = integrate(
            |_, z: &DVector<f64>| DVector::from_vec(vec![z[1], 0.0]),
            &v(&[1.0, 0.0]),
            0.0,
            1.0,
            0.1,
        )
        .unwrap();
        assert_eq!(traj.final_state(), &v(&[1.0, 0.0]));
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let traj = integrate(|_, x: &DVector<f64>| -x, &v(&[1.0]), 0.0, 1.0, 1e-3).unwrap();
        assert!((traj.final_state()[0] - (-1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |dt: f64| {
            let traj = integrate(|_, x: &DVector<f64>| -x, &v(&[1.0]), 0.0, 1.0, dt).unwrap();
            (traj.final_state()[0] - (-1f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn non_finite_state_is_divergence() {
        let res = integrate(|_, x: &DVector<f64>| x * x[0], &v(&[1.0]), 0.0, 5.0, 1e-2);
        assert!(matches!(res, Err(Error::Divergence { t }) if t < 1.1));
    }

    #[test]
    fn critically_damped_double_integrator() {
        let plant = ChainPlant::new(2).unwrap();
        let traj = simulate_closed_loop(
            &plant,
            |_, z| Ok(DVector::from_element(1, -z[0] - 2.0 * z[1])),
            &v(&[1.0, 0.0]),
            2.0,
            &SimOptions::default(),
        )
        .unwrap();
        let e = (-2f64).exp();
        let expected = v(&[3.0 * e, -2.0 * e]);
        assert!((traj.final_state() - expected).norm() < 1e-10);
        assert_eq!(traj.states.len(), traj.inputs.len());
    }

    #[test]
    fn zero_control_from_origin_is_zero() {
        let plant = ChainPlant::new(3).unwrap();
        let traj = simulate_closed_loop(
            &plant,
            |_, _| Ok(DVector::zeros(1)),
            &DVector::zeros(3),
            1.0,
            &SimOptions::default(),
        )
        .unwrap();
        assert!(traj.states.iter().all(|x| x.iter().all(|c| *c == 0.0)));
    }

    #[test]
    fn hold_keeps_the_input_constant_per_window() {
        let plant = ChainPlant::new(2).unwrap();
        let opts = SimOptions {
            dt: 0.01,
            hold: Some(0.05),
        };
        let traj = simulate_closed_loop(
            &plant,
            |_, z| Ok(DVector::from_element(1, -z[0] - 2.0 * z[1])),
            &v(&[1.0, 0.0]),
            1.0,
            &opts,
        )
        .unwrap();
        for w in 0..20 {
            let u0 = traj.inputs[5 * w][0];
            for k in 1..5 {
                assert_eq!(traj.inputs[5 * w + k][0], u0);
            }
        }
        assert!(SimOptions { dt: 0.01, hold: Some(0.015) }.hold_steps().is_err());
    }

    #[test]
    fn hold_equal_to_step_is_zero_order_hold() {
        // Zero-order hold per step is first-order accurate, so it differs from the
        // continuous evaluation by O(dt) but converges to it.
        let plant = ChainPlant::new(2).unwrap();
        let law = |_: f64, z: &DVector<f64>| Ok(DVector::from_element(1, -z[0] - 2.0 * z[1]));
        let x0 = v(&[1.0, 0.0]);
        let cont = simulate_closed_loop(&plant, law, &x0, 2.0, &SimOptions::default()).unwrap();
        let held = simulate_closed_loop(
            &plant,
            law,
            &x0,
            2.0,
            &SimOptions {
                dt: DEFAULT_DT,
                hold: Some(DEFAULT_DT),
            },
        )
        .unwrap();
        let gap = (cont.final_state() - held.final_state()).norm();
        assert!(gap < 1e-3 && gap > 0.0);
    }

    #[test]
    fn stage_outside_the_domain_is_a_domain_exit() {
        // The law is undefined past x = 1; the second RK4 stage from 0.9 lands at 1.15.
        let result = simulate_system(
            |_, u| u.clone(),
            |x| x[0] < 1.0,
            |_, x| {
                if x[0] < 1.0 {
                    Ok(v(&[1.0]))
                } else {
                    Err(Error::Numerical("law evaluated outside its domain".into()))
                }
            },
            &v(&[0.9]),
            0.0,
            2.0,
            &SimOptions { dt: 0.5, hold: None },
        );
        assert!(matches!(result, Err(Error::DomainExit { t }) if t == 0.25));
    }

    #[test]
    fn periodic_reanchoring_sees_local_time() {
        let plant = ChainPlant::new(1).unwrap();
        let mut anchors = Vec::new();
        let traj = simulate_periodic(
            |x, u| plant.rhs(x, u),
            |_| true,
            |p, x: &DVector<f64>| {
                anchors.push((p, x[0]));
                Ok(x[0])
            },
            |a: &f64, tau, _| {
                assert!((0.0..=0.5 + 1e-12).contains(&tau));
                Ok(DVector::from_element(1, -a))
            },
            &v(&[1.0]),
            1.0,
            0.5,
            &SimOptions { dt: 0.01, hold: None },
        )
        .unwrap();
        assert_eq!(traj.len(), 101);
        // Each interval drives x to x * (1 - 0.5): x(0.5) = 0.5, x(1) = 0.25.
        assert!((traj.states[50][0] - 0.5).abs() < 1e-12);
        assert!((traj.final_state()[0] - 0.25).abs() < 1e-12);
        // Boundary inputs belong to the interval that starts there.
        assert_eq!(traj.inputs[50][0], -traj.states[50][0]);
        assert_eq!(traj.inputs[100][0], -traj.states[100][0]);
        assert_eq!(anchors.len(), 3);
    }

    #[test]
    fn linear_system_matches_exponential_oracle() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let traj = integrate(|_, x: &DVector<f64>| &a * x, &v(&[1.0, 0.0]), 0.0, 1.0, 1e-3).unwrap();
        let expected = v(&[1f64.cos(), -1f64.sin()]);
        assert!((traj.final_state() - expected).norm() < 1e-8);
    }

    #[test]
    fn csv_header_and_rows() {
        let traj = integrate(|_, x: &DVector<f64>| -x, &v(&[1.0, 2.0]), 0.0, 0.2, 0.1).unwrap();
        let csv = traj.to_csv("x");
        assert!(csv.starts_with("t,x1,x2\n0.0,1.0,2.0\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
