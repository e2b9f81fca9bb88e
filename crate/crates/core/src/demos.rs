//! Expert demonstrations: recording, mapping to Brunovsky coordinates, affine-independence
//! checks, and file IO.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::{self, ExpertController, Plant};
use crate::sim::{self, SimOptions, Trajectory};

/// Relative rank tolerance: `sigma_n > 1e-8 * sigma_1`.
pub const AFFINE_TOLERANCE: f64 = 1e-8;

/// Expert trajectories in plant coordinates; index 0 is the trivial solution.
#[derive(Debug, Clone)]
pub struct RawDemoSet {
    pub horizon: f64,
    pub dt: f64,
    pub demos: Vec<Trajectory>,
}

/// One demonstration sampled on the uniform grid of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub times: Vec<f64>,
    pub z: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}

impl Demonstration {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    fn check(&self) -> Result<()> {
        if self.times.len() < 2 || self.z.len() != self.times.len() || self.v.len() != self.times.len()
        {
            return Err(Error::Format("demonstration sample counts disagree".into()));
        }
        let finite = self
            .z
            .iter()
            .chain(&self.v)
            .all(|s| s.iter().all(|c| c.is_finite()));
        if !finite {
            return Err(Error::Format("demonstration contains non-finite samples".into()));
        }
        Ok(())
    }

    fn bracket(&self, t: f64) -> Result<(usize, f64)> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::OutOfRange { t, horizon });
        }
        bracket(&self.times, t)
    }

    /// `(z(t), v(t))` by linear interpolation between grid samples.
    pub fn eval(&self, t: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let (k, a) = self.bracket(t)?;
        if a == 0.0 {
            return Ok((self.z[k].clone(), self.v[k].clone()));
        }
        let z = &self.z[k] * (1.0 - a) + &self.z[k + 1] * a;
        let v = &self.v[k] * (1.0 - a) + &self.v[k + 1] * a;
        Ok((z, v))
    }

    pub fn is_zero(&self) -> bool {
        self.z
            .iter()
            .chain(&self.v)
            .all(|s| s.iter().all(|c| *c == 0.0))
    }
}

/// Locates `t` on a uniform-with-short-tail grid: returns `k` and `a` with
/// `t = (1 - a) times[k] + a times[k + 1]`, and `a == 0` exactly at grid points.
pub(crate) fn bracket(times: &[f64], t: f64) -> Result<(usize, f64)> {
    let last = times.len() - 1;
    let dt = times[1] - times[0];
    let guess = ((t - times[0]) / dt).floor().max(0.0) as usize;
    let mut k = guess.min(last);
    while k > 0 && times[k] > t {
        k -= 1;
    }
    while k < last && times[k + 1] <= t {
        k += 1;
    }
    if k == last {
        return Ok((last, 0.0));
    }
    let a = (t - times[k]) / (times[k + 1] - times[k]);
    Ok((k, a))
}

/// `M` demonstrations on a common grid, in Brunovsky coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationSet {
    pub n: usize,
    pub m: usize,
    pub horizon: f64,
    pub dt: f64,
    pub demos: Vec<Demonstration>,
    pub includes_trivial: bool,
}

impl DemonstrationSet {
    pub fn new(n: usize, dt: f64, demos: Vec<Demonstration>) -> Result<Self> {
        let first = demos
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty demonstration set".into()))?;
        let m = first.v.first().map_or(0, DVector::len);
        if n == 0 || m == 0 {
            return Err(Error::InvalidDimension("zero state or input dimension".into()));
        }
        for d in &demos {
            d.check()?;
            if d.times != first.times {
                return Err(Error::Format("demonstrations are on different grids".into()));
            }
            if d.z.iter().any(|z| z.len() != n) || d.v.iter().any(|v| v.len() != m) {
                return Err(Error::InvalidDimension("sample dimensions disagree".into()));
            }
        }
        if demos.len() < n + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} demonstrations cannot span an n = {n} dimensional affine frame",
                demos.len()
            )));
        }
        Ok(Self {
            n,
            m,
            horizon: first.horizon(),
            dt,
            includes_trivial: first.is_zero(),
            demos,
        })
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.demos[0].times
    }

    /// Initial states `z^i(0)`.
    pub fn initial_states(&self) -> Vec<DVector<f64>> {
        self.demos.iter().map(|d| d.z[0].clone()).collect()
    }

    fn check_index_set(&self, idx: &[usize]) -> Result<()> {
        if idx.len() != self.n + 1 {
            return Err(Error::InvalidArgument(format!(
                "index set has {} entries, n + 1 = {} required",
                idx.len(),
                self.n + 1
            )));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!("demonstration index {bad} out of range")));
        }
        Ok(())
    }

    /// `Z_I` and `V_I` at grid sample `k`: columns `z^{i_j} - z^{i_1}`, `v^{i_j} - v^{i_1}`.
    pub fn difference_matrices(&self, idx: &[usize], k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let base = &self.demos[idx[0]];
        let mut z = DMatrix::zeros(self.n, self.n);
        let mut v = DMatrix::zeros(self.m, self.n);
        for (j, &i) in idx[1..].iter().enumerate() {
            z.set_column(j, &(&self.demos[i].z[k] - &base.z[k]));
            v.set_column(j, &(&self.demos[i].v[k] - &base.v[k]));
        }
        (z, v)
    }
}

/// Worst-case conditioning of `Z_I(t)` over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineReport {
    pub indices: Vec<usize>,
    pub min_sigma: f64,
    pub argmin_time: f64,
    pub max_sigma: f64,
    pub max_condition: f64,
    pub argmax_condition_time: f64,
    pub condition_numbers: Vec<f64>,
    pub passed: bool,
}

/// Smallest singular value of `Z_I(t)` across the grid; passes iff
/// `min sigma_n > 1e-8 * max sigma_1`.
pub fn validate_affine_independence(set: &DemonstrationSet, idx: &[usize]) -> Result<AffineReport> {
    set.check_index_set(idx)?;
    let times = set.times();
    let mut report = AffineReport {
        indices: idx.to_vec(),
        min_sigma: f64::INFINITY,
        argmin_time: 0.0,
        max_sigma: 0.0,
        max_condition: 0.0,
        argmax_condition_time: 0.0,
        condition_numbers: Vec::with_capacity(times.len()),
        passed: false,
    };
    for (k, &t) in times.iter().enumerate() {
        let (z, _) = set.difference_matrices(idx, k);
        let s = linalg::singular_values(&z);
        let (hi, lo) = (s[0], *s.last().unwrap());
        if lo < report.min_sigma {
            report.min_sigma = lo;
            report.argmin_time = t;
        }
        report.max_sigma = report.max_sigma.max(hi);
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if cond > report.max_condition || k == 0 {
            report.max_condition = cond;
            report.argmax_condition_time = t;
        }
        report.condition_numbers.push(cond);
    }
    report.passed = report.min_sigma > AFFINE_TOLERANCE * report.max_sigma;
    Ok(report)
}

/// Records `u = k(x)` closed-loop trajectories of length `horizon` from each `x0`, with the
/// trivial solution inserted as demonstration 0.
pub fn record_expert(
    plant: &dyn Plant,
    expert: &ExpertController,
    x0s: &[DVector<f64>],
    horizon: f64,
    dt: f64,
) -> Result<RawDemoSet> {
    let opts = SimOptions { dt, hold: None };
    let mut demos = Vec::with_capacity(x0s.len() + 1);
    let zero = DVector::zeros(plant.state_dim());
    for x0 in std::iter::once(&zero).chain(x0s) {
        let traj = sim::simulate_closed_loop(plant, |_, x| expert.input(plant, x), x0, horizon, &opts)
            .map_err(|e| Error::Recording {
                x0: x0.iter().copied().collect(),
                source: Box::new(e),
            })?;
        demos.push(traj);
    }
    Ok(RawDemoSet { horizon, dt, demos })
}

/// Applies `z = Phi(x)` and `v = L_f^n h + L_g L_f^{n-1} h u` sample by sample.
pub fn to_zv(plant: &dyn Plant, raw: &RawDemoSet) -> Result<DemonstrationSet> {
    let nf = plant
        .normal_form()
        .ok_or_else(|| Error::NotFeedbackLinearizable(plant.name()))?;
    let n = nf.brunovsky().state_dim();
    let mut demos = Vec::with_capacity(raw.demos.len());
    for traj in &raw.demos {
        let mut z = Vec::with_capacity(traj.len());
        let mut v = Vec::with_capacity(traj.len());
        for (k, (x, u)) in traj.states.iter().zip(&traj.inputs).enumerate() {
            let wrap = |e| Error::Sample {
                index: k,
                source: Box::new(e),
            };
            z.push(plant::feedback_linearize(plant, x).map_err(wrap)?);
            v.push(plant::normal_input(plant, x, u).map_err(wrap)?);
        }
        demos.push(Demonstration {
            times: traj.times.iter().map(|t| t - traj.t0).collect(),
            z,
            v,
        });
    }
    DemonstrationSet::new(n, raw.dt, demos)
}

/// Scalar inputs are stored as a flat list, vector inputs as nested lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSamples {
    Scalar(Vec<f64>),
    Vector(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub z: Vec<Vec<f64>>,
    pub v: InputSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSetFile {
    pub n: usize,
    #[serde(rename = "M")]
    pub count: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub demos: Vec<DemoRecord>,
}

pub(crate) fn vectors_to_rows(vs: &[DVector<f64>]) -> Vec<Vec<f64>> {
    vs.iter().map(|v| v.iter().copied().collect()).collect()
}

pub(crate) fn rows_to_vectors(rows: &[Vec<f64>]) -> Vec<DVector<f64>> {
    rows.iter().map(|r| DVector::from_column_slice(r)).collect()
}

impl DemonstrationSet {
    pub fn to_file(&self) -> DemoSetFile {
        DemoSetFile {
            n: self.n,
            count: self.len(),
            horizon: self.horizon,
            dt: self.dt,
            demos: self
                .demos
                .iter()
                .map(|d| DemoRecord {
                    z: vectors_to_rows(&d.z),
                    v: if self.m == 1 {
                        InputSamples::Scalar(d.v.iter().map(|v| v[0]).collect())
                    } else {
                        InputSamples::Vector(vectors_to_rows(&d.v))
                    },
                })
                .collect(),
        }
    }

    pub fn from_file(file: &DemoSetFile) -> Result<Self> {
        if file.count != file.demos.len() {
            return Err(Error::Format(format!(
                "M = {} but {} demonstrations stored",
                file.count,
                file.demos.len()
            )));
        }
        let len = file.demos.first().map_or(0, |d| d.z.len());
        let times = sim::time_grid(file.horizon, file.dt)?;
        if times.len() != len {
            return Err(Error::Format(format!(
                "{len} samples do not match T = {} and dt = {}",
                file.horizon, file.dt
            )));
        }
        let demos = file
            .demos
            .iter()
            .map(|d| Demonstration {
                times: times.clone(),
                z: rows_to_vectors(&d.z),
                v: match &d.v {
                    InputSamples::Scalar(v) => v.iter().map(|x| DVector::from_element(1, *x)).collect(),
                    InputSamples::Vector(v) => rows_to_vectors(v),
                },
            })
            .collect();
        Self::new(file.n, file.dt, demos)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file: DemoSetFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_file(&file)
    }

    /// One CSV per demonstration, `t,z1..zn,v`; returns the written paths in index order.
    pub fn save_csv(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let width = self.len().to_string().len();
        let mut paths = Vec::with_capacity(self.len());
        for (i, d) in self.demos.iter().enumerate() {
            let path = dir.join(format!("{stem}_{i:0width$}.csv"));
            fs::write(&path, demo_csv(d, self.m))?;
            paths.push(path);
        }
        Ok(paths)
    }

    pub fn load_csv(paths: &[PathBuf]) -> Result<Self> {
        let mut demos = Vec::with_capacity(paths.len());
        let mut shape = None;
        for p in paths {
            let (demo, n, m) = parse_demo_csv(&fs::read_to_string(p)?)?;
            if *shape.get_or_insert((n, m)) != (n, m) {
                return Err(Error::Format(format!("{} has a different header", p.display())));
            }
            demos.push(demo);
        }
        let (n, _) = shape.ok_or_else(|| Error::Format("no demonstration files".into()))?;
        let times = &demos[0].times;
        let dt = times[1] - times[0];
        Self::new(n, dt, demos)
    }
}

fn demo_csv(d: &Demonstration, m: usize) -> String {
    let n = d.z[0].len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("z{i}")));
    if m == 1 {
        header.push("v".into());
    } else {
        header.extend((1..=m).map(|i| format!("v{i}")));
    }
    let mut out = header.join(",");
    out.push('\n');
    for k in 0..d.times.len() {
        let row: Vec<String> = std::iter::once(d.times[k])
            .chain(d.z[k].iter().copied())
            .chain(d.v[k].iter().copied())
            .map(sim::format_number)
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn parse_demo_csv(text: &str) -> Result<(Demonstration, usize, usize)> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))?
        .split(',')
        .collect();
    let n = header.iter().filter(|h| h.starts_with('z')).count();
    let m = header.iter().filter(|h| h.starts_with('v')).count();
    if header.first() != Some(&"t") || n == 0 || m == 0 || header.len() != 1 + n + m {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let mut d = Demonstration {
        times: Vec::new(),
        z: Vec::new(),
        v: Vec::new(),
    };
    for (row, line) in lines.enumerate() {
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("row {}: {e}", row + 1)))?;
        if vals.len() != header.len() {
            return Err(Error::Format(format!("row {} has {} fields", row + 1, vals.len())));
        }
        d.times.push(vals[0]);
        d.z.push(DVector::from_column_slice(&vals[1..=n]));
        d.v.push(DVector::from_column_slice(&vals[1 + n..]));
    }
    d.check()?;
    Ok((d, n, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{expert_lqr, BallBeam, ChainPlant};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn unit_set() -> DemonstrationSet {
        let times = sim::time_grid(1.0, 0.1).unwrap();
        let demo = |z0: [f64; 2], vv: f64| Demonstration {
            times: times.clone(),
            z: times.iter().map(|_| v(&z0)).collect(),
            v: times.iter().map(|_| v(&[vv])).collect(),
        };
        DemonstrationSet::new(2, 0.1, vec![demo([0.0, 0.0], 0.0), demo([1.0, 0.0], -1.0), demo([0.0, 1.0], -2.0)])
            .unwrap()
    }

    #[test]
    fn unit_frame_has_unit_singular_values() {
        let set = unit_set();
        let r = validate_affine_independence(&set, &[0, 1, 2]).unwrap();
        assert!((r.min_sigma - 1.0).abs() < 1e-15);
        assert!(r.passed);
        assert!(set.includes_trivial);
    }

    #[test]
    fn duplicate_demonstrations_fail() {
        let mut set = unit_set();
        set.demos[2] = set.demos[1].clone();
        let r = validate_affine_independence(&set, &[0, 1, 2]).unwrap();
        assert_eq!(r.min_sigma, 0.0);
        assert!(!r.passed);
        assert!(validate_affine_independence(&set, &[0, 1]).is_err());
    }

    #[test]
    fn record_prepends_trivial_solution() {
        let plant = ChainPlant::new(2).unwrap();
        let expert = expert_lqr(&plant, &DMatrix::identity(2, 2), 1.0).unwrap();
        let raw = record_expert(&plant, &expert, &[v(&[1.0, 0.0]), v(&[0.0, 1.0])], 2.0, 1e-3).unwrap();
        assert_eq!(raw.demos.len(), 3);
        assert!(raw.demos[0].states.iter().all(|x| x.norm() == 0.0));
        let set = to_zv(&plant, &raw).unwrap();
        assert_eq!(set.len(), 3);
        assert!(set.includes_trivial);
        // The chain is already in normal form.
        for (d, traj) in set.demos.iter().zip(&raw.demos) {
            assert_eq!(d.z, traj.states);
            assert_eq!(d.v, traj.inputs);
        }
    }

    #[test]
    fn zero_start_reproduces_trivial_demo() {
        let plant = ChainPlant::new(2).unwrap();
        let expert = expert_lqr(&plant, &DMatrix::identity(2, 2), 1.0).unwrap();
        let raw = record_expert(&plant, &expert, &[DVector::zeros(2)], 1.0, 1e-2).unwrap();
        assert_eq!(raw.demos[0], raw.demos[1]);
    }

    #[test]
    fn ball_beam_is_sent_to_the_embedding() {
        let plant = BallBeam::default();
        let raw = RawDemoSet {
            horizon: 1.0,
            dt: 0.5,
            demos: vec![],
        };
        assert!(matches!(to_zv(&plant, &raw), Err(Error::NotFeedbackLinearizable(_))));
    }

    #[test]
    fn interpolation_is_exact_on_grid_and_linear_between() {
        let times = sim::time_grid(1.0, 0.1).unwrap();
        let d = Demonstration {
            z: times.iter().map(|t| v(&[*t])).collect(),
            v: times.iter().map(|t| v(&[2.0 * t])).collect(),
            times: times.clone(),
        };
        for (k, t) in times.iter().enumerate() {
            let (z, _) = d.eval(*t).unwrap();
            assert_eq!(z, d.z[k]);
        }
        let (z, vv) = d.eval(0.05).unwrap();
        assert!((z[0] - 0.05).abs() < 1e-15);
        assert!((vv[0] - 0.1).abs() < 1e-15);
        assert!(matches!(d.eval(1.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(d.eval(-0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn trivial_demo_evaluates_to_zero() {
        let set = unit_set();
        let (z, vv) = set.demos[0].eval(0.37).unwrap();
        assert_eq!(z.norm(), 0.0);
        assert_eq!(vv.norm(), 0.0);
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let plant = ChainPlant::new(2).unwrap();
        let expert = expert_lqr(&plant, &DMatrix::identity(2, 2), 1.0).unwrap();
        let raw = record_expert(&plant, &expert, &[v(&[0.1, 0.3]), v(&[-0.7, 1.0 / 3.0])], 0.5, 1e-2).unwrap();
        let set = to_zv(&plant, &raw).unwrap();
        let text = serde_json::to_string(&set.to_file()).unwrap();
        let back = DemonstrationSet::from_file(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let plant = ChainPlant::new(2).unwrap();
        let expert = expert_lqr(&plant, &DMatrix::identity(2, 2), 1.0).unwrap();
        let raw = record_expert(&plant, &expert, &[v(&[0.1, 0.3]), v(&[-0.7, 1.0 / 3.0])], 0.5, 1e-2).unwrap();
        let set = to_zv(&plant, &raw).unwrap();
        let dir = std::env::temp_dir().join(format!("lfd-demo-csv-{}", std::process::id()));
        let paths = set.save_csv(&dir, "demo").unwrap();
        assert_eq!(paths.len(), 3);
        let back = DemonstrationSet::load_csv(&paths).unwrap();
        fs::remove_dir_all(&dir).unwrap();
        assert_eq!(back.demos, set.demos);
    }
}
