//! Pipeline stages. Every stage reads its inputs from and writes its outputs to the output
//! directory, so stages can be rerun independently.

use std::fs;
use std::path::{Path, PathBuf};

use lfd_core::certify::{self, MonodromyCertificate};
use lfd_core::demos::{self, AffineReport, DemonstrationSet};
use lfd_core::embed;
use lfd_core::geometry;
use lfd_core::learner::{self, AffineBasis, AnyController, LearnedController};
use lfd_core::multi::MultiController;
use lfd_core::plant;
use lfd_core::sim::{format_number, SimOptions, Trajectory};
use lfd_core::systems::{self, Reference};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, Resolved};
use crate::CliError;

pub const DEMOS_JSON: &str = "demos.json";
pub const EMBEDDED_JSON: &str = "embedded_demos.json";
pub const VALIDATION_JSON: &str = "validation.json";
pub const CONTROLLER_JSON: &str = "controller.json";
pub const CERTIFICATE_JSON: &str = "certificate.json";
pub const SIMULATION_SUMMARY_JSON: &str = "simulation_summary.json";
pub const TRACKING_CSV: &str = "tracking.csv";
pub const TRACKING_ERRORS_CSV: &str = "tracking_errors.csv";
pub const TRACKING_SUMMARY_JSON: &str = "tracking_summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Demos,
    Learn,
    Certify,
    Simulate,
    Track,
    All,
}

pub struct Context {
    pub cfg: Resolved,
    pub jobs: usize,
    pub force: bool,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn opts(&self) -> SimOptions {
        SimOptions {
            dt: self.cfg.dt,
            hold: self.cfg.hold,
        }
    }
}

pub fn run(ctx: &Context, stage: Stage) -> Result<(), CliError> {
    fs::create_dir_all(&ctx.cfg.output_dir).map_err(|e| {
        CliError::Validation(format!("cannot create {}: {e}", ctx.cfg.output_dir.display()))
    })?;
    match stage {
        Stage::Demos => demos(ctx),
        Stage::Learn => learn(ctx),
        Stage::Certify => certify_stored(ctx),
        Stage::Simulate => simulate(ctx),
        Stage::Track => track(ctx),
        Stage::All => {
            demos(ctx)?;
            match learn(ctx) {
                Err(CliError::Certification(m)) if ctx.force => {
                    eprintln!("lfd: continuing past failed certificate: {m}");
                }
                other => other?,
            }
            simulate(ctx)?;
            if ctx.cfg.track.is_some() {
                track(ctx)?;
            }
            Ok(())
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Validation(format!("serializing {}: {e}", path.display())))?;
    write(path, &(text + "\n"))
}

fn require(path: &Path, stage: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{} not found; run `lfd {stage}` first",
            path.display()
        )))
    }
}

fn csv_row(values: impl IntoIterator<Item = f64>) -> String {
    let mut row = values.into_iter().map(format_number).collect::<Vec<_>>().join(",");
    row.push('\n');
    row
}

fn labels(prefix: &str, count: usize) -> Vec<String> {
    if count == 1 && (prefix == "u" || prefix == "v") {
        vec![prefix.to_string()]
    } else {
        (1..=count).map(|i| format!("{prefix}{i}")).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ValidationFile {
    mode: Mode,
    #[serde(rename = "M")]
    count: usize,
    passed: bool,
    reports: Vec<AffineReport>,
}

fn demos(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let plant = cfg.plant.as_ref();
    let raw = demos::record_expert(plant, &cfg.expert, &cfg.initial_conditions, cfg.horizon, cfg.dt)?;
    let set = match &cfg.embedding {
        Some(emb) => {
            let embedded = embed::transform_demos(emb, &raw, &cfg.xi0)?;
            embedded.save_json(&ctx.path(EMBEDDED_JSON))?;
            embedded.to_demo_set()?
        }
        None => demos::to_zv(plant, &raw)?,
    };
    set.save_json(&ctx.path(DEMOS_JSON))?;
    let files = set.save_csv(&cfg.output_dir, "demo")?;

    let index_sets: Vec<Vec<usize>> = if cfg.mode == Mode::Multi {
        let tri = geometry::delaunay(&set.initial_states())?;
        tri.simplices.iter().map(|s| s.vertex_indices.clone()).collect()
    } else {
        vec![(0..=set.n).collect()]
    };
    let reports = index_sets
        .iter()
        .map(|idx| demos::validate_affine_independence(&set, idx))
        .collect::<lfd_core::Result<Vec<_>>>()?;
    let passed = reports.iter().all(|r| r.passed);
    write_json(
        &ctx.path(VALIDATION_JSON),
        &ValidationFile {
            mode: cfg.mode,
            count: set.len(),
            passed,
            reports: reports.clone(),
        },
    )?;
    let min_sigma = reports.iter().map(|r| r.min_sigma).fold(f64::INFINITY, f64::min);
    println!(
        "demos: {} files, min sigma_n(Z(t)) = {min_sigma:e}",
        files.len()
    );
    if passed {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "demonstrations are not affinely independent on [0, T] (min sigma_n = {min_sigma:e})"
        )))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CertificateFile {
    certificate: MonodromyCertificate,
    t_tilde_grid: Vec<f64>,
    #[serde(rename = "suggested_T")]
    suggested_period: Option<f64>,
}

fn bases(ctrl: &AnyController) -> Vec<AffineBasis> {
    match ctrl {
        AnyController::Single(c) => vec![c.basis.clone()],
        AnyController::Multi(c) => c.bases.clone(),
    }
}

fn certify_and_write(ctx: &Context, bases: &[AffineBasis], period: f64) -> Result<(), CliError> {
    let cert = certify::certify(bases, period)?;
    let grid: Vec<f64> = ctx
        .cfg
        .t_tilde_grid
        .iter()
        .copied()
        .filter(|t| *t <= bases[0].horizon * (1.0 + 1e-12))
        .collect();
    let suggested = if cert.passed() {
        None
    } else {
        certify::find_t_tilde(bases, &grid)?
    };
    write_json(
        &ctx.path(CERTIFICATE_JSON),
        &CertificateFile {
            certificate: cert.clone(),
            t_tilde_grid: grid,
            suggested_period: suggested,
        },
    )?;
    println!(
        "certificate: T = {period}, max |Psi| = {:.6}, verdict {:?}",
        cert.max_norm(),
        cert.verdict
    );
    if cert.passed() {
        Ok(())
    } else {
        let hint = match suggested {
            Some(t) => format!("; T = {t} certifies"),
            None => "; no period on the search grid certifies".into(),
        };
        Err(CliError::Certification(format!(
            "max |Psi(T)| = {} >= 1 at T = {period}{hint}",
            cert.max_norm()
        )))
    }
}

fn learn(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let path = ctx.path(DEMOS_JSON);
    require(&path, "demos")?;
    let set = DemonstrationSet::load_json(&path)?;
    let multi = match cfg.mode {
        Mode::Multi => true,
        Mode::Single => false,
        Mode::Embed => set.len() > set.n + 1,
    };
    let ctrl = if multi {
        AnyController::Multi(MultiController::from_set(&set, cfg.feedback)?)
    } else {
        AnyController::Single(LearnedController::from_set(&set, cfg.feedback)?)
    };
    let bases = bases(&ctrl);
    // A period outside (0, T] cannot be stored, but it is still certified (and fails).
    if cfg.period > 0.0 && cfg.period <= set.horizon {
        let ctrl = match ctrl {
            AnyController::Multi(c) => AnyController::Multi(c.with_period(cfg.period)?),
            AnyController::Single(c) => {
                AnyController::Single(LearnedController::new(c.basis, cfg.feedback, cfg.period)?)
            }
        };
        ctrl.save_json(&ctx.path(CONTROLLER_JSON))?;
    }
    certify_and_write(ctx, &bases, cfg.period)
}

fn load_controller(ctx: &Context) -> Result<AnyController, CliError> {
    let path = ctx.path(CONTROLLER_JSON);
    require(&path, "learn")?;
    Ok(AnyController::load_json(&path)?)
}

fn certify_stored(ctx: &Context) -> Result<(), CliError> {
    let ctrl = load_controller(ctx)?;
    certify_and_write(ctx, &bases(&ctrl), ctrl.policy().period())
}

/// Loads the controller and refuses to run it uncertified unless forced.
fn certified_controller(ctx: &Context) -> Result<AnyController, CliError> {
    let ctrl = load_controller(ctx)?;
    let cert = certify::certify(&bases(&ctrl), ctrl.policy().period())?;
    if !cert.passed() {
        let msg = format!("max |Psi(T)| = {} >= 1", cert.max_norm());
        if ctx.force {
            eprintln!("lfd: running an uncertified controller: {msg}");
        } else {
            return Err(CliError::Certification(format!("{msg}; pass --force to run anyway")));
        }
    }
    Ok(ctrl)
}

/// Closed-loop failures are divergence, whatever the proximate numerical cause.
fn closed_loop_error(e: lfd_core::Error) -> CliError {
    use lfd_core::Error;
    match e {
        Error::Divergence { .. }
        | Error::DomainExit { .. }
        | Error::SingularEmbedding { .. }
        | Error::SingularDecoupling { .. } => CliError::Divergence(e.to_string()),
        other => other.into(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    initial_state: Vec<f64>,
    duration: f64,
    #[serde(rename = "T")]
    period: f64,
    final_state_norm: f64,
    final_z_norm: f64,
    /// `|z(pT)|` for `p = 0, 1, ...`.
    period_norms: Vec<f64>,
    /// `|z((p + 1)T)| / |z(pT)|`.
    decay_ratios: Vec<f64>,
    /// First time with `|x| < 1e-2`.
    settle_time: Option<f64>,
}

struct Run {
    csv: String,
    summary: RunSummary,
}

fn simulate_one(ctx: &Context, ctrl: &AnyController, x0: &[f64], duration: f64) -> Result<Run, CliError> {
    let cfg = &ctx.cfg;
    let plant = cfg.plant.as_ref();
    let policy = ctrl.policy();
    let x0v = DVector::from_column_slice(x0);
    let n = plant.state_dim();
    let m = plant.input_dim();
    let traj: Trajectory = match &cfg.embedding {
        Some(emb) => embed::simulate_embedded_closed_loop(emb, policy, &x0v, &cfg.xi0, duration, &ctx.opts()),
        None => learner::simulate_learned(plant, policy, &x0v, duration, &ctx.opts()),
    }
    .map_err(closed_loop_error)?;

    let aux = traj.states[0].len() - n;
    let mut header = labels("x", n);
    header.extend(labels("xi", aux));
    header.extend(labels("z", n));
    header.extend(labels("v", m));
    header.extend(labels("u", m));
    let mut csv = header.join(",");
    csv = format!("t,{csv}\n");
    let mut zs = Vec::with_capacity(traj.len());
    for ((t, y), u) in traj.times.iter().zip(&traj.states).zip(&traj.inputs) {
        let x = y.rows(0, n).into_owned();
        let (z, v) = match &cfg.embedding {
            Some(emb) => {
                let xi = y.rows(n, aux).into_owned();
                let z = emb.phi(&x, &xi)?;
                let v = emb.r(&x) * u[0] - emb.s(&x, &xi);
                (z, DVector::from_element(1, v))
            }
            None => (
                plant::feedback_linearize(plant, &x)?,
                plant::normal_input(plant, &x, u)?,
            ),
        };
        csv.push_str(&csv_row(
            std::iter::once(*t)
                .chain(y.iter().copied())
                .chain(z.iter().copied())
                .chain(v.iter().copied())
                .chain(u.iter().copied()),
        ));
        zs.push(z);
    }

    let period = policy.period();
    let mut period_norms = Vec::new();
    let mut p = 0usize;
    loop {
        let t = p as f64 * period;
        if t > traj.final_time() + 1e-9 {
            break;
        }
        period_norms.push(zs[traj.index_at(t)].norm());
        p += 1;
    }
    let decay_ratios = period_norms.windows(2).map(|w| w[1] / w[0]).collect();
    let settle_time = traj
        .times
        .iter()
        .zip(&traj.states)
        .find(|(_, y)| y.rows(0, n).norm() < 1e-2)
        .map(|(t, _)| *t);
    Ok(Run {
        csv,
        summary: RunSummary {
            initial_state: x0.to_vec(),
            duration,
            period,
            final_state_norm: traj.final_state().rows(0, n).norm(),
            final_z_norm: zs.last().map_or(0.0, |z| z.norm()),
            period_norms,
            decay_ratios,
            settle_time,
        },
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))
}

fn simulate(ctx: &Context) -> Result<(), CliError> {
    let ctrl = certified_controller(ctx)?;
    let sim = &ctx.cfg.simulate;
    let runs: Vec<Result<Run, CliError>> = pool(ctx.jobs)?.install(|| {
        sim.initial_states
            .par_iter()
            .map(|x0| simulate_one(ctx, &ctrl, x0, sim.duration))
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let width = runs.len().to_string().len();
    for (k, run) in runs.iter().enumerate() {
        write(&ctx.path(&format!("simulation_{k:0width$}.csv")), &run.csv)?;
        println!(
            "simulate: run {k}, final |x| = {:e}, settle time {:?}",
            run.summary.final_state_norm, run.summary.settle_time
        );
    }
    let summaries: Vec<&RunSummary> = runs.iter().map(|r| &r.summary).collect();
    write_json(&ctx.path(SIMULATION_SUMMARY_JSON), &summaries)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackingSummary {
    reference: String,
    frequency: f64,
    initial_state: Vec<f64>,
    duration: f64,
    max_error: f64,
    /// Largest error norm after the first reference period `1/f`.
    max_error_after_first_period: f64,
    /// Largest error norm over each controller period.
    period_max_errors: Vec<f64>,
    final_error: f64,
}

fn track(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let tc = cfg
        .track
        .as_ref()
        .ok_or_else(|| CliError::Validation("no tracking reference configured".into()))?;
    if cfg.embedding.is_some() {
        return Err(CliError::Validation(
            "tracking is defined for feedback-linearizable plants only".into(),
        ));
    }
    let plant = cfg.plant.as_ref();
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let full = systems::figure_eight(tc.frequency)?;
    let reference = match (n, m) {
        (9, 3) if tc.axis.is_none() => full,
        (3, 1) => full.axis(tc.axis.unwrap_or(0))?,
        _ => {
            return Err(CliError::Validation(format!(
                "the figure eight needs triple integrators (n = 3m), got n = {n}, m = {m}"
            )))
        }
    };
    let x0 = match &tc.initial_state {
        Some(x) if x.len() == n => DVector::from_column_slice(x),
        Some(x) => {
            return Err(CliError::Validation(format!(
                "tracking start of length {} for a plant on R^{n}",
                x.len()
            )))
        }
        // At rest, 0.3 m off the reference start in the horizontal plane.
        None => {
            let mut x = DVector::zeros(n);
            let p0 = reference.position(0.0);
            for i in 0..m {
                x[i] = p0[i] + if m == 1 || i < 2 { 0.3 } else { 0.0 };
            }
            x
        }
    };
    let ctrl = certified_controller(ctx)?;
    let run = systems::simulate_tracking(plant, ctrl.policy(), &reference, &x0, tc.duration, &ctx.opts())
        .map_err(closed_loop_error)?;

    let traj = &run.trajectory;
    let mut header = vec!["t".to_string()];
    header.extend(labels("x", n));
    header.extend(labels("zr", n));
    header.extend(labels("e", n));
    header.extend(labels("u", m));
    let mut csv = header.join(",") + "\n";
    let axis_names = ["x", "y", "z"];
    let mut err_header = vec!["t".to_string()];
    if m == 1 {
        err_header.push(format!("e_{}", axis_names[tc.axis.unwrap_or(0)]));
    } else {
        err_header.extend(axis_names.iter().map(|a| format!("e_{a}")));
    }
    err_header.push("norm".into());
    let mut err_csv = err_header.join(",") + "\n";
    for (((t, x), u), e) in traj.times.iter().zip(&traj.states).zip(&traj.inputs).zip(&run.errors) {
        let (z_r, _) = reference.eval(*t);
        csv.push_str(&csv_row(
            std::iter::once(*t)
                .chain(x.iter().copied())
                .chain(z_r.iter().copied())
                .chain(e.iter().copied())
                .chain(u.iter().copied()),
        ));
        err_csv.push_str(&csv_row(
            std::iter::once(*t)
                .chain(e.rows(0, m).iter().copied())
                .chain(std::iter::once(e.norm())),
        ));
    }
    write(&ctx.path(TRACKING_CSV), &csv)?;
    write(&ctx.path(TRACKING_ERRORS_CSV), &err_csv)?;

    let period = ctrl.policy().period();
    let norms = run.error_norms();
    let mut period_max_errors = Vec::new();
    let mut start = 0.0;
    while start < traj.final_time() - 1e-9 {
        let end = start + period;
        let worst = traj
            .times
            .iter()
            .zip(&norms)
            .filter(|(t, _)| **t >= start - 1e-12 && **t <= end + 1e-12)
            .map(|(_, e)| *e)
            .fold(0.0, f64::max);
        period_max_errors.push(worst);
        start = end;
    }
    let summary = TrackingSummary {
        reference: reference.description(),
        frequency: tc.frequency,
        initial_state: x0.iter().copied().collect(),
        duration: tc.duration,
        max_error: norms.iter().copied().fold(0.0, f64::max),
        max_error_after_first_period: run.max_error_after(1.0 / tc.frequency),
        period_max_errors,
        final_error: norms.last().copied().unwrap_or(0.0),
    };
    println!(
        "track: max error {:e}, after the first period {:e}",
        summary.max_error, summary.max_error_after_first_period
    );
    write_json(&ctx.path(TRACKING_SUMMARY_JSON), &summary)
}
