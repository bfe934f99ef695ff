//! Scenario execution, CSV logs, summaries and parameter sweeps.
//!
//! Numbers are written with 17 significant digits (`{:.16e}`), `.` as the
//! decimal separator and LF line endings, so logs are byte-identical across
//! runs of the same scenario.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::Value;
use thiserror::Error;

use crate::certificate::{self, CertificateError, CertificateReport};
use crate::graph::Graph;
use crate::metrics::{self, BoundednessReport, LyapunovMonitor, SyncMetrics, KSTAR_MARGIN};
use crate::ode_net::{self, SimError, Trajectory};
use crate::pde1d;
use crate::scenario::{self, CertificateSetup, OdeSetup, PdeSetup, ScenarioError, ScenarioFile, Setup};

/// Sync-error level that defines the settled time.
pub const SETTLE_THRESHOLD: f64 = 1e-3;

pub mod exit {
    pub const OK: i32 = 0;
    pub const CERTIFICATE_FAILED: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const SCHEMA: i32 = 64;
    pub const IO: i32 = 74;
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(ScenarioError::Io { .. }) | RunError::Io { .. } => exit::IO,
            RunError::Scenario(_) => exit::SCHEMA,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Formats a value with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Refuse to simulate unless the certificate passes.
    pub require_cert: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    CertificateFailed,
    Diverged { t: f64, max_abs: f64 },
    NonFinite { t: f64 },
}

impl RunStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Completed => exit::OK,
            RunStatus::CertificateFailed => exit::CERTIFICATE_FAILED,
            RunStatus::Diverged { .. } | RunStatus::NonFinite { .. } => exit::DIVERGED,
        }
    }
}

/// Certificate verdict as shown in summaries and by `check-certificate`.
#[derive(Debug, Clone)]
pub struct CertificateOutcome {
    pub structure: Option<certificate::StructureReport>,
    pub inequality: Option<certificate::InequalityReport>,
    pub report: Option<CertificateReport>,
    pub error: Option<CertificateError>,
    /// `θ / (2 λ₂)` (worst channel), when the graphs are connected.
    pub coupling_bound: Option<f64>,
}

impl CertificateOutcome {
    pub fn passed(&self) -> bool {
        self.report.is_some()
    }
}

/// Runs structure, inequality and coupling-bound checks, keeping partial
/// results for reporting.
pub fn evaluate_certificate(setup: &Setup) -> Option<CertificateOutcome> {
    let cs = setup.certificate()?;
    let graphs = setup.graphs();
    let lambda_scale = pde_lambda_scale(setup);
    let refs: Vec<&Graph> = graphs.iter().collect();
    let structure = certificate::check_structure(&cs.cert).ok();
    let inequality = certificate::check_jacobian_inequality(&cs.cert, setup.field(), cs.grid, cs.seed).ok();
    let coupling_bound = coupling_bound(cs, &graphs, lambda_scale);
    let (report, error) = match certificate::certify_channels(&cs.cert, setup.field(), &refs, cs.grid, cs.seed) {
        Ok(mut r) => {
            // the PDE threshold uses the discrete Neumann operator, i.e. the
            // cell path graph scaled by 1/h²
            if let Some(scale) = lambda_scale {
                r.lambda2.iter_mut().for_each(|l| *l *= scale);
                r.kstar /= scale;
            }
            (Some(r), None)
        }
        Err(e) => (None, Some(e)),
    };
    Some(CertificateOutcome {
        structure,
        inequality,
        report,
        error,
        coupling_bound,
    })
}

fn pde_lambda_scale(setup: &Setup) -> Option<f64> {
    match setup {
        Setup::Pde(p) => {
            let h = p.scenario.grid.h();
            Some(1.0 / (h * h))
        }
        Setup::Ode(_) => None,
    }
}

fn coupling_bound(cs: &CertificateSetup, graphs: &[Graph], lambda_scale: Option<f64>) -> Option<f64> {
    let mut k = 0.0_f64;
    for (g, ch) in graphs.iter().zip(&cs.cert.channels) {
        let b = g.coupling_bound(cs.cert.theta).ok()? / ch.omega;
        k = k.max(b);
    }
    Some(k / lambda_scale.unwrap_or(1.0))
}

/// Everything a run produces, before it touches the filesystem.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub status: RunStatus,
    /// `(file name, contents)` in write order.
    pub files: Vec<(String, String)>,
    pub trajectory: Option<Trajectory>,
    pub final_sync_err: f64,
    /// Per-record total sync error.
    pub sync_err_series: Vec<(f64, f64)>,
    pub max_weight: Option<(String, f64)>,
    pub certificate: Option<CertificateOutcome>,
}

impl RunArtifacts {
    pub fn settled_time(&self) -> Option<f64> {
        self.sync_err_series
            .iter()
            .find(|(_, e)| *e < SETTLE_THRESHOLD)
            .map(|(t, _)| *t)
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, out_dir: &Path) -> Result<(), RunError> {
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        for (name, contents) in &self.files {
            let path = out_dir.join(name);
            fs::write(&path, contents).map_err(io_err(&path))?;
        }
        Ok(())
    }
}

/// Simulates a validated setup and renders its CSV logs and summary.
pub fn execute(setup: &Setup, opts: RunOptions) -> RunArtifacts {
    let cert = evaluate_certificate(setup);
    if opts.require_cert && !cert.as_ref().is_some_and(CertificateOutcome::passed) {
        let mut summary = String::new();
        summary_header(&mut summary, setup);
        summary_certificate(&mut summary, cert.as_ref());
        summary.push_str("status: certificate check failed; simulation not started\n");
        return RunArtifacts {
            status: RunStatus::CertificateFailed,
            files: vec![("summary.txt".into(), summary)],
            trajectory: None,
            final_sync_err: f64::NAN,
            sync_err_series: Vec::new(),
            max_weight: None,
            certificate: cert,
        };
    }
    match setup {
        Setup::Ode(s) => execute_ode(setup, s, cert),
        Setup::Pde(s) => execute_pde(setup, s, cert),
    }
}

fn split_result(res: Result<Trajectory, SimError>) -> (Trajectory, RunStatus) {
    match res {
        Ok(t) => (t, RunStatus::Completed),
        Err(SimError::Diverged { t, max_abs, partial }) => (*partial, RunStatus::Diverged { t, max_abs }),
        Err(SimError::NonFiniteState { t, partial }) => (*partial, RunStatus::NonFinite { t }),
        Err(SimError::InvalidScenario(m)) => unreachable!("setup was validated: {m}"),
    }
}

fn ode_monitor(cert: Option<&CertificateOutcome>, cs: Option<&CertificateSetup>) -> Option<LyapunovMonitor> {
    let kstar = cert?.coupling_bound? * KSTAR_MARGIN;
    Some(LyapunovMonitor {
        p: cs?.cert.p.clone(),
        kstar,
    })
}

fn execute_ode(setup: &Setup, s: &OdeSetup, cert: Option<CertificateOutcome>) -> RunArtifacts {
    let sc = &s.scenario;
    let (traj, status) = split_result(ode_net::integrate(sc));
    let monitor = ode_monitor(cert.as_ref(), s.certificate.as_ref());
    let state_box = s.certificate.as_ref().map(|c| &c.cert.state_box);
    let m = metrics::trajectory_metrics(&traj, &sc.channels, monitor.as_ref(), state_box);
    let bounded = metrics::boundedness_guard(&traj, state_box);

    let mut states = String::from("t");
    for i in 1..=sc.n_nodes {
        for d in 1..=sc.dim() {
            let _ = write!(states, ",x_{i}_{d}");
        }
    }
    states.push('\n');
    for (t, x) in traj.times.iter().zip(&traj.states) {
        push_row(&mut states, *t, x.iter().copied());
    }

    let labels: Vec<String> = sc
        .channels
        .iter()
        .enumerate()
        .flat_map(|(q, ch)| (0..ch.graph.n_links()).map(move |l| format!("k{}_{}", q + 1, ch.graph.link_label(l))))
        .collect();
    let mut weights = String::from("t");
    for l in &labels {
        let _ = write!(weights, ",{l}");
    }
    weights.push('\n');
    for (t, k) in traj.times.iter().zip(&traj.weights) {
        push_row(&mut weights, *t, k.iter().flatten().copied());
    }

    let mut mcsv = String::from("t,sync_err_total");
    for q in 1..=sc.channels.len() {
        let _ = write!(mcsv, ",sync_err_{q}");
    }
    mcsv.push_str(",V,max_state,in_box\n");
    for r in &m {
        let mut cols: Vec<String> = vec![fmt_num(r.t), fmt_num(r.sync_err_total)];
        cols.extend(r.sync_err.iter().map(|&v| fmt_num(v)));
        cols.push(fmt_num(r.lyapunov));
        cols.push(fmt_num(r.max_state));
        cols.push(if r.in_box { "1".into() } else { "0".into() });
        mcsv.push_str(&cols.join(","));
        mcsv.push('\n');
    }

    let final_weights: Vec<(String, f64)> = labels
        .iter()
        .cloned()
        .zip(traj.final_weights().iter().flatten().copied())
        .collect();
    let max_weight = max_entry(&final_weights);
    let last = m.last();
    let mut summary = String::new();
    summary_header(&mut summary, setup);
    summary_status(&mut summary, &status);
    summary_sync(&mut summary, last);
    for (q, g) in setup.graphs().iter().enumerate() {
        let _ = writeln!(summary, "lambda2_{}: {}", q + 1, fmt_num(g.lambda2()));
    }
    summary_certificate(&mut summary, cert.as_ref());
    if let Some(mon) = &monitor {
        let _ = writeln!(summary, "lyapunov_kstar: {}", fmt_num(mon.kstar));
        let from = m.iter().position(|r| r.in_box).unwrap_or(m.len());
        let rise = metrics::max_lyapunov_increase(&m, from);
        if rise > 1e-8 {
            let _ = writeln!(summary, "warning: V increased by {} between records", fmt_num(rise));
        }
    }
    summary_bounded(&mut summary, &bounded);
    summary_weights(&mut summary, max_weight.as_ref(), &final_weights);

    RunArtifacts {
        final_sync_err: last.map_or(f64::NAN, |r| r.sync_err_total),
        sync_err_series: m.iter().map(|r| (r.t, r.sync_err_total)).collect(),
        files: vec![
            ("states.csv".into(), states),
            ("weights.csv".into(), weights),
            ("metrics.csv".into(), mcsv),
            ("summary.txt".into(), summary),
        ],
        trajectory: Some(traj),
        status,
        max_weight,
        certificate: cert,
    }
}

fn execute_pde(setup: &Setup, s: &PdeSetup, cert: Option<CertificateOutcome>) -> RunArtifacts {
    let sc = &s.scenario;
    let grid = sc.grid;
    let n = sc.dim();
    let (traj, status) = split_result(pde1d::integrate_pde(sc));
    let kstar = cert.as_ref().and_then(|c| c.coupling_bound).map(|k| k * KSTAR_MARGIN);
    let p = s.certificate.as_ref().map(|c| &c.cert.p);

    let mut profiles = String::from("t");
    for m in 1..=grid.n_cells {
        for d in 1..=n {
            let _ = write!(profiles, ",x_{m}_{d}");
        }
    }
    profiles.push('\n');
    let mut diffusion = String::from("t");
    for f in 1..=grid.n_faces() {
        let _ = write!(diffusion, ",k_{f}");
    }
    diffusion.push('\n');
    let mut pm = String::from("t,sync_err");
    if n == 1 {
        pm.push_str(",mass");
    } else {
        for d in 1..=n {
            let _ = write!(pm, ",mass_{d}");
        }
    }
    pm.push_str(",V\n");

    let mut series = Vec::with_capacity(traj.len());
    for ((t, x), k) in traj.times.iter().zip(&traj.states).zip(&traj.weights) {
        push_row(&mut profiles, *t, x.iter().copied());
        push_row(&mut diffusion, *t, k[0].iter().copied());
        let err = pde1d::spatial_sync_error(x, &grid, &sc.c);
        let v = match (p, kstar) {
            (Some(p), Some(ks)) => pde1d::pde_lyapunov(x, &k[0], &grid, p, ks, &sc.gamma),
            _ => f64::NAN,
        };
        let mut cols = vec![err];
        cols.extend(pde1d::mass(x, &grid, n));
        cols.push(v);
        push_row(&mut pm, *t, cols.into_iter());
        series.push((*t, err));
    }

    let final_faces: Vec<(String, f64)> = traj
        .final_weights()
        .first()
        .map(|k| {
            k.iter()
                .enumerate()
                .map(|(f, &v)| (format!("k_{}", f + 1), v))
                .collect()
        })
        .unwrap_or_default();
    let max_weight = max_entry(&final_faces);
    let final_err = series.last().map_or(f64::NAN, |s| s.1);
    let state_box = s.certificate.as_ref().map(|c| &c.cert.state_box);
    let bounded = metrics::boundedness_guard(&traj, state_box);

    let mut summary = String::new();
    summary_header(&mut summary, setup);
    summary_status(&mut summary, &status);
    let _ = writeln!(summary, "final_spatial_sync_err: {}", fmt_num(final_err));
    let _ = writeln!(
        summary,
        "lambda2_neumann: {}",
        fmt_num(pde1d::discrete_poincare_lambda2(&grid))
    );
    summary_certificate(&mut summary, cert.as_ref());
    summary_bounded(&mut summary, &bounded);
    summary_weights(&mut summary, max_weight.as_ref(), &final_faces);

    RunArtifacts {
        status,
        files: vec![
            ("profiles.csv".into(), profiles),
            ("diffusion.csv".into(), diffusion),
            ("pde_metrics.csv".into(), pm),
            ("summary.txt".into(), summary),
        ],
        trajectory: Some(traj),
        final_sync_err: final_err,
        sync_err_series: series,
        max_weight,
        certificate: cert,
    }
}

fn push_row(out: &mut String, t: f64, vals: impl Iterator<Item = f64>) {
    out.push_str(&fmt_num(t));
    for v in vals {
        out.push(',');
        out.push_str(&fmt_num(v));
    }
    out.push('\n');
}

/// Largest value; ties keep the first label.
fn max_entry(entries: &[(String, f64)]) -> Option<(String, f64)> {
    entries
        .iter()
        .fold(None, |best: Option<(String, f64)>, (l, v)| match best {
            Some((_, bv)) if bv >= *v => best,
            _ => Some((l.clone(), *v)),
        })
}

fn summary_header(out: &mut String, setup: &Setup) {
    match setup {
        Setup::Ode(s) => {
            let sc = &s.scenario;
            let _ = writeln!(out, "kind: ode");
            let _ = writeln!(out, "nodes: {}", sc.n_nodes);
            let _ = writeln!(out, "state_dim: {}", sc.dim());
            let _ = writeln!(out, "channels: {}", sc.channels.len());
            let _ = writeln!(out, "adaptation: {}", if sc.adaptation_enabled { "on" } else { "off" });
            let _ = writeln!(out, "t_end: {}  dt: {}", fmt_num(sc.time.t_end), fmt_num(sc.time.dt));
        }
        Setup::Pde(s) => {
            let sc = &s.scenario;
            let _ = writeln!(out, "kind: pde");
            let _ = writeln!(out, "cells: {}  length: {}", sc.grid.n_cells, fmt_num(sc.grid.length));
            let _ = writeln!(out, "state_dim: {}", sc.dim());
            let _ = writeln!(out, "adaptation: {}", if sc.adaptation_enabled { "on" } else { "off" });
            let _ = writeln!(out, "t_end: {}  dt: {}", fmt_num(sc.time.t_end), fmt_num(sc.time.dt));
        }
    }
}

fn summary_status(out: &mut String, status: &RunStatus) {
    let _ = match status {
        RunStatus::Completed => writeln!(out, "status: completed"),
        RunStatus::CertificateFailed => writeln!(out, "status: certificate failed"),
        RunStatus::Diverged { t, max_abs } => {
            writeln!(
                out,
                "status: diverged at t = {} (|x|inf = {})",
                fmt_num(*t),
                fmt_num(*max_abs)
            )
        }
        RunStatus::NonFinite { t } => writeln!(out, "status: non-finite state at t = {}", fmt_num(*t)),
    };
}

fn summary_sync(out: &mut String, last: Option<&SyncMetrics>) {
    let Some(r) = last else { return };
    let _ = writeln!(out, "final_sync_err_total: {}", fmt_num(r.sync_err_total));
    for (q, e) in r.sync_err.iter().enumerate() {
        let _ = writeln!(out, "final_sync_err_{}: {}", q + 1, fmt_num(*e));
    }
}

fn summary_certificate(out: &mut String, cert: Option<&CertificateOutcome>) {
    let Some(c) = cert else {
        let _ = writeln!(out, "certificate: not provided");
        return;
    };
    let verdict = if c.passed() {
        "pass".to_string()
    } else {
        format!("fail ({})", c.error.as_ref().map_or(String::new(), |e| e.to_string()))
    };
    let _ = writeln!(out, "certificate: {verdict}");
    if let Some(s) = &c.structure {
        let _ = writeln!(out, "  structure: {s}");
    }
    if let Some(i) = &c.inequality {
        let _ = writeln!(
            out,
            "  worst_margin: {} at {:?} over {} samples",
            fmt_num(i.worst_margin),
            i.worst_location,
            i.n_samples
        );
    }
    match c.coupling_bound {
        Some(k) => {
            let _ = writeln!(out, "kstar: {}", fmt_num(k));
        }
        None => {
            let _ = writeln!(out, "kstar: undefined (disconnected graph)");
        }
    }
}

fn summary_bounded(out: &mut String, b: &BoundednessReport) {
    let _ = writeln!(out, "max_state: {}", fmt_num(b.max_state));
    let _ = match b.first_box_exit {
        Some(t) => writeln!(out, "box_exit: yes (first at t = {})", fmt_num(t)),
        None => writeln!(out, "box_exit: no"),
    };
    let _ = writeln!(
        out,
        "average_bound: {} ({})",
        fmt_num(b.bibs_bound),
        if b.bibs_holds() { "holds" } else { "violated" }
    );
}

fn summary_weights(out: &mut String, max: Option<&(String, f64)>, all: &[(String, f64)]) {
    if let Some((label, v)) = max {
        let _ = writeln!(out, "max_final_weight: {label} {}", fmt_num(*v));
    }
    let mut sorted = all.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
    let _ = writeln!(out, "final_weights_descending:");
    for (l, v) in sorted {
        let _ = writeln!(out, "  {l} {}", fmt_num(v));
    }
}

/// `run` subcommand: load, validate, simulate, write. Nothing is written
/// when the scenario fails validation.
pub fn run(scenario_path: &Path, out_dir: &Path, opts: RunOptions) -> Result<RunArtifacts, RunError> {
    let setup = ScenarioFile::load(scenario_path)?.build()?;
    log::info!("running {}", scenario_path.display());
    let artifacts = execute(&setup, opts);
    log::info!("status {:?}, writing {}", artifacts.status, out_dir.display());
    artifacts.write_to(out_dir)?;
    Ok(artifacts)
}

/// One `sweep.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub final_sync_err: f64,
    pub max_weight: Option<(String, f64)>,
    pub settled_time: Option<f64>,
    pub exit_code: i32,
    pub out_dir: PathBuf,
}

/// Runs one simulation per value of the dotted parameter. All variants are
/// validated before any of them runs. `parallel` > 1 uses that many worker
/// threads; rows always follow the input order.
pub fn sweep(
    scenario_path: &Path,
    param: &str,
    values: &[f64],
    out_dir: &Path,
    parallel: usize,
    opts: RunOptions,
) -> Result<Vec<SweepRow>, RunError> {
    let base = scenario::load_value(scenario_path)?;
    ScenarioFile::from_value(base.clone())?.build()?;
    let setups = values
        .iter()
        .map(|&v| {
            let mut doc: Value = base.clone();
            scenario::set_parameter(&mut doc, param, v)?;
            Ok(ScenarioFile::from_value(doc)?.build()?)
        })
        .collect::<Result<Vec<Setup>, RunError>>()?;

    let job = |(idx, setup): (usize, &Setup)| -> Result<SweepRow, RunError> {
        log::info!("sweep {param} = {}", values[idx]);
        let art = execute(setup, opts);
        let dir = out_dir.join(format!("run_{idx:03}"));
        art.write_to(&dir)?;
        Ok(SweepRow {
            value: values[idx],
            final_sync_err: art.final_sync_err,
            settled_time: art.settled_time(),
            max_weight: art.max_weight.clone(),
            exit_code: art.status.exit_code(),
            out_dir: dir,
        })
    };
    let rows: Vec<SweepRow> = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .expect("thread pool");
        pool.install(|| setups.par_iter().enumerate().map(job).collect::<Result<_, _>>())?
    } else {
        setups.iter().enumerate().map(job).collect::<Result<_, _>>()?
    };

    let mut csv = String::from("value,final_sync_err,max_final_weight,max_weight_link,settled_time\n");
    for r in &rows {
        let (link, w) = r.max_weight.clone().map_or(("".into(), f64::NAN), |(l, w)| (l, w));
        let settled = r.settled_time.map_or("nan".to_string(), fmt_num);
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            fmt_num(r.value),
            fmt_num(r.final_sync_err),
            fmt_num(w),
            link,
            settled
        );
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join("sweep.csv");
    fs::write(&path, csv).map_err(io_err(&path))?;
    Ok(rows)
}
