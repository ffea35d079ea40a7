//! Metrics, best-weight selection and multi-trial statistics.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{Fixture, PathRow, Provenance};
use crate::model::{ParamMatrix, Trajectory};
use crate::optimizer::{homotopy_run, PathRecord, WarmStart};
use crate::synth::{add_noise, ground_truth, ground_truths, integrate_cauchy, CauchySpec, GroundTruth, NoiseSpec};

/// Margin by which an interior minimum must undercut both path endpoints.
pub const SEMI_CONVERGENCE_MARGIN: f64 = 0.05;

/// `||est - truth||_2 / ||truth||_2`.
pub fn relative_error(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::dim("relative_error", truth.len(), est.len()));
    }
    let denom = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    if !(denom > 0.0) {
        return Err(Error::UndefinedError("reference vector has zero norm".into()));
    }
    let num = est
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Index of the smallest entry; the first one wins ties and NaN never wins.
pub fn argmin_first(curve: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in curve.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Parameter relative error at each level of a path.
pub fn error_curve(path: &[PathRecord], truth: &ParamMatrix) -> Result<Vec<f64>> {
    let t = truth.flatten();
    path.iter().map(|r| relative_error(&r.m.flatten(), &t)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestAlpha {
    pub level: usize,
    pub alpha: f64,
    pub m: ParamMatrix,
    pub rel_err: f64,
}

/// Level with the smallest parameter error; ties go to the larger weight.
pub fn best_alpha(path: &[PathRecord], truth: &ParamMatrix) -> Result<BestAlpha> {
    if path.is_empty() {
        return Err(Error::Config("best_alpha needs a non-empty path".into()));
    }
    let curve = error_curve(path, truth)?;
    let i = argmin_first(&curve).ok_or_else(|| Error::UndefinedError("every level has a NaN error".into()))?;
    Ok(BestAlpha {
        level: path[i].level,
        alpha: path[i].alpha,
        m: path[i].m.clone(),
        rel_err: curve[i],
    })
}

/// Integrate the dynamics of `m` from the truth's initial state and compare
/// against the clean trajectory in relative Euclidean norm.
pub fn solution_error(cfg: &RunConfig, m: &ParamMatrix, clean: &Trajectory) -> Result<f64> {
    let spec = CauchySpec::new(
        cfg.build_basis()?,
        m.clone(),
        cfg.truth.u0.clone(),
        clean.grid().clone(),
    )?;
    let u = integrate_cauchy(&spec, cfg.integrator.rel_tol, cfg.integrator.abs_tol)?;
    relative_error(u.values().as_slice(), clean.values().as_slice())
}

/// Position of a named truth in [`ground_truths`], used for noise streams.
fn truth_index(name: &str) -> Result<usize> {
    ground_truths()
        .iter()
        .position(|g| g.name == name)
        .ok_or_else(|| Error::Config(format!("unknown ground truth '{name}'")))
}

fn lookup_truth(name: &str) -> Result<GroundTruth> {
    ground_truth(name).ok_or_else(|| Error::Config(format!("unknown ground truth '{name}'")))
}

/// Clean trajectory of a ground truth under the config's grid and `u0`.
pub fn clean_trajectory(cfg: &RunConfig, truth: &str) -> Result<Trajectory> {
    let gt = lookup_truth(truth)?;
    let grid = cfg.build_grid()?;
    let spec = CauchySpec::new(cfg.build_basis()?, gt.params(), cfg.truth.u0.clone(), grid)?;
    integrate_cauchy(&spec, cfg.integrator.rel_tol, cfg.integrator.abs_tol)
}

/// Noisy fixture of one trial. Noise streams depend on the truth's position in
/// [`ground_truths`], the sigma's position in the config and the trial index.
pub fn make_fixture(
    cfg: &RunConfig,
    clean: &Trajectory,
    truth: &str,
    sigma_index: usize,
    trial: usize,
) -> Result<Fixture> {
    let sigma = *cfg
        .noise
        .sigmas
        .get(sigma_index)
        .ok_or_else(|| Error::Config(format!("sigma index {sigma_index} out of range")))?;
    let noise = NoiseSpec::for_trial(cfg.noise.master_seed, truth_index(truth)?, sigma_index, trial, sigma)?;
    let data = add_noise(clean, &noise)?;
    Ok(Fixture {
        times: clean.grid().points().to_vec(),
        clean: clean.values().clone(),
        data: data.values().clone(),
        provenance: Some(Provenance::new(cfg.hash(), cfg.noise.master_seed)),
    })
}

/// Run the full homotopy on data `d`, starting from `u = d`, `m = 0`, `lambda = 0`.
pub fn solve_path(cfg: &RunConfig, d: &nalgebra::DMatrix<f64>) -> Result<Vec<PathRecord>> {
    let model = cfg.build_solver_model()?;
    let schedule = cfg.build_schedule()?;
    let inner = cfg.build_inner()?;
    let reg = cfg.build_regularizer()?;
    let init = WarmStart::from_data(model.as_ref(), d);
    Ok(homotopy_run(model.as_ref(), d, &schedule, &init, &inner, &reg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub truth: String,
    pub sigma: f64,
    pub trial: usize,
    pub best_level: usize,
    pub best_alpha: f64,
    pub m_star: Vec<f64>,
    pub rel_err_m: f64,
    /// `None` when re-integrating with `m_star` failed.
    pub rel_err_u: Option<f64>,
    pub error_curve: Vec<f64>,
    pub data_loss_curve: Vec<f64>,
    #[serde(skip)]
    pub path: Vec<PathRow>,
}

/// Outcome of one trial: a result, or the reason it was excluded.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Done(Box<TrialResult>),
    Failed {
        truth: String,
        sigma: f64,
        trial: usize,
        reason: String,
    },
}

/// Solve one fixture and score it against its truth.
pub fn run_trial(
    cfg: &RunConfig,
    truth: &str,
    sigma: f64,
    trial: usize,
    clean: &Trajectory,
    fixture: &Fixture,
) -> Result<TrialResult> {
    let gt = lookup_truth(truth)?;
    let m_true = gt.params();
    let path = solve_path(cfg, &fixture.data)?;
    let best = best_alpha(&path, &m_true)?;
    let rel_err_u = solution_error(cfg, &best.m, clean).ok();
    Ok(TrialResult {
        truth: truth.to_string(),
        sigma,
        trial,
        best_level: best.level,
        best_alpha: best.alpha,
        m_star: best.m.flatten(),
        rel_err_m: best.rel_err,
        rel_err_u,
        error_curve: error_curve(&path, &m_true)?,
        data_loss_curve: path.iter().map(|r| r.data_loss).collect(),
        path: path.iter().map(PathRow::from).collect(),
    })
}

/// Population mean and standard deviation, two-pass.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub truth: String,
    pub sigma: f64,
    pub mean_m: f64,
    pub std_m: f64,
    pub mean_u: f64,
    pub std_u: f64,
    /// Trials contributing to the parameter statistics.
    pub n: usize,
    /// Trials whose homotopy failed.
    pub failed: usize,
    /// Trials excluded from the solution statistics because re-integration failed.
    pub failed_u: usize,
}

#[derive(Debug, Clone)]
pub struct TableRun {
    pub outcomes: Vec<TrialOutcome>,
    pub rows: Vec<StatsRow>,
}

impl TableRun {
    pub fn results(&self) -> impl Iterator<Item = &TrialResult> {
        self.outcomes.iter().filter_map(|o| match o {
            TrialOutcome::Done(r) => Some(r.as_ref()),
            TrialOutcome::Failed { .. } => None,
        })
    }

    pub fn row(&self, truth: &str, sigma: f64) -> Option<&StatsRow> {
        self.rows.iter().find(|r| r.truth == truth && r.sigma == sigma)
    }
}

/// Aggregate outcomes into one row per (truth, sigma) cell, in config order.
pub fn aggregate(cfg: &RunConfig, outcomes: &[TrialOutcome]) -> Vec<StatsRow> {
    let mut rows = Vec::new();
    for truth in &cfg.truth.names {
        for &sigma in &cfg.noise.sigmas {
            let mut ms = Vec::new();
            let mut us = Vec::new();
            let mut failed = 0;
            let mut failed_u = 0;
            for o in outcomes {
                match o {
                    TrialOutcome::Done(r) if &r.truth == truth && r.sigma == sigma => {
                        ms.push(r.rel_err_m);
                        match r.rel_err_u {
                            Some(e) => us.push(e),
                            None => failed_u += 1,
                        }
                    }
                    TrialOutcome::Failed { truth: t, sigma: s, .. } if t == truth && *s == sigma => failed += 1,
                    _ => {}
                }
            }
            let (mean_m, std_m) = mean_std(&ms);
            let (mean_u, std_u) = mean_std(&us);
            rows.push(StatsRow {
                truth: truth.clone(),
                sigma,
                mean_m,
                std_m,
                mean_u,
                std_u,
                n: ms.len(),
                failed,
                failed_u,
            });
        }
    }
    rows
}

/// One task of a table run.
#[derive(Debug, Clone)]
struct Task {
    truth: String,
    sigma_index: usize,
    trial: usize,
}

/// All trials of every (truth, sigma) cell on a pool of `workers` threads.
/// Output order and values do not depend on the worker count.
pub fn run_table(cfg: &RunConfig, workers: usize) -> Result<TableRun> {
    use rayon::prelude::*;

    cfg.validate(true)?;
    let cleans = cfg
        .truth
        .names
        .iter()
        .map(|t| Ok((t.clone(), clean_trajectory(cfg, t)?)))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<Task> = cfg
        .truth
        .names
        .iter()
        .flat_map(|t| {
            (0..cfg.noise.sigmas.len()).flat_map(move |s| {
                (0..cfg.noise.trials).map(move |q| Task {
                    truth: t.clone(),
                    sigma_index: s,
                    trial: q,
                })
            })
        })
        .collect();

    let run = |task: &Task| -> Result<TrialOutcome> {
        let clean = &cleans
            .iter()
            .find(|(t, _)| *t == task.truth)
            .expect("clean trajectory per truth")
            .1;
        let sigma = cfg.noise.sigmas[task.sigma_index];
        let fixture = make_fixture(cfg, clean, &task.truth, task.sigma_index, task.trial)?;
        match run_trial(cfg, &task.truth, sigma, task.trial, clean, &fixture) {
            Ok(r) => Ok(TrialOutcome::Done(Box::new(r))),
            Err(e) if e.class() == crate::error::ErrorClass::Solver => Ok(TrialOutcome::Failed {
                truth: task.truth.clone(),
                sigma,
                trial: task.trial,
                reason: e.to_string(),
            }),
            Err(e) => Err(e),
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let outcomes = pool.install(|| tasks.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    let rows = aggregate(cfg, &outcomes);
    Ok(TableRun { outcomes, rows })
}

fn solution_row_name(truth: &str) -> String {
    match truth.strip_prefix('m') {
        Some(rest) => format!("u{rest}"),
        None => format!("u({truth})"),
    }
}

/// Table layout: parameter rows, then solution rows, one column per sigma.
fn table_cells(cfg: &RunConfig, rows: &[StatsRow]) -> Vec<(String, Vec<(f64, f64)>)> {
    let find = |t: &str, s: f64| rows.iter().find(|r| r.truth == t && r.sigma == s);
    let mut out = Vec::new();
    for t in &cfg.truth.names {
        let cells = cfg
            .noise
            .sigmas
            .iter()
            .map(|&s| find(t, s).map_or((f64::NAN, f64::NAN), |r| (r.mean_m, r.std_m)));
        out.push((t.clone(), cells.collect()));
    }
    for t in &cfg.truth.names {
        let cells = cfg
            .noise
            .sigmas
            .iter()
            .map(|&s| find(t, s).map_or((f64::NAN, f64::NAN), |r| (r.mean_u, r.std_u)));
        out.push((solution_row_name(t), cells.collect()));
    }
    out
}

/// Wide CSV: `row,mean_<sigma>,std_<sigma>,...`.
pub fn table_csv(cfg: &RunConfig, rows: &[StatsRow]) -> String {
    let mut s = format!(
        "# config_hash={} master_seed={}\nrow",
        cfg.hash(),
        cfg.noise.master_seed
    );
    for sigma in &cfg.noise.sigmas {
        let _ = write!(s, ",mean_{sigma},std_{sigma}");
    }
    s.push('\n');
    for (name, cells) in table_cells(cfg, rows) {
        s.push_str(&name);
        for (m, sd) in cells {
            let _ = write!(s, ",{},{}", crate::io::fmt_f64(m), crate::io::fmt_f64(sd));
        }
        s.push('\n');
    }
    s
}

/// Aligned text rendering, `mean ± std` with two decimals.
pub fn table_text(cfg: &RunConfig, rows: &[StatsRow]) -> String {
    let header: Vec<String> = cfg.noise.sigmas.iter().map(|s| format!("sigma={s}")).collect();
    let body: Vec<(String, Vec<String>)> = table_cells(cfg, rows)
        .into_iter()
        .map(|(n, cells)| (n, cells.into_iter().map(|(m, s)| format!("{m:.2} ± {s:.2}")).collect()))
        .collect();
    let width = body
        .iter()
        .flat_map(|(_, c)| c.iter().map(|x| x.chars().count()))
        .chain(header.iter().map(|h| h.len()))
        .max()
        .unwrap_or(0);
    let mut s = format!("{:<4}", "");
    for h in &header {
        let _ = write!(s, "  {h:>width$}");
    }
    s.push('\n');
    for (name, cells) in body {
        let _ = write!(s, "{name:<4}");
        for c in cells {
            let _ = write!(s, "  {c:>width$}");
        }
        s.push('\n');
    }
    s
}

/// Long CSV with one line per trial.
pub fn trials_csv(cfg: &RunConfig, outcomes: &[TrialOutcome]) -> String {
    let f = crate::io::fmt_f64;
    let mut s = format!(
        "# config_hash={} master_seed={}\ntruth,sigma,trial,status,best_level,best_alpha,rel_err_m,rel_err_u\n",
        cfg.hash(),
        cfg.noise.master_seed
    );
    for o in outcomes {
        match o {
            TrialOutcome::Done(r) => {
                let u = r.rel_err_u.map(f).unwrap_or_default();
                let status = if r.rel_err_u.is_some() { "ok" } else { "solution_failed" };
                let _ = writeln!(
                    s,
                    "{},{},{},{status},{},{},{},{u}",
                    r.truth,
                    r.sigma,
                    r.trial,
                    r.best_level,
                    f(r.best_alpha),
                    f(r.rel_err_m)
                );
            }
            TrialOutcome::Failed {
                truth, sigma, trial, ..
            } => {
                let _ = writeln!(s, "{truth},{sigma},{trial},failed,,,,");
            }
        }
    }
    s
}

/// JSON manifest describing a table run.
pub fn manifest_json(cfg: &RunConfig, run: &TableRun) -> serde_json::Value {
    let failures: Vec<serde_json::Value> = run
        .outcomes
        .iter()
        .filter_map(|o| match o {
            TrialOutcome::Failed {
                truth,
                sigma,
                trial,
                reason,
            } => Some(serde_json::json!({
                "truth": truth, "sigma": sigma, "trial": trial, "reason": reason
            })),
            TrialOutcome::Done(_) => None,
        })
        .collect();
    serde_json::json!({
        "config_hash": cfg.hash(),
        "master_seed": cfg.noise.master_seed,
        "profile": cfg.profile.to_string(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "noise_stream_layout": "ChaCha20, stream = truth_index << 48 | sigma_index << 32 | trial",
        "rows": run.rows,
        "failures": failures,
    })
}

/// Whether the minimum of `curve` is interior and undercuts both endpoints
/// by the relative `margin`.
pub fn has_interior_minimum(curve: &[f64], margin: f64) -> bool {
    if curve.len() < 3 {
        return false;
    }
    let Some(i) = argmin_first(curve) else { return false };
    let last = curve.len() - 1;
    if i == 0 || i == last {
        return false;
    }
    let limit = (1.0 - margin) * curve[0].min(curve[last]);
    curve[i] <= limit
}

/// Whether `xs` never increases.
pub fn is_non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemiConvergenceReport {
    pub error_curve: Vec<f64>,
    pub best_level: usize,
    pub interior_minimum: bool,
    /// First level of the terminal third of the path.
    pub terminal_start: usize,
    pub terminal_data_loss: Vec<f64>,
    pub terminal_non_increasing: bool,
}

/// Error curve and terminal data-loss segment of one path.
pub fn semi_convergence_report(path: &[PathRow], truth: &[f64]) -> Result<SemiConvergenceReport> {
    if path.is_empty() {
        return Err(Error::Config("semi-convergence report needs a non-empty path".into()));
    }
    let curve = path
        .iter()
        .map(|r| relative_error(&r.m, truth))
        .collect::<Result<Vec<_>>>()?;
    let best = argmin_first(&curve).unwrap_or(0);
    let start = path.len() - path.len().div_ceil(3);
    let terminal: Vec<f64> = path[start..].iter().map(|r| r.data_loss).collect();
    Ok(SemiConvergenceReport {
        interior_minimum: has_interior_minimum(&curve, SEMI_CONVERGENCE_MARGIN),
        best_level: path[best].level,
        error_curve: curve,
        terminal_start: path[start].level,
        terminal_non_increasing: is_non_increasing(&terminal),
        terminal_data_loss: terminal,
    })
}
