//! `regpath`: fixture generation, single path solves, table reproduction and
//! semi-convergence reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 IO error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regpath_core::config::{Profile, RunConfig};
use regpath_core::error::{Error, ErrorClass, Result};
use regpath_core::experiments::{self, TrialOutcome};
use regpath_core::io::{self, Provenance};
use regpath_core::synth;

#[derive(Parser, Debug)]
#[command(
    name = "regpath",
    version,
    about = "Sparse dynamics recovery along a regularization path"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalOpts {
    /// TOML run configuration; defaults to the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in profile used when no config file is given.
    #[arg(long, global = true, value_parser = ["paper", "ci"])]
    profile: Option<String>,
    /// Master seed for the noise streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for independent trials (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Allow a paper-profile config to change pinned values.
    #[arg(long, global = true)]
    unsafe_override: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write noisy fixtures for every truth, noise level and trial.
    Generate,
    /// Run the homotopy on one data file and write the path.
    Solve {
        /// Fixture or trajectory CSV (`t,u_0,..` and/or `d_0,..`).
        data: PathBuf,
        /// Ground truth to score the path against.
        #[arg(long)]
        truth: Option<String>,
    },
    /// Reproduce the error table over all trials.
    Table,
    /// Semi-convergence summaries of existing path CSVs.
    Report {
        /// Path CSVs written by `solve` or `table`.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value = "m1")]
        truth: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Solver => 3,
        ErrorClass::Io => 4,
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    let out = &cli.global.out;
    fs::create_dir_all(out)?;
    let workers = cli
        .global
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    eprintln!(
        "profile={} config_hash={} master_seed={}",
        cfg.profile,
        cfg.hash(),
        cfg.noise.master_seed
    );
    match cli.command {
        Command::Generate => cmd_generate(&cfg, out),
        Command::Solve { data, truth } => cmd_solve(&cfg, &data, truth.as_deref(), out),
        Command::Table => cmd_table(&cfg, out, workers),
        Command::Report { paths, truth } => cmd_report(&paths, &truth, out),
    }
}

fn resolve_config(g: &GlobalOpts) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let cfg = RunConfig::from_toml_str(&text, g.unsafe_override)?;
            if let Some(p) = &g.profile {
                let p: Profile = p.parse()?;
                if p != cfg.profile {
                    return Err(Error::Config(format!(
                        "--profile {p} conflicts with profile '{}' in {}",
                        cfg.profile,
                        path.display()
                    )));
                }
            }
            cfg
        }
        None => RunConfig::for_profile(g.profile.as_deref().unwrap_or("paper").parse()?),
    };
    if let Some(seed) = g.seed {
        cfg.noise.master_seed = seed;
    }
    cfg.validate(g.unsafe_override)?;
    Ok(cfg)
}

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance::new(cfg.hash(), cfg.noise.master_seed)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut files = Vec::new();
    let mut mismatch = serde_json::Map::new();
    for truth in &cfg.truth.names {
        let clean = experiments::clean_trajectory(cfg, truth)?;
        mismatch.insert(truth.clone(), serde_json::json!(synth::periodicity_mismatch(&clean)));
        for (si, &sigma) in cfg.noise.sigmas.iter().enumerate() {
            for trial in 0..cfg.noise.trials {
                let fx = experiments::make_fixture(cfg, &clean, truth, si, trial)?;
                let name = io::fixture_file_name(truth, sigma, trial);
                io::write_fixture_csv(&out.join(&name), &fx)?;
                files.push(name);
            }
        }
    }
    let manifest = serde_json::json!({
        "config_hash": cfg.hash(),
        "master_seed": cfg.noise.master_seed,
        "profile": cfg.profile.to_string(),
        "config": cfg,
        "integrator": { "rel_tol": cfg.integrator.rel_tol, "abs_tol": cfg.integrator.abs_tol },
        "noise_stream_layout": "ChaCha20, stream = truth_index << 48 | sigma_index << 32 | trial",
        "periodicity_mismatch": mismatch,
        "files": files,
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    eprintln!("wrote {} fixtures to {}", files.len(), out.display());
    Ok(())
}

fn cmd_solve(cfg: &RunConfig, data: &Path, truth: Option<&str>, out: &Path) -> Result<()> {
    let fx = io::read_fixture_csv(data)?;
    let grid = cfg.build_grid()?;
    let same_grid = fx.times.len() == grid.len()
        && fx
            .times
            .iter()
            .zip(grid.points())
            .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0));
    if !same_grid {
        return Err(Error::Config(format!(
            "{} does not sample the configured grid ({} points on [0, {}])",
            data.display(),
            grid.len(),
            grid.end()
        )));
    }
    let path = experiments::solve_path(cfg, &fx.data)?;
    let prov = provenance(cfg);
    io::write_path_csv(&out.join("path.csv"), &path, Some(&prov))?;
    let levels = out.join("levels");
    fs::create_dir_all(&levels)?;
    for r in &path {
        io::write_trajectory_csv(
            &levels.join(io::level_file_name(r.level)),
            grid.points(),
            &r.u,
            Some(&prov),
        )?;
    }
    let mut report = serde_json::json!({
        "config_hash": cfg.hash(),
        "master_seed": cfg.noise.master_seed,
        "data": data.display().to_string(),
        "levels": path.len(),
    });
    if let Some(name) = truth {
        let gt = synth::ground_truth(name).ok_or_else(|| Error::Config(format!("unknown ground truth '{name}'")))?;
        let best = experiments::best_alpha(&path, &gt.params())?;
        println!(
            "best level {} alpha {:.6e} parameter error {:.6}",
            best.level, best.alpha, best.rel_err
        );
        report["best"] = serde_json::json!({
            "level": best.level, "alpha": best.alpha, "rel_err_m": best.rel_err, "m": best.m.flatten(),
        });
    }
    write_json(&out.join("report.json"), &report)?;
    eprintln!("wrote {} levels to {}", path.len(), out.display());
    Ok(())
}

fn cmd_table(cfg: &RunConfig, out: &Path, workers: usize) -> Result<()> {
    let run = experiments::run_table(cfg, workers)?;
    fs::write(out.join("table.csv"), experiments::table_csv(cfg, &run.rows))?;
    let text = experiments::table_text(cfg, &run.rows);
    fs::write(out.join("table.txt"), &text)?;
    fs::write(out.join("trials.csv"), experiments::trials_csv(cfg, &run.outcomes))?;
    write_json(&out.join("manifest.json"), &experiments::manifest_json(cfg, &run))?;
    let paths = out.join("paths");
    fs::create_dir_all(&paths)?;
    let prov = provenance(cfg);
    for o in &run.outcomes {
        if let TrialOutcome::Done(r) = o {
            let name = format!("path_{}_{}_{}.csv", r.truth, r.sigma, r.trial);
            io::write_path_rows(&paths.join(name), &r.path, Some(&prov))?;
        }
    }
    print!("{text}");
    for row in &run.rows {
        if row.failed > 0 || row.failed_u > 0 {
            eprintln!(
                "{} sigma={}: {} failed trials, {} failed re-integrations",
                row.truth, row.sigma, row.failed, row.failed_u
            );
        }
    }
    Ok(())
}

fn cmd_report(paths: &[PathBuf], truth: &str, out: &Path) -> Result<()> {
    let gt = synth::ground_truth(truth).ok_or_else(|| Error::Config(format!("unknown ground truth '{truth}'")))?;
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing path files: {}", missing.join(", ")),
        )));
    }
    let mut reports = Vec::new();
    let mut text = String::new();
    for p in paths {
        let (rows, _) = io::read_path_csv(p)?;
        let rep = experiments::semi_convergence_report(&rows, &gt.coeffs)?;
        text.push_str(&format!(
            "{}: best level {} error {:.4}, interior minimum {}, terminal data loss non-increasing {}\n",
            p.display(),
            rep.best_level,
            rep.error_curve[rep.best_level.min(rep.error_curve.len() - 1)],
            rep.interior_minimum,
            rep.terminal_non_increasing
        ));
        reports.push(serde_json::json!({ "path": p.display().to_string(), "report": rep }));
    }
    let n_interior = reports
        .iter()
        .filter(|r| r["report"]["interior_minimum"] == true)
        .count();
    text.push_str(&format!("interior minimum in {n_interior} of {} paths\n", paths.len()));
    fs::write(out.join("report.txt"), &text)?;
    write_json(
        &out.join("report.json"),
        &serde_json::json!({ "truth": truth, "paths": reports }),
    )?;
    print!("{text}");
    Ok(())
}
