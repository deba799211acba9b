//! Command-line front end: `check`, `solve`, `simulate`, `frontier`, `compare`.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{export_csv, import_csv, table_max_abs_diff, GridSpec, KernelGrid, KernelId};
use crate::markowitz::{eta_star, frontier, two_asset_frontier};
use crate::model::{default_cap, feasibility};
use crate::sim::{
    simulate_map, simulate_two_asset, value_of, InitialSegment, MCStats, OptimalFeedback,
    SimConfig,
};
use crate::solver::{solve_single, solve_two_asset, SolveDiagnostics};
use config::{ProblemKind, RunConfig};

/// Default recursion length for `check`, long enough to locate the first
/// nonpositive term in practice.
const CHECK_CAP: usize = 1000;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ADVISORY: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_SIMULATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "delayed-lq", version, about = "Delayed linear-quadratic control toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides sim.seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Nodes per delay interval (overrides grid.m).
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Number of Monte Carlo paths (overrides sim.n_paths).
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Zero-noise simulation.
    #[arg(long, global = true)]
    pub test_mode: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the sufficient existence condition.
    Check,
    /// Solve the Riccati kernels and export them.
    Solve,
    /// Simulate the optimally controlled state.
    Simulate,
    /// Efficient frontier for the markowitz kinds.
    Frontier,
    /// Max-abs difference between two kernel CSVs or two solve directories.
    Compare { a: PathBuf, b: PathBuf },
}

struct Failure {
    code: i32,
    error: Error,
}

trait Phase<T> {
    fn phase(self, code: i32) -> std::result::Result<T, Failure>;
}

impl<T> Phase<T> for Result<T> {
    fn phase(self, code: i32) -> std::result::Result<T, Failure> {
        self.map_err(|error| {
            let code = match error {
                Error::Config(_) | Error::Parse { .. } | Error::Io { .. } | Error::Parameter(_) => {
                    EXIT_CONFIG
                }
                _ => code,
            };
            Failure { code, error }
        })
    }
}

/// Runs the CLI and returns the process exit code. JSON results go to
/// stdout, errors to stderr as `{"error": {"kind", "message"}}`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(Failure { code, error }) => {
            let report = json!({"error": {"kind": error.kind(), "message": error.to_string()}});
            eprintln!("{report}");
            code
        }
    }
}

fn dispatch(cli: &Cli) -> std::result::Result<i32, Failure> {
    if let Command::Compare { a, b } = &cli.command {
        return cmd_compare(a, b, cli.out.as_deref()).phase(EXIT_CONFIG);
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))
        .phase(EXIT_CONFIG)?;
    let mut cfg = RunConfig::load(path).phase(EXIT_CONFIG)?;
    apply_overrides(&mut cfg, cli);
    match cli.command {
        Command::Check => cmd_check(&cfg),
        Command::Solve => cmd_solve(&cfg, "solve"),
        Command::Simulate => cmd_simulate(&cfg),
        Command::Frontier => cmd_frontier(&cfg),
        Command::Compare { .. } => unreachable!(),
    }
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    if let Some(m) = cli.m {
        cfg.grid.m = m;
    }
    if let Some(n) = cli.paths {
        cfg.sim.n_paths = n;
    }
    if cli.test_mode {
        cfg.sim.test_mode = true;
    }
}

fn cmd_check(cfg: &RunConfig) -> std::result::Result<i32, Failure> {
    let params = cfg.model_params().phase(EXIT_CONFIG)?;
    let cap = cfg
        .check
        .as_ref()
        .and_then(|c| c.cap)
        .unwrap_or_else(|| default_cap(&params).max(CHECK_CAP));
    let report = feasibility(&params, cap).phase(EXIT_CONFIG)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(if report.sufficient_holds {
        EXIT_OK
    } else {
        EXIT_ADVISORY
    })
}

fn solve(cfg: &RunConfig) -> Result<(KernelGrid, SolveDiagnostics)> {
    let params = cfg.model_params()?;
    let spec = GridSpec::for_params(&params, cfg.grid.m)?;
    let solver = cfg.solve_config();
    if cfg.is_two_asset() {
        solve_two_asset(cfg.two_asset.as_ref().expect("validated"), &spec, &solver)
    } else {
        solve_single(&params, &spec, &solver)
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value).expect("json") + "\n"))
}

/// Writes `config.toml` (the effective configuration) and `manifest.json`.
fn write_manifest(cfg: &RunConfig, dir: &Path, command: &str, files: &[&str]) -> Result<()> {
    let mut resolved = cfg.clone();
    if let Some(file) = &resolved.gamma.file {
        resolved.gamma.file = Some(cfg.base_dir.join(file));
    }
    let text = resolved.to_toml();
    write(&dir.join("config.toml"), &text)?;
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    let mut all: Vec<&str> = files.to_vec();
    all.push("config.toml");
    write_json(
        &dir.join("manifest.json"),
        &json!({
            "command": command,
            "config_hash": hash,
            "seed": cfg.sim.seed,
            "versions": {
                "delayed-lq": env!("CARGO_PKG_VERSION"),
            },
            "files": all,
        }),
    )
}

fn cmd_solve(cfg: &RunConfig, command: &str) -> std::result::Result<i32, Failure> {
    let (grid, diag) = solve(cfg).phase(EXIT_SOLVER)?;
    let dir = out_dir(cfg).phase(EXIT_CONFIG)?;
    let mut files = Vec::new();
    for which in KernelId::ALL {
        let name = format!("{}.csv", which.label());
        export_csv(&grid, which, &dir.join(&name)).phase(EXIT_CONFIG)?;
        files.push(name);
    }
    let summary = json!({
        "spec": grid.spec(),
        "params": grid.params(),
        "two_asset": grid.two_asset(),
        "p11_at_0": grid.p11_node(0),
        "diagnostics": diag,
    });
    write_json(&dir.join("diagnostics.json"), &summary).phase(EXIT_CONFIG)?;
    files.push("diagnostics.json".into());
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    write_manifest(cfg, dir, command, &names).phase(EXIT_CONFIG)?;
    println!("{}", json!({"p11_at_0": grid.p11_node(0), "positivity_ok": diag.positivity_ok}));
    Ok(EXIT_OK)
}

/// Initial state and tracking target for a simulation run.
fn sim_target(cfg: &RunConfig, grid: &KernelGrid, gamma: &InitialSegment) -> Result<(f64, f64)> {
    match cfg.problem.kind {
        ProblemKind::Markowitz | ProblemKind::Markowitz2 => {
            let market = cfg.market_params()?;
            let (_, xi) = eta_star(grid, market.x0, market.c, gamma)?;
            Ok((market.x0, xi))
        }
        _ => {
            let x0 = cfg.sim.x0.unwrap_or(1.0);
            Ok((x0, cfg.sim.xi.unwrap_or(x0)))
        }
    }
}

fn cmd_simulate(cfg: &RunConfig) -> std::result::Result<i32, Failure> {
    let (grid, _) = solve(cfg).phase(EXIT_SOLVER)?;
    let gamma = cfg.initial_segment(grid.spec().m).phase(EXIT_CONFIG)?;
    let (x0, xi) = sim_target(cfg, &grid, &gamma).phase(EXIT_SOLVER)?;
    let sim = SimConfig {
        n_paths: cfg.sim.n_paths,
        master_seed: cfg.sim.seed,
        x0,
        zero_noise: cfg.sim.test_mode,
        h_sim: None,
    };
    let export = cfg.sim.export_paths.min(sim.n_paths);
    let m = grid.spec().m;
    let mut csv = String::new();
    let terminal: Vec<f64> = if cfg.is_two_asset() {
        csv.push_str("path_id,t,X,alpha,beta\n");
        let paths = simulate_two_asset(&grid, &gamma, &sim, xi).phase(EXIT_SIMULATION)?;
        for (p, path) in paths.iter().take(export).enumerate() {
            for (k, t) in path.times.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{p},{t},{},{},{}",
                    path.x[k],
                    path.alpha[k],
                    path.beta[k + m]
                );
            }
        }
        paths.iter().map(|p| *p.x.last().expect("nonempty")).collect()
    } else {
        csv.push_str("path_id,t,X,alpha\n");
        let law = OptimalFeedback { grid: &grid, xi };
        let results = simulate_map(&grid, &gamma, &sim, &law, |path| {
            (path.terminal(), (path.x.clone(), path.alpha.clone()))
        })
        .phase(EXIT_SIMULATION)?;
        for (p, (_, (x, alpha))) in results.iter().take(export).enumerate() {
            for (k, xk) in x.iter().enumerate() {
                let _ = writeln!(csv, "{p},{},{xk},{}", grid.spec().t(k), alpha[k + m]);
            }
        }
        results.into_iter().map(|(t, _)| t).collect()
    };
    let stats = MCStats::from_samples(&terminal);
    let errors: Vec<f64> = terminal.iter().map(|x| (x - xi).powi(2)).collect();
    let err_stats = MCStats::from_samples(&errors);
    let value = value_of(&grid, x0 - xi, &gamma).phase(EXIT_SOLVER)?;

    let dir = out_dir(cfg).phase(EXIT_CONFIG)?;
    write(&dir.join("paths.csv"), &csv).phase(EXIT_CONFIG)?;
    let report = json!({
        "mean": stats.mean,
        "variance": stats.variance,
        "std_error": stats.std_error,
        "n_paths": stats.n_paths,
        "seed": sim.master_seed,
        "x0": x0,
        "xi": xi,
        "squared_error": err_stats,
        "value": value,
    });
    write_json(&dir.join("stats.json"), &report).phase(EXIT_CONFIG)?;
    write_manifest(cfg, dir, "simulate", &["paths.csv", "stats.json"]).phase(EXIT_CONFIG)?;
    println!("{report}");
    Ok(EXIT_OK)
}

fn cmd_frontier(cfg: &RunConfig) -> std::result::Result<i32, Failure> {
    if !matches!(cfg.problem.kind, ProblemKind::Markowitz | ProblemKind::Markowitz2) {
        return Err(Failure {
            code: EXIT_CONFIG,
            error: Error::Config("frontier needs problem kind markowitz or markowitz2".into()),
        });
    }
    let market = cfg.market_params().phase(EXIT_CONFIG)?;
    let (grid, _) = solve(cfg).phase(EXIT_SOLVER)?;
    let gamma = cfg.initial_segment(grid.spec().m).phase(EXIT_CONFIG)?;
    let section = cfg.market.as_ref().expect("validated");
    let c_list = if section.c_list.is_empty() {
        vec![market.c]
    } else {
        section.c_list.clone()
    };
    let points = if cfg.is_two_asset() {
        two_asset_frontier(&grid, market.x0, &gamma, &c_list)
    } else {
        frontier(&grid, market.x0, &gamma, &c_list)
    }
    .phase(EXIT_SOLVER)?;
    let mut csv = String::from("c,eta_star,xi_star,variance\n");
    for p in &points {
        let _ = writeln!(csv, "{},{},{},{}", p.c, p.eta_star, p.xi_star, p.variance);
    }
    let dir = out_dir(cfg).phase(EXIT_CONFIG)?;
    write(&dir.join("frontier.csv"), &csv).phase(EXIT_CONFIG)?;
    write_manifest(cfg, dir, "frontier", &["frontier.csv"]).phase(EXIT_CONFIG)?;
    println!("{}", json!({"points": points.len(), "p11_at_0": grid.p11_node(0)}));
    Ok(EXIT_OK)
}

fn compare_files(a: &Path, b: &Path) -> Result<Value> {
    let ta = import_csv(a)?;
    let tb = import_csv(b)?;
    let diff = table_max_abs_diff(&ta, &tb)?;
    Ok(match diff {
        Some((d, at)) => json!({"kernel": ta.kernel.label(), "max_abs_diff": d, "at": at}),
        None => json!({"kernel": ta.kernel.label(), "max_abs_diff": null, "at": null}),
    })
}

fn cmd_compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<i32> {
    let report = if a.is_dir() && b.is_dir() {
        let mut kernels = serde_json::Map::new();
        let mut overall: Option<f64> = None;
        for which in KernelId::ALL {
            let name = format!("{}.csv", which.label());
            let (fa, fb) = (a.join(&name), b.join(&name));
            if fa.exists() && fb.exists() {
                let entry = compare_files(&fa, &fb)?;
                if let Some(d) = entry["max_abs_diff"].as_f64() {
                    overall = Some(overall.map_or(d, |o| o.max(d)));
                }
                kernels.insert(which.label().into(), entry);
            }
        }
        if kernels.is_empty() {
            return Err(Error::Parameter(format!(
                "no kernel CSVs common to {} and {}",
                a.display(),
                b.display()
            )));
        }
        json!({"max_abs_diff": overall, "kernels": kernels})
    } else {
        compare_files(a, b)?
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("compare.json"), &report)?;
    }
    println!("{report}");
    Ok(EXIT_OK)
}
