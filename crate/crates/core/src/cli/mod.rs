//! Command-line front end.
//!
//! Every command reads one [`ExperimentConfig`] (TOML, or JSON when the file
//! starts with `{`), writes its artifacts atomically into the output
//! directory and finishes with a `manifest.json` listing each file with its
//! SHA-256. Outputs depend only on the config and the seed; set
//! `SOURCE_DATE_EPOCH` to pin the manifest timestamps as well.
//!
//! Exit codes: 0 success, 1 a check or agreement failed, 2 config error,
//! 3 domain verdict (trapped start, inconclusive probe), 4 numerical
//! failure. `MICROPROP_THREADS` sets the worker count.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

pub use config::ExperimentConfig;
pub use output::{sha256_hex, verify_manifest, OutputDir, RunManifest, MANIFEST_NAME};

use crate::error::{Error, Result};
use crate::flow::FlowOptions;
use commands::Context;

pub const THREADS_ENV: &str = "MICROPROP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "microprop", version, about = "Long-range propagation numerics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for random draws (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Relative integration tolerance (overrides the config).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Integrate one trajectory and write it as CSV.
    Flow,
    /// Scattering data (z_-, xi_-) for a set of starts.
    Scatter,
    /// Run the classical property checks.
    Verify,
    /// Wavefront propagation harnesses.
    Wavefront,
    /// Tabulate the Hamilton-Jacobi solution W.
    Hj,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Scatter => "scatter",
            Command::Verify => "verify",
            Command::Wavefront => "wavefront",
            Command::Hj => "hj",
        }
    }
}

/// How a command finished when it did not error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failed,
    Verdict,
    NumericalFailure,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Failed => 1,
            Outcome::Verdict => 3,
            Outcome::NumericalFailure => 4,
        }
    }
}

pub fn error_code(e: &Error) -> i32 {
    if e.is_numerical() || matches!(e, Error::Io(_)) {
        4
    } else {
        2
    }
}

/// Loads the config and applies the command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.tol {
        cfg.tol = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn flow_options(cfg: &ExperimentConfig) -> FlowOptions {
    match cfg.tol {
        Some(t) => FlowOptions::with_tol(t, 1e-2 * t),
        None => FlowOptions::default(),
    }
}

/// Runs one command end to end and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let started = output::timestamp();
    let cfg = match resolve_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return error_code(&e);
        }
    };
    let dir = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("microprop-{}", cli.command.as_str())));
    let mut out = match OutputDir::create(&dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            return error_code(&e);
        }
    };
    let result = cfg.spec.build().and_then(|spec| {
        let ctx = Context {
            cfg: &cfg,
            spec,
            flow: flow_options(&cfg),
            seed: cfg.seed,
        };
        match cli.command {
            Command::Flow => commands::cmd_flow(&ctx, &mut out),
            Command::Scatter => commands::cmd_scatter(&ctx, &mut out),
            Command::Verify => verify::cmd_verify(&ctx, &mut out),
            Command::Wavefront => commands::cmd_wavefront(&ctx, &mut out),
            Command::Hj => commands::cmd_hj(&ctx, &mut out),
        }
    });
    let code = match result {
        Ok(o) => o.code(),
        Err(e) => {
            eprintln!("{e}");
            let code = error_code(&e);
            let diag = json!({ "error": e.to_string(), "exit_code": code });
            if let Err(w) = out.write_json("error.json", &diag) {
                eprintln!("{w}");
            }
            code
        }
    };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cli.command.as_str().into(),
        config_sha256: sha256_hex(cfg.canonical_json().as_bytes()),
        seed: cfg.seed,
        started_unix: started,
        finished_unix: output::timestamp(),
        exit_code: code,
        artifacts: Vec::new(),
    };
    match out.finish(manifest) {
        Ok(_) => code,
        Err(e) => {
            eprintln!("{e}");
            4
        }
    }
}

/// Sizes the global worker pool from `MICROPROP_THREADS` (unset or 0 keeps
/// the default).
pub fn init_threads() -> Result<()> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be an integer, got {s:?}")))?,
        Err(_) => 0,
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("{e}");
        return 2;
    }
    run(&cli)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_cfg(dir: &std::path::Path, text: &str) -> PathBuf {
        let p = dir.join("cfg.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    fn run_in(dir: &std::path::Path, cmd: &str, cfg: &PathBuf, out: &str) -> i32 {
        let out = dir.join(out);
        main_with_args([
            "microprop",
            cmd,
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
    }

    #[test]
    fn flat_flow_is_a_straight_line() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_cfg(
            tmp.path(),
            "[spec]\nfamily = \"flat\"\ndim = 2\n[flow]\nstart = { x = [1.0, 0.0], xi = [0.5, -1.0] }\nt_span = [0.0, 4.0]\nsamples = 5\n",
        );
        assert_eq!(run_in(tmp.path(), "flow", &cfg, "o"), 0);
        let csv = std::fs::read_to_string(tmp.path().join("o/trajectory.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,x_1,x_2,xi_1,xi_2,action,energy_drift");
        let rows: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 5);
        for r in &rows {
            assert!((r[1] - (1.0 + 0.5 * r[0])).abs() < 1e-10);
            assert!((r[2] + r[0]).abs() < 1e-10);
            assert!(r[6] <= 1e-12);
        }
        let m = verify_manifest(&tmp.path().join("o")).unwrap();
        assert_eq!(m.exit_code, 0);
        assert_eq!(m.artifacts.len(), 2);
    }

    #[test]
    fn malformed_config_exits_with_two() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_cfg(tmp.path(), "[spec]\nfamily = \"flat\"\nbogus = 3\n");
        assert_eq!(run_in(tmp.path(), "flow", &cfg, "o"), 2);
        let cfg = write_cfg(tmp.path(), "[spec]\nfamily = \"flat\"\n");
        assert_eq!(run_in(tmp.path(), "flow", &cfg, "o"), 2);
        let err = std::fs::read_to_string(tmp.path().join("o/error.json")).unwrap();
        assert!(err.contains("[flow]"), "{err}");
        assert!(verify_manifest(&tmp.path().join("o")).is_ok());
        assert_eq!(main_with_args(["microprop", "bogus"]), 2);
    }

    #[test]
    fn stationary_start_is_indeterminate() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_cfg(
            tmp.path(),
            "[spec]\nfamily = \"flat\"\n[scatter]\nstarts = [{ x = [1.0], xi = [0.0] }]\n[scatter.hj]\nr = 20.0\nc4 = 2.0\n",
        );
        assert_eq!(run_in(tmp.path(), "scatter", &cfg, "o"), 3);
        let v: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join("o/scatter.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(v["results"][0]["verdict"], "indeterminate");
    }

    #[test]
    fn flat_scatter_is_closed_form() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_cfg(
            tmp.path(),
            "[spec]\nfamily = \"flat\"\n[scatter]\nstarts = [{ x = [1.0], xi = [-0.7] }]\n[scatter.hj]\nr = 20.0\nc4 = 2.0\n",
        );
        assert_eq!(run_in(tmp.path(), "scatter", &cfg, "o"), 0);
        let v: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join("o/scatter.json")).unwrap(),
        )
        .unwrap();
        let z = v["results"][0]["data"]["z_minus"][0].as_f64().unwrap();
        assert!((z - (1.0 - 20.0)).abs() < 1e-8, "{z}");
    }

    #[test]
    fn skewed_metric_fails_the_assumption_check() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_cfg(
            tmp.path(),
            "[spec]\nfamily = \"skewed\"\ndim = 2\nc = 0.1\n[verify]\nchecks = [\"assumption\", \"lipschitz\"]\nlipschitz_pairs = 500\n",
        );
        assert_eq!(run_in(tmp.path(), "verify", &cfg, "o"), 1);
        let v: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join("o/verify.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(v["checks"][0]["name"], "assumption");
        assert_eq!(v["checks"][0]["passed"], false);
        assert_eq!(v["checks"][1]["passed"], true);
    }

    #[test]
    fn hj_table_has_a_row_per_point() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_cfg(
            tmp.path(),
            "[spec]\nfamily = \"flat\"\n[hj]\ntimes = [-1.0, 0.0]\nxis = [[3.0], [-4.0], [0.5]]\n[hj.params]\nr = 1.0\nc4 = 0.5\n",
        );
        assert_eq!(run_in(tmp.path(), "hj", &cfg, "o"), 0);
        let csv = std::fs::read_to_string(tmp.path().join("o/w_table.csv")).unwrap();
        assert_eq!(csv.lines().count(), 7);
        // flat: W = -R|xi| + t|xi|^2/2 on the high branch
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        let w: f64 = row[2].parse().unwrap();
        assert!((w - (-3.0 - 4.5)).abs() < 1e-9, "{row:?}");
    }
}
