use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tvsync::config::{sweep, Experiment, ExperimentConfig};
use tvsync::jsr::{gripenberg_with, project_set, GripenbergOptions};
use tvsync::linalg::{BasisKind, ProjectionBasis, StochasticMatrix};
use tvsync::spectral::Exponent;

#[derive(Parser)]
#[command(name = "tvsync", version, about = "Synchronization experiments for coupled map lattices with time-varying coupling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed, including the source's own seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output`, then `.`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 3 when an estimate did not converge.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// sigma1 running-average trace and the Hajnal diameter estimate.
    Spectrum {
        #[command(flatten)]
        common: Common,
    },
    /// Simulates the lattice; writes K(t), diam(t) and a summary.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Repeats `simulate` over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
    /// Smallest window length whose unions all contain a spanning tree.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_max: u64,
    },
    /// Bounds on the joint spectral radius of a projected matrix set.
    Jsr {
        #[command(flatten)]
        common: Common,
        /// JSON file `{"matrices": [...], "basis": "orthonormal"}`.
        #[arg(long)]
        set: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 24)]
        max_len: usize,
        /// Node-map exponent for the synchronization verdict.
        #[arg(long)]
        mu: Option<f64>,
    },
}

/// Exit status plus message.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let numeric = error
            .chain()
            .any(|e| e.downcast_ref::<tvsync::Error>().is_some_and(tvsync::Error::is_numeric));
        Failure {
            code: if numeric { 3 } else { 2 },
            error,
        }
    }
}

impl From<tvsync::Error> for Failure {
    fn from(e: tvsync::Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

type Outcome = Result<bool, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Spectrum { common } => spectrum(&common),
        Command::Simulate { common } => simulate(&common),
        Command::Sweep {
            common,
            param,
            values,
        } => run_sweep(&common, &param, &values),
        Command::Check { common, t_max } => check(&common, t_max),
        Command::Jsr {
            common,
            set,
            tol,
            max_len,
            mu,
        } => jsr(&common, &set, tol, max_len, mu),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: estimate did not converge (--strict)");
            ExitCode::from(3)
        }
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

struct Loaded {
    experiment: Experiment,
    hash: String,
    out: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config is required"))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config =
        ExperimentConfig::from_json(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    let hash = sha256_hex(config.to_json().as_bytes());
    let out = common
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let experiment = Experiment::new(config).with_context(|| format!("in {}", path.display()))?;
    Ok(Loaded {
        experiment,
        hash,
        out,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    text.push('\n');
    write(dir, name, &text)
}

fn spectrum(common: &Common) -> Outcome {
    let l = load(common)?;
    let sigma1 = l.experiment.sigma1()?;
    let diam = l.experiment.diam_estimate()?;
    let mut csv = format!("# config_sha256={}\nt,sigma1_estimate\n", l.hash);
    for (t, e) in &sigma1.trace {
        writeln!(csv, "{t},{:e}", e.to_sentinel()).unwrap();
    }
    write(&l.out, "sigma1_trace.csv", &csv)?;
    write_json(
        &l.out,
        "diam_estimate.json",
        &json!({
            "config_sha256": l.hash,
            "diam_estimate": diam,
            "sigma1": sigma1.value,
            "sigma1_converged": sigma1.converged(),
        }),
    )?;
    println!(
        "sigma1 = {} (converged: {}), diam = {} (converged: {})",
        sigma1.value,
        sigma1.converged(),
        diam.value,
        diam.converged
    );
    Ok(!common.strict || (sigma1.converged() && diam.converged))
}

fn simulate(common: &Common) -> Outcome {
    let l = load(common)?;
    let run = l.experiment.run_sync()?;
    let r = &run.report;
    let config = &l.experiment.config;
    let csv = r.to_csv(&[
        ("config_sha256", l.hash.clone()),
        ("seed", config.seed.to_string()),
        ("m", l.experiment.dim().to_string()),
        ("map", config.map.to_string()),
    ]);
    write(&l.out, "sync.csv", &csv)?;
    write_json(
        &l.out,
        "summary.json",
        &json!({
            "config_sha256": l.hash,
            "sigma1": r.sigma1,
            "sigma1_converged": run.sigma1.converged(),
            "mu": r.mu,
            "mu_source": r.mu_source,
            "W": r.w,
            "predicted_sync": r.predicted_sync,
            "indeterminate": r.indeterminate,
            "observed_sync": r.observed_sync,
            "K": r.post_transient_k,
            "final_diam": run.simulation.final_diam(),
        }),
    )?;
    println!(
        "W = {}, predicted sync: {}, observed sync: {}, K = {:e}",
        r.w, r.predicted_sync, r.observed_sync, r.post_transient_k
    );
    Ok(!common.strict || run.sigma1.converged())
}

fn run_sweep(common: &Common, param: &str, values: &[f64]) -> Outcome {
    let l = load(common)?;
    let rows = sweep(&l.experiment.config, param, values)?;
    let mut csv = format!(
        "# config_sha256={}\n{param},K,W,sigma1,mu,predicted_sync,indeterminate,observed_sync\n",
        l.hash
    );
    for row in &rows {
        writeln!(
            csv,
            "{:e},{:e},{:e},{:e},{:e},{},{},{}",
            row.value,
            row.k,
            row.w.to_sentinel(),
            row.sigma1.to_sentinel(),
            row.mu,
            row.predicted_sync,
            row.indeterminate,
            row.observed_sync
        )
        .unwrap();
    }
    write(&l.out, "sweep.csv", &csv)?;
    println!("{} rows written", rows.len());
    Ok(true)
}

fn check(common: &Common, t_max: u64) -> Outcome {
    let l = load(common)?;
    let report = l.experiment.check_windows(t_max)?;
    write_json(
        &l.out,
        "check.json",
        &json!({"config_sha256": l.hash, "check": report}),
    )?;
    match report.smallest_t {
        Some(t) => println!("smallest T = {t}"),
        None => println!("none <= {t_max}"),
    }
    for w in &report.windows {
        println!(
            "t0 = {}: spanning tree {}, scrambling {}",
            w.t0, w.spanning_tree, w.scrambling
        );
    }
    Ok(true)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixSet {
    matrices: Vec<StochasticMatrix>,
    #[serde(default)]
    basis: BasisKind,
}

fn jsr(common: &Common, path: &Path, tol: f64, max_len: usize, mu: Option<f64>) -> Outcome {
    let text = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let set: MatrixSet = serde_json::from_slice(&text)
        .map_err(|e| tvsync::Error::Config(e.to_string()))
        .with_context(|| format!("in {}", path.display()))?;
    let m = set
        .matrices
        .first()
        .ok_or(tvsync::Error::EmptySet)?
        .dim();
    let basis = ProjectionBasis::new(m, set.basis)?;
    let projected = project_set(&set.matrices, &basis)?;
    let opts = GripenbergOptions {
        tol,
        max_len,
        ..Default::default()
    };
    let bounds = gripenberg_with(&projected, &opts)?;
    let mut hasher = Sha256::new();
    hasher.update(&text);
    hasher.update(format!("tol={tol:e};max_len={max_len}").as_bytes());
    let hash = hex::encode(hasher.finalize());
    let verdict = mu.map(|mu| {
        let w = Exponent::Finite(bounds.upper.ln() + mu);
        if bounds.upper.ln() + mu < 0.0 {
            ("synchronized", w)
        } else {
            ("not guaranteed", w)
        }
    });
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    write_json(
        &out,
        "jsr.json",
        &json!({
            "config_sha256": hash,
            "bounds": bounds,
            "mu": mu,
            "verdict": verdict.map(|v| v.0),
            "log_upper_plus_mu": verdict.map(|v| v.1),
        }),
    )?;
    println!(
        "jsr in [{}, {}] (depth {}, converged: {})",
        bounds.lower, bounds.upper, bounds.depth_reached, bounds.converged
    );
    if let Some((v, w)) = verdict {
        println!("log upper + mu = {w}: {v}");
    }
    Ok(!common.strict || bounds.converged)
}
