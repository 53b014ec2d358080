use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use asymm::config::{SimConfig, Setup};
use asymm::simulator::{checks, metrics, Simulator, Trace};
use asymm::{io, reference, Error, Result};

/// Asynchronous distributed Method of Multipliers on a simulated network.
#[derive(Parser)]
#[command(name = "asymm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a graph and a localization instance and write them to disk.
    Generate(Common),
    /// Simulate ASYMM and write CSVs, the binary trace and a manifest.
    Run(Common),
    /// Check a recorded run against the centralized Method of Multipliers.
    Verify(RunDir),
    /// Rewrite the CSVs of a recorded run from its binary trace.
    Export(RunDir),
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "ASYMM_OUT_DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    max_iter: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    rewire: Option<f64>,
    #[arg(long)]
    tol_init: Option<f64>,
    #[arg(long)]
    tol_decay: Option<f64>,
    #[arg(long)]
    penalty_growth: Option<f64>,
}

#[derive(Args)]
struct RunDir {
    /// Directory written by `asymm run`.
    #[arg(long, env = "ASYMM_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Equivalence tolerance (verify only).
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(Serialize)]
struct RunManifest {
    config: PathBuf,
    config_hash: String,
    seed: u64,
    graph_seed: u64,
    problem_seed: u64,
    timer_seed: u64,
    out_dir: PathBuf,
    started: u64,
    finished: u64,
    status: String,
}

const GRAPH_FILE: &str = "graph.edges";
const INSTANCE_FILE: &str = "instance.toml";
const CONFIG_FILE: &str = "config.toml";

impl Common {
    fn config(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(p) => SimConfig::load(p)?,
            None => SimConfig::default(),
        };
        if let Some(v) = self.seed {
            // an explicit seed re-derives every sub-seed
            cfg.seed = v;
            cfg.graph_seed = None;
            cfg.problem_seed = None;
            cfg.timer_seed = None;
        }
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(max_iter, nodes, dim, rewire, tol_init, tol_decay, penalty_growth);
        if self.nodes.is_some() || self.dim.is_some() || self.rewire.is_some() {
            cfg.graph_file = None;
            cfg.instance_file = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Git-style content hash: SHA-256 over `"blob <len>\0" ++ content`.
fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Writes graph, instance and a self-contained resolved configuration into
/// `dir`; returns the configuration as written and the setup it describes.
fn materialize(cfg: &SimConfig, dir: &Path) -> Result<(SimConfig, Setup)> {
    let setup = cfg.build()?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(GRAPH_FILE), setup.graph.to_edge_list())?;
    let instance = setup.instance.as_ref().expect("configurations always carry an instance");
    std::fs::write(dir.join(INSTANCE_FILE), instance.to_toml())?;
    let stored = SimConfig {
        graph_file: Some(GRAPH_FILE.into()),
        instance_file: Some(INSTANCE_FILE.into()),
        base_dir: None,
        ..cfg.resolved()
    };
    std::fs::write(dir.join(CONFIG_FILE), stored.to_toml())?;
    Ok((stored, setup))
}

fn generate(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    materialize(&cfg, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn write_outputs(dir: &Path, trace: &Trace, setup: &Setup) -> Result<()> {
    write_csvs(dir, trace, setup)?;
    io::write_trace(&dir.join("trace.bin"), trace)
}

fn run(args: &Common) -> Result<()> {
    let started = now();
    let cfg = args.config()?;
    let (stored, setup) = materialize(&cfg, &args.out)?;
    let sim = Simulator::new(&setup.graph, &setup.spec, setup.settings.clone(), setup.timer.clone())?;
    let (trace, failure) = match sim.run(cfg.max_iter) {
        Ok(t) => (t, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    write_outputs(&args.out, &trace, &setup)?;
    let config_bytes = std::fs::read(args.out.join(CONFIG_FILE))?;
    let manifest = RunManifest {
        config: args.out.join(CONFIG_FILE),
        config_hash: content_hash(&config_bytes),
        seed: stored.seed,
        graph_seed: stored.graph_seed(),
        problem_seed: stored.problem_seed(),
        timer_seed: stored.timer_seed(),
        out_dir: args.out.clone(),
        started,
        finished: now(),
        status: failure.as_ref().map_or("ok".into(), |e| e.to_string()),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(args.out.join("manifest.toml"), text)?;
    if let Some(e) = failure {
        return Err(e);
    }
    println!(
        "{} iterations, {} rounds; outputs in {}",
        trace.events.len(),
        trace.rounds.len(),
        args.out.display()
    );
    Ok(())
}

fn load_run(dir: &Path) -> Result<(Setup, Trace)> {
    let setup = SimConfig::load(&dir.join(CONFIG_FILE))?.build()?;
    let trace = io::read_trace(&dir.join("trace.bin"))?;
    if trace.node_count != setup.spec.node_count() || trace.dim != setup.spec.dim {
        return Err(Error::Trace("trace does not match the configuration".into()));
    }
    Ok((setup, trace))
}

fn verify(args: &RunDir) -> Result<()> {
    let (setup, trace) = load_run(&args.out)?;
    let mut failures = Vec::new();
    if let Err(e) = checks::all(&trace) {
        failures.push(e.to_string());
    }
    let policy = setup.settings.node.policy.clone();
    let report = reference::verify_trace(&trace, &setup.spec, &setup.graph, &policy, args.tol)?;
    let mut text = report.summary();
    for f in &failures {
        text.push_str(&format!("invariant: FAIL {f}\n"));
    }
    if failures.is_empty() {
        text.push_str("invariants: PASS\n");
    }
    std::fs::write(args.out.join("verify_report.txt"), &text)?;
    std::fs::write(args.out.join("deviations.csv"), report.deviations_csv())?;
    print!("{text}");
    if report.pass && failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Protocol("verification failed".into()))
    }
}

fn export(args: &RunDir) -> Result<()> {
    let (setup, trace) = load_run(&args.out)?;
    write_csvs(&args.out, &trace, &setup)?;
    println!("wrote CSVs to {}", args.out.display());
    Ok(())
}

fn write_csvs(dir: &Path, trace: &Trace, setup: &Setup) -> Result<()> {
    std::fs::write(dir.join("iterations.csv"), io::iterations_csv(trace))?;
    let rows = metrics(trace, &setup.spec, &setup.graph)?;
    std::fs::write(dir.join("rounds.csv"), io::rounds_csv(&rows))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Verify(a) => verify(a),
        Command::Export(a) => export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
