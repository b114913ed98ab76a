use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use damcmc_core::harness::{
    diagnose_trace, pilot_from_config, run_experiment, simulate_dataset, sweep, tree_stats_key_values,
    RunConfig, SweepGrid,
};
use damcmc_core::Error;

#[derive(Parser)]
#[command(name = "damcmc", version, about = "Adaptive delayed-acceptance MCMC with a KD-tree surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a benchmark dataset (lv, ar1 or ar2) to CSV.
    SimulateData {
        #[arg(long)]
        model: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pilot and write its artifacts to a directory.
    Pilot {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a chain; writes trace, metadata, diagnostics, tree and whitening.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pilot_dir: Option<PathBuf>,
    },
    /// Summarize a trace CSV.
    Diagnose {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 0)]
        burn: usize,
    },
    /// Run a grid over xi, c, k and b from one shared pilot.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        xi: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        c: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        k: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        b: Vec<String>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set xi=1.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn load_config(args: &ConfigArgs, extra: Vec<(String, String)>) -> Result<RunConfig, Failure> {
    let base = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(with_path(path))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::from_pairs(Vec::new())?,
    };
    let mut pairs = Vec::new();
    for s in &args.set {
        let (k, v) = s.split_once('=').ok_or_else(|| Failure {
            kind: "usage",
            message: format!("--set expects KEY=VALUE, got '{s}'"),
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    pairs.extend(extra);
    Ok(base.with_overrides(&pairs)?)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::SimulateData { model, seed, out: path } => {
            let data = simulate_dataset(&model, seed)?;
            let mut w = BufWriter::new(File::create(&path).map_err(with_path(&path))?);
            data.write_csv(&mut w)?;
            w.flush()?;
            writeln!(out, "wrote {} observations to {}", data.len(), path.display())?;
        }
        Command::Pilot { cfg, seed, out: dir } => {
            let cfg = load_config(&cfg, vec![("seed".into(), seed.to_string())])?;
            let p = pilot_from_config(&cfg)?;
            p.write_dir(&dir)?;
            writeln!(
                out,
                "pilot entries = {} acceptance_rate = {} alpha1_ref = {}",
                p.entries.len(),
                p.acceptance_rate,
                p.alpha1_ref
            )?;
        }
        Command::Run {
            cfg,
            seed,
            out: dir,
            pilot_dir,
        } => {
            let mut extra = vec![
                ("seed".to_string(), seed.to_string()),
                ("out".to_string(), dir.display().to_string()),
            ];
            if let Some(p) = pilot_dir {
                extra.push(("pilot_dir".into(), p.display().to_string()));
            }
            let cfg = load_config(&cfg, extra)?;
            let r = run_experiment(&cfg)?;
            if let Some(d) = &r.diagnostics {
                write!(out, "{}", d.to_key_values())?;
            }
            write!(out, "{}", tree_stats_key_values(&r.tree_stats))?;
            writeln!(out, "wall_seconds = {}", r.wall_seconds)?;
        }
        Command::Diagnose { trace, burn } => {
            let d = diagnose_trace(BufReader::new(File::open(&trace).map_err(with_path(&trace))?), burn)?;
            write!(out, "{}", d.to_key_values())?;
        }
        Command::Sweep {
            cfg,
            seed,
            out: dir,
            xi,
            c,
            k,
            b,
        } => {
            let cfg = load_config(&cfg, vec![("seed".into(), seed.to_string())])?;
            let rows = sweep(&cfg, &SweepGrid { xi, c, k, b }, &dir)?;
            for r in rows {
                writeln!(out, "{r}")?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let msg: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            let msg = msg.join(" ");
            eprintln!("error kind=usage message={:?}", msg.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error kind={} message={:?}", f.kind, f.message);
            ExitCode::FAILURE
        }
    }
}
