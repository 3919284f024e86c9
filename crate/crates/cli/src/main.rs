//! `monosem`: command-line front end for the monosemanticity laboratory.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Figure;
use crate::config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "monosem", version, about = "Monosemantic vs polysemantic features under noise")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, env = run::ENV_ROOT)]
    out: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Exact run directory; overrides `<out>/<command>-<hash>`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Comma-separated seeds; replaces the seed list of the chosen section.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Grid {
    /// Sparsity levels.
    #[arg(long = "S", value_delimiter = ',')]
    sparsity: Option<Vec<f64>>,
    /// Label noise rates.
    #[arg(long, value_delimiter = ',')]
    eta: Option<Vec<f64>>,
    /// Gaussian noise scales.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form moments, separability and noise crossings.
    Theory {
        #[command(flatten)]
        grid: Grid,
    },
    /// Monte Carlo check of the closed-form moments.
    Mc {
        #[command(flatten)]
        grid: Grid,
        #[arg(long)]
        samples: Option<usize>,
        /// Also estimate the crossing levels.
        #[arg(long)]
        crossings: bool,
    },
    /// Train the reconstruction autoencoder.
    ToyTrain {
        #[arg(long = "S")]
        sparsity: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Linear probes on direct features across noise conditions.
    Probe {
        #[command(flatten)]
        grid: Grid,
        #[arg(long, value_delimiter = ',')]
        fraction: Option<Vec<f64>>,
    },
    /// Probe accuracy of raw vs sparse-autoencoder features.
    Sae,
    /// Contrastive pretraining with and without non-negativity; semantic consistency.
    Ncl,
    /// Standard vs monosemantic adapters on a frozen classifier.
    Monolora,
    /// Grid sweep from the `[sweep]` config section.
    Sweep,
    /// Regenerate a figure's data and SVG.
    Figure {
        #[arg(value_enum)]
        name: Figure,
    },
}

impl Command {
    fn label(&self) -> String {
        match self {
            Command::Theory { .. } => "theory".into(),
            Command::Mc { .. } => "mc".into(),
            Command::ToyTrain { .. } => "toy-train".into(),
            Command::Probe { .. } => "probe".into(),
            Command::Sae => "sae".into(),
            Command::Ncl => "ncl".into(),
            Command::Monolora => "monolora".into(),
            Command::Sweep => "sweep".into(),
            Command::Figure { name } => format!("figure-{}", name.name()),
        }
    }
}

enum CliError {
    Usage(String),
    Config(String),
    Module(monosem::Error),
    Io(std::io::Error),
}

impl CliError {
    fn parts(&self) -> (&'static str, String, u8) {
        match self {
            CliError::Usage(m) => ("usage", m.clone(), 2),
            CliError::Config(m) => ("config", m.clone(), 2),
            CliError::Module(e) => (e.kind(), e.to_string(), 1),
            CliError::Io(e) => ("io", e.to_string(), 1),
        }
    }
}

impl From<monosem::Error> for CliError {
    fn from(e: monosem::Error) -> Self {
        CliError::Module(e)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Apply command-line overrides and return the seeds the command will use.
fn resolve(cfg: &mut FileConfig, cli: &Cli) -> Vec<u64> {
    let seeds = cli.seeds.clone().or_else(|| cfg.global.seeds.clone());
    set(&mut cfg.global.parallelism, cli.parallelism);
    let apply = |slot: &mut Vec<u64>| {
        if let Some(s) = &seeds {
            *slot = s.clone();
        }
        slot.clone()
    };
    let grid = |g: &Grid, s: &mut Vec<f64>, e: &mut Vec<f64>, l: &mut Vec<f64>| {
        set(s, g.sparsity.clone());
        set(e, g.eta.clone());
        set(l, g.lambda.clone());
    };
    match &cli.command {
        Command::Theory { grid: g } => {
            let t = &mut cfg.theory;
            grid(g, &mut t.sparsity, &mut t.eta, &mut t.lambda);
            Vec::new()
        }
        Command::Mc { grid: g, samples, crossings } => {
            let c = &mut cfg.mc;
            grid(g, &mut c.sparsity, &mut c.eta, &mut c.lambda);
            set(&mut c.num_samples, *samples);
            c.crossings |= *crossings;
            apply(&mut c.seeds)
        }
        Command::ToyTrain { sparsity, epochs } => {
            let c = &mut cfg.toy_train;
            set(&mut c.sparsity, *sparsity);
            set(&mut c.train.epochs, *epochs);
            apply(&mut c.seeds)
        }
        Command::Probe { grid: g, fraction } => {
            let c = &mut cfg.probe;
            grid(g, &mut c.sparsity, &mut c.eta, &mut c.lambda);
            set(&mut c.fraction, fraction.clone());
            apply(&mut c.seeds)
        }
        Command::Sae => apply(&mut cfg.sae.seeds),
        Command::Ncl => apply(&mut cfg.ncl.seeds),
        Command::Monolora => apply(&mut cfg.monolora.seeds),
        Command::Sweep => apply(&mut cfg.sweep.seeds),
        Command::Figure { name } => match name {
            Figure::ToyFig4 => apply(&mut cfg.fig4.seeds),
            Figure::Consistency => apply(&mut cfg.ncl.seeds),
            Figure::Fewshot => apply(&mut cfg.fewshot.seeds),
            Figure::Fig7c => apply(&mut cfg.fig7c.seeds),
            Figure::SaeVsRaw => apply(&mut cfg.sae.seeds),
            Figure::Monolora => apply(&mut cfg.monolora.seeds),
        },
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            config::parse(&text).map_err(CliError::Config)?
        }
        None => FileConfig::default(),
    };
    let seeds = resolve(&mut cfg, cli);
    let parallelism = cfg.global.parallelism;
    if parallelism == 0 {
        return Err(CliError::Config("parallelism must be at least 1".into()));
    }
    let resolved = toml::to_string(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let label = cli.command.label();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let out = pool.install(|| match &cli.command {
        Command::Theory { .. } => commands::theory(&cfg),
        Command::Mc { .. } => commands::mc(&cfg),
        Command::ToyTrain { .. } => commands::toy_train(&cfg),
        Command::Probe { .. } => commands::probe(&cfg, parallelism),
        Command::Sae => commands::sae(&cfg),
        Command::Ncl => commands::ncl(&cfg),
        Command::Monolora => commands::monolora(&cfg),
        Command::Sweep => commands::sweep(&cfg, parallelism),
        Command::Figure { name } => commands::figure(&cfg, *name),
    })?;

    let hash = run::sha256_hex(resolved.as_bytes());
    let dir = run::run_dir(cli.out.as_deref(), cli.run_dir.as_deref(), &label, &hash);
    run::write_run(&dir, &label, &resolved, &seeds, parallelism, &out.artifacts).map_err(CliError::Io)?;
    print!("{}", out.stdout);
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn report(err: CliError) -> ExitCode {
    let (kind, message, code) = err.parts();
    let json = serde_json::json!({ "error": kind, "message": message, "exit_code": code });
    eprintln!("{json}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            return report(CliError::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}
