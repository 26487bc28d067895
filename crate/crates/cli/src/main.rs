//! `kamrev`: batch driver for the invariant-torus toolbox.
//!
//! Every subcommand reads a JSON config (`--config`), checks it against the
//! schema in `schemas/`, runs, and writes `report.json` plus an optional CSV
//! series into `--out` (stdout when omitted).
//!
//! Exit status: 0 on success, 2 when the config or its data are rejected
//! before any computation, 3 when the computation fails.

mod commands;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use report::{Failure, Report};

#[derive(Parser, Debug)]
#[command(name = "kamrev", version, about = "Invariant tori of reversible vector fields: batch experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; the report goes to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Diophantine check of a frequency vector and optional normal matrix.
    DiophCheck,
    /// Monte-Carlo share of non-Diophantine frequencies in a box.
    DiophMeasure,
    /// Solve the cohomological equation for one series.
    CohomologySolve,
    /// Versality of a reversible matrix unfolding.
    VersalCheck,
    /// Exact checks of the nilpotent-block unfolding.
    MiniversalNilpotent {
        /// Block size; overrides the config.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Planar toy models.
    Toy {
        #[arg(value_enum)]
        model: Toy,
    },
    /// Newton normalization of a reversible family.
    Normalize,
    /// Newton normalization through the augmented system.
    NormalizeAugmented,
    /// Persistence of tori over a parameter domain.
    Ruessmann,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Toy {
    Ex1,
    Ex2,
    Linear,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::DiophCheck => "dioph-check",
            Command::DiophMeasure => "dioph-measure",
            Command::CohomologySolve => "cohomology-solve",
            Command::VersalCheck => "versal-check",
            Command::MiniversalNilpotent { .. } => "miniversal-nilpotent",
            Command::Toy { model: Toy::Ex1 } => "toy-ex1",
            Command::Toy { model: Toy::Ex2 } => "toy-ex2",
            Command::Toy { model: Toy::Linear } => "toy-linear",
            Command::Normalize => "normalize",
            Command::NormalizeAugmented => "normalize-augmented",
            Command::Ruessmann => "ruessmann",
        }
    }
}

fn load_config(cmd: &Command, path: Option<&Path>) -> Result<Value, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))?
        }
        None if matches!(cmd, Command::MiniversalNilpotent { .. }) => Value::Object(Default::default()),
        None => return Err(Failure::Invalid("--config is required".into())),
    };
    if let (Command::MiniversalNilpotent { m: Some(m) }, Value::Object(map)) = (cmd, &mut cfg) {
        map.insert("m".into(), Value::from(*m));
    }
    report::validate(cmd.name(), &cfg)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KAMREV_LOG", "warn")).init();
    let cli = Cli::parse();
    let Common { config, seed, out, threads } = cli.common.clone();
    if let Some(k) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    let name = cli.command.name();
    let started = Instant::now();
    let config_dir = config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut rep = Report::new(name, seed);
    let outcome = load_config(&cli.command, config.as_deref()).and_then(|cfg| {
        rep.hash_config(&cfg);
        let ctx = commands::Ctx { seed, config_dir };
        log::info!("running {name}");
        match cli.command {
            Command::DiophCheck => commands::dioph_check(cfg, &ctx),
            Command::DiophMeasure => commands::dioph_measure(cfg, &ctx),
            Command::CohomologySolve => commands::cohomology_solve(cfg, &ctx),
            Command::VersalCheck => commands::versal_check(cfg, &ctx),
            Command::MiniversalNilpotent { .. } => commands::miniversal_nilpotent(cfg, &ctx),
            Command::Toy { model: Toy::Ex1 } => commands::toy_ex1(cfg, &ctx),
            Command::Toy { model: Toy::Ex2 } => commands::toy_ex2(cfg, &ctx),
            Command::Toy { model: Toy::Linear } => commands::toy_linear(cfg, &ctx),
            Command::Normalize => commands::normalize(cfg, &ctx),
            Command::NormalizeAugmented => commands::normalize_augmented(cfg, &ctx),
            Command::Ruessmann => commands::ruessmann(cfg, &ctx),
        }
    });
    let code = rep.finish(outcome, started.elapsed(), rayon::current_num_threads());
    if let Err(e) = rep.write(out.as_deref()) {
        eprintln!("kamrev: cannot write report: {e}");
        return ExitCode::from(3);
    }
    ExitCode::from(code)
}
