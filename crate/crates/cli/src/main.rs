use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qmda::bundle::load_bundle;
use qmda::experiments::{
    self, assimilate, run_config, train, write_run, write_training, ExperimentConfig, Outcome, Overrides, Task,
    CONFIG_FILE, PRESETS,
};
use qmda::{Error, Result};

/// Sequential data assimilation with density matrices.
#[derive(Parser)]
#[command(name = "qmda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the basis, partition and operators and write a bundle.
    Train(TrainArgs),
    /// Run the filter with a trained bundle.
    Assimilate(AssimilateArgs),
    /// Convergence study of the data-driven operators against the analytic circle.
    Converge(ConvergeArgs),
    /// Write eigenfunction scatter and time-series data.
    DumpEigfuncs(PresetArgs),
    /// Run a preset end to end.
    Run(PresetArgs),
}

#[derive(Args)]
struct PresetArgs {
    /// Preset name; `run` and `train` require one.
    #[arg(long)]
    preset: Option<String>,
    /// Full configuration file; takes precedence over every other flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shrinks training size and basis of the Lorenz 63 presets.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    truth_seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long = "n-train")]
    n_train: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl PresetArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            scale: self.scale,
            seed: self.seed,
            truth_seed: self.truth_seed,
            run_steps: self.steps,
            n_train: self.n_train,
            l: self.l,
            s: self.s,
            sweep: None,
            out_dir: self.out.clone(),
        }
    }

    fn name<'a>(&'a self, default: Option<&'a str>) -> Result<&'a str> {
        self.preset
            .as_deref()
            .or(default)
            .ok_or_else(|| Error::Parameter(format!("--preset is required (one of {})", PRESETS.join(", "))))
    }

    fn config(&self, default: Option<&str>) -> Result<ExperimentConfig> {
        match &self.config {
            Some(path) => ExperimentConfig::load(path),
            None => self.overrides().config_for(self.name(default)?),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    preset: PresetArgs,
}

#[derive(Args)]
struct AssimilateArgs {
    /// Directory written by `train`.
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    truth_seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory; defaults to the bundle directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergeArgs {
    #[command(flatten)]
    preset: PresetArgs,
    /// Comma-separated training sizes.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn out_dir(cfg: &ExperimentConfig) -> &Path {
    cfg.out_dir.as_path()
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.preset.config(None)?;
    if cfg.task != Task::Assimilation {
        return Err(Error::Parameter(format!(
            "preset {} does not produce a bundle",
            cfg.preset
        )));
    }
    let trained = train(&cfg).map_err(|e| e.in_preset(&cfg.preset))?;
    let hash = write_training(out_dir(&cfg), &cfg, &trained)?;
    eprintln!("bundle {hash} written to {}", cfg.out_dir.display());
    print_json(&trained.diagnostics)
}

fn cmd_assimilate(args: &AssimilateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.bundle.join(CONFIG_FILE))?;
    if let Some(v) = args.truth_seed {
        cfg.truth_seed = v;
    }
    if let Some(v) = args.steps {
        cfg.run_steps = v;
    }
    cfg.out_dir = args.out.clone().unwrap_or_else(|| args.bundle.clone());
    cfg.validate()?;
    let (bundle, hash) = load_bundle(&args.bundle)?;
    let records = assimilate(&cfg, &bundle).map_err(|e| e.in_preset(&cfg.preset))?;
    let summary = write_run(out_dir(&cfg), &cfg, &hash, &records)?;
    print_json(&summary)
}

fn cmd_converge(args: &ConvergeArgs) -> Result<()> {
    let mut cfg = match &args.preset.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let mut o = args.preset.overrides();
            o.sweep = args.sweep.clone();
            let name = args.preset.name(Some("convergence-study"))?;
            let mut cfg = experiments::preset(name, o.scale.unwrap_or(1.0))?;
            if cfg.backend == experiments::Backend::Analytic {
                // Match the Fourier band of the analytic preset.
                cfg.l = 2 * cfg.l + 1;
                cfg.backend = experiments::Backend::DataDriven;
            }
            cfg.task = Task::Convergence;
            if cfg.sweep.is_empty() {
                cfg.sweep = vec![500, 1000, 2000, 4000];
            }
            cfg.n_train = *cfg.sweep.iter().max().unwrap_or(&0);
            o.apply(&mut cfg)?;
            cfg
        }
    };
    cfg.task = Task::Convergence;
    report(run_config(&cfg)?)
}

fn cmd_dump(args: &PresetArgs) -> Result<()> {
    let mut cfg = args.config(Some("eigfuncs-dump"))?;
    cfg.task = Task::EigfuncsDump;
    cfg.validate()?;
    report(run_config(&cfg)?)
}

fn cmd_run(args: &PresetArgs) -> Result<()> {
    report(run_config(&args.config(None)?)?)
}

fn report(outcome: Outcome) -> Result<()> {
    match outcome {
        Outcome::Assimilation(s) => print_json(&s),
        Outcome::Eigfuncs(r) => print_json(&r),
        Outcome::Convergence(r) => print_json(&r),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Assimilate(a) => cmd_assimilate(a),
        Command::Converge(a) => cmd_converge(a),
        Command::DumpEigfuncs(a) => cmd_dump(a),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
