use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vidvital::dvrnet::Variant;
use vidvital::pipeline::{Pipeline, PipelineConfig, Stage};
use vidvital::trainer::{Channel, Task};
use vidvital::Error;

#[derive(Parser, Debug)]
#[command(name = "vidvital", version, about = "Heart and respiratory rate from fingertip video")]
struct Cli {
    /// Master seed for every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration used when no --config is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    /// Output directory.
    #[arg(long, global = true, default_value = "vidvital-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset into <out>/raw.
    Synth {
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// Standardise clips and apply the quality gate.
    Preprocess {
        /// Raw catalog; defaults to <out>/raw/catalog.csv.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Subject-disjoint holdout and stratified folds.
    Folds {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train one network per fold and keep the best.
    Train(TrainArgs),
    /// EEMD-PCA estimates for the held-out clips.
    Baseline,
    /// Score the trained networks on the held-out clips.
    Eval {
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[arg(long, value_parser = parse_channel)]
        channel: Option<Channel>,
    },
    /// Summarise every evaluation into <out>/summary.txt.
    Report,
    /// Run all stages, skipping those whose inputs are unchanged.
    Pipeline,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long, value_parser = parse_channel)]
    channel: Option<Channel>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    k: Option<usize>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_channel(s: &str) -> Result<Channel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::read(p)?,
        None => match cli.preset {
            Preset::Full => PipelineConfig::default(),
            Preset::Desk => PipelineConfig::desk(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let select = |task: Option<Task>, channel: Option<Channel>, cfg: &mut PipelineConfig| {
        if let Some(t) = task {
            cfg.train.tasks = vec![t];
        }
        if let Some(c) = channel {
            cfg.train.channels = vec![c];
        }
    };
    match &cli.command {
        Command::Synth { subjects: Some(n) } => {
            cfg.synth.get_or_insert_with(Default::default).n_subjects = *n;
        }
        Command::Preprocess { catalog: Some(p) } => {
            cfg.synth = None;
            cfg.input_catalog = Some(p.clone());
        }
        Command::Folds { k: Some(k) } => cfg.folds.k = *k,
        Command::Train(a) => {
            select(a.task, a.channel, &mut cfg);
            if let Some(v) = a.variant {
                cfg.train.variant = v;
            }
            if let Some(k) = a.k {
                cfg.folds.k = k;
            }
        }
        Command::Eval { task, channel } => select(*task, *channel, &mut cfg),
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli).map_err(|e| e.in_stage("config"))?;
    let stage = match cli.command {
        Command::Synth { .. } => Stage::Synth,
        Command::Preprocess { .. } => Stage::Preprocess,
        Command::Folds { .. } => Stage::Folds,
        Command::Train(_) => Stage::Train,
        Command::Baseline => Stage::Baseline,
        Command::Eval { .. } => Stage::Evaluate,
        Command::Report => Stage::Report,
        Command::Pipeline => {
            let summary = Pipeline::new(cfg, &cli.out).run()?;
            let names = |v: &[Stage]| v.iter().map(|s| s.name()).collect::<Vec<_>>().join(" ");
            println!("ran: {}", names(&summary.ran));
            println!("skipped: {}", names(&summary.skipped));
            return Ok(());
        }
    };
    if stage != Stage::Synth {
        cfg.validate().map_err(|e| e.in_stage("config"))?;
    }
    Pipeline::new(cfg, &cli.out)
        .run_stage(stage)
        .map_err(|e| e.in_stage(stage.name()))?;
    println!("{stage}: done");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
