use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wdcgan_cli::config::{Overrides, PipelineConfig};
use wdcgan_cli::stages::{format_summary, Run};
use wdcgan_cli::{CliError, CliResult};

/// Synthetic vibration segments with a 1-D WGAN-GP, and a damage classifier
/// trained with and tested on them.
#[derive(Parser, Debug)]
#[command(name = "wdcgan", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "wdcgan.toml")]
    config: PathBuf,
    /// Global seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding WDCGAN_OUT_DIR and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Segment length, overriding the config.
    #[arg(long = "seg-len", global = true)]
    seg_len: Option<usize>,
    /// Deterministic reductions and zeroed wall-clock columns.
    #[arg(long = "strict-determinism", global = true, num_args = 0..=1, default_missing_value = "true")]
    strict_determinism: Option<bool>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write surrogate raw records for both conditions.
    Synth,
    /// Segment raw records into the undamaged and damaged pools.
    Ingest {
        /// Raw files; defaults to the configured inputs or the synth output.
        inputs: Vec<PathBuf>,
    },
    /// Train the GAN of one case (all cases by default).
    TrainGan {
        #[arg(long)]
        case: Option<String>,
    },
    /// Draw generated segments from a trained GAN.
    Generate {
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// FID and SSIM reports of generated against real segments.
    Eval {
        #[arg(long)]
        case: Option<String>,
    },
    /// Build a scenario split and train the classifier.
    TrainDcnn {
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        scenario: u8,
    },
    /// Score the test part of a scenario split.
    TestDcnn {
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        scenario: u8,
    },
    /// Write SVG and CSV figures from finished stages.
    Plots,
    /// Collect scenario metrics into summary.csv and print them.
    Summary,
    /// Run every stage, resuming from the manifest.
    Pipeline,
    /// Print the configuration after overrides.
    PrintConfig,
}

fn cases(run: &Run, case: &Option<String>) -> Vec<String> {
    match case {
        Some(c) => vec![c.clone()],
        None => run.cfg.cases.iter().map(|c| c.name.clone()).collect(),
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        out_dir: cli.out,
        seg_len: cli.seg_len,
        strict_determinism: cli.strict_determinism,
    });
    if let Command::PrintConfig = cli.command {
        cfg.validate()?;
        let text = toml::to_string_pretty(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
        print!("{text}");
        return Ok(());
    }
    let mut run = Run::new(cfg)?;
    match cli.command {
        Command::Synth => run.synth()?,
        Command::Ingest { inputs } => run.ingest(&inputs)?,
        Command::TrainGan { case } => {
            for c in cases(&run, &case) {
                run.train_gan(&c)?;
            }
        }
        Command::Generate { case, n } => {
            for c in cases(&run, &case) {
                run.generate(&c, n)?;
            }
        }
        Command::Eval { case } => {
            for c in cases(&run, &case) {
                run.eval(&c)?;
            }
        }
        Command::TrainDcnn { case, scenario } => {
            for c in cases(&run, &case) {
                run.train_dcnn(&c, scenario)?;
            }
        }
        Command::TestDcnn { case, scenario } => {
            for c in cases(&run, &case) {
                run.test_dcnn(&c, scenario)?;
            }
        }
        Command::Plots => run.plots()?,
        Command::Summary => print!("{}", format_summary(&run.summary()?)),
        Command::Pipeline => print!("{}", format_summary(&run.pipeline()?)),
        Command::PrintConfig => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
