use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use quadseg::pipeline::{self, PipelineConfig};

#[derive(Parser)]
#[command(name = "quadseg", version, about = "Quadriceps head segmentation pipeline on thigh phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline config (JSON); absent fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the workspace directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom cohort.
    Phantom(Common),
    /// Build the augmented training set (weak labels and random warps).
    Augment(Common),
    /// Train the complete U-Net.
    Train(Common),
    /// Train the leave-one-out U-Nets and the complete U-Net.
    LooTrain(Common),
    /// Segment the test cases with the complete U-Net.
    Segment(Common),
    /// Train the corrective learning models.
    ClTrain(Common),
    /// Apply corrective learning to the test segmentations.
    ClApply(Common),
    /// Multi-atlas joint label fusion of the test and training cases.
    Jlf(Common),
    /// Write the evaluation CSV and Markdown table.
    Evaluate(Common),
    /// Verify that no training artifact depends on a test subject.
    Audit(Common),
    /// Time every stage on one volume.
    Bench(Common),
    /// Run every stage from phantom to audit.
    Run(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Phantom(c)
            | Command::Augment(c)
            | Command::Train(c)
            | Command::LooTrain(c)
            | Command::Segment(c)
            | Command::ClTrain(c)
            | Command::ClApply(c)
            | Command::Jlf(c)
            | Command::Evaluate(c)
            | Command::Audit(c)
            | Command::Bench(c)
            | Command::Run(c) => c,
        }
    }
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg.workspace = out.clone();
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let common = cli.command.common();
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = load_config(common)?;
    let record = match &cli.command {
        Command::Phantom(_) => pipeline::cmd_phantom(&cfg)?,
        Command::Augment(_) => pipeline::cmd_augment(&cfg)?,
        Command::Train(_) => pipeline::cmd_train(&cfg)?,
        Command::LooTrain(_) => pipeline::cmd_loo_train(&cfg)?,
        Command::Segment(_) => pipeline::cmd_segment(&cfg)?,
        Command::ClTrain(_) => pipeline::cmd_cl_train(&cfg)?,
        Command::ClApply(_) => pipeline::cmd_cl_apply(&cfg)?,
        Command::Jlf(_) => pipeline::cmd_jlf(&cfg)?,
        Command::Evaluate(_) => {
            let r = pipeline::cmd_evaluate(&cfg)?;
            let md = pipeline::Layout::new(&cfg.workspace).evaluation_markdown();
            print!("{}", std::fs::read_to_string(md)?);
            r
        }
        Command::Audit(_) => {
            let report = pipeline::cmd_audit(&cfg)?;
            println!(
                "audit clean: {} artifacts traced, {} leave-one-out splits verified",
                report.artifacts.len(),
                report.loo_checked.len()
            );
            return Ok(());
        }
        Command::Bench(_) => {
            let report = pipeline::cmd_bench(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            return Ok(());
        }
        Command::Run(_) => {
            let records = pipeline::run_pipeline(&cfg)?;
            let md = pipeline::Layout::new(&cfg.workspace).evaluation_markdown();
            print!("{}", std::fs::read_to_string(md)?);
            for r in &records {
                println!("{:<10} {:>8.1} s", r.subcommand, r.wall_time_s);
            }
            return Ok(());
        }
    };
    println!("{}: {} outputs in {:.1} s", record.subcommand, record.outputs.len(), record.wall_time_s);
    Ok(())
}
