use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use attnboost_core::synthdata::Split;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::access::Disk;
use crate::commands;
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "attnboost", version, about = "Boosted multi-stage gland segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Flags override the config file.
#[derive(Debug, Args)]
struct Common {
    /// `key = value` config file; unset keys keep their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dataset directory holding manifest.json.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Train with every stage weighted by the initial contribution map.
    #[arg(long)]
    no_boost: bool,
    #[arg(long, value_name = "N")]
    stages: Option<usize>,
    #[arg(long, value_name = "N")]
    max_epochs: Option<usize>,
    #[arg(long, value_name = "F")]
    alpha: Option<f64>,
    #[arg(long, value_name = "N")]
    area_thr: Option<usize>,
    #[arg(long, value_name = "N")]
    filter_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic benchmark into the output directory.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a stage stack on the dataset's train split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Segment every PNG image in a directory.
    Segment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Input images; defaults to the dataset's test images.
        #[arg(long, value_name = "DIR")]
        images: Option<PathBuf>,
        /// Also write tri-label certainty maps.
        #[arg(long)]
        trilabels: bool,
    },
    /// Score predicted instance maps against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        /// Ground truth maps; defaults to the dataset's test truth.
        #[arg(long, value_name = "DIR")]
        truth: Option<PathBuf>,
    },
    /// Pick segmentation parameters on the train and validation splits.
    Gridsearch {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Write per-stage posterior and contribution maps as PMAP files.
    DumpMaps {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Dump only the first N samples of the split.
        #[arg(long, value_name = "N")]
        limit: Option<usize>,
    },
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::parse(&text).with_context(|| p.display().to_string())?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = &self.data {
            cfg.data_dir = v.clone();
        }
        if self.no_boost {
            cfg.boost_enabled = false;
        }
        if let Some(v) = self.stages {
            cfg.stages = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.alpha {
            cfg.seg.alpha = v;
        }
        if let Some(v) = self.area_thr {
            cfg.seg.area_thr = v;
        }
        if let Some(v) = self.filter_size {
            cfg.seg.filter_size = v;
        }
        Ok(cfg)
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate { common } => {
            let cfg = common.resolve()?;
            let m = commands::generate(&cfg)?;
            println!("wrote {} samples to {}", m.entries.len(), cfg.out_dir.display());
        }
        Command::Train { common } => {
            let cfg = common.resolve()?;
            let (_, report) = commands::train(&cfg, |r| {
                eprintln!(
                    "epoch {:>3}  train {:.6}  val {:.6}{}",
                    r.epoch,
                    r.train_loss,
                    r.val_loss,
                    if r.improved { "  *" } else { "" }
                )
            })?;
            println!(
                "kept epoch {} of {} ({:?})",
                report.best_epoch, report.stop_epoch, report.stop_reason
            );
        }
        Command::Segment {
            common,
            checkpoint,
            images,
            trilabels,
        } => {
            let cfg = common.resolve()?;
            let images = images.unwrap_or_else(|| cfg.data_dir.join("test").join("images"));
            let written = commands::segment(&cfg, &checkpoint, &images, trilabels)?;
            println!("wrote {} instance maps to {}", written.len(), cfg.out_dir.display());
        }
        Command::Evaluate { common, pred, truth } => {
            let cfg = common.resolve()?;
            let truth = truth.unwrap_or_else(|| cfg.data_dir.join("test").join("truth"));
            let r = commands::evaluate(&cfg, &pred, &truth)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Gridsearch { common, checkpoint } => {
            let cfg = common.resolve()?;
            let o = commands::gridsearch(&cfg, &checkpoint, &Disk)?;
            println!(
                "best alpha = {}, area_thr = {}, filter_size = {} over {} combinations",
                o.best.alpha,
                o.best.area_thr,
                o.best.filter_size,
                o.table.len()
            );
        }
        Command::DumpMaps {
            common,
            checkpoint,
            split,
            limit,
        } => {
            let cfg = common.resolve()?;
            let n = commands::dump_maps(&cfg, &checkpoint, split.into(), limit)?;
            println!("dumped maps for {n} samples to {}", cfg.out_dir.display());
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the chosen subcommand.
/// Returns the process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
