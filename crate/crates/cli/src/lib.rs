//! The `proed` command line: subcommands for every pipeline stage, the run
//! configuration, and report emission.

pub mod commands;
pub mod config;
pub mod fixture;
pub mod report;
pub mod workspace;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use proed_core::dataset::Split;
use proed_core::sampling::MonthKey;

use crate::config::{errors, validate_config, Overrides, Severity, DEFAULT_CONFIG_FILE};
use crate::workspace::Workspace;

#[derive(Debug, Parser)]
#[command(name = "proed", version, about = "Pro-ED image dataset, classifier and prevalence trend pipeline")]
pub struct Cli {
    /// Run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true, default_value = DEFAULT_CONFIG_FILE)]
    pub config: PathBuf,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the archive and fetch its images into the store.
    Ingest {
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Remove exact and near-duplicate images.
    Dedup {
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Label deduplicated images and split them into train/val/test.
    Dataset {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        test_frac: Option<f64>,
        #[arg(long)]
        val_frac: Option<f64>,
        #[arg(long)]
        allow_single_class: bool,
    },
    /// Fine-tune a classification head on a frozen backbone.
    Train {
        #[arg(long, value_parser = ["resnet152", "vit_b16", "toy_linear"])]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Run directory name under the runs path (default: the architecture).
        #[arg(long)]
        run: Option<String>,
        /// Generate seeded stand-in weights when no pretrained weights file exists.
        #[arg(long)]
        stub_weights: bool,
    },
    /// Evaluate a run's selected checkpoint on a split.
    Eval {
        #[arg(long)]
        run: Option<String>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Another run evaluated on the same split to compare against.
        #[arg(long)]
        compare: Option<String>,
    },
    /// Draw the per-month sampling days.
    PlanSample {
        #[arg(long)]
        start: Option<MonthKey>,
        #[arg(long)]
        end: Option<MonthKey>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        days_per_month: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify the sampled posts with a trained run.
    Classify {
        #[arg(long)]
        run: Option<String>,
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Aggregate monthly prevalence and fit trends.
    Trend {
        #[arg(long)]
        degree: Option<usize>,
    },
    /// Emit figure and table CSVs (and optionally SVGs).
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accept inputs produced under a different config.
        #[arg(long)]
        force: bool,
        /// Also render each figure as SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Check the config and print findings.
    Validate,
    /// Write the synthetic 120-image fixture corpus and its config into DIR.
    Fixture { dir: PathBuf },
}

impl Command {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides::default();
        match self {
            Command::Ingest { archive } => o.archive = archive.clone(),
            Command::Dedup { threshold } => o.threshold = *threshold,
            Command::Dataset { seed, test_frac, val_frac, allow_single_class } => {
                o.dataset_seed = *seed;
                o.test_frac = *test_frac;
                o.val_frac = *val_frac;
                o.allow_single_class = *allow_single_class;
            }
            Command::Train { arch, epochs, seed, batch_size, learning_rate, .. } => {
                o.arch = arch.clone();
                o.epochs = *epochs;
                o.train_seed = *seed;
                o.batch_size = *batch_size;
                o.learning_rate = *learning_rate;
            }
            Command::PlanSample { start, end, seed, days_per_month, .. } => {
                o.start = *start;
                o.end = *end;
                o.sample_seed = *seed;
                o.days_per_month = *days_per_month;
            }
            Command::Trend { degree } => o.degree = *degree,
            _ => {}
        }
        o
    }
}

/// Runs one subcommand and returns the text to print on stdout.
pub fn run(cli: Cli) -> Result<String> {
    if let Command::Fixture { dir } = &cli.command {
        let s = fixture::write_fixture(dir)?;
        return Ok(format!("fixture: {} images and proed.toml written to {}", s.image_files, s.root.display()));
    }
    let (root, mut config) = Workspace::load(&cli.config)?;
    cli.command.overrides().apply(&mut config);
    let findings = validate_config(&config);
    if let Command::Validate = cli.command {
        let lines: Vec<String> = findings.iter().map(|f| f.to_string()).collect();
        let n = errors(&findings).count();
        if n > 0 {
            bail!("{}\n{n} error(s) in config", lines.join("\n"));
        }
        return Ok(if lines.is_empty() { "config ok".into() } else { lines.join("\n") });
    }
    for f in findings.iter().filter(|f| f.severity == Severity::Warning) {
        log::warn!("{f}");
    }
    let errs: Vec<String> = errors(&findings).map(|f| f.to_string()).collect();
    if !errs.is_empty() {
        bail!("invalid config:\n{}", errs.join("\n"));
    }

    let ws = Workspace::new(root, config);
    let _lock = ws.lock()?;
    ws.record_config()?;
    match cli.command {
        Command::Ingest { .. } => commands::ingest(&ws),
        Command::Dedup { .. } => commands::dedup(&ws),
        Command::Dataset { .. } => commands::dataset(&ws),
        Command::Train { run, stub_weights, .. } => commands::train(&ws, &commands::TrainArgs { run, stub_weights }),
        Command::Eval { run, split, compare } => {
            let run = commands::default_run(&ws, run);
            commands::eval(&ws, &run, split, compare.as_deref())
        }
        Command::PlanSample { out, .. } => commands::plan_sample(&ws, out.as_deref()),
        Command::Classify { run, plan } => {
            let run = commands::default_run(&ws, run);
            commands::classify(&ws, &run, plan.as_deref())
        }
        Command::Trend { .. } => commands::trend(&ws),
        Command::Report { out, force, svg } => report::report(&ws, &report::ReportArgs { out, force, svg }),
        Command::Validate | Command::Fixture { .. } => unreachable!(),
    }
}
