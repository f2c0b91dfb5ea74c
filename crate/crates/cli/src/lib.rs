//! Command-line driver for the cluster-restricted IPCA pipeline.
//!
//! Stages write CSV/JSON artifacts into one output directory and record them
//! with their SHA-256 in `manifest.json`. `pipeline` runs every stage in
//! order; the per-stage subcommands rerun one stage from earlier artifacts.

pub mod config;
pub mod manifest;
pub mod stages;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cipca_core::clustering::Partition;
use cipca_core::panel::{write_panel, WeightScheme};
use cipca_core::synthetic::{planted_panel, BlockSpec, PlantedSpec};
use clap::{Args, Parser, Subcommand};

use config::{Mode, RunConfig, Selection};
use manifest::{file_digest, Artifact, Manifest, StageRecord, MANIFEST, STAGES};
use stages::Ctx;

#[derive(Debug, Parser)]
#[command(name = "cipca", version, about = "Cluster-restricted instrumented PCA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true, default_value = "cipca-out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Portfolio weighting: value or equal.
    #[arg(long, global = true)]
    pub weights: Option<WeightScheme>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Override a config entry, e.g. `--set clustering.knn=[5,10]`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Standardize the raw panel, build weights and training ranks.
    Ingest,
    /// Characteristic similarity and distance matrices.
    Similarity,
    /// Partition the characteristics according to the mode.
    Cluster,
    /// In-sample fit on the training months.
    Fit,
    /// Expanding-window factor returns after the training months.
    Oos,
    /// Tangency portfolio of the out-of-sample factors.
    Tangency,
    /// Nested models ordered by training Sharpe ratio.
    SelectOrdered,
    /// Posterior ranking of factor subsets.
    SelectBayes,
    /// Planar map of the characteristic distances.
    Embed,
    /// Every stage in order.
    Pipeline,
    /// Write a synthetic panel, prior partition and config into `--out`.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    pub assets: usize,
    #[arg(long, default_value_t = 144)]
    pub months: usize,
    #[arg(long, default_value_t = 9)]
    pub chars: usize,
    #[arg(long, default_value_t = 3)]
    pub blocks: usize,
}

impl Command {
    fn stage(&self) -> Option<&'static str> {
        Some(match self {
            Command::Ingest => "ingest",
            Command::Similarity => "similarity",
            Command::Cluster => "cluster",
            Command::Fit => "fit",
            Command::Oos => "oos",
            Command::Tangency => "tangency",
            Command::SelectOrdered => "select-ordered",
            Command::SelectBayes => "select-bayes",
            Command::Embed => "embed",
            Command::Pipeline | Command::Synth(_) => return None,
        })
    }
}

/// Effective configuration: file, then `--set`, then the dedicated flags.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(m) = cli.mode {
        overrides.push(format!("mode=\"{m}\""));
    }
    if let Some(w) = cli.weights {
        let w = match w {
            WeightScheme::Value => "value",
            WeightScheme::Equal => "equal",
        };
        overrides.push(format!("weights=\"{w}\""));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    RunConfig::load(cli.config.as_deref(), &overrides)
}

fn stage_selected(cfg: &RunConfig, stage: &str) -> bool {
    match stage {
        "select-ordered" => cfg.selection == Selection::Ordered,
        "select-bayes" => cfg.selection == Selection::Bayes,
        _ => true,
    }
}

/// Runs one stage and records it; a failed stage's files are marked stale.
fn run_recorded(stage: &str, cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let ctx = Ctx::new(cfg, out);
    log::info!("stage {stage}");
    let result = stages::run_stage(stage, &ctx);
    let failed = result.is_err();
    let mut artifacts = Vec::new();
    for name in ctx.written.borrow().iter() {
        let path = out.join(name);
        let sha256 = if path.is_file() { file_digest(&path)? } else { String::new() };
        artifacts.push(Artifact { path: name.clone(), sha256, stale: failed });
    }
    manifest.record(StageRecord {
        stage: stage.to_string(),
        status: if failed { "failed".into() } else { "ok".into() },
        error: result.as_ref().err().map(|e| format!("{e:#}")),
        artifacts,
    });
    manifest.save(out)?;
    result.with_context(|| format!("stage `{stage}` failed"))
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    if let Command::Synth(args) = &cli.command {
        return synth(&cli.out, args, cli.seed.unwrap_or(0));
    }
    let cfg = load_config(cli)?;
    cfg.validate()?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let digest = cfg.digest();
    match cli.command.stage() {
        Some(stage) => {
            let mut manifest = Manifest::load_or_new(&cli.out, digest, cfg.mode, cfg.seed);
            run_recorded(stage, &cfg, &cli.out, &mut manifest)
        }
        None => {
            let _ = fs::remove_file(cli.out.join(MANIFEST));
            let mut manifest = Manifest::new(digest, cfg.mode, cfg.seed);
            for stage in STAGES.iter().filter(|s| stage_selected(&cfg, s)) {
                run_recorded(stage, &cfg, &cli.out, &mut manifest)?;
            }
            Ok(())
        }
    }
}

/// Rounds to seven significant digits so fixture files stay small.
fn round7(v: f64) -> f64 {
    if v.is_finite() {
        format!("{v:.6e}").parse().unwrap_or(v)
    } else {
        v
    }
}

/// Writes `panel.csv`, `prior.csv` and `config.toml` for a planted panel.
/// The prior merges the first two planted blocks so that constrained
/// clustering has something to split.
pub fn synth(out: &Path, args: &SynthArgs, seed: u64) -> Result<()> {
    fs::create_dir_all(out)?;
    let spec = PlantedSpec {
        blocks: BlockSpec {
            n_assets: args.assets,
            n_months: args.months,
            n_chars: args.chars,
            n_blocks: args.blocks,
            seed,
            ..BlockSpec::default()
        },
        ..PlantedSpec::default()
    };
    let mut planted = planted_panel(&spec)?;
    for m in &mut planted.raw.months {
        m.chars.apply(|v| *v = round7(*v));
        m.returns.apply(|v| *v = round7(*v));
        m.mktcap.apply(|v| *v = round7(*v));
        m.prices.apply(|v| *v = round7(*v));
    }
    let mut w = std::io::BufWriter::new(fs::File::create(out.join("panel.csv"))?);
    write_panel(&mut w, &planted.raw)?;
    drop(w);

    let assignment: Vec<usize> = planted.partition.assignment().iter().map(|&b| b.saturating_sub(1)).collect();
    let k = assignment.iter().max().map_or(1, |m| m + 1);
    let prior = Partition::new(assignment, Some((1..=k).map(|c| format!("G{c}")).collect()))?;
    prior.write_csv(fs::File::create(out.join("prior.csv"))?, &planted.raw.char_names)?;

    let train = args.months * 2 / 3;
    let config = format!(
        "mode = \"dc\"\nweights = \"value\"\ntrain_months = {train}\nseed = {seed}\nselection = \"ordered\"\n\n\
         [input]\npanel = \"panel.csv\"\nprior = \"prior.csv\"\n\n\
         [clustering]\nknn = [4, 6, 8]\nm = [6, 8]\nk_max = 6\ngrid_oos_burn_in = {}\ngrid_tangency_burn_in = {}\n\n\
         [evaluation]\ntangency_burn_in = {}\n",
        train / 2,
        train / 4,
        (args.months - train) / 2,
    );
    fs::write(out.join("config.toml"), config)?;
    Ok(())
}
