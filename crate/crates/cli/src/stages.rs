//! Pipeline stages. Every stage reads its inputs from the output directory,
//! so stages can be rerun one at a time.

use std::cell::RefCell;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cipca_core::bayes::posterior_rank;
use cipca_core::clustering::{cluster, grid_search, label_by_prior, random_partition, GridSpec, Partition};
use cipca_core::embedding::{mds_embed, MdsOptions};
use cipca_core::evaluation::{
    factor_stats, ordered_selection, partition_tangency_sharpe, sharpe, tangency_backtest, TangencyOptions,
};
use cipca_core::factor_model::{fit, oos_factor_returns, FitOptions, OosOptions, RestrictionMask};
use cipca_core::panel::{
    build_weights, load_panel, rank_transform, read_ranks_csv, standardize, write_ranks_csv, EstimationPanel,
    WeightSeries,
};
use cipca_core::series::FactorSeries;
use cipca_core::similarity::{similarity_matrix, to_distance, write_matrix_csv, SimilarityMatrix};
use serde_json::json;

use crate::config::{Mode, RunConfig};

pub const INSTRUMENTS: &str = "instruments.csv";
pub const RANKS: &str = "ranks.csv";
pub const SIMILARITY: &str = "similarity.json";
pub const PARTITION: &str = "partition.csv";
pub const MODEL: &str = "model.json";
pub const FACTORS_TRAIN: &str = "factors_train.csv";
pub const FACTORS_OOS: &str = "factors_oos.csv";

/// Output directory plus the files a stage has written so far.
pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub out: &'a Path,
    pub written: RefCell<Vec<String>>,
}

impl<'a> Ctx<'a> {
    pub fn new(cfg: &'a RunConfig, out: &'a Path) -> Self {
        Self { cfg, out, written: RefCell::new(Vec::new()) }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn open(&self, name: &str) -> Result<BufReader<File>> {
        let p = self.path(name);
        let f = File::open(&p).with_context(|| format!("missing input {} (run the earlier stage first)", p.display()))?;
        Ok(BufReader::new(f))
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        self.written.borrow_mut().push(name.to_string());
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(BufWriter::new(f))
    }

    fn write_with<F>(&self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> cipca_core::Result<()>,
    {
        let mut w = self.create(name)?;
        f(&mut w).with_context(|| format!("writing {name}"))?;
        w.flush()?;
        Ok(())
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    fn estimation_panel(&self) -> Result<EstimationPanel> {
        Ok(EstimationPanel::read_csv(self.open(INSTRUMENTS)?)?)
    }

    fn training_panel(&self) -> Result<EstimationPanel> {
        let panel = self.estimation_panel()?;
        check_training(self.cfg, panel.n_months())?;
        Ok(panel.truncated(self.cfg.train_months))
    }

    fn similarity(&self) -> Result<SimilarityMatrix> {
        Ok(SimilarityMatrix::from_json(self.open(SIMILARITY)?)?)
    }

    fn prior(&self, names: &[String]) -> Result<Option<Partition>> {
        match &self.cfg.input.prior {
            Some(p) => {
                let f = File::open(p).with_context(|| format!("opening prior {}", p.display()))?;
                Ok(Some(Partition::read_csv(BufReader::new(f), names)?))
            }
            None => Ok(None),
        }
    }

    fn series(&self, name: &str) -> Result<FactorSeries> {
        Ok(FactorSeries::read_csv(self.open(name)?)?)
    }

    /// Loading restriction for the configured mode.
    fn mask(&self, char_names: &[String]) -> Result<RestrictionMask> {
        if self.cfg.mode == Mode::Ipca {
            return Ok(RestrictionMask::unrestricted(char_names.len(), self.cfg.model.ipca_factors));
        }
        let p = Partition::read_csv(self.open(PARTITION)?, char_names)?;
        Ok(RestrictionMask::from_partition(&p, true))
    }
}

fn check_training(cfg: &RunConfig, t: usize) -> Result<()> {
    if cfg.train_months >= t {
        bail!("panel has {t} months; training on {} leaves none out of sample", cfg.train_months);
    }
    Ok(())
}

fn fit_options(cfg: &RunConfig) -> FitOptions {
    FitOptions { tol: cfg.model.tol, max_iter: cfg.model.max_iter, ridge: cfg.model.ridge, ..FitOptions::default() }
}

fn tangency_options(cfg: &RunConfig) -> TangencyOptions {
    TangencyOptions { burn_in: cfg.evaluation.tangency_burn_in, ridge: cfg.evaluation.ridge }
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

/// Raw panel to instruments and weights; ranks of the training months.
pub fn ingest(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let path = cfg.input.panel.as_ref().context("input.panel is not set")?;
    let raw = load_panel(path, &cfg.input.schema).with_context(|| format!("loading {}", path.display()))?;
    check_training(cfg, raw.n_months())?;
    let instruments = standardize(&raw, cfg.impute)?;
    let weights = build_weights(&raw, cfg.weights, cfg.price_floor)?;
    let panel = EstimationPanel::assemble(&raw, &instruments, &weights)?;
    ctx.write_with(INSTRUMENTS, |w| panel.write_csv(w))?;

    let train = raw.truncated(cfg.train_months);
    let ranks = rank_transform(&train);
    let train_weights = WeightSeries { scheme: weights.scheme, w: weights.w[..cfg.train_months].to_vec() };
    ctx.write_with(RANKS, |w| write_ranks_csv(w, &ranks, &train_weights))?;
    log::info!("ingested {} months, {} characteristics", raw.n_months(), raw.n_chars());
    Ok(())
}

pub fn similarity(ctx: &Ctx) -> Result<()> {
    let (ranks, weights) = read_ranks_csv(ctx.open(RANKS)?, ctx.cfg.weights)?;
    let sim = similarity_matrix(&ranks, &weights)?;
    ctx.write_with(SIMILARITY, |w| sim.to_json(w))?;
    ctx.write_with("similarity.csv", |w| write_matrix_csv(w, &sim.names, &sim.s))?;
    let dist = to_distance(&sim)?;
    ctx.write_with("distance.csv", |w| write_matrix_csv(w, &dist.names, &dist.d))?;
    Ok(())
}

pub fn cluster_stage(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    if cfg.mode == Mode::Ipca {
        log::info!("mode ipca has no characteristic partition; nothing to cluster");
        return Ok(());
    }
    let sim = ctx.similarity()?;
    let names = sim.names.clone();
    let prior = ctx.prior(&names)?;
    let summary;
    let partition = match cfg.mode {
        Mode::Ic => {
            let p = prior.context("mode ic needs a prior partition")?;
            summary = json!({ "mode": "ic", "k": p.k() });
            p
        }
        Mode::Rc => {
            let k = cfg.clustering.rc_k.context("mode rc needs clustering.rc_k")?;
            let p = random_partition(names.len(), k, cfg.seed)?;
            summary = json!({ "mode": "rc", "k": k, "seed": cfg.seed });
            p
        }
        Mode::Dc | Mode::Pdc => {
            let constrained = cfg.mode == Mode::Dc;
            let base = match (&prior, constrained) {
                (Some(p), true) => p.clone(),
                (None, true) => bail!("mode dc needs a prior partition"),
                (_, false) => Partition::single(names.len()),
            };
            let train = ctx.training_panel()?;
            let c = &cfg.clustering;
            let spec = GridSpec {
                knn: c.knn.clone(),
                m: c.m.clone(),
                f: c.f,
                eta: c.eta,
                k_max: c.k_max,
                constrained,
            };
            let oos = OosOptions {
                burn_in: c.grid_oos_burn_in,
                warm_start: cfg.model.warm_start,
                keep_weights: false,
                fit: fit_options(cfg),
            };
            let tangency = TangencyOptions { burn_in: c.grid_tangency_burn_in, ridge: cfg.evaluation.ridge };
            let res = grid_search(&sim.s, &base, &spec, |p| partition_tangency_sharpe(&train, p, &oos, &tangency))?;
            ctx.write_with("grid.csv", |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["m", "knn", "k", "score", "error"])?;
                for cell in &res.cells {
                    out.write_record([
                        cell.m.to_string(),
                        cell.knn.to_string(),
                        cell.k.map(|k| k.to_string()).unwrap_or_default(),
                        fmt(cell.score),
                        cell.error.clone().unwrap_or_default(),
                    ])?;
                }
                out.flush()?;
                Ok(())
            })?;
            let full = cluster(&sim.s, &base, &res.params, constrained)?;
            ctx.write_with("merge_trace.json", |w| full.trace.to_json(w))?;
            summary = json!({
                "mode": cfg.mode.to_string(),
                "k": full.k,
                "m": res.params.m,
                "knn": res.params.knn,
                "f": res.params.f,
                "eta": res.params.eta,
                "training_sharpe": res.score,
            });
            match &prior {
                Some(p) => label_by_prior(&res.partition, p)?,
                None => res.partition,
            }
        }
        Mode::Ipca => unreachable!(),
    };
    ctx.write_with(PARTITION, |w| partition.write_csv(w, &names))?;
    let labels: Vec<String> = (0..partition.k()).map(|c| partition.label(c)).collect();
    let mut summary = summary;
    summary["labels"] = json!(labels);
    ctx.write_json("cluster.json", &summary)?;
    Ok(())
}

/// In-sample fit on the training months.
pub fn fit_stage(ctx: &Ctx) -> Result<()> {
    let train = ctx.training_panel()?;
    let mask = ctx.mask(&train.char_names)?;
    let model = fit(&train, &mask, &fit_options(ctx.cfg))?;
    if !model.converged {
        log::warn!("in-sample fit stopped after {} iterations without converging", model.iterations);
    }
    ctx.write_with(MODEL, |w| model.to_json(w))?;
    let series = FactorSeries::new(model.dates.clone(), model.factor_names.clone(), model.factors.clone())?;
    ctx.write_with(FACTORS_TRAIN, |w| series.write_csv(w))?;
    Ok(())
}

/// Expanding-window factor returns after the training months.
pub fn oos_stage(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let panel = ctx.estimation_panel()?;
    check_training(cfg, panel.n_months())?;
    let mask = ctx.mask(&panel.char_names)?;
    let opts = OosOptions {
        burn_in: cfg.train_months,
        warm_start: cfg.model.warm_start,
        keep_weights: false,
        fit: fit_options(cfg),
    };
    let oos = oos_factor_returns(&panel, &mask, &opts)?;
    ctx.write_with(FACTORS_OOS, |w| oos.series.write_csv(w))?;
    ctx.write_with("factor_stats.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["factor", "mean_pct", "sd_pct", "sharpe", "mdd_pct"])?;
        for (j, name) in oos.series.names.iter().enumerate() {
            match factor_stats(&oos.series.column(j)) {
                Ok(s) => out.write_record([name.clone(), fmt(s.mean), fmt(s.sd), fmt(s.sharpe), fmt(s.mdd)])?,
                Err(_) => out.write_record([name.as_str(), "", "", "", ""])?,
            }
        }
        out.flush()?;
        Ok(())
    })?;
    Ok(())
}

pub fn tangency_stage(ctx: &Ctx) -> Result<()> {
    let series = ctx.series(FACTORS_OOS)?;
    let res = tangency_backtest(&series, &tangency_options(ctx.cfg))?;
    ctx.write_with("tangency.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["date".to_string(), "return".into(), "scale".into()];
        header.extend(series.names.iter().map(|n| format!("w_{n}")));
        out.write_record(&header)?;
        for (t, d) in res.dates.iter().enumerate() {
            let mut rec = vec![d.to_string(), res.returns[t].to_string(), res.scaling_path[t].to_string()];
            rec.extend(res.weights_path[t].iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    })?;
    ctx.write_json(
        "tangency.json",
        &json!({
            "factors": series.names,
            "burn_in": ctx.cfg.evaluation.tangency_burn_in,
            "months": res.returns.len(),
            "sharpe": finite_or_null(res.sharpe),
            "ridged_months": res.ridged_months,
        }),
    )?;
    Ok(())
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn oos_sharpe(oos: &FactorSeries, cols: &[usize], opts: &TangencyOptions) -> Result<f64> {
    Ok(tangency_backtest(&oos.select(cols), opts)?.sharpe)
}

/// Nested models ordered by training Sharpe, scored out of sample.
pub fn select_ordered(ctx: &Ctx) -> Result<()> {
    let train = ctx.series(FACTORS_TRAIN)?;
    let oos = ctx.series(FACTORS_OOS)?;
    if train.names != oos.names {
        bail!("training and out-of-sample factor names differ");
    }
    let market = match train.names.iter().position(|n| n == "ZC") {
        Some(c) => c,
        None => (0..train.n_series())
            .max_by(|&a, &b| {
                let s = |c: usize| sharpe(&train.column(c)).unwrap_or(f64::NEG_INFINITY);
                s(a).total_cmp(&s(b)).then(b.cmp(&a))
            })
            .unwrap_or(0),
    };
    let sel = ordered_selection(&train, market)?;
    let opts = tangency_options(ctx.cfg);
    ctx.write_with("ordered.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["j", "factors", "oos_sharpe", "error"])?;
        for j in 1..=sel.n_models() {
            let cols = sel.model(j);
            let names: Vec<&str> = cols.iter().map(|&c| train.names[c].as_str()).collect();
            let (s, err) = match oos_sharpe(&oos, cols, &opts) {
                Ok(s) => (fmt(s), String::new()),
                Err(e) => (String::new(), e.to_string()),
            };
            out.write_record([j.to_string(), names.join(" "), s, err])?;
        }
        out.flush()?;
        Ok(())
    })?;
    Ok(())
}

/// Posterior ranking of factor subsets on the training factors, with the
/// out-of-sample tangency Sharpe ratio of each top model.
pub fn select_bayes(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let train = ctx.series(FACTORS_TRAIN)?;
    let ranking = posterior_rank(&train, cfg.bayes.tr, cfg.bayes.sh2max, cfg.bayes.top_n)?;
    ctx.write_with("bayes.csv", |w| ranking.write_csv(w))?;
    let mut w = ctx.create("bayes.json")?;
    w.write_all(ranking.to_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    if ctx.exists(FACTORS_OOS) {
        let oos = ctx.series(FACTORS_OOS)?;
        let opts = tangency_options(cfg);
        ctx.write_with("bayes_oos.csv", |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["rank", "labels", "posterior", "oos_sharpe", "error"])?;
            for (r, m) in ranking.models.iter().enumerate() {
                let (s, err) = match oos_sharpe(&oos, &m.spec.included, &opts) {
                    Ok(s) => (fmt(s), String::new()),
                    Err(e) => (String::new(), e.to_string()),
                };
                out.write_record([
                    (r + 1).to_string(),
                    ranking.labels(m).join(" "),
                    format!("{:.6e}", m.posterior),
                    s,
                    err,
                ])?;
            }
            out.flush()?;
            Ok(())
        })?;
    }
    Ok(())
}

/// Planar map of the characteristic distances, labelled by cluster.
pub fn embed(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let sim = ctx.similarity()?;
    let dist = to_distance(&sim)?;
    let opts = MdsOptions { tol: cfg.embedding.tol, max_iter: cfg.embedding.max_iter, seed: cfg.seed };
    let e = mds_embed(&dist, &opts)?;
    let partition = if ctx.exists(PARTITION) && cfg.mode != Mode::Ipca {
        Some(Partition::read_csv(ctx.open(PARTITION)?, &sim.names)?)
    } else {
        ctx.prior(&sim.names)?
    };
    let labels: Option<Vec<String>> =
        partition.map(|p| p.assignment().iter().map(|&c| p.label(c)).collect());
    ctx.write_with("embedding.csv", |w| e.write_csv(w, labels.as_deref()))?;
    ctx.write_json("embedding.json", &json!({ "stress": e.stress, "iterations": e.iterations }))?;
    Ok(())
}

pub fn run_stage(name: &str, ctx: &Ctx) -> Result<()> {
    match name {
        "ingest" => ingest(ctx),
        "similarity" => similarity(ctx),
        "cluster" => cluster_stage(ctx),
        "fit" => fit_stage(ctx),
        "oos" => oos_stage(ctx),
        "tangency" => tangency_stage(ctx),
        "select-ordered" => select_ordered(ctx),
        "select-bayes" => select_bayes(ctx),
        "embed" => embed(ctx),
        other => bail!("unknown stage '{other}'"),
    }
}
