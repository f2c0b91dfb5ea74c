use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cipca_core::bayes::{DEFAULT_PRIOR_FRACTION, DEFAULT_TOP_N};
use cipca_core::clustering::{GridSpec, DEFAULT_ETA, DEFAULT_F};
use cipca_core::evaluation::DEFAULT_TANGENCY_BURN_IN;
use cipca_core::panel::{ColumnSchema, ImputePolicy, WeightScheme, DEFAULT_PRICE_FLOOR};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which loading restriction the factor model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// The prior partition as given.
    Ic,
    /// Split/merge clustering inside the prior clusters.
    #[default]
    Dc,
    /// Split/merge clustering ignoring the prior.
    Pdc,
    /// Random partition with `clustering.rc_k` clusters.
    Rc,
    /// Unrestricted loadings with `model.ipca_factors` factors.
    Ipca,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Ic => "ic",
            Mode::Dc => "dc",
            Mode::Pdc => "pdc",
            Mode::Rc => "rc",
            Mode::Ipca => "ipca",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Ordered,
    Bayes,
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub panel: Option<PathBuf>,
    /// `characteristic,cluster[,label]` file; required by `ic` and `dc`.
    pub prior: Option<PathBuf>,
    pub schema: ColumnSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub knn: Vec<usize>,
    pub m: Vec<usize>,
    pub f: f64,
    pub eta: f64,
    pub k_max: usize,
    pub rc_k: Option<usize>,
    /// Expanding-window burn-in of the factor model inside the training
    /// sample when scoring a grid cell.
    pub grid_oos_burn_in: usize,
    /// Burn-in of the tangency portfolio on those factor returns.
    pub grid_tangency_burn_in: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            knn: g.knn,
            m: g.m,
            f: DEFAULT_F,
            eta: DEFAULT_ETA,
            k_max: g.k_max,
            rc_k: None,
            grid_oos_burn_in: 60,
            grid_tangency_burn_in: 36,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub ipca_factors: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub ridge: bool,
    pub warm_start: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { ipca_factors: 5, tol: 1e-8, max_iter: 1000, ridge: false, warm_start: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub tangency_burn_in: usize,
    pub ridge: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { tangency_burn_in: DEFAULT_TANGENCY_BURN_IN, ridge: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesConfig {
    pub tr: f64,
    pub sh2max: Option<f64>,
    pub top_n: usize,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self { tr: DEFAULT_PRIOR_FRACTION, sh2max: None, top_n: DEFAULT_TOP_N }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub weights: WeightScheme,
    pub price_floor: f64,
    pub impute: ImputePolicy,
    /// Leading months used for similarity, clustering, in-sample fits and
    /// subset selection; out-of-sample evaluation starts after them.
    pub train_months: usize,
    pub seed: u64,
    pub selection: Selection,
    pub input: InputConfig,
    pub clustering: ClusteringConfig,
    pub model: ModelConfig,
    pub evaluation: EvaluationConfig,
    pub bayes: BayesConfig,
    pub embedding: EmbeddingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            weights: WeightScheme::Value,
            price_floor: DEFAULT_PRICE_FLOOR,
            impute: ImputePolicy::Mean,
            train_months: 180,
            seed: 0,
            selection: Selection::default(),
            input: InputConfig::default(),
            clustering: ClusteringConfig::default(),
            model: ModelConfig::default(),
            evaluation: EvaluationConfig::default(),
            bayes: BayesConfig::default(),
            embedding: EmbeddingConfig::default(),
        }
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted key such as `clustering.knn=[5, 10]` in a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override '{assignment}' is not of the form key=value");
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("invalid override key '{key}'");
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override key '{key}' descends into a non-table value"),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses configuration text as written, without resolving paths.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).context("parsing config")?;
        toml::Value::Table(table).try_into().context("invalid configuration")
    }

    /// Reads the config file (if any), applies `key=value` overrides and
    /// resolves input paths against the file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        resolve(&mut cfg.input.panel);
        resolve(&mut cfg.input.prior);
        Ok(cfg)
    }

    /// Checks inputs and option combinations before any computation.
    pub fn validate(&self) -> Result<()> {
        match &self.input.panel {
            None => bail!("input.panel is not set"),
            Some(p) if !p.is_file() => bail!("input panel {} does not exist", p.display()),
            _ => {}
        }
        if let Some(p) = &self.input.prior {
            if !p.is_file() {
                bail!("prior partition {} does not exist", p.display());
            }
        }
        match self.mode {
            Mode::Ic | Mode::Dc if self.input.prior.is_none() => {
                bail!("mode {} needs input.prior", self.mode)
            }
            Mode::Rc if self.clustering.rc_k.is_none_or(|k| k == 0) => {
                bail!("mode rc needs clustering.rc_k >= 1")
            }
            Mode::Ipca if self.model.ipca_factors == 0 => bail!("model.ipca_factors must be at least 1"),
            _ => {}
        }
        if self.train_months < 3 {
            bail!("train_months must be at least 3");
        }
        let c = &self.clustering;
        if matches!(self.mode, Mode::Dc | Mode::Pdc) {
            if c.knn.is_empty() || c.m.is_empty() {
                bail!("clustering.knn and clustering.m must be nonempty");
            }
            if c.grid_oos_burn_in < 2 || c.grid_oos_burn_in + c.grid_tangency_burn_in >= self.train_months {
                bail!(
                    "grid burn-ins ({} + {}) must leave months inside the {}-month training sample",
                    c.grid_oos_burn_in,
                    c.grid_tangency_burn_in,
                    self.train_months
                );
            }
        }
        if !(self.bayes.tr > 0.0 && self.bayes.tr < 1.0) {
            bail!("bayes.tr must lie in (0, 1)");
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let mut t: toml::Table = toml::from_str("mode = \"ic\"\n[clustering]\nknn = [5]\n").unwrap();
        apply_override(&mut t, "clustering.knn=[3, 7]").unwrap();
        apply_override(&mut t, "mode=pdc").unwrap();
        apply_override(&mut t, "bayes.tr=0.2").unwrap();
        let cfg: RunConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.clustering.knn, vec![3, 7]);
        assert_eq!(cfg.mode, Mode::Pdc);
        assert_eq!(cfg.bayes.tr, 0.2);
        assert_eq!(cfg.train_months, 180);
    }

    #[test]
    fn malformed_override_rejected() {
        let mut t = toml::Table::new();
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, ".x=1").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let t: toml::Table = toml::from_str("modes = \"ic\"").unwrap();
        assert!(toml::Value::Table(t).try_into::<RunConfig>().is_err());
    }

    #[test]
    fn missing_panel_fails_validation() {
        let cfg = RunConfig { input: InputConfig { panel: Some("/nonexistent/panel.csv".into()), ..Default::default() }, ..Default::default() };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("does not exist"), "{err}");
    }

    #[test]
    fn rc_needs_cluster_count() {
        let dir = tempfile::tempdir().unwrap();
        let panel = dir.path().join("p.csv");
        std::fs::write(&panel, "x").unwrap();
        let mut cfg = RunConfig { mode: Mode::Rc, ..Default::default() };
        cfg.input.panel = Some(panel);
        assert!(cfg.validate().is_err());
        cfg.clustering.rc_k = Some(3);
        cfg.validate().unwrap();
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
