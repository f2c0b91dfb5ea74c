use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, Mode};

pub const MANIFEST: &str = "manifest.json";

/// Stage names in pipeline order.
pub const STAGES: [&str; 9] =
    ["ingest", "similarity", "cluster", "fit", "oos", "tangency", "select-ordered", "select-bayes", "embed"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    /// Written by a stage that failed, or produced from inputs that have
    /// since been regenerated.
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub config_sha256: String,
    pub mode: Mode,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

fn stage_index(name: &str) -> usize {
    STAGES.iter().position(|s| *s == name).unwrap_or(STAGES.len())
}

impl Manifest {
    pub fn new(config_sha256: String, mode: Mode, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: cipca_core::VERSION.into(),
            config_sha256,
            mode,
            seed,
            stages: Vec::new(),
        }
    }

    /// The manifest in `dir` when it was written for the same configuration,
    /// otherwise a fresh one.
    pub fn load_or_new(dir: &Path, config_sha256: String, mode: Mode, seed: u64) -> Self {
        let path = dir.join(MANIFEST);
        let existing = fs::read(&path).ok().and_then(|b| serde_json::from_slice::<Manifest>(&b).ok());
        match existing {
            Some(m) if m.config_sha256 == config_sha256 => m,
            Some(_) => {
                log::warn!("configuration changed since the last run; starting a new manifest");
                Self::new(config_sha256, mode, seed)
            }
            None => Self::new(config_sha256, mode, seed),
        }
    }

    /// Replaces the record of `rec.stage` and marks every later stage's
    /// artifacts stale.
    pub fn record(&mut self, rec: StageRecord) {
        let idx = stage_index(&rec.stage);
        self.stages.retain(|s| s.stage != rec.stage);
        for s in &mut self.stages {
            if stage_index(&s.stage) > idx {
                for a in &mut s.artifacts {
                    a.stale = true;
                }
            }
        }
        self.stages.push(rec);
        self.stages.sort_by_key(|s| stage_index(&s.stage));
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST), text).with_context(|| format!("writing manifest in {}", dir.display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(stage: &str) -> StageRecord {
        StageRecord {
            stage: stage.into(),
            status: "ok".into(),
            error: None,
            artifacts: vec![Artifact { path: format!("{stage}.csv"), sha256: "00".into(), stale: false }],
        }
    }

    #[test]
    fn rerunning_a_stage_stales_later_ones() {
        let mut m = Manifest::new("abc".into(), Mode::Dc, 0);
        for s in ["ingest", "similarity", "cluster"] {
            m.record(rec(s));
        }
        m.record(rec("similarity"));
        let stale: Vec<bool> = m.stages.iter().map(|s| s.artifacts[0].stale).collect();
        assert_eq!(stale, vec![false, false, true]);
        assert_eq!(m.stages[1].stage, "similarity");
    }
}
