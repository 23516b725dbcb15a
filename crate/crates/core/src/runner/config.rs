//! Grid configuration (TOML).
//!
//! ```toml
//! record_wall_clock = false        # write real seconds into results.csv
//!
//! [[datasets]]
//! name = "synth1k"
//! path = "data/synth1k.tsv"        # relative to the config file
//! format = "triplet"
//! k_core = 5
//!
//! [axes]
//! models = ["attn", "gru"]
//! splits = ["original", "prefix", "suffix", "sliding:8"]
//! targets = ["single", "multi"]
//! losses = ["ce", "bce"]
//! seeds = [1, 2, 3]
//!
//! [train]                          # any TrainConfig field
//! dim = 32
//! max_epochs = 50
//!
//! [[overrides]]                    # per-cell TrainConfig patches
//! split = "suffix"
//! loss = "bce"
//! train = { lr = 10.0 }
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{SplitMethod, TargetStrategy};
use crate::corpus::synth::SynthConfig;
use crate::corpus::LogFormat;
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::objective::LossKind;
use crate::trainer::TrainConfig;

fn default_k_core() -> usize {
    5
}

fn default_format() -> LogFormat {
    LogFormat::Triplet
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    /// Log file; exactly one of `path` and `synth` must be set.
    pub path: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: LogFormat,
    #[serde(default = "default_k_core")]
    pub k_core: usize,
    /// Generate the log instead of reading it.
    pub synth: Option<SynthConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    pub models: Vec<ModelKind>,
    pub splits: Vec<String>,
    pub targets: Vec<String>,
    pub losses: Vec<LossKind>,
    pub seeds: Vec<u64>,
}

/// Patches `train` for every cell matching all given fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellOverride {
    pub dataset: Option<String>,
    pub model: Option<ModelKind>,
    pub split: Option<String>,
    pub target: Option<String>,
    pub loss: Option<LossKind>,
    pub seed: Option<u64>,
    pub train: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub datasets: Vec<DatasetSpec>,
    pub axes: Axes,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub overrides: Vec<CellOverride>,
    #[serde(default)]
    pub record_wall_clock: bool,
}

/// One grid cell. `index` follows dataset → model → split → target → loss
/// → seed nesting, seed innermost.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub index: usize,
    pub dataset: usize,
    pub model: ModelKind,
    pub split: SplitMethod,
    pub target: TargetStrategy,
    pub loss: LossKind,
    pub seed: u64,
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative dataset paths resolve against its
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            if let Some(p) = &d.path {
                if p.is_relative() {
                    d.path = Some(base.join(p));
                }
            }
        }
        Ok(cfg)
    }

    pub fn splits(&self) -> Result<Vec<SplitMethod>> {
        self.axes.splits.iter().map(|s| s.parse()).collect()
    }

    pub fn targets(&self) -> Result<Vec<TargetStrategy>> {
        self.axes.targets.iter().map(|s| s.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.datasets.is_empty() {
            return bad("no datasets".into());
        }
        let a = &self.axes;
        if a.models.is_empty() || a.splits.is_empty() || a.targets.is_empty() || a.losses.is_empty() || a.seeds.is_empty() {
            return bad("every axis needs at least one value".into());
        }
        if a.seeds.iter().collect::<HashSet<_>>().len() != a.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        let mut names = HashSet::new();
        for d in &self.datasets {
            if d.path.is_some() == d.synth.is_some() {
                return bad(format!("dataset `{}` needs exactly one of `path` and `synth`", d.name));
            }
            if !names.insert(&d.name) {
                return bad(format!("duplicate dataset name `{}`", d.name));
            }
        }
        self.splits()?;
        self.targets()?;
        self.train.validate()?;
        for cell in self.cells()? {
            self.train_config(&cell)?.validate()?;
        }
        Ok(())
    }

    pub fn cells(&self) -> Result<Vec<Cell>> {
        let splits = self.splits()?;
        let targets = self.targets()?;
        let mut cells = Vec::new();
        for dataset in 0..self.datasets.len() {
            for &model in &self.axes.models {
                for &split in &splits {
                    for &target in &targets {
                        for &loss in &self.axes.losses {
                            for &seed in &self.axes.seeds {
                                let index = cells.len();
                                cells.push(Cell { index, dataset, model, split, target, loss, seed });
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    /// Base training config with matching overrides applied in file order.
    /// The loss comes from the cell; the seed is derived by the runner.
    pub fn train_config(&self, cell: &Cell) -> Result<TrainConfig> {
        let mut cfg = self.train.clone();
        cfg.loss = cell.loss;
        for o in &self.overrides {
            let hit = o.dataset.as_ref().is_none_or(|d| *d == self.datasets[cell.dataset].name)
                && o.model.is_none_or(|m| m == cell.model)
                && o.split.as_ref().map(|s| s.parse::<SplitMethod>()).transpose()?.is_none_or(|s| s == cell.split)
                && o.target.as_ref().map(|s| s.parse::<TargetStrategy>()).transpose()?.is_none_or(|t| t == cell.target)
                && o.loss.is_none_or(|l| l == cell.loss)
                && o.seed.is_none_or(|s| s == cell.seed);
            if hit {
                let mut table = toml::Table::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
                for (k, v) in &o.train {
                    table.insert(k.clone(), v.clone());
                }
                cfg = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            }
        }
        Ok(cfg)
    }

    /// SHA-256 over the compact JSON of the whole config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
        [[datasets]]
        name = "tiny"
        synth = { num_users = 50, num_items = 30, zipf_exponent = 1.0, min_len = 5, mean_extra_len = 2.0, max_len = 12, follow_prob = 0.5, successors_per_item = 2, seed = 1 }

        [axes]
        models = ["gru"]
        splits = ["original", "prefix", "suffix", "sliding:3"]
        targets = ["single", "multi"]
        losses = ["ce", "bce"]
        seeds = [7]

        [train]
        dim = 8
        max_epochs = 2

        [[overrides]]
        split = "suffix"
        loss = "bce"
        train = { lr = 10.0 }
    "#;

    #[test]
    fn parses_and_counts_cells() {
        let cfg = GridConfig::from_toml(BASIC).unwrap();
        cfg.validate().unwrap();
        let cells = cfg.cells().unwrap();
        assert_eq!(cells.len(), 16);
        assert_eq!(cfg.train.dim, 8);
        assert_eq!(cfg.train.batch_size, 256);
        let hit: Vec<_> = cells.iter().filter(|c| cfg.train_config(c).unwrap().lr == 10.0).collect();
        assert_eq!(hit.len(), 2);
        assert!(hit.iter().all(|c| c.split == SplitMethod::Suffix && c.loss.name() == "bce"));
    }

    #[test]
    fn rejects_bad_configs() {
        let dup = BASIC.replace("seeds = [7]", "seeds = [7, 7]");
        assert!(GridConfig::from_toml(&dup).unwrap().validate().is_err());
        let empty = BASIC.replace(r#"models = ["gru"]"#, "models = []");
        assert!(GridConfig::from_toml(&empty).unwrap().validate().is_err());
        let unknown = BASIC.replace("max_epochs = 2", "max_epochs = 2\nwarmup = 3");
        assert!(GridConfig::from_toml(&unknown).is_err());
        let bad_override = BASIC.replace("lr = 10.0", "lr = -1.0");
        assert!(GridConfig::from_toml(&bad_override).unwrap().validate().is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = GridConfig::from_toml(BASIC).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.patience += 1;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.record_wall_clock = true;
        assert_ne!(a.hash(), c.hash());
    }
}
