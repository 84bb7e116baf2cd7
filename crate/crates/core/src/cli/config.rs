use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::congestion::TagConfig;
use crate::econometrics::{PermutationConfig, DEFAULT_REPLICATIONS};
use crate::error::{Error, Result};
use crate::ingest::{Address, BlockColumns, ColumnMap, Firm};
use crate::metrics::PeakWindow;
use crate::scheduler::GasThreshold;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirmEntry {
    pub id: String,
    pub industry: String,
    pub address: String,
    pub tx_file: PathBuf,
    #[serde(default)]
    pub deferrable: bool,
    /// USD cost of deferring one transaction.
    #[serde(default)]
    pub kappa: Decimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermutationSettings {
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Falls back to a seed derived from `root_seed`.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

impl Default for PermutationSettings {
    fn default() -> Self {
        PermutationSettings {
            replications: DEFAULT_REPLICATIONS,
            seed: None,
        }
    }
}

fn default_delimiter() -> char {
    ','
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Project file. Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub firms: Vec<FirmEntry>,
    pub blocks_file: PathBuf,
    #[serde(default)]
    pub column_map: ColumnMap,
    #[serde(default)]
    pub block_columns: BlockColumns,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub peak_window: PeakWindow,
    #[serde(default)]
    pub permutation: PermutationSettings,
    #[serde(default)]
    pub gas_threshold: GasThreshold,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default)]
    pub tagging: TagConfig,
    /// CSV of `address,tag` rows applied after heuristic tagging.
    #[serde(default)]
    pub tag_overrides_file: Option<PathBuf>,
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<ProjectConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ProjectConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.blocks_file);
        fix(&mut self.output_dir);
        for f in &mut self.firms {
            fix(&mut f.tx_file);
        }
        if let Some(p) = &mut self.tag_overrides_file {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.firms.is_empty() {
            return Err(Error::config("config lists no firms"));
        }
        if self.permutation.replications == 0 {
            return Err(Error::config("permutation.replications must be at least 1"));
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::config("delimiter must be a single ASCII character"));
        }
        let mut ids = BTreeSet::new();
        let mut paths = BTreeSet::new();
        paths.insert(self.blocks_file.clone());
        for f in &self.firms {
            if !ids.insert(f.id.as_str()) {
                return Err(Error::config(format!("duplicate firm id {:?}", f.id)));
            }
            if !paths.insert(f.tx_file.clone()) {
                return Err(Error::config(format!("input path {} is listed twice", f.tx_file.display())));
            }
            if f.kappa < Decimal::ZERO {
                return Err(Error::config(format!("firm {}: kappa must be non-negative", f.id)));
            }
            if f.address.trim().is_empty() {
                return Err(Error::config(format!("firm {}: empty address", f.id)));
            }
        }
        if let Some(p) = &self.tag_overrides_file {
            if paths.contains(p) {
                return Err(Error::config(format!("input path {} is listed twice", p.display())));
            }
        }
        self.column_map.validate()
    }

    pub fn delimiter_byte(&self) -> u8 {
        self.delimiter as u8
    }

    pub fn firms(&self) -> Vec<Firm> {
        self.firms
            .iter()
            .map(|f| Firm {
                firm_id: f.id.clone(),
                industry: f.industry.clone(),
                address: Address::new(&f.address),
                deferrable_default: f.deferrable,
                kappa: f.kappa,
            })
            .collect()
    }

    /// Per-stage seed: the explicit permutation seed if set, otherwise one
    /// derived from the root seed.
    pub fn permutation(&self) -> PermutationConfig {
        PermutationConfig {
            replications: self.permutation.replications,
            seed: self
                .permutation
                .seed
                .unwrap_or_else(|| derive_seed(self.root_seed, STAGE_PERMUTATION)),
        }
    }
}

pub const STAGE_PERMUTATION: &str = "permutation";
pub const STAGE_SYNTHETIC: &str = "synthetic";
