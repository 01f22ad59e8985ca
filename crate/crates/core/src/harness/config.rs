//! Run configuration: TOML file, environment, and command-line overrides.
//!
//! Every field has a default. Layers apply in order: defaults, the config
//! file, `ADVREAL_*` environment variables, then `--set key=value` flags.
//! Environment names map to key paths by dropping the prefix, lowercasing,
//! and reading `__` as a path separator, so `ADVREAL_ATTACK__ROUNDS=5` sets
//! `attack.rounds`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::corpus::{Split, SyntheticCorpusSpec};
use crate::attack::AttackConfig;
use crate::detect::{DetectorTrainConfig, ToyDetectorConfig};
use crate::error::{Error, Result};
use crate::metrics::{Thresholds, DEFAULT_CONF_GRID, DEFAULT_IOU_GRID};

pub const ENV_PREFIX: &str = "ADVREAL_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSelection {
    All,
    Train,
    Test,
}

impl SplitSelection {
    pub fn as_split(self) -> Option<Split> {
        match self {
            SplitSelection::All => None,
            SplitSelection::Train => Some(Split::Train),
            SplitSelection::Test => Some(Split::Test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Corpus directory (or manifest path) to read and to generate into.
    pub path: PathBuf,
    pub spec: SyntheticCorpusSpec,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            path: PathBuf::from("corpus"),
            spec: SyntheticCorpusSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSection {
    /// Weight file; empty selects the bundled fixture.
    pub weights: PathBuf,
    pub arch: ToyDetectorConfig,
    pub train: DetectorTrainConfig,
    /// Scenes generated for fixture training and validation.
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub data_seed: u64,
    /// Probability that a training person carries a pasted random patch.
    pub patch_paste_prob: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            weights: PathBuf::new(),
            arch: ToyDetectorConfig::default(),
            train: DetectorTrainConfig::default(),
            train_scenes: 2400,
            val_scenes: 200,
            data_seed: 1001,
            patch_paste_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub thresholds: Thresholds,
    pub iou_grid: Vec<f64>,
    pub conf_grid: Vec<f64>,
    pub split: SplitSelection,
    /// Yaw angles (degrees) of the angle sweep.
    pub angles_deg: Vec<f64>,
    /// Renders per angle in the angle sweep.
    pub angle_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: Thresholds::default(),
            iou_grid: DEFAULT_IOU_GRID.to_vec(),
            conf_grid: DEFAULT_CONF_GRID.to_vec(),
            split: SplitSelection::All,
            angles_deg: (0..12).map(|i| -180.0 + 30.0 * i as f64).collect(),
            angle_samples: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub detector: DetectorSection,
    pub attack: AttackConfig,
    /// Corpus split feeding the training loop.
    pub train_split: SplitSelection,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/default"),
            corpus: CorpusConfig::default(),
            detector: DetectorSection::default(),
            attack: AttackConfig::default(),
            train_split: SplitSelection::All,
            eval: EvalConfig::default(),
        }
    }
}

/// Key paths that may be set although the default omits them.
const OPTIONAL_KEYS: &[&str] = &[];

fn default_tree() -> toml::Table {
    toml::Table::try_from(RunConfig::default()).expect("default config serializes")
}

fn key_exists(tree: &toml::Table, path: &[&str]) -> bool {
    let mut cur = tree;
    for (i, k) in path.iter().enumerate() {
        match cur.get(*k) {
            Some(toml::Value::Table(t)) if i + 1 < path.len() => cur = t,
            Some(_) => return i + 1 == path.len(),
            None => return false,
        }
    }
    true
}

fn check_keys(defaults: &toml::Table, tree: &toml::Table, prefix: &mut Vec<String>) -> Result<()> {
    for (k, v) in tree {
        prefix.push(k.clone());
        let refs: Vec<&str> = prefix.iter().map(String::as_str).collect();
        let joined = refs.join(".");
        if !key_exists(defaults, &refs) && !OPTIONAL_KEYS.contains(&joined.as_str()) {
            return Err(Error::Config(format!("unknown config key `{joined}`")));
        }
        // tables whose default is itself a table are checked recursively;
        // inline values (e.g. a tagged kernel) are validated on deserialize
        if let toml::Value::Table(t) = v {
            let default_is_table = {
                let mut cur = Some(defaults);
                for r in &refs[..refs.len() - 1] {
                    cur = cur.and_then(|c| c.get(*r)).and_then(|v| v.as_table());
                }
                cur.and_then(|c| c.get(*refs.last().unwrap())).is_some_and(|v| v.is_table())
            };
            if default_is_table && !t.contains_key("type") {
                check_keys(defaults, t, prefix)?;
            }
        }
        prefix.pop();
    }
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("type") => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a flag value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(tree: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed config key `{key}`")));
    }
    if !key_exists(&default_tree(), &parts) && !OPTIONAL_KEYS.contains(&key) {
        return Err(Error::Config(format!("unknown config key `{key}`")));
    }
    let mut cur = tree;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("config key `{key}` crosses a non-table value")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// `key=value` pair from a `--set` flag.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Builds a config from an optional file, environment pairs, and flag
    /// overrides (applied in that order).
    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        sets: &[(String, String)],
    ) -> Result<Self> {
        let defaults = default_tree();
        let mut tree = defaults.clone();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
            check_keys(&defaults, &table, &mut Vec::new())?;
            merge(&mut tree, table);
        }
        let mut env_pairs: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_lowercase().replace("__", "."), v)))
            .collect();
        env_pairs.sort();
        for (k, v) in env_pairs.iter().chain(sets) {
            set_path(&mut tree, k, parse_value(v))?;
        }
        let cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults plus the process environment and the given overrides.
    pub fn load(file: Option<&Path>, sets: &[(String, String)]) -> Result<Self> {
        RunConfig::resolve(file, std::env::vars(), sets)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.spec.validate()?;
        self.detector.arch.validate()?;
        if !(0.0..=1.0).contains(&self.detector.patch_paste_prob) {
            return Err(Error::Config("detector.patch_paste_prob must lie in [0, 1]".into()));
        }
        self.attack.validate()?;
        self.eval.thresholds.validate()?;
        for v in self.eval.iou_grid.iter().chain(&self.eval.conf_grid) {
            if !(*v > 0.0 && *v < 1.0) {
                return Err(Error::Config(format!("sweep threshold {v} outside (0,1)")));
            }
        }
        if self.eval.iou_grid.is_empty() || self.eval.conf_grid.is_empty() {
            return Err(Error::Config("sweep grids must be nonempty".into()));
        }
        Ok(())
    }

    /// Canonical TOML rendering of the resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex-encoded (first 16 digits).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}
