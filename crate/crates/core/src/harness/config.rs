//! Run configuration: TOML schema, defaults, overrides and hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{PartitionMode, PartitionSpec, SyntheticSpec};
use crate::engine::{EngineConfig, Strategy};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub architecture: Architecture,
    pub hidden_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            architecture: Architecture::Mlp,
            hidden_dim: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub class_separation: f64,
    pub noise_std: f64,
    /// Share of every class held out as the global test set.
    pub test_fraction: f64,
    pub standardize: bool,
    /// Delimited text file replacing the synthetic generator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub import_path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        DataSection {
            num_classes: s.num_classes,
            input_dim: s.input_dim,
            samples_per_class: s.samples_per_class,
            class_separation: s.class_separation,
            noise_std: s.noise_std,
            test_fraction: 0.1,
            standardize: false,
            import_path: None,
        }
    }
}

impl DataSection {
    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            samples_per_class: self.samples_per_class,
            class_separation: self.class_separation,
            noise_std: self.noise_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub mode: PartitionMode,
    pub beta: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            mode: PartitionMode::Dirichlet,
            beta: 0.5,
        }
    }
}

/// Everything needed to reproduce a multi-seed experiment.
///
/// The partition always spans `engine.num_devices` clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub engine: EngineConfig,
    pub model: ModelSection,
    pub data: DataSection,
    pub partition: PartitionSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            engine: EngineConfig::default(),
            model: ModelSection::default(),
            data: DataSection::default(),
            partition: PartitionSection::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if self.engine.num_rounds == 0 {
            // zero rounds is legal for the engine but yields no final accuracy
            return Err(Error::config("engine.num_rounds", "must be >= 1"));
        }
        self.engine.validate()?;
        if self.data.import_path.is_none() {
            self.data.synthetic().validate()?;
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) || self.data.test_fraction <= 0.0 {
            return Err(Error::config("data.test_fraction", "must lie in (0, 1)"));
        }
        if self.model.architecture == Architecture::Mlp && self.model.hidden_dim == 0 {
            return Err(Error::config("model.hidden_dim", "must be >= 1 for mlp"));
        }
        self.partition_spec().validate()
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            num_clients: self.engine.num_devices,
            mode: self.partition.mode,
            beta: self.partition.beta,
        }
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            architecture: self.model.architecture,
            input_dim,
            hidden_dim: if self.model.architecture == Architecture::Mlp {
                self.model.hidden_dim
            } else {
                0
            },
            num_classes,
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.engine.strategy
    }

    /// Parses TOML text, applies `key=value` overrides, and validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Hex SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex_digest(self.to_toml()?.as_bytes()))
    }

    /// Hash of the configuration with `key` removed.
    pub fn hash_without(&self, key: &str) -> Result<String> {
        let mut table: toml::Table = self
            .to_toml()?
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        remove_key(&mut table, key);
        let text = toml::to_string(&table).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(hex_digest(text.as_bytes()))
    }

    /// A copy with one override applied and revalidated.
    pub fn with_override(&self, assignment: &str) -> Result<RunConfig> {
        Self::from_toml_with_overrides(&self.to_toml()?, &[assignment.to_string()])
    }
}

/// Reads and validates a config file. Precedence: `overrides` > file > defaults.
pub fn load_config(path: impl AsRef<Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path.as_ref())?;
    RunConfig::from_toml_with_overrides(&text, overrides)
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Applies `a.b.c=value`. The value is read as a TOML value when possible and
/// as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(key, "empty key segment"));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut segments: Vec<&str> = key.split('.').collect();
    let leaf = segments.pop().expect("nonempty key");
    let mut node = table;
    for seg in segments {
        let entry = node
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{seg}` is not a table")))?;
    }
    node.insert(leaf.to_string(), value);
    Ok(())
}

fn remove_key(table: &mut toml::Table, key: &str) {
    let mut segments: Vec<&str> = key.split('.').collect();
    let Some(leaf) = segments.pop() else { return };
    let mut node = table;
    for seg in segments {
        match node.get_mut(seg).and_then(toml::Value::as_table_mut) {
            Some(t) => node = t,
            None => return,
        }
    }
    node.remove(leaf);
}
