//! Run configuration: defaults, JSON overrides and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use tggbc_core::decoder::DecoderConfig;
use tggbc_core::pruner::{PruneConfig, PruneTarget};
use tggbc_core::tome::TomeMerger;
use tggbc_core::workload::{PlantedLayout, Profile};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Classification-guided key pruning.
    #[default]
    Tggbc,
    /// Bipartite token merging on the same schedule.
    Tome,
    /// No reduction; the pruned run repeats the baseline.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    #[default]
    Random,
    Planted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub decoder: DecoderConfig,
    pub prune: PruneConfig,
    pub method: Method,
    pub seed: u64,
    pub trials: usize,
    pub warmup: usize,
    pub profile: ProfileKind,
    /// Overrides the default planted layout when the profile is `planted`.
    pub planted: Option<PlantedLayout>,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderConfig::streampetr(),
            prune: PruneConfig::new(21000, 2, 175),
            method: Method::Tggbc,
            seed: 0,
            trials: 30,
            warmup: 5,
            profile: ProfileKind::Random,
            planted: None,
            out: None,
            format: Format::Json,
        }
    }
}

/// The fields that determine a run's results; `out` and `format` are left
/// out so the same run written twice hashes the same.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub method: Method,
    pub decoder: DecoderConfig,
    pub prune: PruneConfig,
    pub seed: u64,
    pub trials: usize,
    pub warmup: usize,
    pub profile: ProfileKind,
    pub planted: Option<PlantedLayout>,
}

impl RunKey {
    /// Hex SHA-256 of the key's JSON encoding. Struct fields serialise in
    /// declaration order, so the encoding is stable.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("run key serialises");
        hex::encode(Sha256::digest(json))
    }
}

impl RunConfig {
    pub fn key(&self) -> RunKey {
        RunKey {
            method: self.method,
            decoder: self.decoder,
            prune: self.prune,
            seed: self.seed,
            trials: self.trials,
            warmup: self.warmup,
            profile: self.profile,
            planted: self.planted,
        }
    }

    pub fn profile(&self) -> Profile {
        match self.profile {
            ProfileKind::Random => Profile::Random,
            ProfileKind::Planted => Profile::Planted(
                self.planted.unwrap_or_else(|| PlantedLayout::for_config(&self.decoder)),
            ),
        }
    }

    /// Reads a JSON file of overrides applied on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| HarnessError::parse(path, e))?;
        Self::default()
            .with_overrides(&value)
            .map_err(|e| match e {
                HarnessError::Config(m) => HarnessError::parse(path, m),
                other => other,
            })
    }

    /// Applies a JSON object of overrides; nested objects merge key by key.
    /// Unknown keys are rejected.
    pub fn with_overrides(&self, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).expect("run config serialises");
        merge(&mut base, overrides, "")?;
        serde_json::from_value(base).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 3 {
            return Err(HarnessError::Config(format!("trials must be at least 3, got {}", self.trials)));
        }
        if self.warmup < 1 {
            return Err(HarnessError::Config("warmup must be at least 1".into()));
        }
        self.decoder.validate()?;
        match self.method {
            Method::Tggbc => self.prune.validate(&self.decoder)?,
            Method::Tome => {
                if self.prune.target != PruneTarget::Keys {
                    return Err(HarnessError::Config("token merging only applies to keys".into()));
                }
                TomeMerger::new(self.prune.total_prune, self.prune.layers_pruned, &self.decoder)?;
            }
            Method::None => {}
        }
        if let Some(out) = &self.out {
            check_writable(out)?;
        }
        Ok(())
    }
}

fn merge(base: &mut Value, overrides: &Value, at: &str) -> Result<()> {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &path)?,
                    Some(slot) => *slot = v.clone(),
                    None => return Err(HarnessError::Config(format!("unknown field `{path}`"))),
                }
            }
            Ok(())
        }
        (_, o) if o.is_object() && at.is_empty() => Err(HarnessError::Config("overrides must be a JSON object".into())),
        (b, o) => {
            *b = o.clone();
            Ok(())
        }
    }
}

/// The parent directory of `path` must exist and `path` must not be a
/// directory.
pub fn check_writable(path: &Path) -> Result<()> {
    if path.is_dir() {
        return Err(HarnessError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::IsADirectory, "output path is a directory"),
        ));
    }
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(HarnessError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ));
    }
    Ok(())
}
