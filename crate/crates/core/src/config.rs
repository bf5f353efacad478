//! Layered run configuration: built-in defaults, a named profile, an
//! optional TOML file with dotted keys, then individual key overrides.
//! The resolved configuration has one canonical text form that is embedded
//! in every checkpoint and report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::augment::AugmentConfig;
use crate::ctcm::CtcmConfig;
use crate::encoder::{Activation, BackboneConfig};
use crate::error::{Error, Result};
use crate::evaluation::{Mode, ALPHA_GRID};
use crate::facm::FacmConfig;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Environment variable naming the profile used when none is given.
pub const PROFILE_ENV: &str = "MFF_PROFILE";
pub const DEFAULT_PROFILE: &str = "desk";
pub const PROFILES: [&str; 5] = [
    "desk",
    "paper-ett-multivariate",
    "paper-ett-univariate",
    "paper-wth-multivariate",
    "paper-wth-univariate",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Lookback window length `T`.
    pub window: usize,
    pub mode: Mode,
    /// Forecast horizons; empty selects the grid matching the sampling interval.
    pub horizons: Vec<usize>,
    pub alphas: Vec<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            window: 201,
            mode: Mode::Multivariate,
            horizons: Vec::new(),
            alphas: ALPHA_GRID.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Retrain on the perturbed data; otherwise only the probe sees it.
    pub retrain: bool,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            noise_mean: 10.0,
            noise_std: 10.0,
            retrain: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub reinit_input: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            pretrain_epochs: 600,
            finetune_epochs: 300,
            reinit_input: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub profile: String,
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub backbone: BackboneConfig,
    pub facm: FacmConfig,
    pub ctcm: CtcmConfig,
    pub train: TrainConfig,
    pub robustness: RobustnessConfig,
    pub transfer: TransferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: "default".into(),
            data: DataConfig::default(),
            augment: AugmentConfig::default(),
            backbone: BackboneConfig::default(),
            facm: FacmConfig::default(),
            ctcm: CtcmConfig::default(),
            train: TrainConfig::default(),
            robustness: RobustnessConfig::default(),
            transfer: TransferConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults with the named profile applied.
    pub fn profile(name: &str) -> Result<Self> {
        let mut c = RunConfig {
            profile: name.to_string(),
            ..RunConfig::default()
        };
        let full_size = |c: &mut RunConfig, msff: usize, hidden: usize, blocks: usize, wd: f64, mode: Mode| {
            c.ctcm.msff_hidden = msff;
            c.backbone.hidden_dim = hidden;
            c.backbone.num_blocks = blocks;
            c.train.weight_decay = wd;
            c.data.mode = mode;
        };
        match name {
            "default" => {}
            "desk" => {
                c.data.window = 64;
                c.data.horizons = vec![24, 48];
                c.backbone.hidden_dim = 16;
                c.backbone.output_dim = 32;
                c.backbone.num_blocks = 4;
                c.ctcm.kernels = vec![1, 2, 4, 8, 16];
                c.ctcm.msff_hidden = 16;
                c.train.epochs = 50;
                c.train.batch_size = 16;
                c.train.learning_rate = 1e-4;
                c.train.window_stride = 4;
                c.transfer.pretrain_epochs = 20;
                c.transfer.finetune_epochs = 20;
            }
            "paper-ett-multivariate" => full_size(&mut c, 96, 32, 8, 1e-4, Mode::Multivariate),
            "paper-ett-univariate" => full_size(&mut c, 48, 96, 10, 1e-5, Mode::Univariate),
            "paper-wth-multivariate" => full_size(&mut c, 96, 64, 8, 1e-4, Mode::Multivariate),
            "paper-wth-univariate" => full_size(&mut c, 96, 64, 8, 1e-4, Mode::Univariate),
            _ => {
                return Err(Error::Config(format!(
                    "unknown profile {name:?}; available: {}",
                    PROFILES.join(", ")
                )))
            }
        }
        Ok(c)
    }

    /// Resolves `profile` (or `MFF_PROFILE`, or the desk profile), then the
    /// optional file, then `overrides` in order.
    pub fn resolve(profile: Option<&str>, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let env = std::env::var(PROFILE_ENV).ok();
        let name = profile.or(env.as_deref()).unwrap_or(DEFAULT_PROFILE);
        let mut table = to_table(&RunConfig::profile(name)?)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let layer: Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, layer);
        }
        for (key, raw) in overrides {
            set_key(&mut table, key, raw)?;
        }
        let cfg = from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.facm.validate()?;
        self.ctcm.validate()?;
        self.train.validate()?;
        if self.data.alphas.iter().any(|a| !(*a > 0.0)) || self.data.alphas.is_empty() {
            return Err(Error::Config("data.alphas must be a non-empty list of positive values".into()));
        }
        Ok(())
    }

    /// Model dimensions for `input_dim` features; the GELU ablation flag
    /// switches the backbone activation.
    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        let mut backbone = self.backbone.clone();
        backbone.input_dim = input_dim;
        if self.train.ablation.activation_gelu {
            backbone.activation = Activation::Gelu;
        }
        ModelConfig {
            window: self.data.window,
            backbone,
            facm: self.facm.clone(),
            ctcm: self.ctcm.clone(),
        }
    }

    /// Flattened `dotted.key → TOML literal` pairs.
    pub fn flatten(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        flatten_into("", &to_table(self).expect("config serializes"), &mut out);
        out
    }

    /// Sorted `key = value` lines; parses back with [`RunConfig::from_canonical`].
    pub fn canonical_text(&self) -> String {
        self.flatten()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_canonical(text: &str) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e| Error::Config(format!("embedded configuration: {e}")))?;
        from_table(table)
    }
}

fn to_table(cfg: &RunConfig) -> Result<Table> {
    Table::try_from(cfg).map_err(|e| Error::Config(e.to_string()))
}

fn from_table(table: Table) -> Result<RunConfig> {
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn merge(base: &mut Table, layer: Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `a.b.c` (dashes read as underscores) to `raw`, parsed as a TOML
/// literal when possible and as a bare string otherwise.
pub fn set_key(table: &mut Table, key: &str, raw: &str) -> Result<()> {
    let key = key.replace('-', "_");
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed configuration key {key:?}")));
    }
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = match cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("{key:?}: {p:?} is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn flatten_into(prefix: &str, table: &Table, out: &mut BTreeMap<String, String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten_into(&key, t, out),
            other => {
                out.insert(key, other.to_string());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        for name in PROFILES {
            let c = RunConfig::profile(name).unwrap();
            let text = c.canonical_text();
            assert_eq!(RunConfig::from_canonical(&text).unwrap(), c, "{name}\n{text}");
        }
    }

    #[test]
    fn overrides_beat_file_beat_profile() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "facm.mask_ratio = 0.25\ntrain.epochs = 3\n").unwrap();
        let c = RunConfig::resolve(
            Some("desk"),
            Some(&path),
            &[("train.epochs".into(), "7".into()), ("facm.mask-ratio".into(), "0.5".into())],
        )
        .unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.facm.mask_ratio, 0.5);
        assert_eq!(c.backbone.output_dim, 32);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::resolve(Some("desk"), None, &[("facm.colour".into(), "1".into())]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(RunConfig::profile("huge").is_err());
    }

    #[test]
    fn full_size_profile_rows() {
        let c = RunConfig::profile("paper-ett-univariate").unwrap();
        assert_eq!(
            (c.ctcm.msff_hidden, c.backbone.hidden_dim, c.backbone.num_blocks, c.train.weight_decay),
            (48, 96, 10, 1e-5)
        );
        assert_eq!(c.backbone.output_dim, 320);
        assert_eq!(c.train.batch_size, 128);
    }
}
