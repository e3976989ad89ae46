//! Experiment configuration: a TOML file plus `--key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::fhseg::FHConfig;
use crate::losses::LossConfig;
use crate::metrics::{EmptyConventions, ForegroundRule};
use crate::recursion::{SelectionConfig, StopRule};
use crate::segnet::unet::ModelConfig;
use crate::segnet::TrainConfig;
use crate::util::sha256_hex;
use crate::weaklabel::{GateBounds, RefinePolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Manifest holding the pixel-labelled samples.
    pub d_pix: PathBuf,
    /// Manifest holding the image-labelled samples; defaults to `d_pix`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_img: Option<PathBuf>,
    /// Held-out manifests with pixel masks.
    pub test: Vec<PathBuf>,
    pub experiment_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            d_pix: PathBuf::from("d_pix.jsonl"),
            d_img: None,
            test: Vec::new(),
            experiment_dir: PathBuf::from("experiment"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Keep image-labelled slices that show no bleed.
    pub include_negative_dimg: bool,
    /// Cap image-labelled samples per class (seeded by `rng_seed`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balance_per_class: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            include_negative_dimg: true,
            balance_per_class: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub foreground_rule: ForegroundRule,
    pub conventions: EmptyConventions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    /// Master seed; every stage derives its own stream from it.
    pub rng_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub fh: FHConfig,
    pub refine: RefinePolicy,
    /// Refine refreshed pseudo-labels as well as new candidates.
    pub refine_each_recursion: bool,
    pub gate: GateBounds,
    pub stop: StopRule,
    pub selection: SelectionConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            rng_seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            fh: FHConfig::default(),
            refine: RefinePolicy::default(),
            refine_each_recursion: true,
            gate: GateBounds::default(),
            stop: StopRule::default(),
            selection: SelectionConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.fh.validate()?;
        self.refine.validate()?;
        self.gate.validate()?;
        self.stop.validate()?;
        self.selection.validate()?;
        Ok(())
    }

    /// Parses TOML text, applies overrides, resolves relative paths
    /// against `base_dir` and validates.
    pub fn from_toml_str(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, overrides, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.d_pix);
        if let Some(p) = self.paths.d_img.as_mut() {
            fix(p);
        }
        self.paths.test.iter_mut().for_each(fix);
        fix(&mut self.paths.experiment_dir);
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hash of every setting that shapes results; paths are excluded so
    /// an experiment can move.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("paths");
        }
        sha256_hex(v.to_string().as_bytes())[..16].to_string()
    }
}

/// Applies one `key.path=value` override. The value is read as a TOML
/// literal, falling back to a plain string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let spec = spec.strip_prefix("--").unwrap_or(spec);
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, &[], Path::new("")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.train.seed_epochs, 120);
        assert_eq!(cfg.train.recursion_epochs, 3);
    }

    #[test]
    fn overrides_and_relative_paths() {
        let text = "[paths]\nd_pix = \"data/pix.jsonl\"\nexperiment_dir = \"/abs/exp\"\n";
        let cfg = ExperimentConfig::from_toml_str(
            text,
            &[
                "--train.seed_epochs=40".into(),
                "stop.max_recursions=5".into(),
                "selection.stage2=auto".into(),
                "refine.coverage=0.75".into(),
                "paths.test=[\"t.jsonl\"]".into(),
            ],
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(cfg.train.seed_epochs, 40);
        assert_eq!(cfg.stop.max_recursions, 5);
        assert_eq!(cfg.refine.coverage, 0.75);
        assert_eq!(cfg.paths.d_pix, Path::new("/cfg/data/pix.jsonl"));
        assert_eq!(cfg.paths.experiment_dir, Path::new("/abs/exp"));
        assert_eq!(cfg.paths.test, vec![PathBuf::from("/cfg/t.jsonl")]);
    }

    #[test]
    fn unknown_keys_and_invalid_values_fail() {
        let base = Path::new("");
        assert!(ExperimentConfig::from_toml_str("", &["train.epochz=3".into()], base).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["train.recursion_epochs=0".into()], base).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["novalue".into()], base).is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1", &[], base).is_err());
    }

    #[test]
    fn hash_ignores_paths_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.paths.experiment_dir = "/elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.fh.scale_k = 7.0;
        assert_ne!(a.hash(), b.hash());
    }
}
