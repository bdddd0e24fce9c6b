//! Run configuration: preset defaults, overlaid by a TOML file, overlaid by
//! command-line flags.
//!
//! Schema (every key optional; missing keys keep the preset's value):
//!
//! ```toml
//! preset = "compact"          # "reference" or "compact"
//! seed = 0
//! category_mode = "present"   # or "all"
//!
//! [paths]
//! bundle = "data/bundle"
//! out = "runs/exp1"
//!
//! [backbone]                  # see BackboneConfig; num_classes is derived
//! frames = 64
//! stages = [{ channels = 64, stride = 1 }]
//!
//! [head]                      # see HeadConfig; input_shape and num_categories are derived
//! conv_channels = [128, 64]
//!
//! [backbone_training]         # see TrainConfig
//! epochs = 80
//! schedule = { base_lr = 0.1, milestones = [0.5, 0.75], gamma = 0.1 }
//!
//! [head_training]
//! epochs = 50
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use kinesics_core::backbone::BackboneConfig;
use kinesics_core::evaluation::{category_mapping, subset_labels, ExperimentSpec, Preset};
use kinesics_core::head::{CategoryMode, HeadConfig};
use kinesics_core::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub category_mode: CategoryMode,
    pub paths: Paths,
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub backbone_training: TrainConfig,
    pub head_training: TrainConfig,
}

impl RunConfig {
    pub fn from_preset(preset: Preset) -> Self {
        let spec = ExperimentSpec::new(12, preset, 0).expect("built-in subset");
        Self {
            preset,
            seed: 0,
            category_mode: spec.category_mode,
            paths: Paths::default(),
            backbone: spec.backbone,
            head: spec.head,
            backbone_training: spec.backbone_training,
            head_training: spec.head_training,
        }
    }

    /// Preset defaults with `text` merged on top. `preset` wins over the
    /// file's own `preset` key.
    pub fn from_toml(text: &str, preset: Option<Preset>) -> Result<Self> {
        let file: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        let preset = match preset {
            Some(p) => p,
            None => match file.get("preset") {
                Some(v) => v.clone().try_into().context("unknown preset")?,
                None => Preset::default(),
            },
        };
        let mut merged = toml::Table::try_from(Self::from_preset(preset)).context("serializing preset")?;
        merge(&mut merged, file);
        merged.insert("preset".into(), toml::Value::try_from(preset)?);
        let config: Self = merged.try_into().context("config does not match the schema")?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, preset: Option<Preset>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text, preset).with_context(|| format!("in config {}", p.display()))
            }
            None => Ok(Self::from_preset(preset.unwrap_or_default())),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Backbone sized for `num_classes` outputs.
    pub fn backbone_for(&self, num_classes: usize) -> BackboneConfig {
        BackboneConfig { num_classes, ..self.backbone.clone() }
    }

    /// Head sized for the given feature shape and category count.
    pub fn head_for(&self, input_shape: [usize; 3], num_categories: usize) -> HeadConfig {
        HeadConfig { input_shape, num_categories, ..self.head.clone() }
    }

    /// Fully specified experiment for one subset.
    pub fn experiment(&self, subset: usize) -> Result<ExperimentSpec> {
        let labels = subset_labels(subset)?.to_vec();
        let backbone = self.backbone_for(labels.len());
        let categories = category_mapping(&labels, self.category_mode)?.len();
        let head = self.head_for(backbone.feature_shape(), categories);
        let spec = ExperimentSpec {
            subset_id: subset,
            labels,
            backbone,
            head,
            backbone_training: self.backbone_training.clone(),
            head_training: self.head_training.clone(),
            category_mode: self.category_mode,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn require_bundle(&self) -> Result<&Path> {
        match &self.paths.bundle {
            Some(p) => Ok(p),
            None => bail!("no bundle given (use --bundle, KINESICS_BUNDLE or [paths] bundle)"),
        }
    }

    pub fn require_out(&self) -> Result<&Path> {
        match &self.paths.out {
            Some(p) => Ok(p),
            None => bail!("no output directory given (use --out, KINESICS_OUT or [paths] out)"),
        }
    }
}

/// Recursive table overlay; non-table values in `over` replace `base`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for preset in [Preset::Reference, Preset::Compact] {
            let config = RunConfig::from_preset(preset);
            assert_eq!(RunConfig::from_toml(&config.to_toml(), None).unwrap(), config);
        }
    }

    #[test]
    fn file_values_override_preset_defaults() {
        let config = RunConfig::from_toml(
            "preset = \"compact\"\nseed = 7\n[backbone_training]\nepochs = 3\n[backbone_training.schedule]\nbase_lr = 0.05\n",
            None,
        )
        .unwrap();
        assert_eq!(config.preset, Preset::Compact);
        assert_eq!(config.seed, 7);
        assert_eq!(config.backbone_training.epochs, 3);
        assert_eq!(config.backbone_training.schedule.base_lr, 0.05);
        assert_eq!(config.backbone_training.schedule.gamma, 0.1);
        assert_eq!(config.backbone, RunConfig::from_preset(Preset::Compact).backbone);
    }

    #[test]
    fn explicit_preset_beats_the_file() {
        let config = RunConfig::from_toml("preset = \"compact\"", Some(Preset::Reference)).unwrap();
        assert_eq!(config.backbone.frames, RunConfig::from_preset(Preset::Reference).backbone.frames);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 1", None).is_err());
        assert!(RunConfig::from_toml("[backbone]\nframez = 3", None).is_err());
    }

    #[test]
    fn experiments_derive_sizes_from_the_subset() {
        let config = RunConfig::from_preset(Preset::Compact);
        let spec = config.experiment(4).unwrap();
        assert_eq!(spec.backbone.num_classes, 4);
        assert_eq!(spec.head.input_shape, spec.backbone.feature_shape());
        assert!(config.experiment(5).is_err());
    }
}
