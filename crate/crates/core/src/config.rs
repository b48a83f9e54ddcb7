//! TOML configuration with built-in defaults.
//!
//! A config file can override any subset of the built-in values; whatever it
//! does not mention keeps its default. `[profiles.<name>]` sections bind a
//! network shape, training length, and detector delta to a dataset name;
//! [`FileConfig::profile_for`] matches names case-insensitively ignoring
//! punctuation, falling back to the `default` profile.
//!
//! ```toml
//! [experiment]
//! seeds = [0, 1, 2, 3, 4]
//! batch_size = 64
//!
//! [estimators.mcd]
//! passes = 100
//!
//! [profiles.my-stream]
//! hidden = [64, 32]
//! dropout = 0.1
//! epochs = 80
//! delta = 0.002
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, TrainOptions};
use crate::stream::{EstimatorConfig, EstimatorKind, ExperimentConfig, NetworkSettings, RunMode};

/// Network and detector settings bound to one dataset name.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub initial_fraction: f64,
    pub recency_fraction: f64,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            initial_fraction: 0.05,
            recency_fraction: 0.01,
            seeds: vec![0, 1, 2, 3, 4],
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McdSection {
    pub passes: usize,
}

impl Default for McdSection {
    fn default() -> Self {
        McdSection { passes: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub members: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { members: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwagSection {
    pub samples: usize,
    pub rank: usize,
}

impl Default for SwagSection {
    fn default() -> Self {
        SwagSection {
            samples: 100,
            rank: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AshSection {
    pub pruning_percent: f64,
    pub layer_offset: usize,
}

impl Default for AshSection {
    fn default() -> Self {
        AshSection {
            pruning_percent: 60.0,
            layer_offset: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub mcd: McdSection,
    pub ensemble: EnsembleSection,
    pub swag: SwagSection,
    pub ash: AshSection,
}

/// The parsed configuration: sections fall back field-by-field to the
/// built-in defaults, and user profiles overlay the built-in profile table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub experiment: ExperimentSection,
    pub train: TrainSection,
    pub estimators: EstimatorSection,
    pub profiles: BTreeMap<String, Profile>,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            experiment: ExperimentSection::default(),
            train: TrainSection::default(),
            estimators: EstimatorSection::default(),
            profiles: builtin_profiles(),
        }
    }
}

fn profile(hidden: &[usize], dropout: f64, epochs: usize, delta: f64) -> Profile {
    Profile {
        hidden: hidden.to_vec(),
        dropout,
        epochs,
        delta,
    }
}

/// The built-in per-dataset profile table.
fn builtin_profiles() -> BTreeMap<String, Profile> {
    let mut map = BTreeMap::new();
    map.insert("default".into(), profile(&[32, 16, 8], 0.1, 50, 0.002));
    map.insert("gas".into(), profile(&[128, 64, 32, 16, 8], 0.2, 100, 0.1));
    map.insert("electricity".into(), profile(&[32, 16, 8], 0.1, 400, 1e-15));
    map.insert(
        "rialto".into(),
        profile(&[512, 512, 256, 32], 0.2, 200, 1e-20),
    );
    map.insert(
        "insects-abrupt".into(),
        profile(&[128, 64, 32, 16, 8], 0.1, 200, 0.002),
    );
    map.insert(
        "insects-incremental".into(),
        profile(&[128, 64, 32, 16, 8], 0.1, 100, 0.002),
    );
    map.insert(
        "insects-incremental-abrupt".into(),
        profile(&[32, 16, 8], 0.1, 50, 0.1),
    );
    map.insert(
        "insects-incremental-reoccurring".into(),
        profile(&[128, 64, 32], 0.1, 400, 0.1),
    );
    map
}

/// Lowercases and strips everything but letters and digits, so
/// `INSECTS_Abrupt` matches the `insects-abrupt` profile.
fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

impl FileConfig {
    /// The built-in configuration, used when no file is given.
    pub fn builtin() -> Self {
        FileConfig::default()
    }

    /// Parses a TOML file and overlays it on the built-in configuration.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    /// Parses TOML text and overlays it on the built-in configuration.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config: FileConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        // serde's `default` fills absent sections from Default, which already
        // carries the built-in profiles; a file that *does* list profiles
        // replaces that map wholesale, so overlay it back over the built-ins.
        let mut profiles = builtin_profiles();
        profiles.extend(std::mem::take(&mut config.profiles));
        config.profiles = profiles;
        Ok(config)
    }

    /// Profile for a dataset name, falling back to `default`.
    pub fn profile_for(&self, dataset: &str) -> &Profile {
        let wanted = normalize(dataset);
        self.profiles
            .iter()
            .find(|(name, _)| normalize(name) == wanted)
            .map(|(_, p)| p)
            .unwrap_or_else(|| {
                self.profiles
                    .get("default")
                    .expect("built-in default profile is always present")
            })
    }

    /// Estimator configuration of the given kind with this file's
    /// hyperparameters.
    pub fn estimator(&self, kind: EstimatorKind) -> EstimatorConfig {
        match kind {
            EstimatorKind::Basic => EstimatorConfig::Basic,
            EstimatorKind::Mcd => EstimatorConfig::Mcd {
                passes: self.estimators.mcd.passes,
            },
            EstimatorKind::Ensemble => EstimatorConfig::Ensemble {
                members: self.estimators.ensemble.members,
            },
            EstimatorKind::Swag => EstimatorConfig::Swag {
                samples: self.estimators.swag.samples,
                rank: self.estimators.swag.rank,
            },
            EstimatorKind::Ash => EstimatorConfig::Ash {
                pruning_percent: self.estimators.ash.pruning_percent,
                layer_offset: self.estimators.ash.layer_offset,
            },
        }
    }

    /// Assembles a full experiment configuration for one dataset, estimator,
    /// and run mode.
    pub fn experiment(
        &self,
        dataset: &str,
        kind: EstimatorKind,
        mode: RunMode,
    ) -> ExperimentConfig {
        let profile = self.profile_for(dataset);
        ExperimentConfig {
            estimator: self.estimator(kind),
            network: NetworkSettings {
                hidden_sizes: profile.hidden.clone(),
                dropout_rate: profile.dropout,
                epochs: profile.epochs,
            },
            mode,
            adwin_delta: profile.delta,
            initial_fraction: self.experiment.initial_fraction,
            recency_fraction: self.experiment.recency_fraction,
            seeds: self.experiment.seeds.clone(),
            batch_size: self.experiment.batch_size,
            train: TrainOptions {
                batch_size: self.train.batch_size,
                adam: AdamConfig {
                    learning_rate: self.train.learning_rate,
                    ..AdamConfig::default()
                },
            },
            parallel: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_profile_table() {
        let config = FileConfig::builtin();
        let gas = config.profile_for("gas");
        assert_eq!(gas.hidden, [128, 64, 32, 16, 8]);
        assert_eq!(gas.dropout, 0.2);
        assert_eq!(gas.epochs, 100);
        assert_eq!(gas.delta, 0.1);

        let electricity = config.profile_for("electricity");
        assert_eq!(electricity.hidden, [32, 16, 8]);
        assert_eq!(electricity.epochs, 400);
        assert_eq!(electricity.delta, 1e-15);

        let rialto = config.profile_for("rialto");
        assert_eq!(rialto.hidden, [512, 512, 256, 32]);
        assert_eq!(rialto.dropout, 0.2);
        assert_eq!(rialto.epochs, 200);
        assert_eq!(rialto.delta, 1e-20);

        assert_eq!(config.profile_for("insects-abrupt").epochs, 200);
        assert_eq!(config.profile_for("insects-incremental").epochs, 100);
        assert_eq!(config.profile_for("insects-incremental-abrupt").delta, 0.1);
        assert_eq!(
            config.profile_for("insects-incremental-reoccurring").hidden,
            [128, 64, 32]
        );
    }

    #[test]
    fn name_matching_ignores_case_and_punctuation() {
        let config = FileConfig::builtin();
        assert_eq!(
            config.profile_for("INSECTS_Abrupt"),
            config.profile_for("insects-abrupt")
        );
        assert_eq!(config.profile_for("Gas"), config.profile_for("gas"));
    }

    #[test]
    fn unknown_datasets_fall_back_to_default() {
        let config = FileConfig::builtin();
        let p = config.profile_for("mystery-stream");
        assert_eq!(p.hidden, [32, 16, 8]);
        assert_eq!(p.epochs, 50);
        assert_eq!(p.delta, 0.002);
    }

    #[test]
    fn estimator_defaults() {
        let config = FileConfig::builtin();
        assert_eq!(
            config.estimator(EstimatorKind::Mcd),
            EstimatorConfig::Mcd { passes: 100 }
        );
        assert_eq!(
            config.estimator(EstimatorKind::Ensemble),
            EstimatorConfig::Ensemble { members: 3 }
        );
        assert_eq!(
            config.estimator(EstimatorKind::Swag),
            EstimatorConfig::Swag {
                samples: 100,
                rank: 25
            }
        );
        assert_eq!(
            config.estimator(EstimatorKind::Ash),
            EstimatorConfig::Ash {
                pruning_percent: 60.0,
                layer_offset: 2
            }
        );
    }

    #[test]
    fn user_files_overlay_field_by_field() {
        let config = FileConfig::parse(
            r#"
            [experiment]
            seeds = [7]

            [estimators.mcd]
            passes = 25

            [profiles.my-stream]
            hidden = [64]
            dropout = 0.2
            epochs = 10
            delta = 0.05
            "#,
        )
        .unwrap();
        // Overridden values.
        assert_eq!(config.experiment.seeds, [7]);
        assert_eq!(config.estimators.mcd.passes, 25);
        assert_eq!(config.profile_for("my_stream").hidden, [64]);
        // Untouched values keep their defaults, including built-in profiles.
        assert_eq!(config.experiment.batch_size, 64);
        assert_eq!(config.estimators.swag.rank, 25);
        assert_eq!(config.profile_for("gas").epochs, 100);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("[experiment]\nseedz = [1]\n").is_err());
        assert!(FileConfig::parse(
            "[profiles.x]\nhidden = [8]\ndropout = 0.1\nepochs = 5\ndelta = 0.1\nextra = 3\n"
        )
        .is_err());
        assert!(FileConfig::parse("not toml at all [").is_err());
    }

    #[test]
    fn experiment_assembly_uses_profile_and_sections() {
        let config = FileConfig::builtin();
        let experiment = config.experiment("rialto", EstimatorKind::Swag, RunMode::Detect);
        assert_eq!(experiment.network.hidden_sizes, [512, 512, 256, 32]);
        assert_eq!(experiment.network.epochs, 200);
        assert_eq!(experiment.adwin_delta, 1e-20);
        assert_eq!(
            experiment.estimator,
            EstimatorConfig::Swag {
                samples: 100,
                rank: 25
            }
        );
        assert_eq!(experiment.seeds, [0, 1, 2, 3, 4]);
        assert_eq!(experiment.train.batch_size, 32);
    }

    #[test]
    fn load_reads_from_disk() {
        use std::io::Write;
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "[train]\nlearning_rate = 0.01").unwrap();
        file.flush().unwrap();
        let config = FileConfig::load(file.path()).unwrap();
        assert_eq!(config.train.learning_rate, 0.01);
        assert!(FileConfig::load("/nonexistent/config.toml").is_err());
    }
}
