//! TOML experiment configuration: run bookkeeping, network shape, dataset
//! source, and exactly one trainer section. Unknown keys are rejected
//! everywhere so typos fail loudly instead of silently using a default.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evo::{CrossoverOp, EvoConfig, SigmaMode};
use crate::grad::{AdamHyper, Optimizer, TrainConfig};
use crate::model::NetworkSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("TOML parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("TOML serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub network: NetworkSection,
    pub dataset: DatasetSection,
    pub trainer: TrainerSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Base seed; repeat r runs with seed `seed + r`.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Worker threads for batched evaluation; 0 keeps the library default.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    /// Generations between validation probes (evolutionary trainer only).
    #[serde(default = "default_val_interval")]
    pub val_interval: usize,
}

fn default_seed() -> u64 {
    42
}
fn default_repeats() -> usize {
    1
}
fn default_out_dir() -> String {
    "runs/out".into()
}
fn default_val_interval() -> usize {
    50
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            repeats: default_repeats(),
            threads: 0,
            out_dir: default_out_dir(),
            val_interval: default_val_interval(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub input_height: usize,
    pub input_width: usize,
    /// Fully connected layer widths; the last entry is the class count.
    pub layers: Vec<usize>,
}

impl NetworkSection {
    pub fn to_spec(&self) -> Result<NetworkSpec, ConfigError> {
        NetworkSpec::new((self.input_height, self.input_width), self.layers.clone())
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSection {
    /// IDX image/label files in `dir` using the standard training-set file
    /// names; the last `val_examples` of a seeded shuffle become validation.
    Mnist {
        dir: String,
        #[serde(default = "default_val_examples")]
        val_examples: usize,
        #[serde(default)]
        split_seed: u64,
    },
    /// Seeded synthetic Gaussian blob images.
    Blobs {
        classes: usize,
        height: usize,
        width: usize,
        train_per_class: usize,
        val_per_class: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_val_examples() -> usize {
    5000
}

impl DatasetSection {
    /// `(height, width, classes)` the dataset will produce, for cross-checks
    /// against the network section.
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            DatasetSection::Mnist { .. } => (28, 28, 10),
            DatasetSection::Blobs {
                classes,
                height,
                width,
                ..
            } => (*height, *width, *classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrainerSection {
    Ea(EaParams),
    Adam(AdamParams),
    Sgd(SgdParams),
}

impl TrainerSection {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainerSection::Ea(_) => "ea",
            TrainerSection::Adam(_) => "adam",
            TrainerSection::Sgd(_) => "sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EaParams {
    #[serde(default = "d_lambda")]
    pub lambda: usize,
    #[serde(default = "d_p_elite")]
    pub p_elite: f64,
    #[serde(default = "d_p_crossover")]
    pub p_crossover: f64,
    #[serde(default = "d_p_mutation")]
    pub p_mutation: f64,
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    /// "constant", "exp-decay", or "self-adaptive".
    #[serde(default = "d_sigma_mode")]
    pub sigma_mode: String,
    /// Generations per decay time constant (exp-decay mode).
    #[serde(default = "d_decay_k")]
    pub decay_k: f64,
    /// Log-normal strategy-parameter learning rate (self-adaptive mode).
    #[serde(default = "d_tau")]
    pub tau: f64,
    /// "uniform" or "arithmetic".
    #[serde(default = "d_crossover_op")]
    pub crossover_op: String,
    #[serde(default = "d_ea_batch")]
    pub batch_size: usize,
    #[serde(default = "d_generations")]
    pub generations: usize,
    #[serde(default)]
    pub batch_replacement: bool,
}

fn d_lambda() -> usize {
    1000
}
fn d_p_elite() -> f64 {
    0.05
}
fn d_p_crossover() -> f64 {
    0.50
}
fn d_p_mutation() -> f64 {
    0.45
}
fn d_rho() -> f64 {
    0.5
}
fn d_alpha() -> f64 {
    1.0
}
fn d_sigma() -> f64 {
    0.001
}
fn d_sigma_mode() -> String {
    "constant".into()
}
fn d_decay_k() -> f64 {
    100.0
}
fn d_tau() -> f64 {
    0.1
}
fn d_crossover_op() -> String {
    "uniform".into()
}
fn d_ea_batch() -> usize {
    512
}
fn d_generations() -> usize {
    10_000
}

impl Default for EaParams {
    fn default() -> Self {
        Self {
            lambda: d_lambda(),
            p_elite: d_p_elite(),
            p_crossover: d_p_crossover(),
            p_mutation: d_p_mutation(),
            rho: d_rho(),
            alpha: d_alpha(),
            sigma: d_sigma(),
            sigma_mode: d_sigma_mode(),
            decay_k: d_decay_k(),
            tau: d_tau(),
            crossover_op: d_crossover_op(),
            batch_size: d_ea_batch(),
            generations: d_generations(),
            batch_replacement: false,
        }
    }
}

impl EaParams {
    pub fn to_evo_config(&self) -> Result<EvoConfig, ConfigError> {
        let sigma_mode = match self.sigma_mode.as_str() {
            "constant" => SigmaMode::Constant,
            "exp-decay" => SigmaMode::ExpDecay { k: self.decay_k },
            "self-adaptive" => SigmaMode::SelfAdaptive { tau: self.tau },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "sigma_mode \"{other}\" is not one of \
                     \"constant\", \"exp-decay\", \"self-adaptive\""
                )))
            }
        };
        let crossover = match self.crossover_op.as_str() {
            "uniform" => CrossoverOp::Uniform,
            "arithmetic" => CrossoverOp::Arithmetic,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "crossover_op \"{other}\" is not one of \"uniform\", \"arithmetic\""
                )))
            }
        };
        let cfg = EvoConfig {
            lambda: self.lambda,
            p_elite: self.p_elite,
            p_crossover: self.p_crossover,
            p_mutation: self.p_mutation,
            rho: self.rho,
            alpha: self.alpha,
            sigma: self.sigma,
            sigma_mode,
            crossover,
            batch_size: self.batch_size,
            generations: self.generations,
            batch_replacement: self.batch_replacement,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    #[serde(default = "d_adam_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_grad_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
}

fn d_adam_lr() -> f64 {
    1e-3
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_epsilon() -> f64 {
    1e-8
}
fn d_grad_batch() -> usize {
    128
}
fn d_epochs() -> usize {
    20
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: d_adam_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            epsilon: d_epsilon(),
            batch_size: d_grad_batch(),
            epochs: d_epochs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdParams {
    #[serde(default = "d_sgd_lr")]
    pub lr: f64,
    #[serde(default = "d_grad_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
}

fn d_sgd_lr() -> f64 {
    0.01
}

impl Default for SgdParams {
    fn default() -> Self {
        Self {
            lr: d_sgd_lr(),
            batch_size: d_grad_batch(),
            epochs: d_epochs(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, ConfigError> {
        self.network.to_spec()
    }

    /// Gradient-trainer settings; error when the trainer section is `ea`.
    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let cfg = match &self.trainer {
            TrainerSection::Adam(p) => TrainConfig {
                optimizer: Optimizer::Adam(AdamHyper {
                    lr: p.lr,
                    beta1: p.beta1,
                    beta2: p.beta2,
                    epsilon: p.epsilon,
                }),
                batch_size: p.batch_size,
                epochs: p.epochs,
            },
            TrainerSection::Sgd(p) => TrainConfig {
                optimizer: Optimizer::Sgd { lr: p.lr },
                batch_size: p.batch_size,
                epochs: p.epochs,
            },
            TrainerSection::Ea(_) => {
                return Err(ConfigError::Invalid(
                    "trainer section is \"ea\", not a gradient trainer".into(),
                ))
            }
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run.repeats == 0 {
            return Err(ConfigError::Invalid("run.repeats must be at least 1".into()));
        }
        if self.run.val_interval == 0 {
            return Err(ConfigError::Invalid(
                "run.val_interval must be at least 1".into(),
            ));
        }
        let spec = self.network.to_spec()?;
        let (h, w, classes) = self.dataset.dims();
        if spec.input_hw() != (h, w) {
            return Err(ConfigError::Invalid(format!(
                "network input {}x{} does not match dataset images {h}x{w}",
                self.network.input_height, self.network.input_width
            )));
        }
        if spec.num_classes() != classes {
            return Err(ConfigError::Invalid(format!(
                "network output width {} does not match dataset classes {classes}",
                spec.num_classes()
            )));
        }
        match &self.dataset {
            DatasetSection::Mnist { val_examples, .. } => {
                if *val_examples == 0 {
                    return Err(ConfigError::Invalid(
                        "dataset.mnist.val_examples must be at least 1".into(),
                    ));
                }
            }
            DatasetSection::Blobs {
                classes,
                train_per_class,
                val_per_class,
                separation,
                ..
            } => {
                if *classes == 0 || *train_per_class == 0 || *val_per_class == 0 {
                    return Err(ConfigError::Invalid(
                        "dataset.blobs counts must all be at least 1".into(),
                    ));
                }
                if !separation.is_finite() || *separation < 0.0 {
                    return Err(ConfigError::Invalid(format!(
                        "dataset.blobs.separation {separation} must be finite and non-negative"
                    )));
                }
            }
        }
        match &self.trainer {
            TrainerSection::Ea(p) => {
                p.to_evo_config()?;
            }
            TrainerSection::Adam(_) | TrainerSection::Sgd(_) => {
                self.train_config()?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_config_text() -> &'static str {
        r#"
            [run]
            seed = 7
            repeats = 2
            out_dir = "runs/demo"

            [network]
            input_height = 8
            input_width = 8
            layers = [16, 4]

            [dataset.blobs]
            classes = 4
            height = 8
            width = 8
            train_per_class = 100
            val_per_class = 25
            separation = 20.0

            [trainer.ea]
            lambda = 100
            batch_size = 64
            generations = 200
        "#
    }

    #[test]
    fn parses_a_blob_ea_config_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(blob_config_text()).unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.run.val_interval, 50);
        let TrainerSection::Ea(ea) = &cfg.trainer else {
            panic!("expected EA trainer");
        };
        assert_eq!(ea.lambda, 100);
        assert_eq!(ea.p_elite, 0.05);
        assert_eq!(ea.sigma_mode, "constant");
        let evo = ea.to_evo_config().unwrap();
        assert_eq!(evo.batch_size, 64);
        assert_eq!(evo.sigma_mode, SigmaMode::Constant);
    }

    #[test]
    fn parses_mnist_adam_config() {
        let text = r#"
            [run]

            [network]
            input_height = 28
            input_width = 28
            layers = [256, 128, 64, 10]

            [dataset.mnist]
            dir = "data/mnist"

            [trainer.adam]
            epochs = 5
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.dataset.dims(), (28, 28, 10));
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.epochs, 5);
        assert!(matches!(tc.optimizer, Optimizer::Adam(h) if h.lr == 1e-3));
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = blob_config_text().replace("seed = 7", "seed = 7\nbananas = 1");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("bananas"), "{err}");
    }

    #[test]
    fn rejects_mismatched_network_and_dataset() {
        let text = blob_config_text().replace("layers = [16, 4]", "layers = [16, 5]");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("classes"), "{err}");

        let text = blob_config_text().replace("input_height = 8", "input_height = 6");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn rejects_bad_sigma_mode_and_crossover_op() {
        let text = blob_config_text()
            .replace("lambda = 100", "lambda = 100\nsigma_mode = \"linear\"");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = blob_config_text()
            .replace("lambda = 100", "lambda = 100\ncrossover_op = \"two-point\"");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn toml_round_trip_preserves_the_config() {
        let cfg = ExperimentConfig::from_toml_str(blob_config_text()).unwrap();
        let text = cfg.to_toml_string().unwrap();
        let reparsed = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn exp_decay_mode_picks_up_decay_k() {
        let text = blob_config_text().replace(
            "lambda = 100",
            "lambda = 100\nsigma_mode = \"exp-decay\"\ndecay_k = 250.0",
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let TrainerSection::Ea(ea) = &cfg.trainer else {
            panic!();
        };
        assert_eq!(
            ea.to_evo_config().unwrap().sigma_mode,
            SigmaMode::ExpDecay { k: 250.0 }
        );
    }

    #[test]
    fn trainer_sections_are_mutually_exclusive() {
        let text = format!(
            "{}\n[trainer.adam]\nlr = 0.001\n",
            blob_config_text().trim_end()
        );
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }
}
