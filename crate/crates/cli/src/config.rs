//! Experiment configuration: JSON document, defaults, validation and the
//! content digest recorded in every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sparsam::bandit::MaxNormScope;
use sparsam::data::{gen_blobs, gen_two_moons, Dataset};
use sparsam::idx::{idx_dataset, read_idx};
use sparsam::layered::LayeredVector;
use sparsam::objectives::{Activation, BlockQuadratic, MlpClassifier};
use sparsam::optim::{AdamWConfig, PerturbNorm, SamConfig, StepConfig};
use sparsam::train::{BanditSettings, OptimizerKind, Problem, TrainConfig};

use crate::CliError;

/// Offset between a synthetic training set's seed and its test set's seed.
pub const TEST_SEED_OFFSET: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub bandit: BanditConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObjectiveConfig {
    BlockQuadratic(QuadraticParams),
    Mlp(MlpParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    /// Curvature `a_l` of each block.
    pub scales: Vec<f64>,
    /// Parameter count of each block.
    pub dims: Vec<usize>,
    /// Per-block center value; zeros when omitted.
    #[serde(default)]
    pub centers: Option<Vec<f64>>,
    /// Initial value of every coordinate.
    #[serde(default = "default_init")]
    pub init: f64,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParams {
    /// Hidden widths; input and output widths come from the dataset.
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: ActivationName,
    #[serde(default = "default_true")]
    pub bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    TwoMoons,
    Blobs,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(rename = "type")]
    pub kind: DatasetKind,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Generator seed; the training seed when omitted.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Blob count for `blobs`.
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Size of the held-out set for synthetic data; 0 disables it.
    #[serde(default = "default_n")]
    pub test_n: usize,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbNormName {
    Global,
    PerLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Per-layer for sparse variants and global for dense ones when omitted.
    #[serde(default)]
    pub perturb_norm: Option<PerturbNormName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxNormName {
    Current,
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    #[serde(default = "default_s_over_n")]
    pub s_over_n: f64,
    #[serde(default = "default_p_min_factor")]
    pub p_min_factor: f64,
    #[serde(default = "default_alpha_p")]
    pub alpha_p: f64,
    #[serde(default = "default_exponent_clamp")]
    pub exponent_clamp: f64,
    /// Which norms the pseudo-loss bound `G` is taken over.
    #[serde(default = "default_max_norm")]
    pub max_norm: MaxNormName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_init() -> f64 {
    1.0
}
fn default_activation() -> ActivationName {
    ActivationName::Tanh
}
fn default_true() -> bool {
    true
}
fn default_n() -> usize {
    200
}
fn default_noise() -> f64 {
    0.1
}
fn default_classes() -> usize {
    3
}
fn default_eta() -> f64 {
    AdamWConfig::default().eta
}
fn default_beta1() -> f64 {
    AdamWConfig::default().beta1
}
fn default_beta2() -> f64 {
    AdamWConfig::default().beta2
}
fn default_adam_eps() -> f64 {
    AdamWConfig::default().adam_eps
}
fn default_rho() -> f64 {
    SamConfig::default().rho
}
fn default_s_over_n() -> f64 {
    BanditSettings::default().s_over_n
}
fn default_p_min_factor() -> f64 {
    BanditSettings::default().p_min_factor
}
fn default_alpha_p() -> f64 {
    BanditSettings::default().alpha_p
}
fn default_exponent_clamp() -> f64 {
    BanditSettings::default().exponent_clamp
}
fn default_max_norm() -> MaxNormName {
    MaxNormName::Current
}
fn default_steps() -> u64 {
    1000
}
fn default_batch_size() -> usize {
    32
}
fn default_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            s_over_n: default_s_over_n(),
            p_min_factor: default_p_min_factor(),
            alpha_p: default_alpha_p(),
            exponent_clamp: default_exponent_clamp(),
            max_norm: default_max_norm(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            batch_size: default_batch_size(),
            seed: 0,
            eval_every: 0,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind, CliError> {
        self.optimizer
            .kind
            .parse()
            .map_err(|e: sparsam::Error| CliError::Config(e.to_string()))
    }

    /// Checks ranges the library does not see until a run starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config()?
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.train.batch_size == 0 {
            return Err(CliError::Config("train.batch_size must be at least 1".into()));
        }
        match (&self.objective, &self.dataset) {
            (ObjectiveConfig::BlockQuadratic(q), None) => {
                if q.scales.len() != q.dims.len() {
                    return Err(CliError::Config(format!(
                        "objective.params: {} scales for {} dims",
                        q.scales.len(),
                        q.dims.len()
                    )));
                }
                if let Some(c) = &q.centers {
                    if c.len() != q.dims.len() {
                        return Err(CliError::Config(format!(
                            "objective.params: {} centers for {} dims",
                            c.len(),
                            q.dims.len()
                        )));
                    }
                }
                Ok(())
            }
            (ObjectiveConfig::BlockQuadratic(_), Some(_)) => {
                Err(CliError::Config("blockquadratic objective takes no dataset".into()))
            }
            (ObjectiveConfig::Mlp(_), None) => Err(CliError::Config("mlp objective needs a dataset".into())),
            (ObjectiveConfig::Mlp(m), Some(d)) => {
                if m.hidden.contains(&0) {
                    return Err(CliError::Config("mlp hidden widths must be positive".into()));
                }
                if !(d.noise >= 0.0 && d.noise.is_finite()) {
                    return Err(CliError::Config(format!("dataset.noise = {} must be >= 0", d.noise)));
                }
                if d.kind == DatasetKind::Idx && (d.images.is_none() || d.labels.is_none()) {
                    return Err(CliError::Config("idx dataset needs `images` and `labels`".into()));
                }
                Ok(())
            }
        }
    }

    /// Library training settings with defaults resolved.
    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let kind = self.optimizer_kind()?;
        let o = &self.optimizer;
        let perturb_norm = match o.perturb_norm {
            None => kind.default_perturb_norm(),
            Some(PerturbNormName::Global) => PerturbNorm::Global,
            Some(PerturbNormName::PerLayer) => PerturbNorm::PerLayer,
        };
        let b = &self.bandit;
        Ok(TrainConfig {
            optimizer: kind,
            step: StepConfig {
                adamw: AdamWConfig {
                    eta: o.eta,
                    weight_decay: o.lambda,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    adam_eps: o.adam_eps,
                },
                sam: SamConfig {
                    rho: o.rho,
                    perturb_norm,
                },
            },
            bandit: BanditSettings {
                s_over_n: b.s_over_n,
                p_min_factor: b.p_min_factor,
                alpha_p: b.alpha_p,
                exponent_clamp: b.exponent_clamp,
                max_scope: match b.max_norm {
                    MaxNormName::Current => MaxNormScope::Current,
                    MaxNormName::Running => MaxNormScope::Running,
                },
            },
            steps: self.train.steps,
            seed: self.train.seed,
            eval_every: self.train.eval_every,
        })
    }

    /// Builds the objective and data. Synthetic test sets use the training
    /// generator seed plus [`TEST_SEED_OFFSET`].
    pub fn problem(&self) -> Result<Problem, CliError> {
        let lib = |e: sparsam::Error| CliError::Config(e.to_string());
        match &self.objective {
            ObjectiveConfig::BlockQuadratic(q) => {
                let centers = match &q.centers {
                    Some(c) => LayeredVector::from_blocks(q.dims.iter().zip(c).map(|(&d, &v)| vec![v; d]).collect()),
                    None => LayeredVector::from_blocks(q.dims.iter().map(|&d| vec![0.0; d]).collect()),
                }
                .map_err(lib)?;
                let init = LayeredVector::filled(&q.dims, q.init);
                let objective =
                    BlockQuadratic::new(q.scales.clone(), centers, q.noise, self.train.seed).map_err(lib)?;
                Ok(Problem::Quadratic { objective, init })
            }
            ObjectiveConfig::Mlp(m) => {
                let d = self.dataset.as_ref().expect("validated");
                let (train, test) = self.datasets(d)?;
                let mut widths = vec![train.features.cols()];
                widths.extend(&m.hidden);
                widths.push(train.class_count.max(test.as_ref().map_or(0, |t| t.class_count)));
                let activation = match m.activation {
                    ActivationName::Tanh => Activation::Tanh,
                    ActivationName::Relu => Activation::Relu,
                };
                Ok(Problem::Classifier {
                    model: MlpClassifier::new(widths, activation, m.bias).map_err(lib)?,
                    train,
                    test,
                    batch_size: self.train.batch_size,
                })
            }
        }
    }

    fn datasets(&self, d: &DatasetConfig) -> Result<(Dataset, Option<Dataset>), CliError> {
        let lib = |e: sparsam::Error| CliError::Config(e.to_string());
        let seed = d.seed.unwrap_or(self.train.seed);
        let synth = |n: usize, seed: u64| match d.kind {
            DatasetKind::TwoMoons => gen_two_moons(n, d.noise, seed),
            DatasetKind::Blobs => gen_blobs(n, d.classes, d.noise, seed),
            DatasetKind::Idx => unreachable!(),
        };
        match d.kind {
            DatasetKind::Idx => {
                let pair = |images: &Path, labels: &Path| {
                    idx_dataset(&read_idx(images).map_err(lib)?, &read_idx(labels).map_err(lib)?).map_err(lib)
                };
                let train = pair(d.images.as_deref().unwrap(), d.labels.as_deref().unwrap())?;
                let test = match (&d.test_images, &d.test_labels) {
                    (Some(i), Some(l)) => Some(pair(i, l)?),
                    (None, None) => None,
                    _ => return Err(CliError::Config("test_images and test_labels go together".into())),
                };
                Ok((train, test))
            }
            _ => {
                let train = synth(d.n, seed).map_err(lib)?;
                let test = match d.test_n {
                    0 => None,
                    n => Some(synth(n, seed.wrapping_add(TEST_SEED_OFFSET)).map_err(lib)?),
                };
                Ok((train, test))
            }
        }
    }

    /// SHA-256 of the resolved configuration, hex encoded. The output
    /// directory is left out so moving a run does not change its identity.
    pub fn digest(&self) -> String {
        let mut resolved = self.clone();
        resolved.output = OutputConfig::default();
        let canonical = serde_json::to_vec(&resolved).expect("config serialises");
        hex::encode(Sha256::digest(&canonical))
    }
}
