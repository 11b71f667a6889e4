//! The experiment config file: TOML with one table per concern. Unknown
//! keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::data::{Encoding, Relation, SynthSpec};
use super::energy::EnergyConstants;
use crate::continual::{LwfConfig, Similarity};
use crate::error::{Error, Result};
use crate::net::{Gate, ModelConfig, TaskId};
use crate::neuron::{NeuronConfig, Surrogate, SurrogateKind};
use crate::tensor::BN_EPSILON;
use crate::topology::{generate_er, generate_ws, DagTopology, DEFAULT_PATH_CAP};
use crate::train::{GradCheckConfig, OptimizerKind, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySpec {
    /// `er`, `ws`, `chain` or `file`.
    pub generator: String,
    pub nodes: usize,
    /// Edge probability (ER) or rewiring probability (WS).
    pub p: f64,
    /// Ring neighbours (WS).
    pub k: usize,
    pub seed: u64,
    /// Topology text file, for `generator = "file"`.
    pub file: Option<PathBuf>,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self {
            generator: "er".into(),
            nodes: 7,
            p: 0.5,
            k: 4,
            seed: 0,
            file: None,
        }
    }
}

impl TopologySpec {
    pub fn build(&self) -> Result<DagTopology> {
        match self.generator.as_str() {
            "er" => generate_er(self.nodes, self.p, self.seed),
            "ws" => generate_ws(self.nodes, self.k, self.p, self.seed),
            "chain" => DagTopology::chain(self.nodes),
            "file" => {
                let path = self
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::Config("topology.file is required for generator `file`".into()))?;
                DagTopology::from_text(&std::fs::read_to_string(path)?)
            }
            g => Err(Error::Config(format!("unknown topology generator `{g}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub channels: usize,
    pub gate: String,
    pub time_steps: usize,
    pub kernel: usize,
    pub v_threshold: f64,
    pub tau: f64,
    pub surrogate: String,
    pub surrogate_width: f64,
    pub eta: usize,
    pub kappa: usize,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let n = NeuronConfig::default();
        Self {
            channels: 16,
            gate: "or".into(),
            time_steps: 4,
            kernel: 3,
            v_threshold: n.v_threshold,
            tau: n.tau,
            surrogate: n.surrogate.kind.name().into(),
            surrogate_width: n.surrogate.width,
            eta: 4,
            kappa: 2,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            in_channels: 1,
            channels: self.channels,
            kernel: self.kernel,
            time_steps: self.time_steps,
            gate: Gate::parse(&self.gate)?,
            neuron: NeuronConfig {
                v_threshold: self.v_threshold,
                tau: self.tau,
                surrogate: Surrogate {
                    kind: SurrogateKind::parse(&self.surrogate)?,
                    width: self.surrogate_width,
                },
            },
            eta: self.eta,
            kappa: self.kappa,
            bn_eps: BN_EPSILON,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    /// `adam` or `sgd`.
    pub optimizer: String,
    pub lr: f64,
    pub weight_decay: f64,
    /// SGD momentum.
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub smooth_mode: bool,
    /// Global gradient-norm clip; 0 disables it.
    pub clip_norm: f64,
    /// Stop once an epoch's training accuracy reaches this; 0 disables it.
    pub target_accuracy: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            optimizer: t.optimizer.name().into(),
            lr: t.lr,
            weight_decay: t.weight_decay,
            momentum: 0.9,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            smooth_mode: t.smooth_mode,
            clip_norm: t.clip_norm.unwrap_or(0.0),
            target_accuracy: 0.0,
        }
    }
}

impl TrainSpec {
    pub fn build(&self) -> Result<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "adam" => OptimizerKind::adam(),
            "sgd" => OptimizerKind::Sgd {
                momentum: self.momentum,
            },
            o => return Err(Error::Config(format!("unknown optimizer `{o}`"))),
        };
        let cfg = TrainConfig {
            optimizer,
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            smooth_mode: self.smooth_mode,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            target_accuracy: (self.target_accuracy > 0.0).then_some(self.target_accuracy),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LwfSpec {
    pub lambda: f64,
    pub temperature: f64,
    /// Similarity threshold; 0 calibrates it on an independent near pair.
    pub threshold: f64,
    pub paths: usize,
    /// `true`, `false` or `auto`.
    pub similar: String,
    /// Epochs on the new task; 0 reuses `train.epochs`.
    pub epochs: usize,
    pub similarity_samples: usize,
}

impl Default for LwfSpec {
    fn default() -> Self {
        let l = LwfConfig::default();
        Self {
            lambda: l.lambda,
            temperature: l.temperature,
            threshold: 0.0,
            paths: l.paths,
            similar: "auto".into(),
            epochs: 0,
            similarity_samples: l.similarity_samples,
        }
    }
}

impl LwfSpec {
    /// The run config; `threshold` replaces a calibrated (zero) threshold.
    pub fn build(&self, train: &TrainConfig, threshold: f64) -> Result<LwfConfig> {
        let cfg = LwfConfig {
            lambda: self.lambda,
            temperature: self.temperature,
            train: TrainConfig {
                epochs: if self.epochs == 0 { train.epochs } else { self.epochs },
                ..*train
            },
            threshold,
            paths: self.paths,
            path_cap: DEFAULT_PATH_CAP,
            similarity_samples: self.similarity_samples,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn similarity(&self) -> Result<Similarity> {
        Similarity::parse(&self.similar)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    /// `synthetic` or `idx`.
    pub source: String,
    pub encoding: Encoding,
    pub seed: u64,
    /// Head evaluated by `eval` and `energy`.
    pub task: TaskId,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub size: usize,
    pub noise: f64,
    pub jitter: usize,
    pub relation: Relation,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

impl Default for DataSpec {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            source: "synthetic".into(),
            encoding: Encoding::Repeat,
            seed: 0,
            task: 0,
            classes: s.classes,
            train_per_class: s.train_per_class,
            test_per_class: s.test_per_class,
            size: s.size,
            noise: s.noise,
            jitter: s.jitter,
            relation: s.relation,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

impl DataSpec {
    pub fn synth(&self) -> SynthSpec {
        SynthSpec {
            classes: self.classes,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            size: self.size,
            noise: self.noise,
            jitter: self.jitter,
            relation: self.relation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySpec {
    pub e_sop_pj: f64,
    pub e_mac_pj: f64,
    /// Test samples measured.
    pub samples: usize,
}

impl Default for EnergySpec {
    fn default() -> Self {
        let c = EnergyConstants::default();
        Self {
            e_sop_pj: c.e_sop_pj,
            e_mac_pj: c.e_mac_pj,
            samples: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckSpec {
    pub samples: usize,
    pub h: f64,
    pub floor: f64,
    pub tolerance: f64,
    /// Training samples in the checked batch.
    pub batch: usize,
    pub seed: u64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        let g = GradCheckConfig::default();
        Self {
            samples: g.samples,
            h: g.h,
            floor: g.floor,
            tolerance: 1e-4,
            batch: 4,
            seed: g.seed,
        }
    }
}

impl GradCheckSpec {
    pub fn build(&self) -> Result<GradCheckConfig> {
        if !(self.h > 0.0) || !(self.floor > 0.0) || !(self.tolerance > 0.0) || self.batch == 0 {
            return Err(Error::Config("gradcheck h, floor, tolerance and batch must be positive".into()));
        }
        Ok(GradCheckConfig {
            h: self.h,
            samples: self.samples,
            seed: self.seed,
            floor: self.floor,
            ..GradCheckConfig::default()
        })
    }
}

/// Everything a run depends on besides its input files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub lwf: LwfSpec,
    pub data: DataSpec,
    pub energy: EnergySpec,
    pub gradcheck: GradCheckSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text: every key, in a fixed order.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(format!("config serialization: {e}")))
    }

    /// Checks every section that does not need files.
    pub fn validate(&self) -> Result<()> {
        self.model.build()?;
        let train = self.train.build()?;
        self.lwf.build(&train, self.lwf.threshold.max(f64::MIN_POSITIVE))?;
        self.lwf.similarity()?;
        self.gradcheck.build()?;
        self.energy_constants().validate()?;
        match self.data.source.as_str() {
            "synthetic" => self.data.synth().validate()?,
            "idx" => {
                if self.data.train_images.is_none()
                    || self.data.train_labels.is_none()
                    || self.data.test_images.is_none()
                    || self.data.test_labels.is_none()
                {
                    return Err(Error::Config("idx data needs train/test image and label paths".into()));
                }
            }
            s => return Err(Error::Config(format!("unknown data source `{s}`"))),
        }
        if !matches!(self.topology.generator.as_str(), "er" | "ws" | "chain" | "file") {
            return Err(Error::Config(format!("unknown topology generator `{}`", self.topology.generator)));
        }
        if self.energy.samples == 0 {
            return Err(Error::Config("energy.samples must be positive".into()));
        }
        Ok(())
    }

    /// Replaces every seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.topology.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.data.seed = seed;
        self.gradcheck.seed = seed;
        self
    }

    pub fn energy_constants(&self) -> EnergyConstants {
        EnergyConstants {
            e_sop_pj: self.energy.e_sop_pj,
            e_mac_pj: self.energy.e_mac_pj,
        }
    }
}
