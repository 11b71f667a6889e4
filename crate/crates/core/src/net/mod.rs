//! The random-graph spiking network: a stem Conv-BN-spike triplet feeding a
//! DAG of residual nodes, sink pooling and per-task linear heads.
//!
//! Tensors inside the network are time-major `[T*B, C, H, W]`; row `t*B + b`
//! holds sample `b` at time step `t`.

mod checkpoint;
mod forward;
mod params;
mod pool;
mod stats;

use std::collections::BTreeMap;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub(crate) use forward::argmax_rows;
pub use forward::{apply_gate, BatchStats, ForwardOptions, ForwardTrace};
pub use params::{
    beta_path, conv_path, edge_path, gamma_path, head_bias_path, head_weight_path, node_triplet,
    triplet_paths, FreezeMask, ModelParams, TaskId, STEM,
};
pub use pool::{aggregate_inputs, sp_kernel, standard_pool, tailored_pool, tp_kernel};
pub use stats::{spike_statistics, SpikeStatistics};

use crate::error::{Error, Result};
use crate::neuron::{NeuronConfig, Surrogate, SurrogateKind};
use crate::tensor::{Tensor, BN_EPSILON};
use crate::topology::DagTopology;

/// How a residual node combines its two triplet outputs `O1` and `O2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Gate {
    /// `O2 + O1 - O2*O1`; keeps outputs binary.
    #[default]
    Or,
    Add,
    And,
    /// `(1 - O2) * O1`
    Iand,
    /// `O2` alone, no skip connection.
    None,
}

impl Gate {
    pub fn name(self) -> &'static str {
        match self {
            Gate::Or => "or",
            Gate::Add => "add",
            Gate::And => "and",
            Gate::Iand => "iand",
            Gate::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "or" => Ok(Gate::Or),
            "add" => Ok(Gate::Add),
            "and" => Ok(Gate::And),
            "iand" => Ok(Gate::Iand),
            "none" => Ok(Gate::None),
            _ => Err(Error::invalid(format!("unknown gate `{s}`"))),
        }
    }

    /// Whether binary triplet outputs always give a binary node output.
    pub fn preserves_spikes(self) -> bool {
        self != Gate::Add
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Channel width of the stem output and of every node.
    pub channels: usize,
    /// Odd square kernel of every convolution.
    pub kernel: usize,
    pub time_steps: usize,
    pub gate: Gate,
    pub neuron: NeuronConfig,
    /// Standard pooling applies to outputs whose spatial size is at least this.
    pub eta: usize,
    /// Standard pooling kernel.
    pub kappa: usize,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            channels: 32,
            kernel: 3,
            time_steps: 4,
            gate: Gate::Or,
            neuron: NeuronConfig::default(),
            eta: 1,
            kappa: 2,
            bn_eps: BN_EPSILON,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::invalid("kernel size must be odd"));
        }
        if self.time_steps == 0 {
            return Err(Error::invalid("time_steps must be positive"));
        }
        if self.eta == 0 || self.kappa == 0 {
            return Err(Error::invalid("eta and kappa must be positive"));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::invalid("bn_eps must be positive"));
        }
        self.neuron.validate()
    }

    /// `key=value` lines, floats in round-trip form.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let n = &self.neuron;
        [
            ("in_channels", self.in_channels.to_string()),
            ("channels", self.channels.to_string()),
            ("kernel", self.kernel.to_string()),
            ("time_steps", self.time_steps.to_string()),
            ("gate", self.gate.name().to_string()),
            ("v_threshold", format!("{:?}", n.v_threshold)),
            ("tau", format!("{:?}", n.tau)),
            ("surrogate", n.surrogate.kind.name().to_string()),
            ("surrogate_width", format!("{:?}", n.surrogate.width)),
            ("eta", self.eta.to_string()),
            ("kappa", self.kappa.to_string()),
            ("bn_eps", format!("{:?}", self.bn_eps)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = kv
                .get(key)
                .ok_or_else(|| Error::invalid(format!("model config is missing `{key}`")))?;
            raw.parse()
                .map_err(|_| Error::invalid(format!("bad value `{raw}` for `{key}`")))
        }
        let kind: String = get(kv, "surrogate")?;
        let gate: String = get(kv, "gate")?;
        let cfg = Self {
            in_channels: get(kv, "in_channels")?,
            channels: get(kv, "channels")?,
            kernel: get(kv, "kernel")?,
            time_steps: get(kv, "time_steps")?,
            gate: Gate::parse(&gate)?,
            neuron: NeuronConfig {
                v_threshold: get(kv, "v_threshold")?,
                tau: get(kv, "tau")?,
                surrogate: Surrogate {
                    kind: SurrogateKind::parse(&kind)?,
                    width: get(kv, "surrogate_width")?,
                },
            },
            eta: get(kv, "eta")?,
            kappa: get(kv, "kappa")?,
            bn_eps: get(kv, "bn_eps")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A network: architecture, wiring and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CogniSnn {
    pub config: ModelConfig,
    pub topology: DagTopology,
    pub params: ModelParams,
}

impl CogniSnn {
    /// Freshly initialized network without classifier heads.
    pub fn new(config: ModelConfig, topology: DagTopology, seed: u64) -> Result<Self> {
        config.validate()?;
        if topology.node_count() == 0 {
            return Err(Error::invalid("the topology has no nodes"));
        }
        let params = ModelParams::init(&config, &topology, seed)?;
        Ok(Self {
            config,
            topology,
            params,
        })
    }

    /// Appends a classifier head for a new task.
    pub fn add_head(&mut self, task: TaskId, classes: usize, seed: u64) -> Result<()> {
        self.params.add_head(task, classes, self.config.channels, seed)
    }

    pub fn tasks(&self) -> BTreeMap<TaskId, usize> {
        self.params.tasks()
    }

    /// Zeroes the batch-norm affine parameters of every node's second
    /// triplet, so that `O2` is silent and each OR node passes `O1` through.
    pub fn zero_residual_branches(&mut self) -> Result<()> {
        for v in 0..self.topology.node_count() {
            let t = node_triplet(v, 2);
            let c = self.config.channels;
            self.params.set(&gamma_path(&t), Tensor::zeros(&[c]))?;
            self.params.set(&beta_path(&t), Tensor::zeros(&[c]))?;
        }
        Ok(())
    }

    /// Configures `triplet` so that, with inference-mode batch norm, its
    /// input current is exactly `drive` times its input, channel by channel.
    pub fn set_pass_through(&mut self, triplet: &str, drive: f64) -> Result<()> {
        let w = self.params.get(&conv_path(triplet))?;
        let [co, ci, k, _] = w.dims4("pass_through")?;
        if co != ci {
            return Err(Error::dim(
                "pass_through",
                format!("needs equal in/out channels, got {ci} -> {co}"),
            ));
        }
        let mut kernel = Tensor::zeros(&[co, ci, k, k]);
        let centre = k / 2;
        for c in 0..co {
            kernel.data_mut()[((c * ci + c) * k + centre) * k + centre] = 1.0;
        }
        let eps = self.config.bn_eps;
        self.params.set(&conv_path(triplet), kernel)?;
        self.params
            .set(&gamma_path(triplet), Tensor::full(&[co], drive * (1.0 + eps).sqrt()))?;
        self.params.set(&beta_path(triplet), Tensor::zeros(&[co]))?;
        let stats = self.params.stats_mut(triplet)?;
        stats.mean = vec![0.0; co];
        stats.var = vec![1.0; co];
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_names_round_trip() {
        for g in [Gate::Or, Gate::Add, Gate::And, Gate::Iand, Gate::None] {
            assert_eq!(Gate::parse(g.name()).unwrap(), g);
        }
        assert!(Gate::parse("xor").is_err());
    }

    #[test]
    fn config_kv_round_trip_and_validation() {
        let cfg = ModelConfig {
            gate: Gate::Iand,
            eta: 32,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(ModelConfig {
            kernel: 2,
            ..cfg
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            time_steps: 0,
            ..cfg
        }
        .validate()
        .is_err());
    }
}
