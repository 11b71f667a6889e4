//! Learnable parameters and batch-norm buffers, addressed by stable string
//! paths such as `node.3.t1.conv.weight` or `edge.0.3.gain`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{RunningStats, Tensor};
use crate::topology::{DagTopology, Edge};

/// Identifier of a classification task (one classifier head each).
pub type TaskId = u32;

pub const STEM: &str = "stem";

pub fn node_triplet(node: usize, which: u8) -> String {
    format!("node.{node}.t{which}")
}

pub fn conv_path(triplet: &str) -> String {
    format!("{triplet}.conv.weight")
}

pub fn gamma_path(triplet: &str) -> String {
    format!("{triplet}.bn.gamma")
}

pub fn beta_path(triplet: &str) -> String {
    format!("{triplet}.bn.beta")
}

pub fn edge_path((i, j): Edge) -> String {
    format!("edge.{i}.{j}.gain")
}

pub fn head_weight_path(task: TaskId) -> String {
    format!("head.{task}.weight")
}

pub fn head_bias_path(task: TaskId) -> String {
    format!("head.{task}.bias")
}

/// The three learnable paths of one Conv-BN-spike triplet.
pub fn triplet_paths(triplet: &str) -> [String; 3] {
    [conv_path(triplet), gamma_path(triplet), beta_path(triplet)]
}

/// All learnable values and batch-norm running statistics of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    values: BTreeMap<String, Tensor>,
    stats: BTreeMap<String, RunningStats>,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

impl ModelParams {
    pub(crate) fn from_parts(values: BTreeMap<String, Tensor>, stats: BTreeMap<String, RunningStats>) -> Self {
        Self { values, stats }
    }

    /// Fresh parameters for `topology`, without any classifier head.
    pub fn init(config: &ModelConfig, topology: &DagTopology, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self {
            values: BTreeMap::new(),
            stats: BTreeMap::new(),
        };
        let c = config.channels;
        p.init_triplet(STEM, config.in_channels, c, config.kernel, &mut rng);
        for v in 0..topology.node_count() {
            for which in [1, 2] {
                p.init_triplet(&node_triplet(v, which), c, c, config.kernel, &mut rng);
            }
        }
        for e in topology.edges() {
            p.values.insert(edge_path(e), Tensor::scalar(0.0));
        }
        Ok(p)
    }

    fn init_triplet(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        self.values
            .insert(conv_path(prefix), uniform(&[c_out, c_in, k, k], bound, rng));
        self.values.insert(gamma_path(prefix), Tensor::ones(&[c_out]));
        self.values.insert(beta_path(prefix), Tensor::zeros(&[c_out]));
        self.stats.insert(prefix.to_string(), RunningStats::new(c_out));
    }

    /// Appends a classifier head for `task` over `features` inputs.
    pub fn add_head(&mut self, task: TaskId, classes: usize, features: usize, seed: u64) -> Result<()> {
        if classes == 0 {
            return Err(Error::invalid("a classifier head needs at least one class"));
        }
        if self.values.contains_key(&head_weight_path(task)) {
            return Err(Error::invalid(format!("task {task} already has a head")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0000_0000_0000 ^ u64::from(task));
        let bound = 1.0 / (features as f64).sqrt();
        self.values
            .insert(head_weight_path(task), uniform(&[classes, features], bound, &mut rng));
        self.values.insert(head_bias_path(task), Tensor::zeros(&[classes]));
        Ok(())
    }

    /// Registered tasks and their class counts.
    pub fn tasks(&self) -> BTreeMap<TaskId, usize> {
        self.values
            .iter()
            .filter_map(|(k, v)| {
                let rest = k.strip_prefix("head.")?.strip_suffix(".weight")?;
                Some((rest.parse().ok()?, v.shape()[0]))
            })
            .collect()
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.values
            .get(path)
            .ok_or_else(|| Error::invalid(format!("no parameter at `{path}`")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.values
            .get_mut(path)
            .ok_or_else(|| Error::invalid(format!("no parameter at `{path}`")))
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set(&mut self, path: &str, value: Tensor) -> Result<()> {
        let slot = self.get_mut(path)?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(
                "set_param",
                format!("`{path}` has shape {:?}, got {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn values(&self) -> &BTreeMap<String, Tensor> {
        &self.values
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }

    pub fn stats(&self, triplet: &str) -> Result<&RunningStats> {
        self.stats
            .get(triplet)
            .ok_or_else(|| Error::invalid(format!("no batch-norm statistics for `{triplet}`")))
    }

    pub fn stats_mut(&mut self, triplet: &str) -> Result<&mut RunningStats> {
        self.stats
            .get_mut(triplet)
            .ok_or_else(|| Error::invalid(format!("no batch-norm statistics for `{triplet}`")))
    }

    pub fn all_stats(&self) -> &BTreeMap<String, RunningStats> {
        &self.stats
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.values().map(Tensor::len).sum()
    }
}

/// Parameter paths that must not change during training.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FreezeMask {
    frozen: BTreeSet<String>,
}

impl FreezeMask {
    pub fn none() -> Self {
        Self::default()
    }

    /// Freezes every parameter of `params`.
    pub fn all(params: &ModelParams) -> Self {
        Self {
            frozen: params.paths().cloned().collect(),
        }
    }

    /// Freezes everything except `trainable`.
    pub fn all_except(params: &ModelParams, trainable: &BTreeSet<String>) -> Self {
        Self {
            frozen: params
                .paths()
                .filter(|p| !trainable.contains(*p))
                .cloned()
                .collect(),
        }
    }

    pub fn freeze(&mut self, path: impl Into<String>) {
        self.frozen.insert(path.into());
    }

    pub fn is_frozen(&self, path: &str) -> bool {
        self.frozen.contains(path)
    }

    /// A triplet counts as frozen when all three of its parameters are.
    /// Frozen triplets run batch norm on their running statistics.
    pub fn triplet_frozen(&self, triplet: &str) -> bool {
        triplet_paths(triplet).iter().all(|p| self.frozen.contains(p))
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }
}
