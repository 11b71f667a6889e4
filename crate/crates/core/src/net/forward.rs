//! Forward pass over the tape.

use std::collections::BTreeMap;

use super::params::{
    beta_path, conv_path, edge_path, gamma_path, head_bias_path, head_weight_path, node_triplet, FreezeMask,
    TaskId, STEM,
};
use super::pool::{sp_kernel, tp_kernel};
use super::{CogniSnn, Gate};
use crate::error::{Error, Result};
use crate::neuron::{run_layer, FireMode};
use crate::tensor::{BatchNormMode, Tape, Tensor, Var};

/// How a forward pass treats batch norm, firing and parameters.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions<'a> {
    /// `Train` uses batch statistics in every triplet that is not fully frozen.
    pub bn: BatchNormMode,
    pub fire: FireMode,
    /// When set, every parameter not frozen by the mask becomes a
    /// differentiable leaf; otherwise all parameters are constants.
    pub trainable: Option<&'a FreezeMask>,
}

impl<'a> ForwardOptions<'a> {
    /// Running statistics, binary spikes, constant parameters.
    pub fn inference() -> Self {
        Self {
            bn: BatchNormMode::Eval,
            fire: FireMode::Spike,
            trainable: None,
        }
    }

    /// Batch statistics and differentiable parameters outside `mask`.
    pub fn training(mask: &'a FreezeMask, fire: FireMode) -> Self {
        Self {
            bn: BatchNormMode::Train,
            fire,
            trainable: Some(mask),
        }
    }
}

/// Batch statistics gathered by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub triplet: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Every intermediate of one forward pass, as tape variables.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Parameter path to its tape variable.
    pub params: BTreeMap<String, Var>,
    pub batch: usize,
    pub input: Var,
    pub stem: Var,
    /// Aggregated input current of each node.
    pub node_inputs: BTreeMap<usize, Var>,
    pub o1: BTreeMap<usize, Var>,
    pub o2: BTreeMap<usize, Var>,
    pub outputs: BTreeMap<usize, Var>,
    /// Time-averaged pooled sink features, `[B, C]`.
    pub features: Var,
    pub batch_stats: Vec<BatchStats>,
}

/// Combines triplet outputs on the tape according to `gate`.
pub fn apply_gate(tape: &mut Tape, gate: Gate, o1: Var, o2: Var) -> Result<Var> {
    match gate {
        Gate::Or => {
            let s = tape.add(o2, o1)?;
            let p = tape.mul(o2, o1)?;
            tape.sub(s, p)
        }
        Gate::Add => tape.add(o2, o1),
        Gate::And => tape.mul(o2, o1),
        Gate::Iand => {
            let p = tape.mul(o2, o1)?;
            tape.sub(o1, p)
        }
        Gate::None => Ok(o2),
    }
}

impl CogniSnn {
    fn bind(&self, tape: &mut Tape, opts: &ForwardOptions) -> BTreeMap<String, Var> {
        self.params
            .values()
            .iter()
            .map(|(path, value)| {
                let var = match opts.trainable {
                    Some(mask) if !mask.is_frozen(path) => tape.leaf(value.clone()),
                    _ => tape.constant(value.clone()),
                };
                (path.clone(), var)
            })
            .collect()
    }

    fn param(binding: &BTreeMap<String, Var>, path: &str) -> Result<Var> {
        binding
            .get(path)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no parameter at `{path}`")))
    }

    fn triplet(
        &self,
        tape: &mut Tape,
        binding: &BTreeMap<String, Var>,
        prefix: &str,
        x: Var,
        opts: &ForwardOptions,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let w = Self::param(binding, &conv_path(prefix))?;
        let gamma = Self::param(binding, &gamma_path(prefix))?;
        let beta = Self::param(binding, &beta_path(prefix))?;
        let y = tape.conv2d(x, w, 1, self.config.kernel / 2)?;
        let frozen = opts.trainable.is_some_and(|m| m.triplet_frozen(prefix));
        let eps = self.config.bn_eps;
        let y = if opts.bn == BatchNormMode::Train && !frozen {
            let (y, mean, var, count) = tape.batch_norm_train(y, gamma, beta, eps)?;
            stats.push(BatchStats {
                triplet: prefix.to_string(),
                mean,
                var,
                count,
            });
            y
        } else {
            tape.batch_norm_eval(y, gamma, beta, self.params.stats(prefix)?, eps)?
        };
        run_layer(tape, y, self.config.time_steps, &self.config.neuron, opts.fire)
    }

    fn aggregate(
        &self,
        tape: &mut Tape,
        binding: &BTreeMap<String, Var>,
        node: usize,
        outputs: &BTreeMap<usize, Var>,
    ) -> Result<Var> {
        let (eta, kappa) = (self.config.eta, self.config.kappa);
        let mut pooled = Vec::new();
        for i in self.topology.predecessors(node) {
            let o = *outputs
                .get(&i)
                .ok_or_else(|| Error::invalid(format!("node {i} is evaluated after its successor {node}")))?;
            let d = tape.value(o).dims4("aggregate_inputs")?[2];
            let p = tape.avg_pool(o, sp_kernel(d, eta, kappa))?;
            pooled.push((i, p));
        }
        let target = pooled
            .iter()
            .map(|(_, p)| tape.value(*p).shape()[2])
            .min()
            .ok_or_else(|| Error::invalid(format!("node {node} has no predecessors")))?;
        let mut sum: Option<Var> = None;
        for (i, p) in pooled {
            let d = tape.value(p).shape()[2];
            let aligned = tape.avg_pool(p, tp_kernel(d, target)?)?;
            let a = Self::param(binding, &edge_path((i, node)))?;
            let gain = tape.sigmoid(a);
            let term = tape.scale_by(gain, aligned)?;
            sum = Some(match sum {
                None => term,
                Some(s) => tape.add(s, term)?,
            });
        }
        Ok(sum.expect("at least one predecessor"))
    }

    /// Forward pass in the topology's canonical topological order.
    pub fn forward_trace(&self, tape: &mut Tape, input: Var, opts: &ForwardOptions) -> Result<ForwardTrace> {
        let order = self.topology.topological_order()?;
        self.forward_trace_with_order(tape, input, opts, &order)
    }

    /// Forward pass visiting nodes in `order`, which must be topological.
    /// `input` is time-major `[T*B, C_in, H, W]`.
    pub fn forward_trace_with_order(
        &self,
        tape: &mut Tape,
        input: Var,
        opts: &ForwardOptions,
        order: &[usize],
    ) -> Result<ForwardTrace> {
        if !self.topology.is_topological_order(order) {
            return Err(Error::invalid("node order is not a topological order"));
        }
        let [rows, c, h, w] = tape.value(input).dims4("forward")?;
        let t = self.config.time_steps;
        if rows == 0 || rows % t != 0 {
            return Err(Error::dim(
                "forward",
                format!("{rows} rows do not split into {t} time steps"),
            ));
        }
        if c != self.config.in_channels || h != w {
            return Err(Error::dim(
                "forward",
                format!(
                    "expected square input with {} channels, got [{c}, {h}, {w}]",
                    self.config.in_channels
                ),
            ));
        }
        let binding = self.bind(tape, opts);
        let mut batch_stats = Vec::new();
        let stem = self.triplet(tape, &binding, STEM, input, opts, &mut batch_stats)?;
        let mut node_inputs = BTreeMap::new();
        let mut o1s = BTreeMap::new();
        let mut o2s = BTreeMap::new();
        let mut outputs = BTreeMap::new();
        for &v in order {
            let x = if self.topology.predecessors(v).is_empty() {
                stem
            } else {
                self.aggregate(tape, &binding, v, &outputs)?
            };
            let o1 = self.triplet(tape, &binding, &node_triplet(v, 1), x, opts, &mut batch_stats)?;
            let o2 = self.triplet(tape, &binding, &node_triplet(v, 2), o1, opts, &mut batch_stats)?;
            let out = apply_gate(tape, self.config.gate, o1, o2)?;
            node_inputs.insert(v, x);
            o1s.insert(v, o1);
            o2s.insert(v, o2);
            outputs.insert(v, out);
        }
        let sinks = self.topology.sinks();
        let mut pooled: Option<Var> = None;
        for s in &sinks {
            let g = tape.global_avg_pool(outputs[s])?;
            pooled = Some(match pooled {
                None => g,
                Some(acc) => tape.add(acc, g)?,
            });
        }
        let mut pooled = pooled.ok_or_else(|| Error::invalid("the topology has no sinks"))?;
        if sinks.len() > 1 {
            pooled = tape.scale(pooled, 1.0 / sinks.len() as f64);
        }
        let features = tape.group_mean(pooled, t)?;
        Ok(ForwardTrace {
            params: binding,
            batch: rows / t,
            input,
            stem,
            node_inputs,
            o1: o1s,
            o2: o2s,
            outputs,
            features,
            batch_stats,
        })
    }

    /// Class logits `[B, K]` of the head for `task`.
    pub fn logits(&self, tape: &mut Tape, trace: &ForwardTrace, task: TaskId) -> Result<Var> {
        let (Some(&w), Some(&b)) = (
            trace.params.get(&head_weight_path(task)),
            trace.params.get(&head_bias_path(task)),
        ) else {
            return Err(Error::invalid(format!("unknown task {task}")));
        };
        tape.linear(trace.features, w, b)
    }

    /// Inference-mode logits `[B, K]` for a time-major input `[T*B, C, H, W]`.
    pub fn forward(&self, input: &Tensor, task: TaskId) -> Result<Tensor> {
        if !self.tasks().contains_key(&task) {
            return Err(Error::invalid(format!("unknown task {task}")));
        }
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let trace = self.forward_trace(&mut tape, x, &ForwardOptions::inference())?;
        let logits = self.logits(&mut tape, &trace, task)?;
        Ok(tape.value(logits).clone())
    }

    /// Arg-max class per sample; ties go to the lower class index.
    pub fn predict(&self, input: &Tensor, task: TaskId) -> Result<Vec<usize>> {
        let logits = self.forward(input, task)?;
        Ok(argmax_rows(&logits))
    }

    /// Folds the batch statistics of a training pass into the running ones.
    pub fn apply_batch_stats(&mut self, trace: &ForwardTrace) -> Result<()> {
        for s in &trace.batch_stats {
            self.params
                .stats_mut(&s.triplet)?
                .update(&s.mean, &s.var, s.count);
        }
        Ok(())
    }
}

/// Index of the largest entry of each row of a `[B, K]` tensor.
pub(crate) fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(k.max(1))
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
