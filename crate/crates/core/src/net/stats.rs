//! Firing rates and operation counts of one inference pass.
//!
//! Operations are split by what they multiply. A convolution whose input is a
//! spike map only accumulates weights where a spike arrived: one synaptic
//! operation (SOP) per spike per output it reaches. Real-valued inputs need a
//! multiply-accumulate (MAC) for every input element and output it reaches.
//! Routing a binary node output to a successor or a sink costs one SOP per
//! spike; edge gains cost one MAC per element of the aligned term.

use std::collections::BTreeMap;

use super::forward::{ForwardOptions, ForwardTrace};
use super::params::{node_triplet, STEM};
use super::CogniSnn;
use crate::error::Result;
use crate::tensor::{Tape, Tensor};

/// Per-layer firing rates and per-sample operation counts.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeStatistics {
    pub samples: usize,
    pub stem_rate: f64,
    /// Mean node output per element and time step.
    pub node_rates: BTreeMap<usize, f64>,
    /// Spike rate of every triplet, keyed by its parameter prefix.
    pub triplet_rates: BTreeMap<String, f64>,
    /// All triplet spikes over all triplet neurons.
    pub mean_rate: f64,
    pub sop: f64,
    pub mac: f64,
}

/// How many outputs of a stride-1 same-padded convolution read position `i`
/// of an axis of length `n`.
fn reach(i: usize, n: usize, k: usize) -> usize {
    let p = k / 2;
    (0..k).filter(|&ki| i + p >= ki && i + p - ki < n).count()
}

/// Convolution work triggered by `x` `[N, C, H, W]`: summed over non-zero
/// elements when `sparse`, else over all elements.
fn conv_work(x: &Tensor, c_out: usize, k: usize, sparse: bool) -> f64 {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let rows: Vec<usize> = (0..h).map(|i| reach(i, h, k)).collect();
    let cols: Vec<usize> = (0..w).map(|j| reach(j, w, k)).collect();
    let mut total = 0usize;
    for (idx, v) in x.data().iter().enumerate() {
        if sparse && *v == 0.0 {
            continue;
        }
        let j = idx % w;
        let i = (idx / w) % h;
        total += rows[i] * cols[j];
    }
    (total * c_out) as f64
}

fn nonzero(x: &Tensor) -> f64 {
    x.data().iter().filter(|v| **v != 0.0).count() as f64
}

impl SpikeStatistics {
    /// Counts from a recorded inference pass.
    pub fn from_trace(model: &CogniSnn, tape: &Tape, trace: &ForwardTrace) -> Result<Self> {
        let cfg = &model.config;
        let (c, k) = (cfg.channels, cfg.kernel);
        let topo = &model.topology;
        let mut sop = 0.0;
        let mut mac = 0.0;

        let input = tape.value(trace.input);
        if input.is_binary() {
            sop += conv_work(input, c, k, true);
        } else {
            mac += conv_work(input, c, k, false);
        }
        let stem = tape.value(trace.stem);
        let mut triplet_rates = BTreeMap::from([(STEM.to_string(), stem.mean())]);
        let mut spikes = stem.sum();
        let mut neurons = stem.len() as f64;
        let mut node_rates = BTreeMap::new();
        let binary_outputs = cfg.gate.preserves_spikes();

        for v in 0..topo.node_count() {
            let x = tape.value(trace.node_inputs[&v]);
            if topo.predecessors(v).is_empty() {
                sop += conv_work(x, c, k, true);
            } else {
                mac += conv_work(x, c, k, false);
            }
            let o1 = tape.value(trace.o1[&v]);
            let o2 = tape.value(trace.o2[&v]);
            sop += conv_work(o1, c, k, true);
            for (which, o) in [(1, o1), (2, o2)] {
                triplet_rates.insert(node_triplet(v, which), o.mean());
                spikes += o.sum();
                neurons += o.len() as f64;
            }
            let out = tape.value(trace.outputs[&v]);
            node_rates.insert(v, out.mean());
            let routes = topo.successors(v).len() + usize::from(topo.successors(v).is_empty());
            if binary_outputs {
                sop += routes as f64 * nonzero(out);
            } else {
                mac += (routes * out.len()) as f64;
            }
            if !topo.predecessors(v).is_empty() {
                // one gain product per element of each aligned predecessor term
                mac += (topo.predecessors(v).len() * x.len()) as f64;
            }
        }
        let b = trace.batch as f64;
        Ok(Self {
            samples: trace.batch,
            stem_rate: stem.mean(),
            node_rates,
            triplet_rates,
            mean_rate: if neurons > 0.0 { spikes / neurons } else { 0.0 },
            sop: sop / b,
            mac: mac / b,
        })
    }
}

/// Runs an inference pass over `input` `[T*B, C, H, W]` and counts spikes
/// and operations.
pub fn spike_statistics(model: &CogniSnn, input: &Tensor) -> Result<SpikeStatistics> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let trace = model.forward_trace(&mut tape, x, &ForwardOptions::inference())?;
    SpikeStatistics::from_trace(model, &tape, &trace)
}
