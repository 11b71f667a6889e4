//! Central finite differences against tape gradients, in smooth mode.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, FreezeMask};
use crate::error::{Error, Result};
use crate::net::{CogniSnn, ForwardOptions, TaskId};
use crate::neuron::FireMode;
use crate::tensor::{BatchNormMode, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub h: f64,
    /// Scalars to check; every trainable scalar when there are fewer.
    pub samples: usize,
    pub seed: u64,
    /// Denominator floor of the relative error. Central differences carry
    /// an absolute truncation error of roughly `h^2 * |third derivative| / 6`,
    /// so gradients far below the floor cannot be resolved to a relative
    /// tolerance.
    pub floor: f64,
    pub bn: BatchNormMode,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-4,
            samples: 200,
            seed: 0,
            floor: 1e-4,
            bn: BatchNormMode::Train,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupError {
    pub max_rel: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Keyed by parameter path with node and edge indices replaced by `*`.
    pub groups: BTreeMap<String, GroupError>,
    pub max_rel: f64,
    pub checked: usize,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (g, e) in &self.groups {
            writeln!(f, "group={g} checked={} max_rel_err={:.3e}", e.checked, e.max_rel)?;
        }
        write!(f, "total checked={} max_rel_err={:.3e}", self.checked, self.max_rel)
    }
}

fn group_of(path: &str) -> String {
    path.split('.')
        .map(|p| if p.parse::<usize>().is_ok() && !path.starts_with("head.") { "*" } else { p })
        .collect::<Vec<_>>()
        .join(".")
}

fn loss(model: &CogniSnn, batch: &Batch, task: TaskId, opts: &ForwardOptions) -> Result<(Tape, Var, BTreeMap<String, Var>)> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.input.clone());
    let trace = model.forward_trace(&mut tape, x, opts)?;
    let logits = model.logits(&mut tape, &trace, task)?;
    let l = tape.cross_entropy(logits, &batch.labels)?;
    Ok((tape, l, trace.params))
}

/// Compares tape gradients of the smooth-mode cross-entropy with central
/// differences on a seeded sample of the parameters outside `mask`.
pub fn gradient_check(
    model: &CogniSnn,
    batch: &Batch,
    task: TaskId,
    mask: &FreezeMask,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let opts = ForwardOptions {
        bn: config.bn,
        fire: FireMode::Smooth,
        trainable: Some(mask),
    };
    let (tape, root, vars) = loss(model, batch, task, &opts)?;
    let grads = tape.backward(root)?;
    let scalars: Vec<(String, usize)> = model
        .params
        .values()
        .iter()
        .filter(|(p, _)| !mask.is_frozen(p))
        .flat_map(|(p, t)| (0..t.len()).map(move |i| (p.clone(), i)))
        .collect();
    if scalars.is_empty() {
        return Err(Error::invalid("no trainable parameters to check"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut picks: Vec<usize> = if scalars.len() <= config.samples {
        (0..scalars.len()).collect()
    } else {
        sample(&mut rng, scalars.len(), config.samples).into_vec()
    };
    picks.sort_unstable();
    let mut groups: BTreeMap<String, GroupError> = BTreeMap::new();
    let mut probe = model.clone();
    for k in picks {
        let (path, i) = &scalars[k];
        let analytic = grads.get(vars[path]).map_or(0.0, |g| g.data()[*i]);
        let original = model.params.get(path)?.data()[*i];
        let mut at = |v: f64| -> Result<f64> {
            probe.params.get_mut(path)?.data_mut()[*i] = v;
            let (t, l, _) = loss(&probe, batch, task, &opts)?;
            Ok(t.value(l).data()[0])
        };
        let plus = at(original + config.h)?;
        let minus = at(original - config.h)?;
        probe.params.get_mut(path)?.data_mut()[*i] = original;
        let numeric = (plus - minus) / (2.0 * config.h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(config.floor);
        let e = groups.entry(group_of(path)).or_insert(GroupError {
            max_rel: 0.0,
            checked: 0,
        });
        e.max_rel = e.max_rel.max(rel);
        e.checked += 1;
    }
    let max_rel = groups.values().map(|g| g.max_rel).fold(0.0, f64::max);
    let checked = groups.values().map(|g| g.checked).sum();
    Ok(GradCheckReport {
        groups,
        max_rel,
        checked,
    })
}
