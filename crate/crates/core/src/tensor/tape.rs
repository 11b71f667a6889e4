//! Reverse-mode differentiation over an explicitly recorded computation.
//!
//! Every operation appends a node to the [`Tape`]; a node only ever refers to
//! nodes recorded before it, so the record is acyclic by construction and
//! reverse insertion order is a valid topological order for [`Tape::backward`].

use super::kernels::{self, BnCache, RunningStats};
use super::Tensor;
use crate::error::{Error, Result};
use crate::neuron::Surrogate;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, stride: usize, padding: usize },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, cache: BnCache },
    BatchNormEval { x: Var, gamma: Var, beta: Var, stats: RunningStats, eps: f64, xhat: Tensor },
    AvgPool { x: Var, kernel: usize },
    GlobalAvgPool { x: Var },
    Linear { x: Var, w: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    ScaleBy { s: Var, x: Var },
    Sigmoid { x: Var },
    Charge { v: Var, c: Var, tau: f64 },
    Fire { h: Var, threshold: f64, surrogate: Surrogate },
    SoftReset { h: Var, s: Var, threshold: f64 },
    SliceRows { x: Var, start: usize },
    ConcatRows { parts: Vec<Var> },
    GroupMean { x: Var, groups: usize },
    Sum { x: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
    SoftCrossEntropy { logits: Var, targets: Tensor, temperature: f64, probs: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`, if `var` influences it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// A recorded computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-wise softmax of `[R, K]` logits scaled by `1/temperature`.
fn softmax_rows(logits: &Tensor, temperature: f64) -> Result<(usize, usize, Tensor)> {
    let (rows, k) = match *logits.shape() {
        [k] => (1, k),
        [r, k] => (r, k),
        _ => return Err(Error::dim("softmax", format!("{:?}", logits.shape()))),
    };
    let mut p = vec![0.0; rows * k];
    for r in 0..rows {
        let z = &logits.data()[r * k..][..k];
        let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
        let mut s = 0.0;
        for i in 0..k {
            let e = (z[i] / temperature - m).exp();
            p[r * k + i] = e;
            s += e;
        }
        for v in &mut p[r * k..][..k] {
            *v /= s;
        }
    }
    Ok((rows, k, Tensor::new(vec![rows, k], p)?))
}

/// Row-wise softmax of `[R, K]` (or `[K]`) logits at `temperature`.
pub fn softmax(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    softmax_rows(logits, temperature).map(|(_, _, p)| p)
}

/// Log-softmax of one row at temperature 1, computed stably.
fn log_softmax_row(z: &[f64], temperature: f64) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
    let lse = z.iter().map(|v| (v / temperature - m).exp()).sum::<f64>().ln() + m;
    z.iter().map(|v| v / temperature - lse).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = kernels::conv2d(self.value(x), self.value(w), stride, padding)?;
        Ok(self.push(y, Op::Conv2d { x, w, stride, padding }, &[x, w]))
    }

    /// Training-mode batch norm. Returns the output and the batch
    /// (mean, biased variance, element count) for running-statistics updates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>, usize)> {
        let (y, cache) =
            kernels::bn_train_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let (mean, var, count) = (cache.mean.clone(), cache.var.clone(), cache.count);
        let v = self.push(y, Op::BatchNormTrain { x, gamma, beta, cache }, &[x, gamma, beta]);
        Ok((v, mean, var, count))
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats,
        eps: f64,
    ) -> Result<Var> {
        let (y, xhat) =
            kernels::bn_eval_forward(self.value(x), self.value(gamma), self.value(beta), stats, eps)?;
        Ok(self.push(
            y,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                stats: stats.clone(),
                eps,
                xhat,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn avg_pool(&mut self, x: Var, kernel: usize) -> Result<Var> {
        if kernel == 1 {
            return Ok(x);
        }
        let y = kernels::avg_pool(self.value(x), kernel)?;
        Ok(self.push(y, Op::AvgPool { x, kernel }, &[x]))
    }

    /// Spatial mean: `[N,C,H,W]` to `[N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [n, c, h, w] = t.dims4("global_avg_pool")?;
        let hw = h * w;
        let data: Vec<f64> = t
            .data()
            .chunks(hw.max(1))
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let y = Tensor::new(vec![n, c], data)?;
        Ok(self.push(y, Op::GlobalAvgPool { x }, &[x]))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = kernels::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(y, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        Ok(self.push(y, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        Ok(self.push(y, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale { x, factor }, &[x])
    }

    /// Multiplies every element of `x` by the single-element `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim("scale_by", "scale must hold one element"));
        }
        let f = self.value(s).data()[0];
        let y = self.value(x).map(|v| f * v);
        Ok(self.push(y, Op::ScaleBy { s, x }, &[s, x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid { x }, &[x])
    }

    /// Leaky charging `v + (c - v) / tau`.
    pub fn charge(&mut self, v: Var, c: Var, tau: f64) -> Result<Var> {
        let y = self.value(v).zip_map(self.value(c), |v, c| v + (c - v) / tau)?;
        Ok(self.push(y, Op::Charge { v, c, tau }, &[v, c]))
    }

    /// Threshold firing. The forward value is the Heaviside step, or the
    /// surrogate's smooth primitive when `smooth` is set; the backward rule is
    /// always the surrogate derivative.
    pub fn fire(&mut self, h: Var, threshold: f64, surrogate: Surrogate, smooth: bool) -> Var {
        let y = if smooth {
            self.value(h).map(|v| surrogate.primitive(v - threshold))
        } else {
            self.value(h).map(|v| if v >= threshold { 1.0 } else { 0.0 })
        };
        self.push(
            y,
            Op::Fire {
                h,
                threshold,
                surrogate,
            },
            &[h],
        )
    }

    /// Soft reset `h - threshold * s`.
    pub fn soft_reset(&mut self, h: Var, s: Var, threshold: f64) -> Result<Var> {
        let y = self.value(h).zip_map(self.value(s), |h, s| h - threshold * s)?;
        Ok(self.push(y, Op::SoftReset { h, s, threshold }, &[h, s]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = self.value(x).slice_rows(start, len)?;
        Ok(self.push(y, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let y = Tensor::concat_rows(&values)?;
        Ok(self.push(
            y,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Averages `groups` consecutive blocks of rows: `[G*B, ...]` to `[B, ...]`.
    pub fn group_mean(&mut self, x: Var, groups: usize) -> Result<Var> {
        let t = self.value(x);
        let rows = *t.shape().first().unwrap_or(&0);
        if groups == 0 || rows % groups != 0 {
            return Err(Error::dim(
                "group_mean",
                format!("{rows} rows not divisible into {groups} groups"),
            ));
        }
        let block = t.len() / groups;
        let mut data = vec![0.0; block];
        for g in 0..groups {
            for (d, v) in data.iter_mut().zip(&t.data()[g * block..][..block]) {
                *d += v;
            }
        }
        for d in data.iter_mut() {
            *d /= groups as f64;
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows / groups;
        let y = Tensor::new(shape, data)?;
        Ok(self.push(y, Op::GroupMean { x, groups }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x }, &[x])
    }

    /// Mean softmax cross-entropy of `[B, K]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, k, probs) = softmax_rows(self.value(logits), 1.0)?;
        if labels.len() != rows {
            return Err(Error::dim(
                "cross_entropy",
                format!("{rows} rows but {} labels", labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} outside 0..{k}")));
        }
        let z = self.value(logits).data();
        let mut loss = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            loss -= log_softmax_row(&z[r * k..][..k], 1.0)[l];
        }
        let y = Tensor::scalar(loss / rows as f64);
        Ok(self.push(
            y,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean cross-entropy between fixed target distributions and the
    /// temperature-softened softmax of `logits`.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: &Tensor, temperature: f64) -> Result<Var> {
        let (rows, k, probs) = softmax_rows(self.value(logits), temperature)?;
        if targets.len() != rows * k {
            return Err(Error::dim(
                "soft_cross_entropy",
                format!("targets {:?} vs logits [{rows}, {k}]", targets.shape()),
            ));
        }
        let z = self.value(logits).data();
        let mut loss = 0.0;
        for r in 0..rows {
            let ls = log_softmax_row(&z[r * k..][..k], temperature);
            for i in 0..k {
                loss -= targets.data()[r * k + i] * ls[i];
            }
        }
        let y = Tensor::scalar(loss / rows as f64);
        Ok(self.push(
            y,
            Op::SoftCrossEntropy {
                logits,
                targets: targets.clone(),
                temperature,
                probs,
            },
            &[logits],
        ))
    }

    /// Gradients of the scalar `root` with respect to every recorded node
    /// that requires one.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            for (parent, pg) in self.local_grads(idx, &g)? {
                if parent.0 >= idx {
                    return Err(Error::Internal(format!(
                        "node {idx} refers forward to node {}",
                        parent.0
                    )));
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        // intermediate gradients are kept; callers pick out the leaves they need
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Vector-Jacobian products of node `idx` for each parent needing a gradient.
    fn local_grads(&self, idx: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, stride, padding } => {
                let (gx, gw) = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *padding,
                    self.wants(*x),
                )?;
                if let Some(gx) = gx {
                    out.push((*x, gx));
                }
                if self.wants(*w) {
                    out.push((*w, gw));
                }
            }
            Op::BatchNormTrain { x, gamma, beta, cache } => {
                let (gx, gg, gb) = kernels::bn_train_backward(self.value(*gamma), cache, g)?;
                self.push_wanted(&mut out, &[(*x, gx), (*gamma, gg), (*beta, gb)]);
            }
            Op::BatchNormEval { x, gamma, beta, stats, eps, xhat } => {
                let (gx, gg, gb) =
                    kernels::bn_eval_backward(self.value(*gamma), stats, *eps, xhat, g)?;
                self.push_wanted(&mut out, &[(*x, gx), (*gamma, gg), (*beta, gb)]);
            }
            Op::AvgPool { x, kernel } => {
                let gx = kernels::avg_pool_backward(self.value(*x).shape(), g, *kernel)?;
                out.push((*x, gx));
            }
            Op::GlobalAvgPool { x } => {
                let xs = self.value(*x).shape();
                let hw: usize = xs[xs.len() - 2..].iter().product();
                let mut d = Vec::with_capacity(hw * g.len());
                for &v in g.data() {
                    d.extend(std::iter::repeat(v / hw as f64).take(hw));
                }
                out.push((*x, Tensor::new(xs.to_vec(), d)?));
            }
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = kernels::linear_backward(self.value(*x), self.value(*w), g)?;
                self.push_wanted(&mut out, &[(*x, gx), (*w, gw), (*b, gb)]);
            }
            Op::Add { a, b } => {
                self.push_wanted(&mut out, &[(*a, g.clone()), (*b, g.clone())]);
            }
            Op::Sub { a, b } => {
                self.push_wanted(&mut out, &[(*a, g.clone()), (*b, g.map(|v| -v))]);
            }
            Op::Mul { a, b } => {
                let ga = g.zip_map(self.value(*b), |g, v| g * v)?;
                let gb = g.zip_map(self.value(*a), |g, v| g * v)?;
                self.push_wanted(&mut out, &[(*a, ga), (*b, gb)]);
            }
            Op::Scale { x, factor } => out.push((*x, g.map(|v| v * factor))),
            Op::ScaleBy { s, x } => {
                let f = self.value(*s).data()[0];
                if self.wants(*s) {
                    let gs: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(a, b)| a * b)
                        .sum();
                    out.push((*s, Tensor::new(self.value(*s).shape().to_vec(), vec![gs])?));
                }
                if self.wants(*x) {
                    out.push((*x, g.map(|v| v * f)));
                }
            }
            Op::Sigmoid { x } => {
                let gx = g.zip_map(&node.value, |g, y| g * y * (1.0 - y))?;
                out.push((*x, gx));
            }
            Op::Charge { v, c, tau } => {
                let keep = 1.0 - 1.0 / tau;
                self.push_wanted(&mut out, &[(*v, g.map(|x| x * keep)), (*c, g.map(|x| x / tau))]);
            }
            Op::Fire {
                h,
                threshold,
                surrogate,
            } => {
                let gh = g.zip_map(self.value(*h), |g, h| g * surrogate.derivative(h - threshold))?;
                out.push((*h, gh));
            }
            Op::SoftReset { h, s, threshold } => {
                self.push_wanted(&mut out, &[(*h, g.clone()), (*s, g.map(|v| -threshold * v))]);
            }
            Op::SliceRows { x, start } => {
                let xs = self.value(*x);
                let rows = xs.shape()[0];
                let stride = xs.len() / rows.max(1);
                let mut d = vec![0.0; xs.len()];
                d[start * stride..][..g.len()].copy_from_slice(g.data());
                out.push((*x, Tensor::new(xs.shape().to_vec(), d)?));
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    if self.wants(*p) {
                        let piece = Tensor::new(pv.shape().to_vec(), g.data()[offset..][..pv.len()].to_vec())?;
                        out.push((*p, piece));
                    }
                    offset += pv.len();
                }
            }
            Op::GroupMean { x, groups } => {
                let xs = self.value(*x);
                let mut d = Vec::with_capacity(xs.len());
                for _ in 0..*groups {
                    d.extend(g.data().iter().map(|v| v / *groups as f64));
                }
                out.push((*x, Tensor::new(xs.shape().to_vec(), d)?));
            }
            Op::Sum { x } => {
                let gv = g.data()[0];
                out.push((*x, Tensor::full(self.value(*x).shape(), gv)));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = probs.shape()[1];
                let rows = labels.len() as f64;
                let scale = g.data()[0] / rows;
                let mut d = probs.data().to_vec();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * k + l] -= 1.0;
                }
                for v in d.iter_mut() {
                    *v *= scale;
                }
                out.push((*logits, Tensor::new(self.value(*logits).shape().to_vec(), d)?));
            }
            Op::SoftCrossEntropy {
                logits,
                targets,
                temperature,
                probs,
            } => {
                let rows = probs.shape()[0] as f64;
                let scale = g.data()[0] / (rows * temperature);
                let d: Vec<f64> = probs
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(p, q)| (p - q) * scale)
                    .collect();
                out.push((*logits, Tensor::new(self.value(*logits).shape().to_vec(), d)?));
            }
        }
        Ok(out)
    }

    fn push_wanted(&self, out: &mut Vec<(Var, Tensor)>, items: &[(Var, Tensor)]) {
        for (v, t) in items {
            if self.wants(*v) {
                out.push((*v, t.clone()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::SurrogateKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference check of d(sum(f(leaves)))/d(leaf) for every leaf element.
    fn fd_check(leaves: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Var, tol: f64) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
        let out = f(&mut tape, &vars);
        let root = tape.sum(out);
        let grads = tape.backward(root).unwrap();
        let h = 1e-4;
        let eval = |ls: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ls.iter().map(|l| t.leaf(l.clone())).collect();
            let o = f(&mut t, &vs);
            t.value(o).sum()
        };
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(vars[li]).expect("leaf gradient");
            for i in 0..leaf.len() {
                let mut plus = leaves.clone();
                plus[li].data_mut()[i] += h;
                let mut minus = leaves.clone();
                minus[li].data_mut()[i] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel < tol, "leaf {li} elem {i}: analytic {a} fd {fd}");
            }
        }
    }

    #[test]
    fn sum_of_leaf_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.leaf(Tensor::scalar(3.0));
        let p = tape.mul(x, y).unwrap();
        let g = tape.backward(p).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0]);
        assert_eq!(g.get(y).unwrap().data(), &[2.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[3]));
        let w = tape.leaf(Tensor::scalar(0.5));
        let y = tape.scale_by(w, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[3.0]);
    }

    #[test]
    fn conv_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        fd_check(
            vec![random(&[2, 2, 5, 5], &mut rng), random(&[3, 2, 3, 3], &mut rng)],
            |t, v| t.conv2d(v[0], v[1], 1, 1).unwrap(),
            1e-6,
        );
        fd_check(
            vec![random(&[1, 2, 6, 6], &mut rng), random(&[2, 2, 3, 3], &mut rng)],
            |t, v| t.conv2d(v[0], v[1], 2, 1).unwrap(),
            1e-6,
        );
    }

    #[test]
    fn batch_norm_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = random(&[3, 2, 3, 3], &mut rng);
        let gamma = random(&[2], &mut rng);
        let beta = random(&[2], &mut rng);
        // a weighted sum so the gradient wrt x is not identically zero
        let wts = random(&[3, 2, 3, 3], &mut rng);
        fd_check(
            vec![x.clone(), gamma.clone(), beta.clone()],
            |t, v| {
                let (y, ..) = t.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap();
                let c = t.constant(wts.clone());
                t.mul(y, c).unwrap()
            },
            1e-5,
        );
        let mut stats = RunningStats::new(2);
        stats.mean = vec![0.3, -0.2];
        stats.var = vec![0.5, 2.0];
        fd_check(
            vec![x, gamma, beta],
            |t, v| {
                let y = t.batch_norm_eval(v[0], v[1], v[2], &stats, 1e-5).unwrap();
                let c = t.constant(wts.clone());
                t.mul(y, c).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn elementwise_and_reduction_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random(&[4, 2, 2, 2], &mut rng);
        let b = random(&[4, 2, 2, 2], &mut rng);
        let s = random(&[1], &mut rng);
        fd_check(
            vec![a, b, s],
            |t, v| {
                let m = t.mul(v[0], v[1]).unwrap();
                let d = t.sub(m, v[1]).unwrap();
                let sg = t.sigmoid(v[2]);
                let sc = t.scale_by(sg, d).unwrap();
                let p = t.avg_pool(sc, 2).unwrap();
                let sl = t.slice_rows(p, 1, 2).unwrap();
                let cat = t.concat_rows(&[sl, p]).unwrap();
                let gp = t.global_avg_pool(cat).unwrap();
                let gm = t.group_mean(gp, 2).unwrap();
                t.scale(gm, 1.7)
            },
            1e-6,
        );
    }

    #[test]
    fn neuron_ops_gradients_match_fd_in_smooth_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for kind in [SurrogateKind::Arctan, SurrogateKind::Rectangular] {
            let sur = Surrogate { kind, width: 2.0 };
            fd_check(
                vec![random(&[6], &mut rng), random(&[6], &mut rng).map(|v| 2.0 * v + 1.0)],
                |t, v| {
                    let h = t.charge(v[0], v[1], 2.0).unwrap();
                    let s = t.fire(h, 1.0, sur, true);
                    let r = t.soft_reset(h, s, 1.0).unwrap();
                    t.add(r, s).unwrap()
                },
                1e-6,
            );
        }
    }

    #[test]
    fn loss_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let x = random(&[3, 4], &mut rng);
        let w = random(&[5, 4], &mut rng);
        let b = random(&[5], &mut rng);
        fd_check(
            vec![x.clone(), w.clone(), b.clone()],
            |t, v| {
                let z = t.linear(v[0], v[1], v[2]).unwrap();
                t.cross_entropy(z, &[0, 4, 2]).unwrap()
            },
            1e-6,
        );
        let targets = Tensor::from_fn(&[3, 5], |i| [0.1, 0.2, 0.3, 0.25, 0.15][i % 5]);
        fd_check(
            vec![x, w, b],
            |t, v| {
                let z = t.linear(v[0], v[1], v[2]).unwrap();
                t.soft_cross_entropy(z, &targets, 2.0).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let x = random(&[2, 2, 4, 4], &mut rng);
        let w = random(&[2, 2, 3, 3], &mut rng);
        let run = || {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let wv = t.leaf(w.clone());
            let y = t.conv2d(xv, wv, 1, 1).unwrap();
            let g = t.constant(Tensor::ones(&[2]));
            let b = t.constant(Tensor::zeros(&[2]));
            let (y, ..) = t.batch_norm_train(y, g, b, 1e-5).unwrap();
            let y = t.mul(y, y).unwrap();
            let s = t.sum(y);
            let g = t.backward(s).unwrap();
            (g.get(xv).unwrap().clone(), g.get(wv).unwrap().clone())
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        assert_eq!(
            a1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            a2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(b1, b2);
    }
}
