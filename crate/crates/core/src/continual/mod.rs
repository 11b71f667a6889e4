//! Learning without forgetting (LwF) on a second task, optionally restricted
//! to the parameters of critical source-to-sink paths, with a Fréchet
//! distance gate deciding whether the tasks count as similar.

mod fid;

use std::collections::BTreeSet;
use std::fmt;

use sha2::{Digest, Sha256};

pub use fid::frechet_distance;

use crate::error::{Error, Result};
use crate::net::{
    edge_path, head_bias_path, head_weight_path, node_triplet, triplet_paths, CogniSnn, ForwardOptions, FreezeMask,
    TaskId,
};
use crate::tensor::{softmax, Tape, Tensor, Var};
use crate::topology::{rank_paths, select_critical_paths, Path, DEFAULT_PATH_CAP};
use crate::train::{evaluate, fit_observed, Dataset, LossOutput, TrainConfig};

/// Threshold on the Inception-feature scale, where a known-similar pair of
/// tasks measured 24.5.
pub const REFERENCE_THRESHOLD: f64 = 50.0;
pub const REFERENCE_SIMILAR_FID: f64 = 24.5;

/// Rescales the reference threshold to another feature extractor, given the
/// distance that extractor measures on a known-similar pair of tasks.
pub fn calibrated_threshold(similar_pair_distance: f64) -> f64 {
    similar_pair_distance * REFERENCE_THRESHOLD / REFERENCE_SIMILAR_FID
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LwfConfig {
    /// Weight of the distillation term on the old task.
    pub lambda: f64,
    pub temperature: f64,
    pub train: TrainConfig,
    /// Distances below this mark the tasks as similar.
    pub threshold: f64,
    /// Number of critical paths to retrain.
    pub paths: usize,
    pub path_cap: usize,
    /// Samples per task used to estimate the distance.
    pub similarity_samples: usize,
}

impl Default for LwfConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            temperature: 2.0,
            train: TrainConfig::default(),
            threshold: REFERENCE_THRESHOLD,
            paths: 1,
            path_cap: DEFAULT_PATH_CAP,
            similarity_samples: 2048,
        }
    }
}

impl LwfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be non-negative and finite"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid("distillation temperature must be positive"));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::invalid("similarity threshold must be positive"));
        }
        if self.paths == 0 {
            return Err(Error::invalid("at least one critical path is required"));
        }
        if self.similarity_samples < 2 {
            return Err(Error::invalid("similarity needs at least two samples per task"));
        }
        self.train.check_loop()
    }
}

/// Which branch of critical-path selection to take.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Similarity {
    /// Retrain the highest-betweenness paths.
    Similar,
    /// Retrain the lowest-betweenness paths.
    Dissimilar,
    /// Decide from the feature distance between the two tasks.
    Auto,
}

impl Similarity {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "true" | "similar" => Ok(Similarity::Similar),
            "false" | "dissimilar" => Ok(Similarity::Dissimilar),
            "auto" => Ok(Similarity::Auto),
            _ => Err(Error::invalid(format!("similarity must be true, false or auto, got `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Similarity::Similar => "true",
            Similarity::Dissimilar => "false",
            Similarity::Auto => "auto",
        }
    }
}

/// Old-task logits of the frozen old model on the new-task data, computed
/// once before training. The digest detects any later change.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftTargets {
    logits: Tensor,
    digest: String,
}

fn digest(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for d in t.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl SoftTargets {
    /// `[N, K]` logits in dataset order.
    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Fails if the cached logits no longer match their digest.
    pub fn verify(&self) -> Result<()> {
        if digest(&self.logits) != self.digest {
            return Err(Error::Internal("cached soft targets changed after they were computed".into()));
        }
        Ok(())
    }

    /// Rows for the given dataset positions.
    pub fn rows(&self, indices: &[usize]) -> Result<Tensor> {
        let k = self.logits.shape()[1];
        let n = self.logits.shape()[0];
        let mut out = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            if i >= n {
                return Err(Error::invalid(format!("soft target row {i} out of range for {n} samples")));
            }
            out.extend_from_slice(&self.logits.data()[i * k..][..k]);
        }
        Tensor::new(vec![indices.len(), k], out)
    }
}

/// Logits of `old`'s head for `task` on every sample of `data`, with
/// inference-mode batch norm and hard spikes.
pub fn soft_targets(old: &CogniSnn, task: TaskId, data: &Dataset, batch_size: usize) -> Result<SoftTargets> {
    let k = *old
        .tasks()
        .get(&task)
        .ok_or_else(|| Error::invalid(format!("the old model has no head for task {task}")))?;
    let mut out = Vec::with_capacity(data.len() * k);
    for batch in data.batches(batch_size.max(1))? {
        out.extend_from_slice(old.forward(&batch.input, task)?.data());
    }
    let logits = Tensor::new(vec![data.len(), k], out)?;
    Ok(SoftTargets {
        digest: digest(&logits),
        logits,
    })
}

/// `lambda * L_old + L_new`: cross-entropy on the new labels plus the
/// distillation cross-entropy between the temperature-softened soft targets
/// and the softened current old-task logits. Weight decay is left to the
/// optimizer.
pub fn lwf_loss(
    tape: &mut Tape,
    new_logits: Var,
    labels: &[usize],
    old_logits: Var,
    targets: &Tensor,
    lambda: f64,
    temperature: f64,
) -> Result<Var> {
    let new = tape.cross_entropy(new_logits, labels)?;
    if lambda == 0.0 {
        return Ok(new);
    }
    let p = softmax(targets, temperature)?;
    let old = tape.soft_cross_entropy(old_logits, &p, temperature)?;
    let old = tape.scale(old, lambda);
    tape.add(old, new)
}

/// Time-averaged pooled sink features of up to `limit` samples, in
/// inference mode.
pub fn sink_features(model: &CogniSnn, data: &Dataset, batch_size: usize, limit: usize) -> Result<Vec<Vec<f64>>> {
    let n = data.len().min(limit);
    let idx: Vec<usize> = (0..n).collect();
    let mut rows = Vec::with_capacity(n);
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.input);
        let trace = model.forward_trace(&mut tape, x, &ForwardOptions::inference())?;
        let f = tape.value(trace.features);
        let c = f.shape()[1];
        rows.extend(f.data().chunks(c).map(<[f64]>::to_vec));
    }
    Ok(rows)
}

/// Fréchet distance between the sink features `model` extracts from two
/// datasets.
pub fn task_similarity(model: &CogniSnn, a: &Dataset, b: &Dataset, limit: usize) -> Result<f64> {
    let bs = 64;
    frechet_distance(&sink_features(model, a, bs, limit)?, &sink_features(model, b, bs, limit)?)
}

/// Parameters of a set of paths: both triplets of every node on a path and
/// the gains of the edges along it.
pub fn critical_parameters(paths: &[Path]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for p in paths {
        for &v in p.nodes() {
            for which in [1, 2] {
                out.extend(triplet_paths(&node_triplet(v, which)));
            }
        }
        out.extend(p.edges().into_iter().map(edge_path));
    }
    out
}

/// The datasets of a two-task run.
#[derive(Clone, Copy, Debug)]
pub struct ContinualData<'a> {
    pub old_task: TaskId,
    /// Held-out old-task data, used for the forgetting measurement and the
    /// similarity gate.
    pub old_eval: &'a Dataset,
    pub new_task: TaskId,
    pub new_train: &'a Dataset,
    pub new_eval: &'a Dataset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinualEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub new_accuracy: f64,
    pub old_accuracy: f64,
}

/// Per-epoch accuracies on both tasks against the old model's benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinualReport {
    pub method: String,
    /// Old-task accuracy of the old model.
    pub benchmark: f64,
    pub similar: Option<bool>,
    pub distance: Option<f64>,
    pub paths: Vec<Path>,
    pub epochs: Vec<ContinualEpoch>,
}

impl ContinualReport {
    /// Old-task accuracy at the end of the run.
    pub fn final_old_accuracy(&self) -> f64 {
        self.epochs.last().map_or(self.benchmark, |e| e.old_accuracy)
    }

    pub fn final_new_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.new_accuracy)
    }

    /// Change in old-task accuracy; negative means forgetting.
    pub fn forgetting(&self) -> f64 {
        self.final_old_accuracy() - self.benchmark
    }
}

impl fmt::Display for ContinualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "method={} benchmark={:.4}", self.method, self.benchmark)?;
        if let Some(s) = self.similar {
            write!(f, " similar={s}")?;
        }
        if let Some(d) = self.distance {
            write!(f, " distance={d:.6}")?;
        }
        if !self.paths.is_empty() {
            let p: Vec<String> = self.paths.iter().map(Path::to_string).collect();
            write!(f, " paths={}", p.join(","))?;
        }
        writeln!(f)?;
        writeln!(f, "epoch\tloss\ttarget\tsource\tdelta")?;
        for e in &self.epochs {
            writeln!(
                f,
                "{}\t{:.6}\t{:.4}\t{:.4}\t{:+.4}",
                e.epoch,
                e.loss,
                e.new_accuracy,
                e.old_accuracy,
                e.old_accuracy - self.benchmark
            )?;
        }
        Ok(())
    }
}

/// The model after the second task, with heads for both.
#[derive(Clone, Debug)]
pub struct ContinualOutcome {
    pub model: CogniSnn,
    pub report: ContinualReport,
    /// Parameters the run was allowed to change.
    pub trainable: BTreeSet<String>,
}

fn head_paths(task: TaskId) -> [String; 2] {
    [head_weight_path(task), head_bias_path(task)]
}

/// Trains a copy of `old` on the new task with the LwF loss, changing only
/// `trainable` (plus the new head) when given.
fn run_lwf(
    old: &CogniSnn,
    data: &ContinualData,
    new_classes: usize,
    config: &LwfConfig,
    trainable: Option<BTreeSet<String>>,
    mut report: ContinualReport,
) -> Result<ContinualOutcome> {
    let bs = config.train.batch_size;
    let targets = soft_targets(old, data.old_task, data.new_train, bs)?;
    report.benchmark = evaluate(old, data.old_eval, data.old_task, bs)?.accuracy;
    let mut model = old.clone();
    model.add_head(data.new_task, new_classes, config.train.seed ^ 0x6e65_775f_6865_6164)?;
    let (mask, trainable) = match trainable {
        Some(mut set) => {
            set.extend(head_paths(data.new_task));
            (FreezeMask::all_except(&model.params, &set), set)
        }
        None => (FreezeMask::none(), model.params.paths().cloned().collect()),
    };
    let (old_task, new_task) = (data.old_task, data.new_task);
    let (lambda, temperature) = (config.lambda, config.temperature);
    let mut epochs = Vec::new();
    fit_observed(
        &mut model,
        data.new_train,
        &config.train,
        &mask,
        |m, tape, trace, batch| {
            let new_logits = m.logits(tape, trace, new_task)?;
            let old_logits = m.logits(tape, trace, old_task)?;
            let y_o = targets.rows(&batch.indices)?;
            let loss = lwf_loss(tape, new_logits, &batch.labels, old_logits, &y_o, lambda, temperature)?;
            Ok(LossOutput {
                loss,
                logits: Some(new_logits),
            })
        },
        |m, metrics| {
            targets.verify()?;
            epochs.push(ContinualEpoch {
                epoch: metrics.epoch,
                loss: metrics.loss,
                new_accuracy: evaluate(m, data.new_eval, new_task, bs)?.accuracy,
                old_accuracy: evaluate(m, data.old_eval, old_task, bs)?.accuracy,
            });
            Ok(())
        },
    )?;
    report.epochs = epochs;
    Ok(ContinualOutcome {
        model,
        report,
        trainable,
    })
}

fn check_tasks(old: &CogniSnn, data: &ContinualData, new_classes: usize, config: &LwfConfig) -> Result<()> {
    config.validate()?;
    if new_classes == 0 {
        return Err(Error::invalid("the new head needs at least one class"));
    }
    let tasks = old.tasks();
    if !tasks.contains_key(&data.old_task) {
        return Err(Error::invalid(format!("the old model has no head for task {}", data.old_task)));
    }
    if tasks.contains_key(&data.new_task) {
        return Err(Error::invalid(format!("task {} is already registered", data.new_task)));
    }
    if data.new_train.is_empty() {
        return Err(Error::invalid("the new task has no training data"));
    }
    Ok(())
}

/// LwF restricted to critical paths: only the parameters of the selected
/// paths and the new head are trained.
pub fn critical_path_lwf(
    old: &CogniSnn,
    data: &ContinualData,
    new_classes: usize,
    similarity: Similarity,
    config: &LwfConfig,
) -> Result<ContinualOutcome> {
    check_tasks(old, data, new_classes, config)?;
    let ranking = rank_paths(&old.topology, config.path_cap)?;
    let (similar, distance) = match similarity {
        Similarity::Similar => (true, None),
        Similarity::Dissimilar => (false, None),
        Similarity::Auto => {
            let d = task_similarity(old, data.old_eval, data.new_train, config.similarity_samples)?;
            (d < config.threshold, Some(d))
        }
    };
    let paths = select_critical_paths(&ranking, config.paths, similar)?;
    let report = ContinualReport {
        method: "critical-path-lwf".into(),
        benchmark: 0.0,
        similar: Some(similar),
        distance,
        paths: paths.clone(),
        epochs: Vec::new(),
    };
    run_lwf(old, data, new_classes, config, Some(critical_parameters(&paths)), report)
}

/// LwF with every parameter trainable.
pub fn vanilla_lwf(old: &CogniSnn, data: &ContinualData, new_classes: usize, config: &LwfConfig) -> Result<ContinualOutcome> {
    check_tasks(old, data, new_classes, config)?;
    let report = ContinualReport {
        method: "vanilla-lwf".into(),
        benchmark: 0.0,
        similar: None,
        distance: None,
        paths: Vec::new(),
        epochs: Vec::new(),
    };
    run_lwf(old, data, new_classes, config, None, report)
}

/// Checks that every parameter outside `trainable`, and the running
/// statistics of every triplet with no trainable parameter, are bit-identical
/// between `old` and `new`.
pub fn audit_frozen(old: &CogniSnn, new: &CogniSnn, trainable: &BTreeSet<String>) -> Result<()> {
    for (path, before) in old.params.values() {
        if trainable.contains(path) {
            continue;
        }
        let after = new.params.get(path)?;
        let same = before.shape() == after.shape()
            && before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(Error::Internal(format!("frozen parameter `{path}` changed")));
        }
    }
    for (triplet, before) in old.params.all_stats() {
        if triplet_paths(triplet).iter().any(|p| trainable.contains(p)) {
            continue;
        }
        let after = new.params.stats(triplet)?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&before.mean) != bits(&after.mean) || bits(&before.var) != bits(&after.var) {
            return Err(Error::Internal(format!("running statistics of frozen `{triplet}` changed")));
        }
    }
    Ok(())
}
