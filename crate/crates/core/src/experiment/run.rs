//! Subcommand dispatch: each command builds its artifacts in memory, then
//! they are written atomically together with a manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::data::{encode, load_idx, synth_tasks, Relation, TaskImages};
use super::energy::gate_comparison;
use super::manifest::{sha256_hex, write_atomic, InputHash, Manifest, OutputHash, MANIFEST_FILE};
use crate::continual::{
    audit_frozen, calibrated_threshold, critical_path_lwf, task_similarity, vanilla_lwf, ContinualData, Similarity,
};
use crate::error::{Error, Result};
use crate::net::{load_checkpoint, save_checkpoint, CogniSnn, TaskId};
use crate::topology::{edge_betweenness, node_betweenness, rank_paths, select_critical_paths, DagTopology, DEFAULT_PATH_CAP};
use crate::train::{evaluate, fit_observed, gradient_check, Dataset, FreezeMask, LossOutput};

/// The config as run, written by every command.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenerateGraph,
    Train,
    Eval,
    Paths,
    Continual,
    Energy,
    GradCheck,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::GenerateGraph,
        Command::Train,
        Command::Eval,
        Command::Paths,
        Command::Continual,
        Command::Energy,
        Command::GradCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenerateGraph => "generate-graph",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Paths => "paths",
            Command::Continual => "continual",
            Command::Energy => "energy",
            Command::GradCheck => "gradcheck",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown command `{s}`")))
    }
}

#[derive(Clone, Debug)]
pub struct RunRequest {
    pub command: Command,
    pub config: ExperimentConfig,
    /// Must not exist yet or be empty.
    pub out_dir: PathBuf,
    /// Model to start from, for the commands that take one.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    /// Human-readable result lines.
    pub summary: String,
    /// A check that ran to completion but failed, such as a gradient check
    /// above tolerance. Its artifacts and manifest are still written.
    pub failure: Option<Error>,
}

/// Process exit status for an error: 2 config, 3 data, 4 numeric, 1 other.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Capacity { .. } => 2,
        Error::Format { .. } | Error::Io(_) | Error::Dimension { .. } => 3,
        Error::NonFinite { .. } | Error::Numeric(_) => 4,
        Error::Internal(_) => 1,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Dimension { .. } => "dimension",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Capacity { .. } => "capacity",
        Error::Format { .. } => "format",
        Error::Config(_) => "config",
        Error::NonFinite { .. } => "non_finite",
        Error::Numeric(_) => "numeric",
        Error::Internal(_) => "internal",
        Error::Io(_) => "io",
    }
}

/// One line: `error exit=<code> kind=<kind> message=<single-line message>`.
pub fn error_record(err: &Error) -> String {
    let message = err.to_string().replace(['\n', '\r'], " ");
    format!("error exit={} kind={} message={}", exit_code(err), error_kind(err), message)
}

struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    summary: String,
    failure: Option<Error>,
}

impl Artifacts {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            summary: String::new(),
            failure: None,
        }
    }

    fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.summary.push_str(s.as_ref());
        self.summary.push('\n');
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    config_sha256: String,
    checkpoint: Option<Vec<u8>>,
}

impl Context<'_> {
    fn metadata(&self, command: Command, extra: &[(&str, String)]) -> BTreeMap<String, String> {
        let mut m = BTreeMap::from([
            ("command".to_string(), command.name().to_string()),
            ("config_sha256".to_string(), self.config_sha256.clone()),
        ]);
        m.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        m
    }

    fn loaded_model(&self) -> Result<Option<CogniSnn>> {
        self.checkpoint.as_deref().map(|b| load_checkpoint(b).map(|(m, _)| m)).transpose()
    }

    fn require_model(&self, command: Command) -> Result<CogniSnn> {
        self.loaded_model()?
            .ok_or_else(|| Error::invalid(format!("`{}` needs --checkpoint", command.name())))
    }
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::invalid(format!("{} is not a directory", dir.display())));
        }
        if std::fs::read_dir(dir)?.next().is_some() {
            return Err(Error::invalid(format!(
                "output directory {} is not empty; outputs are write-once",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Runs one command and writes its artifacts and manifest under
/// `req.out_dir`. Input files are only read.
pub fn run(req: &RunRequest) -> Result<RunOutcome> {
    req.config.validate()?;
    let config_text = req.config.to_toml()?;
    let checkpoint = req.checkpoint.as_deref().map(std::fs::read).transpose()?;
    let ctx = Context {
        cfg: &req.config,
        config_sha256: sha256_hex(config_text.as_bytes()),
        checkpoint,
    };
    prepare_out_dir(&req.out_dir)?;

    let mut art = match req.command {
        Command::GenerateGraph => generate_graph(&ctx)?,
        Command::Train => train(&ctx)?,
        Command::Eval => eval(&ctx)?,
        Command::Paths => paths(&ctx)?,
        Command::Continual => continual(&ctx)?,
        Command::Energy => energy(&ctx)?,
        Command::GradCheck => gradcheck(&ctx)?,
    };
    art.add(CONFIG_FILE, config_text);
    art.files.sort_by(|a, b| a.0.cmp(&b.0));

    let cfg = &req.config;
    let mut manifest = Manifest {
        command: req.command.name().to_string(),
        config_sha256: ctx.config_sha256.clone(),
        seeds: BTreeMap::from([
            ("data".to_string(), cfg.data.seed),
            ("gradcheck".to_string(), cfg.gradcheck.seed),
            ("model".to_string(), cfg.model.seed),
            ("topology".to_string(), cfg.topology.seed),
            ("train".to_string(), cfg.train.seed),
        ]),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    if let (Some(path), Some(bytes)) = (&req.checkpoint, &ctx.checkpoint) {
        manifest.inputs.push(InputHash {
            role: "checkpoint".into(),
            sha256: sha256_hex(bytes),
            path: path.clone(),
        });
    }
    for (role, path) in data_inputs(cfg) {
        manifest.inputs.push(InputHash {
            role: role.into(),
            sha256: sha256_hex(&std::fs::read(&path)?),
            path,
        });
    }
    for (name, bytes) in &art.files {
        write_atomic(&req.out_dir, name, bytes)?;
        manifest.outputs.push(OutputHash::of(name, bytes));
    }
    write_atomic(&req.out_dir, MANIFEST_FILE, manifest.to_text().as_bytes())?;
    Ok(RunOutcome {
        manifest,
        summary: art.summary,
        failure: art.failure,
    })
}

/// Outputs whose hashes differ between a run and its re-execution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RerunCheck {
    pub original: Manifest,
    pub rerun: Manifest,
    pub mismatched: Vec<String>,
}

impl RerunCheck {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Re-executes the run recorded in `run_dir` into the fresh directory
/// `scratch` and compares output hashes.
pub fn rerun(run_dir: &Path, scratch: &Path) -> Result<RerunCheck> {
    let original = Manifest::read(run_dir)?;
    let text = std::fs::read_to_string(run_dir.join(CONFIG_FILE))?;
    if sha256_hex(text.as_bytes()) != original.config_sha256 {
        return Err(Error::Format {
            offset: 0,
            message: format!("{CONFIG_FILE} does not match the manifest's config hash"),
        });
    }
    let mut checkpoint = None;
    for input in &original.inputs {
        let bytes = std::fs::read(&input.path)?;
        if sha256_hex(&bytes) != input.sha256 {
            return Err(Error::Format {
                offset: 0,
                message: format!("input {} changed since the run", input.path.display()),
            });
        }
        if input.role == "checkpoint" {
            checkpoint = Some(input.path.clone());
        }
    }
    let outcome = run(&RunRequest {
        command: Command::parse(&original.command)?,
        config: ExperimentConfig::from_toml(&text)?,
        out_dir: scratch.to_path_buf(),
        checkpoint,
    })?;
    let rerun = outcome.manifest;
    let before: BTreeMap<&str, &str> = original.outputs.iter().map(|o| (o.name.as_str(), o.blob.as_str())).collect();
    let after: BTreeMap<&str, &str> = rerun.outputs.iter().map(|o| (o.name.as_str(), o.blob.as_str())).collect();
    let names: BTreeSet<&str> = before.keys().chain(after.keys()).copied().collect();
    let mismatched = names
        .into_iter()
        .filter(|k| before.get(k) != after.get(k))
        .map(str::to_string)
        .collect();
    Ok(RerunCheck {
        original,
        rerun,
        mismatched,
    })
}

/// Files named by the config that a run reads.
fn data_inputs(cfg: &ExperimentConfig) -> Vec<(&'static str, PathBuf)> {
    let mut out = Vec::new();
    if cfg.topology.generator == "file" {
        out.extend(cfg.topology.file.clone().map(|p| ("topology", p)));
    }
    if cfg.data.source == "idx" {
        let d = &cfg.data;
        for (role, p) in [
            ("train_images", &d.train_images),
            ("train_labels", &d.train_labels),
            ("test_images", &d.test_images),
            ("test_labels", &d.test_labels),
        ] {
            out.extend(p.clone().map(|p| (role, p)));
        }
    }
    out
}

fn topology(cfg: &ExperimentConfig) -> Result<DagTopology> {
    cfg.topology.build()
}

fn task_images(cfg: &ExperimentConfig) -> Result<(TaskImages, Option<TaskImages>)> {
    let d = &cfg.data;
    match d.source.as_str() {
        "synthetic" => {
            let (a, b) = synth_tasks(&d.synth(), d.seed)?;
            Ok((a, Some(b)))
        }
        _ => {
            let path = |p: &Option<PathBuf>| p.clone().ok_or_else(|| Error::Config("idx paths are required".into()));
            let train = load_idx(&path(&d.train_images)?, &path(&d.train_labels)?)?;
            let test = load_idx(&path(&d.test_images)?, &path(&d.test_labels)?)?;
            Ok((TaskImages { train, test }, None))
        }
    }
}

fn encoded(cfg: &ExperimentConfig, images: &TaskImages, salt: u64) -> Result<(Dataset, Dataset)> {
    let t = cfg.model.time_steps;
    let seed = cfg.data.seed.wrapping_add(salt.wrapping_mul(2));
    let train = encode(&images.train, t, cfg.data.encoding, seed)?.data;
    let test = encode(&images.test, t, cfg.data.encoding, seed.wrapping_add(1))?.data;
    Ok((train, test))
}

/// The first-task train and test sets.
fn first_task(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    encoded(cfg, &task_images(cfg)?.0, 0)
}

fn fresh_model(cfg: &ExperimentConfig, task: TaskId, classes: usize) -> Result<CogniSnn> {
    let mut m = CogniSnn::new(cfg.model.build()?, topology(cfg)?, cfg.model.seed)?;
    m.add_head(task, classes, cfg.model.seed)?;
    Ok(m)
}

/// Trains a fresh model on `train`, recording train and test metrics.
fn train_model(cfg: &ExperimentConfig, task: TaskId, train: &Dataset, test: &Dataset) -> Result<(CogniSnn, String, f64)> {
    let tc = cfg.train.build()?;
    let mut model = fresh_model(cfg, task, train.classes())?;
    let mut metrics = String::new();
    let mut last = 0.0;
    fit_observed(
        &mut model,
        train,
        &tc,
        &FreezeMask::none(),
        |m, tape, trace, batch| {
            let logits = m.logits(tape, trace, task)?;
            Ok(LossOutput {
                loss: tape.cross_entropy(logits, &batch.labels)?,
                logits: Some(logits),
            })
        },
        |m, train_metrics| {
            let mut e = evaluate(m, test, task, tc.batch_size)?;
            e.epoch = train_metrics.epoch;
            e.split = "test".into();
            last = e.accuracy;
            let _ = writeln!(metrics, "{train_metrics}\n{e}");
            Ok(())
        },
    )?;
    Ok((model, metrics, last))
}

fn generate_graph(ctx: &Context) -> Result<Artifacts> {
    let topo = topology(ctx.cfg)?;
    let mut art = Artifacts::new();
    art.line(format!(
        "nodes={} edges={} sources={:?} sinks={:?}",
        topo.node_count(),
        topo.edge_count(),
        topo.sources(),
        topo.sinks()
    ));
    art.add("topology.txt", topo.to_text());
    Ok(art)
}

fn train(ctx: &Context) -> Result<Artifacts> {
    let cfg = ctx.cfg;
    let (train, test) = first_task(cfg)?;
    let (model, metrics, acc) = train_model(cfg, 0, &train, &test)?;
    let mut art = Artifacts::new();
    art.line(format!("test_accuracy={acc:.4}"));
    art.add("topology.txt", model.topology.to_text());
    art.add("metrics.txt", metrics);
    art.add(
        "model.ckpt",
        save_checkpoint(&model, &ctx.metadata(Command::Train, &[("test_accuracy", format!("{acc:?}"))]))?,
    );
    Ok(art)
}

fn eval(ctx: &Context) -> Result<Artifacts> {
    let cfg = ctx.cfg;
    let model = ctx.require_model(Command::Eval)?;
    let (_, test) = first_task(cfg)?;
    let mut e = evaluate(&model, &test, cfg.data.task, cfg.train.batch_size)?;
    e.split = "test".into();
    let mut art = Artifacts::new();
    art.line(format!("test_accuracy={:.4}", e.accuracy));
    art.add("metrics.txt", format!("{e}\n"));
    Ok(art)
}

fn paths(ctx: &Context) -> Result<Artifacts> {
    let cfg = ctx.cfg;
    let topo = match ctx.loaded_model()? {
        Some(m) => m.topology,
        None => topology(cfg)?,
    };
    let ranking = rank_paths(&topo, DEFAULT_PATH_CAP)?;
    let mut centrality = String::from("kind\titem\tscore\n");
    for (v, s) in node_betweenness(&topo) {
        let _ = writeln!(centrality, "node\t{v}\t{s:?}");
    }
    for ((i, j), s) in edge_betweenness(&topo) {
        let _ = writeln!(centrality, "edge\t{i}-{j}\t{s:?}");
    }
    let k = cfg.lwf.paths.min(ranking.len());
    let mut critical = String::new();
    for similar in [true, false] {
        let chosen: Vec<String> = select_critical_paths(&ranking, k, similar)?.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(critical, "similar={similar} paths={}", chosen.join(","));
    }
    let mut art = Artifacts::new();
    art.line(format!("paths={}", ranking.len()));
    art.summary.push_str(&critical);
    art.add("topology.txt", topo.to_text());
    art.add("paths.tsv", ranking.to_text());
    art.add("betweenness.tsv", centrality);
    art.add("critical.txt", critical);
    Ok(art)
}

fn continual(ctx: &Context) -> Result<Artifacts> {
    let cfg = ctx.cfg;
    if cfg.data.source != "synthetic" {
        return Err(Error::Config("continual runs need the synthetic two-task source".into()));
    }
    let (a, b) = task_images(cfg)?;
    let b = b.ok_or_else(|| Error::Internal("synthetic source without a second task".into()))?;
    let (a_train, a_test) = encoded(cfg, &a, 0)?;
    let (b_train, b_test) = encoded(cfg, &b, 1)?;
    let tc = cfg.train.build()?;
    let mut art = Artifacts::new();

    let old = match ctx.loaded_model()? {
        Some(m) => m,
        None => {
            let (m, metrics, acc) = train_model(cfg, 0, &a_train, &a_test)?;
            art.line(format!("old_test_accuracy={acc:.4}"));
            art.add("old_metrics.txt", metrics);
            art.add(
                "old.ckpt",
                save_checkpoint(&m, &ctx.metadata(Command::Continual, &[("role", "old".into())]))?,
            );
            m
        }
    };

    let mut threshold = cfg.lwf.threshold;
    let mut summary = String::new();
    if threshold == 0.0 {
        // an independent near pair fixes the distance scale of this model
        let spec = super::data::SynthSpec {
            relation: Relation::Near,
            ..cfg.data.synth()
        };
        let seed = cfg.data.seed.wrapping_add(1);
        let (ca, cb) = synth_tasks(&spec, seed)?;
        let t = cfg.model.time_steps;
        let ca = encode(&ca.test, t, cfg.data.encoding, seed)?.data;
        let cb = encode(&cb.train, t, cfg.data.encoding, seed.wrapping_add(1))?.data;
        let d = task_similarity(&old, &ca, &cb, cfg.lwf.similarity_samples)?;
        // a model whose features cannot tell the pair apart calls every
        // pair similar
        threshold = calibrated_threshold(d).max(f64::MIN_POSITIVE);
        let _ = writeln!(summary, "calibration_distance={d:?}");
    }
    let _ = writeln!(summary, "threshold={threshold:?}");
    let lwf = cfg.lwf.build(&tc, threshold)?;
    let similarity: Similarity = cfg.lwf.similarity()?;
    let data = ContinualData {
        old_task: 0,
        old_eval: &a_test,
        new_task: 1,
        new_train: &b_train,
        new_eval: &b_test,
    };
    let classes = b_train.classes();
    let cp = critical_path_lwf(&old, &data, classes, similarity, &lwf)?;
    audit_frozen(&old, &cp.model, &cp.trainable)?;
    let va = vanilla_lwf(&old, &data, classes, &lwf)?;
    for (arm, out) in [("critical-path", &cp), ("vanilla", &va)] {
        let r = &out.report;
        let _ = writeln!(
            summary,
            "arm={arm} benchmark={:.4} final_old={:.4} forgetting={:+.4} final_new={:.4}",
            r.benchmark,
            r.final_old_accuracy(),
            r.forgetting(),
            r.final_new_accuracy().unwrap_or(f64::NAN)
        );
    }
    summary.push_str("audit=pass\n");
    art.summary.push_str(&summary);
    art.add("summary.txt", summary);
    art.add("critical.txt", cp.report.to_string());
    art.add("vanilla.txt", va.report.to_string());
    art.add(
        "critical.ckpt",
        save_checkpoint(&cp.model, &ctx.metadata(Command::Continual, &[("role", "critical-path".into())]))?,
    );
    art.add(
        "vanilla.ckpt",
        save_checkpoint(&va.model, &ctx.metadata(Command::Continual, &[("role", "vanilla".into())]))?,
    );
    Ok(art)
}

fn energy(ctx: &Context) -> Result<Artifacts> {
    let cfg = ctx.cfg;
    let (train, test) = first_task(cfg)?;
    let mut art = Artifacts::new();
    let (model, task) = match ctx.loaded_model()? {
        Some(m) => (m, cfg.data.task),
        None => {
            let (m, metrics, _) = train_model(cfg, 0, &train, &test)?;
            art.add("metrics.txt", metrics);
            art.add("model.ckpt", save_checkpoint(&m, &ctx.metadata(Command::Energy, &[]))?);
            (m, 0)
        }
    };
    let n = cfg.energy.samples.min(test.len());
    let batch = test.batch(&(0..n).collect::<Vec<_>>())?;
    let (or, add) = gate_comparison(&model, &batch.input, task, &cfg.energy_constants())?;
    let report = format!(
        "{or}\n{add}\nadd_minus_or_accumulate_ops={}\n",
        add.accumulate_ops() - or.accumulate_ops()
    );
    art.summary.push_str(&report);
    art.add("energy.txt", report);
    Ok(art)
}

fn gradcheck(ctx: &Context) -> Result<Artifacts> {
    let cfg = ctx.cfg;
    let (train, _) = first_task(cfg)?;
    let (model, task) = match ctx.loaded_model()? {
        Some(m) => (m, cfg.data.task),
        None => (fresh_model(cfg, 0, train.classes())?, 0),
    };
    let n = cfg.gradcheck.batch.min(train.len());
    let batch = train.batch(&(0..n).collect::<Vec<_>>())?;
    let report = gradient_check(&model, &batch, task, &FreezeMask::none(), &cfg.gradcheck.build()?)?;
    let mut art = Artifacts::new();
    let text = format!("{report}\ntolerance={:e}\n", cfg.gradcheck.tolerance);
    art.line(format!("checked={} max_rel_err={:.3e}", report.checked, report.max_rel));
    art.add("gradcheck.txt", text);
    if !(report.max_rel <= cfg.gradcheck.tolerance) {
        art.failure = Some(Error::Numeric(format!(
            "gradient check max relative error {:.3e} exceeds {:e}",
            report.max_rel, cfg.gradcheck.tolerance
        )));
    }
    Ok(art)
}
