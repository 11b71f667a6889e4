//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no test harness) so the lines always reach the
//! output. Set `COGNISNN_ACCEPTANCE=3,7` to run a subset.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use cognisnn::continual::{
    audit_frozen, calibrated_threshold, critical_path_lwf, task_similarity, vanilla_lwf, ContinualData, LwfConfig,
    Similarity,
};
use cognisnn::experiment::{encode, gate_comparison, rerun, run, synth_tasks, Command, EnergyConstants, Encoding, ExperimentConfig, Relation, RunRequest, SynthSpec};
use cognisnn::net::{conv_path, node_triplet, ForwardOptions, STEM};
use cognisnn::neuron::FireMode;
use cognisnn::topology::{
    edge_betweenness, generate_er, generate_ws, node_betweenness, rank_paths, select_critical_paths, Path,
    PathRanking, DEFAULT_PATH_CAP,
};
use cognisnn::train::{evaluate, fit, gradient_check, Dataset, FreezeMask, GradCheckConfig, TrainConfig};
use cognisnn::{CogniSnn, Gate, ModelConfig, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn random_topology(rng: &mut ChaCha8Rng, max_nodes: usize) -> cognisnn::topology::DagTopology {
    let seed = rng.gen();
    if rng.gen_bool(0.5) {
        generate_er(rng.gen_range(2..=max_nodes), rng.gen_range(0.2..0.8), seed).unwrap()
    } else {
        let n = rng.gen_range(5..=max_nodes.max(5));
        let k = if n > 5 && rng.gen_bool(0.5) { 4 } else { 2 };
        generate_ws(n, k, rng.gen_range(0.0..1.0), seed).unwrap()
    }
}

fn small_model(topo: cognisnn::topology::DagTopology, gate: Gate, seed: u64) -> CogniSnn {
    let cfg = ModelConfig {
        channels: 3,
        time_steps: 2,
        eta: 8,
        gate,
        ..ModelConfig::default()
    };
    let mut m = CogniSnn::new(cfg, topo, seed).unwrap();
    m.add_head(0, 3, seed).unwrap();
    m
}

fn uniform_input(rng: &mut ChaCha8Rng, t: usize, batch: usize) -> Tensor {
    Tensor::from_fn(&[t * batch, 1, 8, 8], |_| rng.gen_range(0.0..1.0))
}

/// Batch-statistics forward pass with binary spikes.
fn train_forward(m: &CogniSnn, x: &Tensor) -> (Tape, cognisnn::net::ForwardTrace) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mask = FreezeMask::none();
    let tr = m
        .forward_trace(&mut tape, xv, &ForwardOptions::training(&mask, FireMode::Spike))
        .unwrap();
    (tape, tr)
}

fn spike_form() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut binary, mut active, mut add_exceeds) = (0, 0, 0);
    for case in 0..200u64 {
        let topo = random_topology(&mut rng, 8);
        let x = uniform_input(&mut rng, 2, 2);
        let or = small_model(topo.clone(), Gate::Or, case);
        let (tape, tr) = train_forward(&or, &x);
        if tr.outputs.values().all(|o| tape.value(*o).is_binary()) {
            binary += 1;
        }
        if tr.outputs.values().any(|o| tape.value(*o).sum() > 0.0) {
            active += 1;
        }
        let add = small_model(topo, Gate::Add, case);
        let (tape, tr) = train_forward(&add, &x);
        if tr.outputs.values().any(|o| tape.value(*o).max_abs() > 1.0) {
            add_exceeds += 1;
        }
    }
    // constructed case: both triplets of a single node copy an all-ones input
    let cfg = ModelConfig {
        channels: 1,
        time_steps: 2,
        eta: 64,
        gate: Gate::Add,
        ..ModelConfig::default()
    };
    let mut m = CogniSnn::new(cfg, cognisnn::topology::DagTopology::chain(1).unwrap(), 0).unwrap();
    m.add_head(0, 2, 0).unwrap();
    for t in [STEM.to_string(), node_triplet(0, 1), node_triplet(0, 2)] {
        m.set_pass_through(&t, 2.2).unwrap();
    }
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::ones(&[2, 1, 4, 4]));
    let tr = m.forward_trace(&mut tape, xv, &ForwardOptions::inference()).unwrap();
    let constructed = tape.value(tr.outputs[&0]).max_abs();
    verdict(
        binary == 200 && constructed > 1.0,
        format!(
            "OR binary in {binary}/200 cases ({active} with spikes); ADD constructed max={constructed}, random ADD cases above 1: {add_exceeds}/200"
        ),
    )
}

fn identity_mapping() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut exact, mut nontrivial) = (0, 0);
    for case in 0..50u64 {
        let topo = random_topology(&mut rng, 8);
        let nodes = topo.node_count();
        let mut m = small_model(topo, Gate::Or, 100 + case);
        m.zero_residual_branches().unwrap();
        let x = uniform_input(&mut rng, 2, 2);
        let (tape, tr) = train_forward(&m, &x);
        let same = (0..nodes).all(|v| {
            let (o, o1) = (tape.value(tr.outputs[&v]), tape.value(tr.o1[&v]));
            o.shape() == o1.shape() && o.data().iter().zip(o1.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        });
        exact += usize::from(same);
        nontrivial += usize::from((0..nodes).any(|v| tape.value(tr.o1[&v]).sum() > 0.0));
    }
    verdict(
        exact == 50,
        format!("output == O1 bit-exactly in {exact}/50 topologies ({nontrivial} with spiking O1)"),
    )
}

/// A chain of OR nodes whose residual branches are silent and whose first
/// triplets pass their input through.
fn identity_chain(depth: usize, drive: f64) -> CogniSnn {
    let cfg = ModelConfig {
        channels: 1,
        time_steps: 4,
        eta: 64,
        ..ModelConfig::default()
    };
    let mut m = CogniSnn::new(cfg, cognisnn::topology::DagTopology::chain(depth).unwrap(), 0).unwrap();
    m.add_head(0, 2, 0).unwrap();
    m.zero_residual_branches().unwrap();
    m.set_pass_through(STEM, drive).unwrap();
    m.set_pass_through("node.0.t1", drive).unwrap();
    for v in 1..depth {
        // edge gains start at sigmoid(0) = 1/2
        m.set_pass_through(&node_triplet(v, 1), 2.0 * drive).unwrap();
    }
    m
}

/// Norms of the smooth-mode loss gradient at the stem output and the stem
/// kernel, with batch statistics as in training.
fn stem_gradient_norms(m: &CogniSnn, x: &Tensor, labels: &[usize]) -> (f64, f64) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mask = FreezeMask::none();
    let tr = m
        .forward_trace(&mut tape, xv, &ForwardOptions::training(&mask, FireMode::Smooth))
        .unwrap();
    let logits = m.logits(&mut tape, &tr, 0).unwrap();
    let loss = tape.cross_entropy(logits, labels).unwrap();
    let g = tape.backward(loss).unwrap();
    let at = |v| g.get(v).map_or(0.0, |t: &Tensor| t.norm());
    (at(tr.stem), at(tr.params[&conv_path(STEM)]))
}

fn depth_robustness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // pass-through chain: the input spike train must arrive at every node
    let x = Tensor::from_fn(&[4, 1, 8, 8], |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
    let m = identity_chain(40, 2.2);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let tr = m.forward_trace(&mut tape, xv, &ForwardOptions::inference()).unwrap();
    let copied = (0..40).filter(|v| tape.value(tr.outputs[v]) == &x).count();

    // identity configuration of initialized chains: residual branches
    // silenced, everything else as initialized, default surrogate
    let in_range = |n: f64| (1e-6..=1e6).contains(&n);
    let (mut gated, mut ok) = (0, true);
    let mut norms = Vec::new();
    for seed in 0..3u64 {
        let cfg = ModelConfig {
            channels: 8,
            time_steps: 4,
            eta: 64,
            ..ModelConfig::default()
        };
        let mut m = CogniSnn::new(cfg, cognisnn::topology::DagTopology::chain(40).unwrap(), seed).unwrap();
        m.add_head(0, 2, seed).unwrap();
        m.zero_residual_branches().unwrap();
        let x = uniform_input(&mut rng, 4, 2);
        let (tape, tr) = train_forward(&m, &x);
        gated += (0..40).filter(|v| tape.value(tr.outputs[v]) == tape.value(tr.o1[v])).count();
        let (s, w) = stem_gradient_norms(&m, &x, &[0, 1]);
        ok &= in_range(s) && in_range(w);
        norms.push(format!("{s:.2e}/{w:.2e}"));
    }
    verdict(
        copied == 40 && gated == 120 && ok,
        format!(
            "pass-through chain copies the input spikes at {copied}/40 nodes; O == O1 at {gated}/120 nodes; \
             smooth-mode |dL/d stem| / |dL/d W_stem| per seed: {}",
            norms.join(", ")
        ),
    )
}

fn gradient_fidelity() -> Verdict {
    let cfg = ModelConfig {
        channels: 8,
        time_steps: 4,
        eta: 4,
        ..ModelConfig::default()
    };
    let mut m = CogniSnn::new(cfg, generate_er(7, 0.5, 0).unwrap(), 0).unwrap();
    m.add_head(0, 3, 0).unwrap();
    let (a, _) = synth_tasks(&SynthSpec::default(), 0).unwrap();
    let data = encode(&a.train, 4, Encoding::Repeat, 0).unwrap().data;
    let batch = data.batch(&[0, 1, 2, 3]).unwrap();
    let report = gradient_check(&m, &batch, 0, &FreezeMask::none(), &GradCheckConfig::default()).unwrap();
    verdict(
        report.checked >= 200 && report.max_rel <= 1e-4,
        format!("{} parameters, max relative error {:.3e}", report.checked, report.max_rel),
    )
}

/// All-pairs betweenness by listing every shortest path explicitly.
fn brute_betweenness(topo: &cognisnn::topology::DagTopology) -> (BTreeMap<usize, f64>, BTreeMap<(usize, usize), f64>) {
    fn walk(topo: &cognisnn::topology::DagTopology, v: usize, t: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if v == t {
            out.push(cur.clone());
            return;
        }
        for w in topo.successors(v) {
            cur.push(w);
            walk(topo, w, t, cur, out);
            cur.pop();
        }
    }
    let n = topo.node_count();
    let mut nodes: BTreeMap<usize, f64> = (0..n).map(|v| (v, 0.0)).collect();
    let mut edges: BTreeMap<(usize, usize), f64> = topo.edges().map(|e| (e, 0.0)).collect();
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let mut all = Vec::new();
            walk(topo, s, t, &mut vec![s], &mut all);
            let Some(shortest) = all.iter().map(Vec::len).min() else {
                continue;
            };
            let best: Vec<&Vec<usize>> = all.iter().filter(|p| p.len() == shortest).collect();
            let share = 1.0 / best.len() as f64;
            for p in best {
                for v in &p[1..p.len() - 1] {
                    *nodes.get_mut(v).unwrap() += share;
                }
                for e in p.windows(2) {
                    *edges.get_mut(&(e[0], e[1])).unwrap() += share;
                }
            }
        }
    }
    (nodes, edges)
}

fn betweenness_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut max_err, mut path_exact, mut paths) = (0.0_f64, true, 0);
    for _ in 0..100 {
        let topo = random_topology(&mut rng, 12);
        let (bn, be) = brute_betweenness(&topo);
        let (nb, eb) = (node_betweenness(&topo), edge_betweenness(&topo));
        for (v, s) in &bn {
            max_err = max_err.max((s - nb[v]).abs());
        }
        for (e, s) in &be {
            max_err = max_err.max((s - eb[e]).abs());
        }
        for (p, score) in rank_paths(&topo, DEFAULT_PATH_CAP).unwrap().entries() {
            let mut sum = 0.0;
            for v in p.nodes() {
                sum += nb[v];
            }
            for e in p.edges() {
                sum += eb[&e];
            }
            path_exact &= sum.to_bits() == score.to_bits();
            paths += 1;
        }
    }
    verdict(
        max_err <= 1e-9 && path_exact,
        format!("max |fast - brute force| = {max_err:.1e} over 100 DAGs; {paths} path scores equal the node+edge sum exactly: {path_exact}"),
    )
}

fn selection_branches() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut correct = 0;
    for _ in 0..100 {
        let m = rng.gen_range(1..20);
        let entries: Vec<(Path, f64)> = (0..m)
            .map(|i| (Path::new(vec![0, i + 1]), rng.gen_range(0.0..100.0)))
            .collect();
        let max = entries.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0.clone();
        let min = entries.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0.clone();
        let ranking = PathRanking::new(entries);
        let hi = select_critical_paths(&ranking, 1, true).unwrap();
        let lo = select_critical_paths(&ranking, 1, false).unwrap();
        correct += usize::from(hi == [max] && lo == [min]);
    }
    verdict(correct == 100, format!("{correct}/100 rankings: similar -> max C_B, dissimilar -> min C_B"))
}

struct ToyRun {
    er: CogniSnn,
    er_accuracy: f64,
    er_epochs: usize,
    chain_accuracy: f64,
    chain_epochs: usize,
    test: Dataset,
}

fn toy_spec() -> SynthSpec {
    SynthSpec {
        noise: 0.8,
        ..SynthSpec::default()
    }
}

fn toy_train(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        epochs: 30,
        seed,
        target_accuracy: Some(0.99),
        ..TrainConfig::default()
    }
}

fn toy_model(topo: cognisnn::topology::DagTopology, seed: u64, classes: usize) -> CogniSnn {
    let cfg = ModelConfig {
        channels: 16,
        time_steps: 4,
        eta: 4,
        ..ModelConfig::default()
    };
    let mut m = CogniSnn::new(cfg, topo, seed).unwrap();
    m.add_head(0, classes, seed).unwrap();
    m
}

/// ER-RGA-7 and the 7-node chain trained under one budget, per seed.
fn toy_runs() -> &'static [ToyRun] {
    static RUNS: OnceLock<Vec<ToyRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let (a, _) = synth_tasks(&toy_spec(), seed).unwrap();
                let train = encode(&a.train, 4, Encoding::Repeat, seed).unwrap().data;
                let test = encode(&a.test, 4, Encoding::Repeat, seed + 1).unwrap().data;
                let mut er = toy_model(generate_er(7, 0.5, seed).unwrap(), seed, 3);
                let er_epochs = fit(&mut er, &train, 0, &toy_train(seed), &FreezeMask::none()).unwrap().len();
                let er_accuracy = evaluate(&er, &test, 0, 64).unwrap().accuracy;
                let mut chain = toy_model(cognisnn::topology::DagTopology::chain(7).unwrap(), seed, 3);
                let chain_epochs = fit(&mut chain, &train, 0, &toy_train(seed), &FreezeMask::none()).unwrap().len();
                let chain_accuracy = evaluate(&chain, &test, 0, 64).unwrap().accuracy;
                ToyRun {
                    er,
                    er_accuracy,
                    er_epochs,
                    chain_accuracy,
                    chain_epochs,
                    test,
                }
            })
            .collect()
    })
}

fn toy_classification() -> Verdict {
    let runs = toy_runs();
    let er_ok = runs.iter().all(|r| r.er_accuracy >= 0.95);
    let chain_not_better = runs.iter().filter(|r| r.chain_accuracy <= r.er_accuracy).count();
    let rows: Vec<String> = runs
        .iter()
        .zip(SEEDS)
        .map(|(r, s)| {
            format!(
                "seed {s}: er {:.4} ({} ep) chain {:.4} ({} ep)",
                r.er_accuracy, r.er_epochs, r.chain_accuracy, r.chain_epochs
            )
        })
        .collect();
    verdict(
        er_ok && chain_not_better >= 3,
        format!("chain <= ER on {chain_not_better}/5 seeds; {}", rows.join("; ")),
    )
}

fn energy_ordering() -> Verdict {
    let mut ok = 0;
    let mut rows = Vec::new();
    for (r, seed) in toy_runs().iter().zip(SEEDS) {
        let batch = r.test.batch(&(0..64).collect::<Vec<_>>()).unwrap();
        let (or, add) = gate_comparison(&r.er, &batch.input, 0, &EnergyConstants::default()).unwrap();
        ok += usize::from(add.accumulate_ops() >= or.accumulate_ops());
        rows.push(format!(
            "seed {seed}: OR {:.0} ADD {:.0} ({:.1} vs {:.1} uJ)",
            or.accumulate_ops(),
            add.accumulate_ops(),
            or.energy_pj * 1e-6,
            add.energy_pj * 1e-6
        ));
    }
    verdict(ok >= 4, format!("ADD >= OR accumulate ops on {ok}/5 seeds; {}", rows.join("; ")))
}

fn continual_spec(relation: Relation) -> SynthSpec {
    SynthSpec {
        train_per_class: 200,
        test_per_class: 100,
        relation,
        ..SynthSpec::default()
    }
}

fn lwf_train(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        epochs: 5,
        seed,
        ..TrainConfig::default()
    }
}

struct ArmResult {
    cp: f64,
    vanilla: f64,
    similar: bool,
    distance: f64,
}

fn continual_direction() -> Verdict {
    let mut near = Vec::new();
    let mut far = Vec::new();
    let mut audits = 0;
    let mut thresholds = Vec::new();
    for seed in SEEDS {
        let enc = |imgs: &cognisnn::experiment::Images, s: u64| encode(imgs, 4, Encoding::Repeat, s).unwrap().data;
        let (a, b_near) = synth_tasks(&continual_spec(Relation::Near), seed).unwrap();
        let (_, b_far) = synth_tasks(&continual_spec(Relation::Far), seed).unwrap();
        let (a_train, a_test) = (enc(&a.train, seed), enc(&a.test, seed + 1));
        let mut old = toy_model(generate_er(7, 0.5, seed).unwrap(), seed, 3);
        let old_cfg = TrainConfig {
            epochs: 10,
            target_accuracy: Some(0.99),
            ..lwf_train(seed)
        };
        fit(&mut old, &a_train, 0, &old_cfg, &FreezeMask::none()).unwrap();

        // the distance scale of this model, from an independent near pair
        let (ca, cb) = synth_tasks(&continual_spec(Relation::Near), seed + 1000).unwrap();
        let d_cal = task_similarity(&old, &enc(&ca.test, seed + 1000), &enc(&cb.train, seed + 1001), 2048).unwrap();
        let threshold = calibrated_threshold(d_cal);
        thresholds.push(threshold);
        let cfg = LwfConfig {
            train: lwf_train(seed),
            threshold,
            ..LwfConfig::default()
        };

        for (b, similarity, out) in [
            (&b_near, Similarity::Similar, &mut near),
            (&b_far, Similarity::Auto, &mut far),
        ] {
            let (b_train, b_test) = (enc(&b.train, seed + 2), enc(&b.test, seed + 3));
            let data = ContinualData {
                old_task: 0,
                old_eval: &a_test,
                new_task: 1,
                new_train: &b_train,
                new_eval: &b_test,
            };
            let cp = critical_path_lwf(&old, &data, 3, similarity, &cfg).unwrap();
            audits += usize::from(audit_frozen(&old, &cp.model, &cp.trainable).is_ok());
            let va = vanilla_lwf(&old, &data, 3, &cfg).unwrap();
            let distance = task_similarity(&old, &a_test, &b_train, cfg.similarity_samples).unwrap();
            out.push(ArmResult {
                cp: cp.report.forgetting(),
                vanilla: va.report.forgetting(),
                similar: cp.report.similar.unwrap(),
                distance,
            });
        }
    }
    let mean = |v: &[ArmResult], f: fn(&ArmResult) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    let (near_cp, near_va) = (mean(&near, |r| r.cp), mean(&near, |r| r.vanilla));
    let (far_cp, far_va) = (mean(&far, |r| r.cp), mean(&far, |r| r.vanilla));
    let far_low = far.iter().filter(|r| !r.similar).count();
    let near_auto_high = near
        .iter()
        .zip(&thresholds)
        .filter(|(r, t)| r.distance < **t)
        .count();
    let pct = |x: f64| 100.0 * x;
    let detail = format!(
        "near: CP {:+.2} vs vanilla {:+.2} points (auto gate would pick high C_B on {near_auto_high}/5); \
         far: CP {:+.2} vs vanilla {:+.2} points, low C_B picked on {far_low}/5; audits {audits}/10; \
         near distances {:?}, far distances {:?}, thresholds {:?}",
        pct(near_cp),
        pct(near_va),
        pct(far_cp),
        pct(far_va),
        near.iter().map(|r| (r.distance * 1e3).round() / 1e3).collect::<Vec<_>>(),
        far.iter().map(|r| (r.distance * 1e3).round() / 1e3).collect::<Vec<_>>(),
        thresholds.iter().map(|t| (t * 1e3).round() / 1e3).collect::<Vec<_>>(),
    );
    verdict(
        near_cp > near_va && far_cp > far_va && far_low == 5 && audits == 10,
        detail,
    )
}

fn reproducibility() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.model.channels = 8;
    cfg.train.epochs = 2;
    cfg.train.lr = 1e-2;
    cfg.data.train_per_class = 40;
    cfg.data.test_per_class = 20;
    cfg.lwf.epochs = 1;
    cfg.gradcheck.samples = 20;
    let mut identical = 0;
    let mut names = Vec::new();
    for command in Command::ALL {
        let first = dir.path().join(command.name());
        let checkpoint = matches!(command, Command::Eval).then(|| dir.path().join("train").join("model.ckpt"));
        let outcome = run(&RunRequest {
            command,
            config: cfg.clone(),
            out_dir: first.clone(),
            checkpoint,
        })
        .unwrap();
        assert!(outcome.failure.is_none(), "{:?}", outcome.failure);
        let check = rerun(&first, &dir.path().join(format!("{}-rerun", command.name()))).unwrap();
        if check.identical() && check.original == check.rerun {
            identical += 1;
        } else {
            names.push(format!("{}: {:?}", command.name(), check.mismatched));
        }
    }
    verdict(
        identical == Command::ALL.len(),
        format!("{identical}/{} commands rerun from their manifest with identical hashes {names:?}", Command::ALL.len()),
    )
}

type Check = fn() -> Verdict;

fn main() -> ExitCode {
    let criteria: [(u32, &str, Check); 10] = [
        (1, "spike-form invariant", spike_form),
        (2, "identity mapping", identity_mapping),
        (3, "depth robustness", depth_robustness),
        (4, "gradient fidelity", gradient_fidelity),
        (5, "betweenness oracle", betweenness_oracle),
        (6, "toy classification", toy_classification),
        (7, "continual learning direction", continual_direction),
        (8, "critical-path branch selection", selection_branches),
        (9, "energy ordering", energy_ordering),
        (10, "reproducibility", reproducibility),
    ];
    let only: Option<Vec<u32>> = std::env::var("COGNISNN_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "{} criterion {id} ({name}): {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
