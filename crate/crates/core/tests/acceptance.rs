//! Acceptance criteria 1–10. Every criterion prints one PASS/FAIL line on
//! stdout; the test fails if any criterion fails.
//!
//! Trained runs use hidden size 32 and 30 relationship epochs so the whole
//! suite fits on one core in a few minutes.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use affordance_core::dataset::synth::{self, generate, SynthConfig};
use affordance_core::dataset::Dataset;
use affordance_core::decoder::{tokenize, Decoder, Vocabulary};
use affordance_core::ggnn::{
    predict_relationships, relationship_loss, GgnnDims, InputMask, NodeInput, RelationHead, SceneInputs, Trunk,
};
use affordance_core::graph::{make_variant, BoundingBox, Node, SceneGraph, Topology};
use affordance_core::harness::{
    evaluate, evaluate_kb, evaluate_predictions, prepare_all, train, AffordanceModel, EvalReport, Regime, RunConfig,
    SplitName, Task,
};
use affordance_core::labels::{Action, Relationship};
use affordance_core::metrics::{bleu4, mean_accuracy, multi_reference_average, rouge_l, AccuracyMode, CiderCorpus};
use affordance_core::numeric::{adam_step, gradient_check, rng::seeded, AdamConfig, ParamStore};

const SEEDS: [u64; 3] = [0, 1, 2];
const HIDDEN: usize = 32;
const FRACTIONS: [f64; 3] = [0.7, 0.15, 0.15];

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

fn report(n: usize, name: &str, elapsed: Duration, v: &Verdict) {
    let status = if v.pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "criterion {n:>2} {status} [{name}] ({:.1}s) {}",
        elapsed.as_secs_f64(),
        v.detail
    );
}

fn check(n: usize, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    report(n, name, start.elapsed(), &v);
    v.pass
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn dataset(config: &SynthConfig, seed: u64) -> Dataset {
    let mut data = generate(config, seed).expect("generate");
    data.assign_split(FRACTIONS, seed).expect("split");
    data
}

fn sit_config(seed: u64) -> RunConfig {
    RunConfig {
        actions: vec![Action::Sit],
        hidden: HIDDEN,
        seed,
        ..RunConfig::default()
    }
}

fn test_report(config: &RunConfig, data: &Dataset) -> EvalReport {
    let out = train(config, data, |_| {}).expect("train");
    assert!(!out.diverged(), "training diverged");
    evaluate(&out.model, data, SplitName::Test).expect("evaluate")
}

// ---------------------------------------------------------------- fixtures

const DIMS: GgnnDims = GgnnDims {
    hidden: 6,
    num_classes: 4,
    feature_dim: 3,
    global_dim: 2,
    action_embed_dim: 0,
    num_actions: 0,
};

fn graph(n: usize, edges: &[(usize, usize)]) -> SceneGraph {
    let nodes = (0..n)
        .map(|i| Node {
            instance_id: i as u32 + 1,
            class_id: 0,
            bbox: BoundingBox {
                x_min: i,
                y_min: 0,
                x_max: i,
                y_max: 0,
            },
            pixel_count: 1,
        })
        .collect();
    SceneGraph::from_parts(nodes, edges.iter().copied()).expect("graph")
}

fn random_edges(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    edges
}

fn random_inputs(rng: &mut ChaCha8Rng, n: usize) -> Vec<NodeInput> {
    (0..n)
        .map(|_| NodeInput {
            class_id: rng.random_range(0..DIMS.num_classes),
            feature: (0..DIMS.feature_dim).map(|_| rng.random_range(0.0..1.5)).collect(),
        })
        .collect()
}

struct Net {
    store: ParamStore,
    trunk: Trunk,
    head: RelationHead,
}

fn net(seed: u64) -> Net {
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    let trunk = Trunk::new(&mut store, "ggnn", DIMS, &mut rng).expect("trunk");
    let head = RelationHead::new(&mut store, "rel", DIMS.hidden, &mut rng).expect("head");
    for id in store.ids().collect::<Vec<_>>() {
        if store.value(id).shape().len() == 1 {
            for v in store.value_mut(id).values_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    Net { store, trunk, head }
}

// ------------------------------------------------------------- criterion 1

fn gradient_integrity() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let n = 5;
    let mut edges = random_edges(&mut rng, n, 0.4);
    // Keep the graph connected along a path so every node exchanges messages.
    for v in 1..n {
        if !edges.contains(&(v - 1, v)) {
            edges.push((v - 1, v));
        }
    }
    let g = graph(n, &edges);
    let ins = random_inputs(&mut rng, n);
    let global: Vec<f64> = (0..DIMS.global_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets: Vec<Option<Relationship>> = (0..n)
        .map(|_| Relationship::from_index(rng.random_range(0..7)))
        .collect();
    let Net { mut store, trunk, head } = net(102);
    let ggnn = gradient_check(&mut store, 1e-5, |s| {
        let scene = SceneInputs {
            graph: &g,
            nodes: &ins,
            global: &global,
        };
        relationship_loss(
            s,
            &trunk,
            &head,
            scene,
            InputMask::default(),
            3,
            None,
            &targets,
            1.0 / n as f64,
        )
    })
    .expect("graph network gradient check");

    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, "dec", 6, 8, 12, &mut seeded(103)).expect("decoder");
    let h_o: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
    let sentence = [4, 9, 5, 11, 7];
    let decoder = gradient_check(&mut store, 1e-5, |s| {
        Ok(dec.loss_and_backward(s, &h_o, &sentence, 1.0)?.0)
    })
    .expect("decoder gradient check");

    let elapsed = start.elapsed();
    let (a, b) = (ggnn.max_rel_err(), decoder.max_rel_err());
    verdict(
        a <= 1e-4 && b <= 1e-4 && elapsed < Duration::from_secs(60),
        format!("max rel err: graph network T=3 {a:.2e}, decoder {b:.2e} (limit 1e-4, < 60 s)"),
    )
}

// ------------------------------------------------------------- criterion 2

fn structural_identities() -> Verdict {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    for case in 0..40u64 {
        let f = net(300 + case);
        let n = rng.random_range(2..8);
        let g = graph(n, &random_edges(&mut rng, n, 0.4));
        let ins = random_inputs(&mut rng, n);
        let global: Vec<f64> = (0..DIMS.global_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let predict = |g: &SceneGraph, ins: &[NodeInput], steps: usize| {
            let scene = SceneInputs {
                graph: g,
                nodes: ins,
                global: &global,
            };
            predict_relationships(&f.store, &f.trunk, &f.head, scene, InputMask::default(), steps, None)
                .expect("predict")
        };

        // T = 0 on the spatial graph equals the edgeless unary graph.
        let unary = make_variant(&g, Topology::Unary, 0);
        if predict(&g, &ins, 0) != predict(&unary, &ins, 0) {
            failures.push(format!("case {case}: T=0 spatial differs from unary"));
        }

        // Two connected nodes: spatial and fully connected coincide.
        let pair = graph(2, &[(0, 1)]);
        let fc = make_variant(&pair, Topology::FullyConnected, 0);
        if predict(&pair, &ins[..2], 3) != predict(&fc, &ins[..2], 3) {
            failures.push(format!("case {case}: 2-node spatial differs from fully connected"));
        }

        // Relabeling nodes permutes the outputs.
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let edges: Vec<(usize, usize)> = g.spatial_edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let pg = graph(n, &edges);
        let mut pins = ins.clone();
        for v in 0..n {
            pins[perm[v]] = ins[v].clone();
        }
        let (a, b) = (predict(&g, &ins, 3), predict(&pg, &pins, 3));
        if (0..n).any(|v| a[v] != b[perm[v]]) {
            failures.push(format!("case {case}: not permutation equivariant"));
        }

        // Inputs farther than T hops cannot reach h_v^T.
        let steps = rng.random_range(0..4);
        let target = rng.random_range(0..n);
        let mut changed = ins.clone();
        changed[target] = NodeInput {
            class_id: (ins[target].class_id + 1) % DIMS.num_classes,
            feature: vec![1.9, 0.2, 1.1],
        };
        let ha = f
            .trunk
            .propagate(&f.store, &g, &ins, InputMask::default(), steps)
            .expect("propagate");
        let hb = f
            .trunk
            .propagate(&f.store, &g, &changed, InputMask::default(), steps)
            .expect("propagate");
        let dist = g.hop_distances(target);
        for v in 0..n {
            if dist[v] > steps && ha.last()[v] != hb.last()[v] {
                failures.push(format!(
                    "case {case}: node {v} at distance {} saw a change at T={steps}",
                    dist[v]
                ));
            }
        }
    }
    // Through the harness: a unary run ignores its step count and matches a
    // zero-step spatial run with the same seed.
    let data = dataset(
        &SynthConfig {
            scenes: 20,
            ..SynthConfig::default()
        },
        5,
    );
    let build = |topology, steps| {
        let cfg = RunConfig {
            topology,
            steps,
            ..sit_config(4)
        };
        let m = &data.manifest;
        let dims = GgnnDims::new(HIDDEN, m.class_names.len(), m.feature_dim, m.global_dim);
        let model = AffordanceModel::new(&cfg, dims, m.class_names.clone(), BTreeMap::new()).expect("model");
        let scenes: Vec<_> = data.scenes.iter().collect();
        let prepared = prepare_all(&scenes, &cfg, &model.vocabularies).expect("prepare");
        prepared
            .iter()
            .map(|s| model.relationships(Action::Sit, s).expect("predict").expect("head"))
            .collect::<Vec<_>>()
    };
    if build(Topology::Unary, 3) != build(Topology::Spatial, 0) {
        failures.push("unary run differs from zero-step spatial run".into());
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "40 random graphs and 20 synthetic scenes: T=0 ≡ unary, 2-node spatial ≡ FC, permutation equivariance, locality".to_string()
        } else {
            failures.join("; ")
        },
    )
}

// ------------------------------------------------------------- criterion 3

fn ngrams(t: &[&str], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= t.len() {
        out.push(t[i..i + n].iter().map(|s| s.to_string()).collect());
        i += 1;
    }
    out
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn oracle_bleu(c: &[&str], r: &[&str]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut logs = 0.0;
    for n in 1..=4 {
        let (cg, rg) = (ngrams(c, n), ngrams(r, n));
        let mut seen: Vec<&Vec<String>> = Vec::new();
        let mut clipped = 0;
        for g in &cg {
            if !seen.contains(&g) {
                seen.push(g);
                clipped += occurrences(&cg, g).min(occurrences(&rg, g));
            }
        }
        let p = if n == 1 {
            if clipped == 0 {
                return 0.0;
            }
            clipped as f64 / cg.len() as f64
        } else {
            (clipped + 1) as f64 / (cg.len() + 1) as f64
        };
        logs += p.ln() / 4.0;
    }
    let bp = if c.len() > r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    bp * logs.exp()
}

fn oracle_lcs(a: &[&str], b: &[&str]) -> usize {
    // Longest common subsequence by trying every subsequence of `a`.
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&str> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        let mut it = b.iter();
        if sub.len() > best && sub.iter().all(|x| it.any(|y| y == x)) {
            best = sub.len();
        }
    }
    best
}

fn oracle_rouge(c: &[&str], r: &[&str]) -> f64 {
    let l = oracle_lcs(c, r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
    let beta2 = 1.2f64 * 1.2;
    (1.0 + beta2) * p * rec / (rec + beta2 * p)
}

fn oracle_cider(c: &[&str], refs: &[Vec<&str>], corpus: &[Vec<Vec<&str>>]) -> f64 {
    let docs = corpus.len() as f64;
    let df = |g: &[String]| {
        corpus
            .iter()
            .filter(|item| item.iter().any(|r| occurrences(&ngrams(r, g.len()), g) > 0))
            .count()
            .max(1) as f64
    };
    let weights = |t: &[&str], n: usize| -> Vec<(Vec<String>, f64)> {
        let grams = ngrams(t, n);
        let mut out: Vec<(Vec<String>, f64)> = Vec::new();
        for g in &grams {
            if out.iter().all(|(h, _)| h != g) {
                out.push((g.clone(), occurrences(&grams, g) as f64 * (docs.ln() - df(g).ln())));
            }
        }
        out
    };
    let mut total = 0.0;
    for r in refs {
        let delta = ngrams(c, 2).len() as f64 - ngrams(r, 2).len() as f64;
        let penalty = (-delta * delta / (2.0 * 36.0)).exp();
        for n in 1..=4 {
            let (vc, vr) = (weights(c, n), weights(r, n));
            let mut dot = 0.0;
            for (g, x) in &vc {
                for (h, y) in &vr {
                    if g == h {
                        dot += x.min(*y) * y;
                    }
                }
            }
            let nc = vc.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
            let nr = vr.iter().map(|(_, y)| y * y).sum::<f64>().sqrt();
            if nc > 0.0 && nr > 0.0 {
                dot /= nc * nr;
            }
            total += dot * penalty;
        }
    }
    10.0 * total / 4.0 / refs.len() as f64
}

fn oracle_mean_accuracy(preds: &[Relationship], gts: &[Relationship], full: bool) -> f64 {
    let class = |r: Relationship| if full || !r.is_exception() { r.index() } else { 99 };
    let mut recalls = Vec::new();
    let mut classes: Vec<usize> = gts.iter().map(|&g| class(g)).collect();
    classes.sort();
    classes.dedup();
    for c in classes {
        let rows: Vec<usize> = (0..gts.len()).filter(|&i| class(gts[i]) == c).collect();
        let hits = rows.iter().filter(|&&i| class(preds[i]) == c).count();
        recalls.push(hits as f64 / rows.len() as f64);
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

const CAPTIONS: [(&str, &[&str]); 11] = [
    (
        "the chair is occupied by a person",
        &["the chair is occupied by a person", "a person sits on the chair"],
    ),
    (
        "a dog lies on the sofa",
        &["the sofa is taken by a dog", "a dog is on the sofa", "dog on sofa"],
    ),
    ("fire", &["the floor is on fire"]),
    (
        "you would slip on the ice",
        &["the floor is icy and you would slip", "you may slip on the ice"],
    ),
    ("the the the the", &["the cat", "the the"]),
    (
        "the bench is roped off for display",
        &["the bench is an exhibit", "the bench is roped off"],
    ),
    (
        "person person grass grass run run",
        &["a person is standing on the grass"],
    ),
    ("cup", &["the cup is hot"]),
    (
        "nothing in common here",
        &["completely different words only", "unrelated reference"],
    ),
    (
        "the cup is next to a fire",
        &["the cup is next to the fire", "a fire burns beside the cup"],
    ),
    (
        "someone is sitting there already",
        &["a person already sits there", "someone sits on it"],
    ),
];

fn metric_oracles() -> Verdict {
    let items: Vec<(Vec<&str>, Vec<Vec<&str>>)> = CAPTIONS
        .iter()
        .map(|(c, rs)| {
            (
                c.split_whitespace().collect(),
                rs.iter().map(|r| r.split_whitespace().collect()).collect(),
            )
        })
        .collect();
    let corpus: Vec<Vec<Vec<&str>>> = items.iter().map(|(_, r)| r.clone()).collect();
    let cider = CiderCorpus::new(&corpus);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bump = |k: &'static str, a: f64, b: f64| {
        let e = worst.entry(k).or_insert(0.0);
        *e = e.max((a - b).abs());
    };
    for (c, refs) in &items {
        for r in refs {
            bump("BLEU-4", bleu4(c, r), oracle_bleu(c, r));
            bump("ROUGE-L", rouge_l(c, r), oracle_rouge(c, r));
        }
        bump("CIDEr-D", cider.score(c, refs), oracle_cider(c, refs, &corpus));
        // Multi-reference averaging: score each reference alone, then average.
        let by_hand = refs.iter().map(|r| oracle_bleu(c, r)).sum::<f64>() / refs.len() as f64;
        bump("multi-ref", multi_reference_average(bleu4, c, refs), by_hand);
        let by_hand = refs.iter().map(|r| oracle_rouge(c, r)).sum::<f64>() / refs.len() as f64;
        bump("multi-ref", multi_reference_average(rouge_l, c, refs), by_hand);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    for case in 0..12 {
        let n = rng.random_range(1..60);
        let draw = |rng: &mut ChaCha8Rng| Relationship::ALL[rng.random_range(0..7)];
        let gts: Vec<Relationship> = (0..n).map(|_| draw(&mut rng)).collect();
        let preds: Vec<Relationship> = if case == 0 {
            gts.clone()
        } else {
            (0..n).map(|_| draw(&mut rng)).collect()
        };
        bump(
            "mAcc",
            mean_accuracy(&preds, &gts, AccuracyMode::Collapsed).unwrap(),
            oracle_mean_accuracy(&preds, &gts, false),
        );
        bump(
            "mAcc-E",
            mean_accuracy(&preds, &gts, AccuracyMode::Full).unwrap(),
            oracle_mean_accuracy(&preds, &gts, true),
        );
    }
    let pass = worst.values().all(|&e| e <= 1e-9);
    let detail: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    verdict(
        pass,
        format!(
            "max |impl - oracle| over 11 caption / 12 label cases: {}",
            detail.join(", ")
        ),
    )
}

// ------------------------------------------------------------- criterion 4

struct Trained {
    label: String,
    /// Index into the dataset list.
    data: usize,
    /// Trained with an input removed.
    ablated: bool,
    report: EvalReport,
}

struct ContextRuns {
    /// Test mAcc-E per topology label, one entry per seed.
    macc_e: BTreeMap<&'static str, Vec<f64>>,
    /// Test mAcc per run label, one entry per seed.
    macc: BTreeMap<&'static str, Vec<f64>>,
    /// Every trained model's report, for the KB floor check.
    reports: Vec<Trained>,
}

fn context_separation(datasets: &[Dataset], runs: &mut ContextRuns) -> Verdict {
    let start = Instant::now();
    let synth_cfg = SynthConfig::default();
    let mut bayes = Vec::new();
    for (i, (&seed, data)) in SEEDS.iter().zip(datasets).enumerate() {
        let b = evaluate_predictions(data, SplitName::Test, &[Action::Sit], "bayes", |s, a| {
            Ok(synth::bayes_predictions(&synth_cfg, s, a))
        })
        .expect("bayes");
        bayes.push(b.relationship[&Action::Sit].macc_e);
        for (label, topology) in [
            ("spatial", Topology::Spatial),
            ("unary", Topology::Unary),
            ("chain", Topology::Chain),
            ("fc", Topology::FullyConnected),
        ] {
            let cfg = RunConfig {
                topology,
                ..sit_config(seed)
            };
            let r = test_report(&cfg, data);
            let sit = &r.relationship[&Action::Sit];
            runs.macc_e.entry(label).or_default().push(sit.macc_e);
            runs.macc.entry(label).or_default().push(sit.macc);
            runs.reports.push(Trained {
                label: format!("{label}/seed{seed}"),
                data: i,
                ablated: false,
                report: r,
            });
        }
    }
    let m = |k: &str| mean(&runs.macc_e[k]);
    let (spatial, unary, chain, fc) = (m("spatial"), m("unary"), m("chain"), m("fc"));
    let ceiling = mean(&bayes);
    // Differences between seeds of the same model stay within this band.
    let noise = 0.03;
    let gap_ok = spatial - unary >= 0.15;
    let ceiling_ok = (unary - ceiling).abs() <= 0.03;
    let order_ok = chain <= spatial + noise && fc <= spatial + noise;
    let time_ok = start.elapsed() < Duration::from_secs(15 * 60);
    verdict(
        gap_ok && ceiling_ok && order_ok && time_ok,
        format!(
            "sit test mAcc-E over seeds {SEEDS:?}: spatial {} unary {} chain {} fc {}; bayes ceiling {}; \
             spatial-unary {:.3} (>= 0.15), |unary-ceiling| {:.3} (<= 0.03), chain/fc <= spatial + {noise}",
            fmt(&runs.macc_e["spatial"]),
            fmt(&runs.macc_e["unary"]),
            fmt(&runs.macc_e["chain"]),
            fmt(&runs.macc_e["fc"]),
            fmt(&bayes),
            spatial - unary,
            (unary - ceiling).abs(),
        ),
    )
}

// ------------------------------------------------------------- criterion 5

fn step_saturation() -> Verdict {
    let synth_cfg = SynthConfig::radius_two();
    let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for seed in SEEDS {
        let data = dataset(&synth_cfg, seed);
        for steps in 1..=4 {
            let cfg = RunConfig {
                steps,
                ..sit_config(seed)
            };
            let r = test_report(&cfg, &data);
            acc.entry(steps).or_default().push(r.relationship[&Action::Sit].macc_e);
        }
    }
    let m: Vec<f64> = (1..=4).map(|t| mean(&acc[&t])).collect();
    let gain = m[1] - m[0];
    let plateau = (m[3] - m[2]).abs();
    verdict(
        gain >= 0.1 && plateau <= 0.03,
        format!(
            "radius-2 sit test mAcc-E T=1..4: {} {} {} {}; T2-T1 {gain:.3} (>= 0.1), |T4-T3| {plateau:.3} (<= 0.03)",
            fmt(&acc[&1]),
            fmt(&acc[&2]),
            fmt(&acc[&3]),
            fmt(&acc[&4]),
        ),
    )
}

// ------------------------------------------------------------- criterion 6

fn ablation_direction(datasets: &[Dataset], runs: &mut ContextRuns) -> Verdict {
    let mask = |drop_class, drop_feature, drop_global| InputMask {
        drop_class,
        drop_feature,
        drop_global,
    };
    for (i, (&seed, data)) in SEEDS.iter().zip(datasets).enumerate() {
        for (label, topology, ablation) in [
            ("spatial-OC", Topology::Spatial, mask(true, false, false)),
            ("spatial-OR", Topology::Spatial, mask(false, true, false)),
            ("spatial-GR", Topology::Spatial, mask(false, false, true)),
            ("unary-GR", Topology::Unary, mask(false, false, true)),
        ] {
            let cfg = RunConfig {
                topology,
                ablation,
                ..sit_config(seed)
            };
            let r = test_report(&cfg, data);
            runs.macc
                .entry(label)
                .or_default()
                .push(r.relationship[&Action::Sit].macc);
            runs.reports.push(Trained {
                label: format!("{label}/seed{seed}"),
                data: i,
                ablated: true,
                report: r,
            });
        }
    }
    let m = |k: &str| mean(&runs.macc[k]);
    let drop_oc = m("spatial") - m("spatial-OC");
    let drop_or = m("spatial") - m("spatial-OR");
    let drop_gr_unary = m("unary") - m("unary-GR");
    let drop_gr_spatial = m("spatial") - m("spatial-GR");
    verdict(
        drop_oc > drop_or && drop_gr_unary > drop_gr_spatial,
        format!(
            "mean sit test mAcc drop: OC {drop_oc:.3} > OR {drop_or:.3}; GR unary {drop_gr_unary:.3} > GR spatial {drop_gr_spatial:.3}"
        ),
    )
}

// ------------------------------------------------------------- criterion 7

fn decoder_soundness(data: &Dataset) -> Verdict {
    // Overfit one real explanation from the synthetic set.
    let split = data.split().expect("split");
    let train_scenes = data.select(&split.train).expect("train scenes");
    let text = train_scenes
        .iter()
        .flat_map(|s| s.record.annotations[&Action::Sit].values())
        .find(|a| a.relationship.is_exception())
        .map(|a| a.explanations[0].clone())
        .expect("an exception");
    let vocab = Vocabulary::build(
        train_scenes
            .iter()
            .flat_map(|s| s.record.annotations[&Action::Sit].values())
            .flat_map(|a| a.explanations.iter().map(String::as_str)),
        1,
    )
    .expect("vocabulary");
    let target = vocab.encode(&text);
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, "dec", 16, 64, vocab.len(), &mut seeded(701)).expect("decoder");
    let h_o: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let adam = AdamConfig::decoder();
    let mut steps = 0;
    while steps < 3000 && dec.teacher_forced(&store, &h_o, &target).expect("forward").loss > 0.01 {
        dec.loss_and_backward(&mut store, &h_o, &target, 1.0).expect("backward");
        adam_step(&mut store, &adam, 1).expect("adam");
        steps += 1;
    }
    let greedy = dec.decode_greedy(&store, &h_o, 20).expect("decode");
    let overfit_ok = greedy.tokens == target;

    // Full synthetic set, sit decoders trained separately from the
    // relationship model and gated by its predictions.
    let cfg = RunConfig {
        task: Task::Multitask,
        decoder_epochs: 100,
        ..sit_config(0)
    };
    let r = test_report(&cfg, data);
    let expl = r.explanation[&Action::Sit].cider_d;
    let cons = r.consequence[&Action::Sit].cider_d;

    // Threshold sanity: a template oracle (first reference) clears it.
    let test_scenes = data.select(&split.test).expect("test scenes");
    let refs: Vec<Vec<Vec<String>>> = test_scenes
        .iter()
        .flat_map(|s| s.record.annotations[&Action::Sit].values())
        .filter(|a| a.relationship.is_exception())
        .map(|a| a.explanations.iter().map(|e| tokenize(e)).collect())
        .collect();
    let corpus = CiderCorpus::new(&refs);
    let oracle = mean(&refs.iter().map(|r| corpus.score(&r[0], r)).collect::<Vec<_>>());

    verdict(
        overfit_ok && expl >= 1.0 && cons >= 1.0 && oracle >= 1.0,
        format!(
            "overfit `{text}` in {steps} steps, greedy match {overfit_ok}; sit test CIDEr-D explanation {expl:.3}, \
             consequence {cons:.3} (>= 1.0); template oracle {oracle:.3}"
        ),
    )
}

// ------------------------------------------------------------- criterion 8

fn multitask_parity(data: &Dataset, reports: &mut Vec<Trained>) -> Verdict {
    let start = Instant::now();
    let base = RunConfig {
        hidden: HIDDEN,
        seed: 0,
        ..RunConfig::default()
    };
    let mut macc = BTreeMap::new();
    for (label, task, regime) in [
        ("independent", Task::Relationship, Regime::Independent),
        ("sa-mt", Task::Multitask, Regime::SaMt),
        ("ma-mt", Task::Multitask, Regime::MaMt),
    ] {
        let r = test_report(
            &RunConfig {
                task,
                regime,
                ..base.clone()
            },
            data,
        );
        let per_action: Vec<f64> = Action::ALL.iter().map(|a| r.relationship[a].macc).collect();
        macc.insert(label, per_action);
        reports.push(Trained {
            label: label.to_string(),
            data: 0,
            ablated: false,
            report: r,
        });
    }
    let ind = mean(&macc["independent"]);
    let (sa, ma) = (mean(&macc["sa-mt"]), mean(&macc["ma-mt"]));
    let time_ok = start.elapsed() < Duration::from_secs(10 * 60);
    verdict(
        sa >= 0.9 * ind && ma >= 0.9 * ind && time_ok,
        format!(
            "test mAcc (sit, run, grasp): independent {} sa-mt {} ma-mt {}; means {ind:.3} / {sa:.3} / {ma:.3}, \
             bound 0.9 x independent = {:.3}",
            fmt(&macc["independent"]),
            fmt(&macc["sa-mt"]),
            fmt(&macc["ma-mt"]),
            0.9 * ind
        ),
    )
}

// ------------------------------------------------------------- criterion 9

/// Compares the KB with the baseline topologies and the multi-task models.
/// Ablated runs are listed for information: a model stripped of the inputs
/// that carry exception evidence can at best match the KB.
fn kb_floor(datasets: &[Dataset], reports: &[Trained]) -> Verdict {
    let mut problems = Vec::new();
    let mut kb: Vec<BTreeMap<Action, f64>> = Vec::new();
    for data in datasets {
        let r = evaluate_kb(data, SplitName::Test, &Action::ALL).expect("kb");
        for (action, rel) in &r.relationship {
            for e in Relationship::EXCEPTIONS {
                if let Some(recall) = rel.recall[e.index()] {
                    if recall != 0.0 {
                        problems.push(format!("KB {action} recall of {e} is {recall}"));
                    }
                }
            }
        }
        kb.push(r.relationship.iter().map(|(a, rel)| (*a, rel.macc_e)).collect());
    }
    let (mut compared, mut ablated_below) = (0, Vec::new());
    for t in reports {
        for (action, rel) in &t.report.relationship {
            let finds_exception = Relationship::EXCEPTIONS
                .iter()
                .any(|e| rel.confusion[e.index()][e.index()] > 0);
            if !finds_exception {
                continue;
            }
            let floor = kb[t.data][action];
            if rel.macc_e > floor {
                if !t.ablated {
                    compared += 1;
                }
                continue;
            }
            let line = format!("{} {action} mAcc-E {:.3} vs KB {floor:.3}", t.label, rel.macc_e);
            if t.ablated {
                ablated_below.push(line);
            } else {
                compared += 1;
                problems.push(line);
            }
        }
    }
    let kb_sit: Vec<f64> = kb.iter().map(|k| k[&Action::Sit]).collect();
    let info = if ablated_below.is_empty() {
        String::new()
    } else {
        format!("; ablated runs not above KB: {}", ablated_below.join(", "))
    };
    verdict(
        problems.is_empty() && compared > 0,
        if problems.is_empty() {
            format!(
                "KB exception recall exactly 0; KB sit mAcc-E {} is below all {compared} baseline and multi-task results{info}",
                fmt(&kb_sit)
            )
        } else {
            format!("{}{info}", problems.join("; "))
        },
    )
}

// ------------------------------------------------------------ criterion 10

fn determinism(data: &Dataset) -> Verdict {
    let cfg = RunConfig {
        task: Task::Multitask,
        regime: Regime::SaMt,
        epochs: 6,
        ..sit_config(9)
    };
    let run = || {
        let mut log = String::new();
        let out = train(&cfg, data, |e| {
            log.push_str(&serde_json::to_string(e).expect("event"));
            log.push('\n');
        })
        .expect("train");
        let report = evaluate(&out.model, data, SplitName::Test).expect("evaluate");
        (log, report, out.model)
    };
    let (log_a, rep_a, model) = run();
    let (log_b, rep_b, _) = run();
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("checkpoint.json");
    model.save(&path).expect("save");
    let loaded = AffordanceModel::load(&path).expect("load");
    let bitwise = loaded == model;
    let rep_loaded = evaluate(&loaded, data, SplitName::Test).expect("evaluate loaded");
    let logs_equal = log_a == log_b && !log_a.is_empty();
    let reports_equal = rep_a == rep_b && rep_a == rep_loaded;
    verdict(
        logs_equal && reports_equal && bitwise,
        format!(
            "identical logs ({} events) {logs_equal}, identical reports {reports_equal}, checkpoint round trip bitwise {bitwise}",
            log_a.lines().count()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let synth_cfg = SynthConfig::default();
    let datasets: Vec<Dataset> = SEEDS.iter().map(|&s| dataset(&synth_cfg, s)).collect();
    let mut runs = ContextRuns {
        macc_e: BTreeMap::new(),
        macc: BTreeMap::new(),
        reports: Vec::new(),
    };
    let mut results = vec![
        check(1, "gradient integrity", gradient_integrity),
        check(2, "structural identities", structural_identities),
        check(3, "metric oracles", metric_oracles),
        check(4, "context separation", || context_separation(&datasets, &mut runs)),
        check(5, "step saturation", step_saturation),
        check(6, "ablation direction", || ablation_direction(&datasets, &mut runs)),
        check(7, "decoder soundness", || decoder_soundness(&datasets[0])),
    ];
    let mut reports = std::mem::take(&mut runs.reports);
    results.push(check(8, "multi-task parity", || {
        multitask_parity(&datasets[0], &mut reports)
    }));
    results.push(check(9, "KB floor", || kb_floor(&datasets, &reports)));
    results.push(check(10, "determinism and persistence", || determinism(&datasets[0])));
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    let _ = writeln!(
        std::io::stdout().lock(),
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
