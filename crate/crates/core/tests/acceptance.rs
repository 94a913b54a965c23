//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use certifair::bounds::{global_fairness_upper, interval_bounds, symbolic_bounds, BoundMode, GapScope, InputBox};
use certifair::cli;
use certifair::data::{accuracy, split, Dataset, LabelSpec, Schema};
use certifair::nn::{class_of, Layer, Network};
use certifair::product::ProductNetwork;
use certifair::property::{
    enumerate_partitions, validate_counterexample, CounterexamplePair, FairnessProperty, PropertyClass,
    DEFAULT_PARTITION_CAP,
};
use certifair::synth::{self, SyntheticKind};
use certifair::training::{composite_gradients, composite_loss, train, Regularizer, TrainingConfig};
use certifair::verifier::{certify, verify_local, SearchLimits, Verdict, COUNTEREXAMPLE_MARGIN};
use common::{cat, num, pre_activations, random_net, schema_with};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRID_STEP: f64 = 0.02;
const CORPUS_NETS: usize = 100;
const CORPUS_BUDGET: Duration = Duration::from_secs(600);
const BOUND_NETS: usize = 50;
const BOUND_SAMPLES: usize = 10_000;
const BOUND_TOL: f64 = 1e-9;
const TIGHTER_SHARE: f64 = 0.95;
const GRAD_CONFIGS: usize = 20;
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_REL_FLOOR: f64 = 1e-6;
const SWEEP: [f64; 5] = [1e-4, 5e-4, 5e-3, 1e-2, 5e-2];
const SWEEP_SEED: u64 = 1;
const SWEEP_MAX_INVERSION_PP: f64 = 5.0;
const SWEEP_BUDGET: Duration = Duration::from_secs(900);
const SYNTH_ROWS: usize = 3000;
const COMPARISON_LAMBDA: f64 = 0.1;
const COMPARISON_SEEDS: u64 = 5;
const COMPARISON_REQUIRED: usize = 4;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 10] = [
        ("verifier soundness vs grid oracle", c1_soundness),
        ("verifier completeness up to margin", c2_completeness),
        ("counterexample validity", c3_counterexamples),
        ("bound soundness and tightness", c4_bounds),
        ("composite gradients vs finite differences", c5_gradients),
        ("zero gap bound certifies without branching", c6_zero_gap),
        ("lambda sweep trade-off", c7_sweep),
        ("local fair but globally unfair", c8_local_vs_global),
        ("global vs local regularizer", c9_regularizers),
        ("deterministic training", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<45} {}  ({:.1}s) {}",
            i + 1,
            name,
            if result.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            result.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- corpus

struct Case {
    net: Network,
    schema: Schema,
    prop: FairnessProperty,
    verdict: Verdict,
    /// Grid pair with different classes.
    grid_flip: bool,
    /// Grid pair with `logit >= 0` on one side and `<= -2 * margin` on the other.
    grid_margin_flip: bool,
    local_pairs: Vec<CounterexamplePair>,
}

struct Corpus {
    cases: Vec<Case>,
    elapsed: Duration,
}

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(build_corpus)
}

fn grid_index(v: f64) -> usize {
    (v / GRID_STEP).round() as usize
}

fn build_corpus() -> Corpus {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = Vec::with_capacity(CORPUS_NETS);
    for _ in 0..CORPUS_NETS {
        let n_num = rng.gen_range(1..=2);
        let schema = schema_with(n_num);
        let width = schema.width();
        let mut dims = vec![width];
        for _ in 0..rng.gen_range(1..=2) {
            dims.push(rng.gen_range(2..=8));
        }
        dims.push(1);
        let mut net = random_net(&mut rng, &dims);
        // mix in nets that barely use the sensitive columns or are nearly constant
        let sens = schema.layout().sensitive_block().cols();
        match rng.gen_range(0..3) {
            0 => {
                let l = &mut net.layers_mut()[0];
                let scale = if rng.gen_bool(0.5) { 0.0 } else { 0.05 };
                for r in 0..l.rows {
                    for c in sens.clone() {
                        l.weights[r * l.cols + c] *= scale;
                    }
                }
            }
            1 => {
                let last = net.layers().len() - 1;
                net.layers_mut()[last].bias[0] += if rng.gen_bool(0.5) { 2.0 } else { -2.0 };
            }
            _ => {}
        }
        let delta = [0.02, 0.05, 0.1][rng.gen_range(0..3)];
        let mut prop = FairnessProperty::uniform(&schema, PropertyClass::P2, delta);
        for d in prop.domain.iter_mut() {
            let lo = rng.gen_range(0..=10);
            let hi = 50 - rng.gen_range(0..=10);
            *d = (lo as f64 * GRID_STEP, hi as f64 * GRID_STEP);
        }

        let report = certify(&net, &prop, &schema, SearchLimits::default(), 1, None).unwrap();
        assert_eq!(report.total_partitions, 1);
        let part = &report.partitions[0];
        let verdict = match part.verdict.as_str() {
            "fair" => Verdict::Fair,
            "unfair" => Verdict::Unfair {
                pair: part.counterexample.clone().unwrap(),
            },
            _ => Verdict::ResourceLimit {
                nodes_explored: part.nodes,
            },
        };

        let (grid_flip, grid_margin_flip) = grid_oracle(&net, &schema, &prop);

        let partition = &enumerate_partitions(&prop, &schema, DEFAULT_PARTITION_CAP).unwrap()[0];
        let mut local_pairs = Vec::new();
        for _ in 0..5 {
            let numeric: Vec<f64> = prop.domain.iter().map(|&(l, u)| rng.gen_range(l..=u)).collect();
            let x = partition.embed(&schema, &numeric, rng.gen_range(0..2));
            if let Verdict::Unfair { pair } = verify_local(&net, &x, &prop, &schema, SearchLimits::default())
                .unwrap()
                .verdict
            {
                local_pairs.push(pair);
            }
        }
        cases.push(Case {
            net,
            schema,
            prop,
            verdict,
            grid_flip,
            grid_margin_flip,
            local_pairs,
        });
    }
    Corpus {
        cases,
        elapsed: started.elapsed(),
    }
}

/// Exhaustive search over grid pairs `(x, x')` with `x` carrying sensitive
/// level 0, `x'` level 1, both in the domain and `|x_i - x'_i| <= delta_i`.
fn grid_oracle(net: &Network, schema: &Schema, prop: &FairnessProperty) -> (bool, bool) {
    let partition = &enumerate_partitions(prop, schema, DEFAULT_PARTITION_CAP).unwrap()[0];
    let ranges: Vec<(usize, usize)> = prop
        .domain
        .iter()
        .map(|&(l, u)| (grid_index(l), grid_index(u)))
        .collect();
    let steps: Vec<usize> = prop
        .delta
        .iter()
        .map(|d| ((d + 1e-12) / GRID_STEP).floor() as usize)
        .collect();
    let dims: Vec<usize> = ranges.iter().map(|(l, u)| u - l + 1).collect();
    let total: usize = dims.iter().product();
    let decode = |mut k: usize| -> Vec<usize> {
        dims.iter()
            .zip(&ranges)
            .map(|(&n, &(l, _))| {
                let v = l + k % n;
                k /= n;
                v
            })
            .collect()
    };
    let encode = |idx: &[usize]| -> usize {
        idx.iter()
            .zip(&ranges)
            .zip(&dims)
            .rev()
            .fold(0, |acc, ((&v, &(l, _)), &n)| acc * n + (v - l))
    };
    let logits = |level: usize| -> Vec<f64> {
        (0..total)
            .map(|k| {
                let x: Vec<f64> = decode(k).iter().map(|&i| i as f64 * GRID_STEP).collect();
                net.logit(&partition.embed(schema, &x, level))
            })
            .collect()
    };
    let (la, lb) = (logits(0), logits(1));
    let mut offsets: Vec<Vec<i64>> = vec![vec![]];
    for &st in &steps {
        let st = st as i64;
        offsets = offsets
            .into_iter()
            .flat_map(|o| (-st..=st).map(move |d| [o.clone(), vec![d]].concat()))
            .collect();
    }
    let margin = 2.0 * COUNTEREXAMPLE_MARGIN;
    let (mut flip, mut margin_flip) = (false, false);
    for k in 0..total {
        let base = decode(k);
        for off in &offsets {
            let idx: Option<Vec<usize>> = base
                .iter()
                .zip(off)
                .zip(&ranges)
                .map(|((&v, &d), &(l, u))| {
                    let w = v as i64 + d;
                    (w >= l as i64 && w <= u as i64).then_some(w as usize)
                })
                .collect();
            let Some(idx) = idx else { continue };
            let (a, b) = (la[k], lb[encode(&idx)]);
            flip |= class_of(a) != class_of(b);
            margin_flip |= (a >= 0.0 && b <= -margin) || (b >= 0.0 && a <= -margin);
        }
    }
    (flip, margin_flip)
}

fn verdict_counts(cases: &[Case]) -> (usize, usize, usize) {
    cases.iter().fold((0, 0, 0), |(f, u, r), c| match c.verdict {
        Verdict::Fair => (f + 1, u, r),
        Verdict::Unfair { .. } => (f, u + 1, r),
        Verdict::ResourceLimit { .. } => (f, u, r + 1),
    })
}

fn c1_soundness() -> Check {
    let corpus = corpus();
    let violations = corpus
        .cases
        .iter()
        .filter(|c| c.verdict.is_fair() && c.grid_flip)
        .count();
    let (fair, unfair, limit) = verdict_counts(&corpus.cases);
    check(
        violations == 0 && corpus.elapsed < CORPUS_BUDGET,
        format!(
            "{} nets: {fair} fair, {unfair} unfair, {limit} resource limit; {violations} fair verdicts contradicted by the grid; corpus {:.1}s (budget {}s)",
            corpus.cases.len(),
            corpus.elapsed.as_secs_f64(),
            CORPUS_BUDGET.as_secs()
        ),
    )
}

fn c2_completeness() -> Check {
    let corpus = corpus();
    let witnessed = corpus.cases.iter().filter(|c| c.grid_margin_flip).count();
    let misses = corpus
        .cases
        .iter()
        .filter(|c| c.grid_margin_flip && !matches!(c.verdict, Verdict::Unfair { .. }))
        .count();
    check(
        misses == 0,
        format!("{witnessed} nets with a grid pair beyond 2x margin; {misses} not reported unfair"),
    )
}

fn c3_counterexamples() -> Check {
    let corpus = corpus();
    let (mut total, mut invalid) = (0, 0);
    for c in &corpus.cases {
        let global = match &c.verdict {
            Verdict::Unfair { pair } => Some(pair),
            _ => None,
        };
        for pair in global.into_iter().chain(&c.local_pairs) {
            total += 1;
            let exact = class_of(c.net.logit(&pair.x)) != class_of(c.net.logit(&pair.x_prime));
            if !(exact && validate_counterexample(&c.net, pair, &c.prop, &c.schema)) {
                invalid += 1;
            }
        }
    }
    check(
        total > 0 && invalid == 0,
        format!("{total} pairs (global and local), {invalid} invalid"),
    )
}

// ---------------------------------------------------------------- bounds

fn c4_bounds() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut violations, mut not_tighter, mut strictly) = (0usize, 0usize, 0usize);
    for _ in 0..BOUND_NETS {
        let mut dims = vec![rng.gen_range(2..=6)];
        for _ in 0..rng.gen_range(1..=2) {
            dims.push(rng.gen_range(2..=32));
        }
        dims.push(1);
        let net = random_net(&mut rng, &dims);
        let (lo, hi): (Vec<f64>, Vec<f64>) = (0..dims[0])
            .map(|_| {
                let c: f64 = rng.gen_range(-1.0..1.0);
                let r: f64 = rng.gen_range(0.01..1.0);
                (c - r, c + r)
            })
            .unzip();
        let bx = InputBox::new(lo.clone(), hi.clone()).unwrap();
        let ib = interval_bounds(&net, &bx).unwrap();
        let sb = symbolic_bounds(&net, &bx).unwrap();
        for s in 0..BOUND_SAMPLES {
            // corners first, then uniform samples
            let x: Vec<f64> = (0..dims[0])
                .map(|i| match s {
                    0 => lo[i],
                    1 => hi[i],
                    _ => rng.gen_range(lo[i]..=hi[i]),
                })
                .collect();
            for (layer, z) in pre_activations(&net, &x).iter().enumerate() {
                for (n, &v) in z.iter().enumerate() {
                    for b in [&ib, &sb] {
                        let (l, u) = b.interval(layer, n);
                        let tol = BOUND_TOL * (1.0 + v.abs());
                        if v < l - tol || v > u + tol {
                            violations += 1;
                        }
                    }
                }
            }
        }
        let (il, iu) = ib.logit();
        let (sl, su) = sb.logit();
        if su - sl > iu - il + BOUND_TOL {
            not_tighter += 1;
        } else if su - sl < iu - il - BOUND_TOL {
            strictly += 1;
        }
    }
    let share = (BOUND_NETS - not_tighter) as f64 / BOUND_NETS as f64;
    check(
        violations == 0 && share >= TIGHTER_SHARE,
        format!(
            "{BOUND_NETS} nets x {BOUND_SAMPLES} samples: {violations} violations; symbolic width <= interval in {:.0}% ({strictly} strictly tighter)",
            100.0 * share
        ),
    )
}

// ---------------------------------------------------------------- gradients

fn perturbed(net: &Network, layer: usize, k: usize, h: f64) -> Network {
    let mut n = net.clone();
    let l: &mut Layer = &mut n.layers_mut()[layer];
    if k < l.weights.len() {
        l.weights[k] += h;
    } else {
        l.bias[k - l.weights.len()] += h;
    }
    n
}

fn c5_gradients() -> Check {
    let schema = schema_with(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut accepted, mut attempts, mut worst, mut params) = (0usize, 0usize, 0.0f64, 0usize);
    while accepted < GRAD_CONFIGS && attempts < 10 * GRAD_CONFIGS {
        attempts += 1;
        let mut dims = vec![schema.width()];
        for _ in 0..rng.gen_range(1..=2) {
            dims.push(rng.gen_range(2..=6));
        }
        dims.push(1);
        let net = random_net(&mut rng, &dims);
        let prop = FairnessProperty::uniform(&schema, PropertyClass::P2, rng.gen_range(0.02..0.1));
        let rows: Vec<(Vec<f64>, u8)> = (0..6)
            .map(|_| {
                let g = rng.gen_range(0..2);
                let mut x = vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0, 0.0];
                x[2 + g] = 1.0;
                (x, rng.gen_range(0..2) as u8)
            })
            .collect();
        let batch: Vec<(&[f64], u8)> = rows.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let lambda = rng.gen_range(0.2..0.8);
        let mut config_worst = 0.0f64;
        let mut smooth = true;
        let mut count = 0;
        'combos: for regularizer in [Regularizer::Local, Regularizer::Global] {
            for bound_mode in [BoundMode::Interval, BoundMode::Symbolic] {
                let cfg = TrainingConfig {
                    lambda_f: lambda,
                    regularizer,
                    bound_mode,
                    ..TrainingConfig::default()
                };
                let (loss, grads) = composite_gradients(&net, &batch, &prop, &schema, &cfg).unwrap();
                let value = |n: &Network| composite_loss(n, &batch, &prop, &schema, &cfg).unwrap().total;
                assert!((loss.total - value(&net)).abs() < 1e-12);
                for (li, g) in grads.layers.iter().enumerate() {
                    for (k, &gk) in g.weights.iter().chain(&g.bias).enumerate() {
                        let fd = |h: f64| {
                            (value(&perturbed(&net, li, k, h)) - value(&perturbed(&net, li, k, -h))) / (2.0 * h)
                        };
                        let (coarse, fine) = (fd(1e-5), fd(2.5e-6));
                        // a kink or a relaxation switch inside the stencil
                        if (coarse - fine).abs() > 1e-6 * coarse.abs().max(1.0) {
                            smooth = false;
                            break 'combos;
                        }
                        let err = (gk - fine).abs() / gk.abs().max(fine.abs()).max(GRAD_REL_FLOOR);
                        config_worst = config_worst.max(err);
                        count += 1;
                    }
                }
            }
        }
        if smooth {
            accepted += 1;
            params += count;
            worst = worst.max(config_worst);
        }
    }
    check(
        accepted == GRAD_CONFIGS && worst <= GRAD_REL_TOL,
        format!(
            "{accepted} configs x 2 regularizers x 2 modes ({params} partials, {} configs near kinks skipped): max rel err {worst:.2e}",
            attempts - accepted
        ),
    )
}

// ---------------------------------------------------------------- zero gap

fn c6_zero_gap() -> Check {
    let schema = Schema::new(
        vec![
            num("a"),
            num("b"),
            cat("c", &["u", "v", "w"]),
            cat("s", &["p", "q", "r"]),
        ],
        "s".into(),
        LabelSpec {
            name: "y".into(),
            positive: "1".into(),
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut net = random_net(&mut rng, &[schema.width(), 8, 6, 1]);
    let last = net.layers().len() - 1;
    net.layers_mut()[last].weights.iter_mut().for_each(|w| *w = 0.0);
    net.layers_mut()[last].bias[0] = 0.3;
    let prop = FairnessProperty::uniform(&schema, PropertyClass::P2, 0.1);
    let pnet = ProductNetwork::new(&net);
    let mut gaps = Vec::new();
    for mode in [BoundMode::Interval, BoundMode::Symbolic] {
        gaps.push(global_fairness_upper(&pnet, &prop, &schema, GapScope::WholeDomain, mode).unwrap());
        for p in enumerate_partitions(&prop, &schema, DEFAULT_PARTITION_CAP).unwrap() {
            gaps.push(global_fairness_upper(&pnet, &prop, &schema, GapScope::Partition(&p), mode).unwrap());
        }
    }
    let report = certify(&net, &prop, &schema, SearchLimits::default(), 1, None).unwrap();
    let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
    check(
        max_gap == 0.0 && report.certified_global_fairness_pct == 100.0 && report.expanded_nodes() == 0,
        format!(
            "max gap bound {max_gap}; {} partitions, {:.1}% fair, {} nodes expanded",
            report.total_partitions,
            report.certified_global_fairness_pct,
            report.expanded_nodes()
        ),
    )
}

// ---------------------------------------------------------------- training runs

struct Run {
    accuracy: f64,
    certified: f64,
}

fn synthetic_split(kind: SyntheticKind, seed: u64) -> (Dataset, Dataset) {
    let ds = synth::dataset(&synth::generate(kind, SYNTH_ROWS, seed));
    split(&ds, TrainingConfig::default().train_fraction, seed).unwrap()
}

fn train_and_certify(data: &(Dataset, Dataset), regularizer: Regularizer, lambda_f: f64, seed: u64) -> Run {
    let schema = synth::schema();
    let prop = synth::property(SyntheticKind::Biased);
    let cfg = TrainingConfig {
        lambda_f,
        regularizer: if lambda_f == 0.0 {
            Regularizer::None
        } else {
            regularizer
        },
        seed,
        ..cli::synthetic_config(SyntheticKind::Biased)
    };
    let (net, _) = train(&data.0, &data.1, &prop, &schema, &cfg).unwrap();
    let report = certify(&net, &prop, &schema, SearchLimits::default(), 1, None).unwrap();
    Run {
        accuracy: accuracy(&net, &data.1).unwrap(),
        certified: report.certified_global_fairness_pct,
    }
}

fn c7_sweep() -> Check {
    let started = Instant::now();
    let data = synthetic_split(SyntheticKind::Biased, SWEEP_SEED);
    let runs: Vec<Run> = SWEEP
        .iter()
        .map(|&l| train_and_certify(&data, Regularizer::Global, l, SWEEP_SEED))
        .collect();
    let drops: Vec<f64> = runs
        .windows(2)
        .map(|w| w[0].certified - w[1].certified)
        .filter(|&d| d > 0.0)
        .collect();
    let monotone = drops.len() <= 1 && drops.iter().all(|&d| d <= SWEEP_MAX_INVERSION_PP);
    let (first, top) = (&runs[0], &runs[runs.len() - 1]);
    let table: Vec<String> = SWEEP
        .iter()
        .zip(&runs)
        .map(|(l, r)| format!("{l:e}: {:.0}%/{:.2}", r.certified, r.accuracy))
        .collect();
    check(
        monotone && top.certified == 100.0 && top.accuracy < first.accuracy && started.elapsed() < SWEEP_BUDGET,
        format!("certified%/accuracy {}", table.join(", ")),
    )
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(
        std::iter::once("certifair").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn c8_local_vs_global() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let (data, points) = (dir.path().join("data"), dir.path().join("points"));
    let (c, _, e) = run_cli(&[
        "synth",
        "--kind",
        "separated",
        "--rows",
        "3000",
        "--seed",
        "0",
        "--out-dir",
        p(&data),
    ]);
    assert_eq!(c, 0, "{e}");
    let (c, _, e) = run_cli(&[
        "synth",
        "--kind",
        "separated",
        "--rows",
        "200",
        "--seed",
        "7",
        "--out-dir",
        p(&points),
    ]);
    assert_eq!(c, 0, "{e}");
    let model = dir.path().join("model.json");
    let (c, _, e) = run_cli(&[
        "train",
        "--data",
        p(&data.join("data.csv")),
        "--schema",
        p(&data.join("schema.json")),
        "--property",
        p(&data.join("property.json")),
        "--config",
        p(&data.join("config.json")),
        "--out-model",
        p(&model),
        "--history",
        p(&dir.path().join("history.csv")),
    ]);
    assert_eq!(c, 0, "{e}");
    let (schema, property) = (data.join("schema.json"), data.join("property.json"));
    let common = ["--model", p(&model), "--schema", p(&schema), "--property", p(&property)];
    let local_report = dir.path().join("local.json");
    let mut args = vec!["verify-local"];
    args.extend(common);
    let points_csv = points.join("data.csv");
    args.extend(["--points", p(&points_csv), "--report", p(&local_report)]);
    let (local_code, local_out, _) = run_cli(&args);
    let local: serde_json::Value = serde_json::from_str(&local_out).unwrap();
    let global_report = dir.path().join("global.json");
    let mut args = vec!["certify"];
    args.extend(common);
    args.extend(["--report", p(&global_report)]);
    let (global_code, global_out, _) = run_cli(&args);
    let global: serde_json::Value = serde_json::from_str(&global_out).unwrap();
    let local_pct = local["certified_local_fairness_pct"].as_f64().unwrap();
    let global_pct = global["certified_global_fairness_pct"].as_f64().unwrap();
    let checked =
        local["fair"].as_u64().unwrap() + local["unfair"].as_u64().unwrap() + local["resource_limit"].as_u64().unwrap();
    check(
        local_code == 0 && checked == 200 && local_pct == 100.0 && global_code == 1 && global_pct < 100.0,
        format!("local {local_pct:.1}% of {checked} points (exit {local_code}); global {global_pct:.1}% (exit {global_code})"),
    )
}

fn c9_regularizers() -> Check {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..COMPARISON_SEEDS {
        let data = synthetic_split(SyntheticKind::Biased, seed);
        let base = train_and_certify(&data, Regularizer::None, 0.0, seed);
        let global = train_and_certify(&data, Regularizer::Global, COMPARISON_LAMBDA, seed);
        let local = train_and_certify(&data, Regularizer::Local, COMPARISON_LAMBDA, seed);
        let (loss_g, loss_l) = (base.accuracy - global.accuracy, base.accuracy - local.accuracy);
        let ok = global.certified >= local.certified && loss_g <= loss_l;
        wins += usize::from(ok);
        rows.push(format!(
            "seed {seed}: global {:.0}%/-{loss_g:.2} local {:.0}%/-{loss_l:.2}{}",
            global.certified,
            local.certified,
            if ok { "" } else { " x" }
        ));
    }
    check(
        wins >= COMPARISON_REQUIRED,
        format!(
            "lambda {COMPARISON_LAMBDA}, {wins}/{COMPARISON_SEEDS} seeds; {}",
            rows.join("; ")
        ),
    )
}

fn c10_determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let (c, _, e) = run_cli(&[
        "synth",
        "--kind",
        "biased",
        "--rows",
        "1000",
        "--seed",
        "3",
        "--out-dir",
        p(&data),
    ]);
    assert_eq!(c, 0, "{e}");
    let train_with = |seed: &str, name: &str| -> Vec<u8> {
        std::env::set_var(cli::SEED_ENV, seed);
        let model = dir.path().join(name);
        let (c, _, e) = run_cli(&[
            "train",
            "--data",
            p(&data.join("data.csv")),
            "--schema",
            p(&data.join("schema.json")),
            "--property",
            p(&data.join("property.json")),
            "--config",
            p(&data.join("config.json")),
            "--out-model",
            p(&model),
            "--history",
            p(&dir.path().join(format!("{name}.csv"))),
        ]);
        std::env::remove_var(cli::SEED_ENV);
        assert_eq!(c, 0, "{e}");
        std::fs::read(model).unwrap()
    };
    let a = train_with("11", "a.json");
    let b = train_with("11", "b.json");
    let other = train_with("12", "c.json");
    check(
        a == b && a != other,
        format!(
            "same seed identical: {}; different seed differs: {}",
            a == b,
            a != other
        ),
    )
}
