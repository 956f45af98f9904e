//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//! Failures do not fail the run unless `TVSYNC_ACCEPTANCE_STRICT=1`.

mod common;

use std::time::{Duration, Instant};

use common::{random_stochastic, random_stochastic_any, rng, second_eig};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;
use tvsync::cml::{simulate, Logistic};
use tvsync::config::{sweep, Experiment, ExperimentConfig};
use tvsync::graph::{scrambling_product_check, Digraph};
use tvsync::hajnal::{eta, hajnal_bound_check};
use tvsync::jsr::{brute_force_jsr, gripenberg, project_set};
use tvsync::linalg::{make_stochastic, BasisKind, Matrix, NormKind, ProjectionBasis, StochasticMatrix};
use tvsync::source::{window_product, CouplingSource, FiniteSetIid, Periodic, SourceRegistry, Static};
use tvsync::spectral::{
    estimate_hajnal_diameter, estimate_projection_jsr, estimate_scalar_lyapunov,
    log_diam_series, lyapunov_spectrum_qr, T0Sampling,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn logistic_exponent() -> Outcome {
    let mu = estimate_scalar_lyapunov(&Logistic { alpha: 3.9 }, 0.3, 1_000, 1_000_000).unwrap();
    outcome((0.45..=0.55).contains(&mu), format!("mu = {mu:.4}, want [0.45, 0.55]"))
}

fn static_topology() -> Outcome {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let g = random_stochastic(&mut r, 10, 0.4, 0.1);
        let oracle = second_eig(&g);
        let est = estimate_hajnal_diameter(&mut Static::new(g), 200, &[0], NormKind::Inf).unwrap();
        worst = worst.max((est.value - oracle).abs() / oracle);
    }
    outcome(worst <= 0.05, format!("worst relative error {worst:.4} over 50 matrices, want <= 0.05"))
}

fn projection_equivalence() -> Outcome {
    let mut r = rng(3);
    let (mut worst_log, mut worst_basis): (f64, f64) = (0.0, 0.0);
    for k in 0..20 {
        let m = r.random_range(3..=8);
        let n_set = r.random_range(2..=3);
        let set: Vec<_> = (0..n_set).map(|_| random_stochastic(&mut r, m, 0.5, 0.2)).collect();
        let src = FiniteSetIid::new(set, None, 100 + k).unwrap();
        let h = 500;
        let t0s = T0Sampling::default().samples(h);
        let diam = estimate_hajnal_diameter(&mut src.clone(), h, &t0s, NormKind::Inf).unwrap();
        let jsr: Vec<f64> = [BasisKind::Difference, BasisKind::Orthonormal]
            .iter()
            .map(|&kind| {
                let basis = ProjectionBasis::new(m, kind).unwrap();
                estimate_projection_jsr(&mut src.clone(), &basis, h, &t0s, NormKind::Inf)
                    .unwrap()
                    .value
            })
            .collect();
        worst_log = worst_log.max((diam.value.ln() - jsr[0].ln()).abs());
        worst_basis = worst_basis.max((jsr[0] - jsr[1]).abs());
    }
    outcome(
        worst_log <= 0.02 && worst_basis <= 1e-6,
        format!(
            "max |log diam - log jsr| = {worst_log:.4} (<= 0.02), max basis gap = {worst_basis:.2e} (<= 1e-6)"
        ),
    )
}

fn hajnal_inequality() -> Outcome {
    let mut r = rng(4);
    let mut violations = 0;
    for _ in 0..10_000 {
        let m = r.random_range(2..=8);
        let g = random_stochastic_any(&mut r, m);
        let h = random_stochastic_any(&mut r, m);
        for kind in [NormKind::Inf, NormKind::One, NormKind::Two] {
            if !hajnal_bound_check(&g, &h, kind).unwrap().holds {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations in 10^4 pairs x 3 norms"))
}

/// Positive diagonal plus a random spanning tree and a few extra edges.
fn rooted_matrix(r: &mut impl Rng, m: usize) -> StochasticMatrix {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(r);
    let mut raw = Matrix::from_fn(m, m, |i, j| {
        if i == j || r.random::<f64>() < 0.15 {
            r.random_range(0.1..1.0)
        } else {
            0.0
        }
    })
    .unwrap()
    .into_data();
    for k in 1..m {
        let parent = order[r.random_range(0..k)];
        raw[order[k] * m + parent] += r.random_range(0.1..1.0);
    }
    make_stochastic(&Matrix::new(m, m, raw).unwrap()).unwrap()
}

fn scrambling_product() -> Outcome {
    let mut r = rng(5);
    let mut scrambling = 0;
    for _ in 0..1000 {
        let m = r.random_range(2..=6);
        let list: Vec<_> = (0..m - 1).map(|_| rooted_matrix(&mut r, m)).collect();
        if scrambling_product_check(&list).unwrap() {
            scrambling += 1;
        }
    }
    outcome(scrambling == 1000, format!("{scrambling}/1000 products scrambling"))
}

fn s(rows: &[&[f64]]) -> StochasticMatrix {
    StochasticMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
}

fn slope(ys: &[(f64, f64)]) -> f64 {
    let n = ys.len() as f64;
    let mx = ys.iter().map(|p| p.0).sum::<f64>() / n;
    let my = ys.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = ys.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = ys.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn spanning_tree_dichotomy() -> Outcome {
    // path 0 -> 1 -> 2 -> 3 spread over a period of three graphs
    let list = vec![
        s(&[&[1.0, 0.0, 0.0, 0.0], &[0.5, 0.5, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 1.0]]),
        s(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.0, 0.5, 0.5, 0.0], &[0.0, 0.0, 0.0, 1.0]]),
        s(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.5, 0.5]]),
    ];
    let (m, period) = (4u64, 3u64);
    let mut src = Periodic::new(list).unwrap();
    // a product of m - 1 spanning-tree windows is scrambling
    let len = period * (m - 1);
    let delta = (0..period)
        .map(|t0| {
            let p = window_product(&mut src, t0, len).unwrap().product;
            eta(&StochasticMatrix::with_tolerance(p, 1e-9).unwrap())
        })
        .fold(f64::INFINITY, f64::min);
    let bound = (1.0 - delta).ln() / len as f64;
    let h = 1000;
    let est = estimate_hajnal_diameter(&mut src, h, &T0Sampling::default().samples(h), NormKind::Inf)
        .unwrap();
    let series = log_diam_series(&mut src, 0, h, NormKind::Inf).unwrap();
    let pts: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .skip(100)
        .filter_map(|(t, v)| v.map(|v| ((t + 1) as f64, v)))
        .collect();
    let fitted = if pts.len() < 2 { f64::NEG_INFINITY } else { slope(&pts) };
    let connected_ok = est.value < 1.0 && fitted <= 0.5 * bound;

    // two rooted blocks {0, 1} and {2, 3} that never talk to each other
    let blocks = vec![
        s(&[&[1.0, 0.0, 0.0, 0.0], &[0.5, 0.5, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.5, 0.5]]),
        s(&[&[1.0, 0.0, 0.0, 0.0], &[0.3, 0.7, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.7, 0.3]]),
    ];
    let union = tvsync::graph::union(
        &blocks
            .iter()
            .map(|g| Digraph::from_matrix(g.as_matrix(), 0.0).unwrap())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let mut split = Periodic::new(blocks).unwrap();
    let min_diam = [0, 1]
        .iter()
        .flat_map(|&t0| log_diam_series(&mut split, t0, h, NormKind::Inf).unwrap())
        .map(|v| v.map_or(0.0, f64::exp))
        .fold(f64::INFINITY, f64::min);
    let split_ok = union.has_spanning_tree().is_none() && min_diam >= 0.9;
    outcome(
        connected_ok && split_ok,
        format!(
            "connected: diam {:.4} < 1, slope {fitted:.4} <= {:.4} (half of log(1-delta)/T = {bound:.4}, delta {delta:.4}); split: min diam {min_diam:.3} >= 0.9",
            est.value,
            0.5 * bound
        ),
    )
}

fn blinking_sweep() -> Outcome {
    let mut config = ExperimentConfig::new(json!({
        "variant": "blinking", "m": 100, "avg_degree": 12, "p": 1e-4, "t_rec": 3
    }));
    config.map = json!({"variant": "logistic", "alpha": 3.9});
    config.estimator.horizon = 1000;
    config.simulation.steps = 1000;
    config.seed = 7;
    let grid: Vec<f64> = (0..8).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).chain([0.5]).collect();
    let rows = sweep(&config, "p", &grid).unwrap();
    let mut wrong = Vec::new();
    let mut decided = 0;
    let mut summary = Vec::new();
    for row in &rows {
        let w = row.w.to_sentinel();
        summary.push(format!("p={:.1e}:W={w:.3},K={:.1e}", row.value, row.k));
        if row.indeterminate {
            continue;
        }
        decided += 1;
        let ok = if row.predicted_sync { row.k < 1e-6 } else { row.k > 1e-3 };
        if !ok {
            wrong.push(row.value);
        }
    }
    outcome(
        wrong.is_empty(),
        format!(
            "{}/{decided} decided grid points agree ({}); mismatches at p = {wrong:?}",
            decided - wrong.len(),
            summary.join(" ")
        ),
    )
}

fn blurring_run() -> Outcome {
    let mut config = ExperimentConfig::new(json!({"variant": "blurring", "m": 100, "r": 0.05}));
    config.map = json!({"variant": "logistic", "alpha": 3.9});
    config.estimator.horizon = 1000;
    config.simulation.steps = 1000;
    config.seed = 8;
    let run = Experiment::new(config).unwrap().run_sync().unwrap();
    let w = run.report.w.to_sentinel();
    let ks: Vec<f64> = run.report.k_series.iter().filter(|(t, _)| *t >= 200).map(|p| p.1).collect();
    let monotone = ks.windows(2).all(|p| p[1] < p[0]);
    outcome(
        (-0.9..=-0.3).contains(&w) && monotone,
        format!(
            "W = {w:.3} (sigma1 {:.3}, mu {:.3}), want [-0.9, -0.3]; K decreasing over t >= 200: {monotone}; final K {:.2e}",
            run.report.sigma1.to_sentinel(),
            run.report.mu,
            ks.last().unwrap()
        ),
    )
}

fn gripenberg_correctness() -> Outcome {
    let mut r = rng(9);
    let mut single_err: f64 = 0.0;
    for _ in 0..10 {
        let n = r.random_range(1..=5);
        let a = Matrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0)).unwrap();
        let rho = common::eig_moduli(&a)[0];
        let b = gripenberg(std::slice::from_ref(&a), 1e-6, 24).unwrap();
        single_err = single_err.max((b.lower - rho).abs()).max((b.upper - rho).abs());
    }
    let basis = ProjectionBasis::new(4, BasisKind::Orthonormal).unwrap();
    let (mut bracket_fail, mut gap_fail, mut worst_gap) = (0, 0, 0.0f64);
    for _ in 0..20 {
        let pair = [random_stochastic(&mut r, 4, 1.0, 0.0), random_stochastic(&mut r, 4, 1.0, 0.0)];
        let set = project_set(&pair, &basis).unwrap();
        let oracle = brute_force_jsr(&set, 12).unwrap();
        let b = gripenberg(&set, 1e-3, 24).unwrap();
        let lower_ok = b.lower <= oracle + 1e-9 || b.witness.len() > 12;
        if !(lower_ok && b.upper >= oracle - 1e-9) {
            bracket_fail += 1;
        }
        worst_gap = worst_gap.max(b.upper - b.lower);
        if b.upper - b.lower > 1e-3 {
            gap_fail += 1;
        }
    }
    outcome(
        single_err <= 1e-6 && bracket_fail == 0 && gap_fail == 0,
        format!(
            "singleton error {single_err:.1e} (<= 1e-6); pairs: {bracket_fail} bracket failures, {gap_fail}/20 gaps > 1e-3 (worst {worst_gap:.2e})"
        ),
    )
}

fn lyapunov_identity() -> Outcome {
    let mut r = rng(10);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let m = r.random_range(3..=8);
        let g = random_stochastic(&mut r, m, 0.6, 0.5 * m as f64);
        let h = 10_000;
        let exps = lyapunov_spectrum_qr(m, h, |_| Ok(g.as_matrix().clone())).unwrap();
        let diam = estimate_hajnal_diameter(&mut Static::new(g), h, &[0], NormKind::Inf).unwrap();
        worst = worst.max((exps[1].exp() - diam.value).abs() / diam.value);
    }
    outcome(worst <= 0.05, format!("worst relative gap {worst:.2e}, want <= 0.05"))
}

fn diagonal_invariance() -> Outcome {
    let mut r = rng(11);
    let m = 30;
    let a = random_stochastic(&mut r, m, 0.3, 0.1);
    let b = random_stochastic(&mut r, m, 0.3, 0.1);
    let registry = SourceRegistry::with_builtins();
    let mut bad = Vec::new();
    let mut checked = Vec::new();
    for name in registry.names() {
        let spec = match name {
            "static" => json!({"variant": name, "matrix": a}),
            "periodic" => json!({"variant": name, "matrices": [a, b]}),
            "finite_set" => json!({"variant": name, "matrices": [a, b], "weights": [0.3, 0.7]}),
            "blinking" => json!({"variant": name, "m": m, "avg_degree": 6, "p": 0.05, "t_rec": 3}),
            "blurring" => json!({"variant": name, "m": m, "r": 0.05}),
            other => {
                bad.push(format!("{other}: no test spec"));
                continue;
            }
        };
        let mut src: Box<dyn CouplingSource> = registry.build(&spec, 12).unwrap();
        let sim = simulate(src.as_mut(), &Logistic { alpha: 3.9 }, &vec![0.3; m], 1000, 1).unwrap();
        if sim.records.iter().any(|rec| rec.diam != 0.0) {
            bad.push(name.to_string());
        }
        checked.push(name.to_string());
    }
    outcome(
        bad.is_empty(),
        format!("variants {checked:?} keep diam exactly 0; failures {bad:?}"),
    )
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Check, Option<Duration>); 11] = [
        ("logistic exponent", logistic_exponent, Some(Duration::from_secs(5))),
        ("static topology", static_topology, Some(Duration::from_secs(10))),
        ("diameter equals projection radius", projection_equivalence, None),
        ("generalized Hajnal inequality", hajnal_inequality, None),
        ("scrambling product", scrambling_product, None),
        ("spanning-tree dichotomy", spanning_tree_dichotomy, None),
        ("blinking sweep", blinking_sweep, Some(Duration::from_secs(120))),
        ("blurring run", blurring_run, Some(Duration::from_secs(60))),
        ("gripenberg correctness", gripenberg_correctness, None),
        ("second exponent equals diameter", lyapunov_identity, None),
        ("diagonal invariance", diagonal_invariance, None),
    ];
    let mut passed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = out.pass && in_time;
        if pass {
            passed += 1;
        }
        let limit = limit.map_or(String::new(), |l| format!(" limit {}s", l.as_secs()));
        println!(
            "criterion {:>2} {} {name}: {} [{:.2}s{limit}]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
    if passed < criteria.len() && std::env::var("TVSYNC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
