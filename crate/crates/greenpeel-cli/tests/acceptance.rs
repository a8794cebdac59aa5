//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers. Run with `cargo test -p greenpeel-cli --test
//! acceptance -- --nocapture` to see every line.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;

use greenpeel::coeff::CoefficientField;
use greenpeel::evaluate::{evaluate_exact, global_rsvd_baseline, near_field_floor};
use greenpeel::grid::Grid;
use greenpeel::hier::BoxTree;
use greenpeel::operator::{assemble, DiscreteOperator};
use greenpeel::peel::{
    learn, predicted_ledger, NearFieldPolicy, PeelConfig, SyntheticOperator,
};
use greenpeel::sampling::{covariance_matrix_with_cap, factorize, KernelSpec};
use greenpeel_cli::report::{read_sweep_csv, write_sweep_csv};
use greenpeel_cli::theory::{failure_bound, n_theory};

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

// ---------------------------------------------------------------------------
// criterion 1: exact hierarchical recovery
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_exact_hierarchical_recovery() {
    let started = Instant::now();
    let grid = Grid::new(1, 128).unwrap();
    let mut worst_block_err = 0.0f64;
    let mut ledger_checks = 0;
    for seed in 0..50u64 {
        let truth = SyntheticOperator::exact_rank(&grid, 4, 3, 5000 + seed).unwrap();
        let config = PeelConfig::new(4).with_rank(3).with_seed(9000 + seed);
        let result = learn(&truth, &config).expect("learn must not fail");
        assert_eq!(result.ledger, predicted_ledger(&grid, &config), "budget accounting");
        ledger_checks += 1;
        for level in 2..=4 {
            for (t_block, l_block) in
                truth.truth().blocks_at(level).iter().zip(result.approx.blocks_at(level))
            {
                let scale = t_block.to_dense().norm();
                let err = (t_block.to_dense() - l_block.to_dense()).norm() / scale;
                worst_block_err = worst_block_err.max(err);
                assert!(
                    err <= 1e-10,
                    "seed {seed} level {level} block ({},{}): {err:.3e}",
                    t_block.target_box,
                    t_block.source_box
                );
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "runtime {elapsed:?} exceeds 30 s");
    println!(
        "criterion 1: PASS — 50 seeds, 0 failures, worst block error {worst_block_err:.2e} <= 1e-10, \
         {ledger_checks} exact ledger checks, runtime {:.1} s",
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// criterion 2: analytic 1d Poisson
// ---------------------------------------------------------------------------

/// Independent oracle: near-diagonal Hilbert–Schmidt mass fraction of the
/// analytic kernel min(x,y)(1-max(x,y)) sampled on the grid. No solver, no
/// learned operator.
fn analytic_near_fraction_1d(n: usize, depth: usize) -> f64 {
    let h = 1.0 / (n as f64 + 1.0);
    let boxes = 1usize << depth;
    let per_box = n / boxes;
    let g = |i: usize, j: usize| -> f64 {
        let (x, y) = ((i as f64 + 1.0) * h, (j as f64 + 1.0) * h);
        x.min(y) * (1.0 - x.max(y))
    };
    let mut near = 0.0;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = g(i, j) * g(i, j);
            total += v;
            if ((i / per_box) as i64 - (j / per_box) as i64).abs() <= 1 {
                near += v;
            }
        }
    }
    (near / total).sqrt()
}

#[test]
fn criterion_2_analytic_1d_poisson() {
    let grid = Grid::new(1, 256).unwrap();
    let op = assemble(&grid, &CoefficientField::Identity).unwrap();
    let kernel = op.dense_kernel().unwrap();

    // rank 1 + dense near field: the one-sided kernel x(1-y) is exactly rank 1
    let config = PeelConfig::new(5)
        .with_rank(1)
        .with_seed(11)
        .with_near_field(NearFieldPolicy::DenseProbe);
    let result = learn(&op, &config).unwrap();
    assert_eq!(result.ledger, predicted_ledger(&grid, &config), "budget accounting");
    let exact = evaluate_exact(&result.approx, &kernel, &grid).unwrap();
    assert!(exact.err_hs_rel <= 1e-8, "dense near field: err {:.3e}", exact.err_hs_rel);

    // neglect: error equals the analytically integrated near-diagonal mass
    let mut floors = Vec::new();
    for depth in [3usize, 4, 5] {
        let config = PeelConfig::new(depth).with_rank(1).with_seed(13);
        let result = learn(&op, &config).unwrap();
        assert_eq!(result.ledger, predicted_ledger(&grid, &config), "budget accounting");
        let errs = evaluate_exact(&result.approx, &kernel, &grid).unwrap();
        let analytic = analytic_near_fraction_1d(256, depth);
        assert!(
            (errs.err_hs_rel - analytic).abs() <= 1e-6,
            "depth {depth}: err {:.9} vs analytic near mass {analytic:.9}",
            errs.err_hs_rel
        );
        floors.push(errs.err_hs_rel);
    }
    assert!(floors[0] > floors[1] && floors[1] > floors[2], "floor decreases with depth: {floors:?}");
    println!(
        "criterion 2: PASS — rank-1 + dense near field err {:.2e} <= 1e-8; neglect floors \
         {:.4} > {:.4} > {:.4} match analytic near mass within 1e-6",
        exact.err_hs_rel, floors[0], floors[1], floors[2]
    );
}

// ---------------------------------------------------------------------------
// shared 2d sweep for criteria 3, 4 and 6
// ---------------------------------------------------------------------------

struct SweepData {
    /// (rank, median ledger N, median err_hs_rel) for k = 1..=8, dense near field.
    dense: Vec<(usize, u64, f64)>,
    /// Neglect-mode median error at k = 4.
    neglect_median: f64,
    /// Near-field floor of the L=3 tree (hs fraction).
    floor_hs: f64,
    /// Ledger checks performed, all exact.
    ledger_checks: usize,
    elapsed_seconds: f64,
}

fn poisson_2d() -> &'static (Grid, DiscreteOperator, DMatrix<f64>) {
    static CELL: OnceLock<(Grid, DiscreteOperator, DMatrix<f64>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let grid = Grid::new(2, 32).unwrap();
        let op = assemble(&grid, &CoefficientField::Identity).unwrap();
        let kernel = op.dense_kernel().unwrap();
        (grid, op, kernel)
    })
}

fn sweep_2d() -> &'static SweepData {
    static CELL: OnceLock<SweepData> = OnceLock::new();
    CELL.get_or_init(|| {
        let started = Instant::now();
        let (grid, op, kernel) = poisson_2d();
        let tree = BoxTree::build(grid, 3).unwrap();
        let floor = near_field_floor(kernel, &tree);
        let seeds: Vec<u64> = (0..10).collect();
        let mut ledger_checks = 0;

        let mut dense = Vec::new();
        for k in 1..=8usize {
            let mut errs = Vec::new();
            let mut ns = Vec::new();
            for &seed in &seeds {
                let config = PeelConfig::new(3)
                    .with_rank(k)
                    .with_seed(40_000 + 100 * k as u64 + seed)
                    .with_near_field(NearFieldPolicy::DenseProbe);
                let result = learn(op, &config).expect("sweep run");
                assert_eq!(result.ledger, predicted_ledger(grid, &config), "budget accounting");
                ledger_checks += 1;
                let err = evaluate_exact(&result.approx, kernel, grid).unwrap().err_hs_rel;
                errs.push(err);
                ns.push(result.ledger.training_total());
            }
            ns.sort_unstable();
            let med_err = median(&mut errs);
            dense.push((k, ns[ns.len() / 2], med_err));
        }

        let mut neglect_errs = Vec::new();
        for &seed in &seeds {
            let config = PeelConfig::new(3).with_rank(4).with_seed(60_000 + seed);
            let result = learn(op, &config).expect("neglect run");
            assert_eq!(result.ledger, predicted_ledger(grid, &config), "budget accounting");
            ledger_checks += 1;
            neglect_errs.push(evaluate_exact(&result.approx, kernel, grid).unwrap().err_hs_rel);
        }

        SweepData {
            dense,
            neglect_median: median(&mut neglect_errs),
            floor_hs: floor.hs_frac,
            ledger_checks,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_3_2d_poisson_rank_decay() {
    let data = sweep_2d();
    assert!(
        data.elapsed_seconds < 300.0,
        "sweep runtime {:.1} s exceeds 5 minutes",
        data.elapsed_seconds
    );

    // with the near field extracted exactly, the error is pure far-field and
    // must decay geometrically in the rank until it bottoms out
    let e_min = data.dense.iter().map(|&(_, _, e)| e).fold(f64::INFINITY, f64::min);
    let mut decaying_steps = 0;
    for pair in data.dense.windows(2) {
        let (_, _, e0) = pair[0];
        let (_, _, e1) = pair[1];
        if e0 > 10.0 * e_min {
            assert!(e1 <= 0.8 * e0, "ratio {:.3} above 0.8 at rank {}", e1 / e0, pair[0].0);
            decaying_steps += 1;
        }
    }
    assert!(decaying_steps >= 3, "need at least 3 geometric steps, saw {decaying_steps}");

    // with the near field neglected the error saturates at the floor
    let rel = (data.neglect_median - data.floor_hs).abs() / data.floor_hs;
    assert!(rel <= 0.05, "neglect error {:.5} vs floor {:.5}", data.neglect_median, data.floor_hs);

    let ratios: Vec<String> = data
        .dense
        .windows(2)
        .map(|p| format!("{:.2}", p[1].2 / p[0].2))
        .collect();
    println!(
        "criterion 3: PASS — dense-near-field medians decay {:.2e} .. {:.2e} with ratios [{}] \
         (all <= 0.8 pre-floor, {} steps); neglect sits on the near-field floor {:.4} \
         (deviation {:.2}%); runtime {:.0} s < 300 s",
        data.dense[0].2,
        data.dense[7].2,
        ratios.join(", "),
        decaying_steps,
        data.floor_hs,
        rel * 100.0,
        data.elapsed_seconds
    );
}

// ---------------------------------------------------------------------------
// criterion 4: sample-efficiency trend and global baseline contrast
// ---------------------------------------------------------------------------

/// Least-squares quadratic fit `y = c2 x^2 + c1 x + c0`.
fn quadratic_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let (mut sx, mut sx2, mut sx3, mut sx4) = (0.0, 0.0, 0.0, 0.0);
    let (mut sy, mut sxy, mut sx2y) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sx += x;
        sx2 += x * x;
        sx3 += x * x * x;
        sx4 += x * x * x * x;
        sy += y;
        sxy += x * y;
        sx2y += x * x * y;
    }
    // normal equations for [c2, c1, c0]
    let a = [[sx4, sx3, sx2], [sx3, sx2, sx], [sx2, sx, n]];
    let b = [sx2y, sxy, sy];
    let det3 = |m: &[[f64; 3]; 3]| -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(&a);
    let mut m0 = a;
    for i in 0..3 {
        m0[i][0] = b[i];
    }
    let mut m1 = a;
    for i in 0..3 {
        m1[i][1] = b[i];
    }
    let mut m2 = a;
    for i in 0..3 {
        m2[i][2] = b[i];
    }
    (det3(&m0) / d, det3(&m1) / d, det3(&m2) / d)
}

#[test]
fn criterion_4_sample_efficiency_trend() {
    let data = sweep_2d();
    let xs: Vec<f64> = data.dense.iter().map(|&(_, n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = data.dense.iter().map(|&(_, _, e)| e.ln()).collect();

    // super-algebraic improvement: the fitted log err vs log N curve bends
    // down, so the slope magnitude grows with N
    let (c2, c1, _) = quadratic_fit(&xs, &ys);
    assert!(c2 < 0.0, "fit must be convex decreasing, got curvature {c2:.1}");
    let mut triple_slopes = Vec::new();
    for i in 0..3 {
        // fitted slope at the midpoints of three consecutive budget triples
        let mid = xs[i + 1];
        triple_slopes.push(2.0 * c2 * mid + c1);
    }
    for pair in triple_slopes.windows(2) {
        assert!(
            pair[1].abs() > pair[0].abs(),
            "fitted slope magnitude must increase: {triple_slopes:?}"
        );
    }

    // coarse check on the raw medians: second-half slope steeper than first
    let mid = xs.len() / 2;
    let s1 = (ys[mid] - ys[0]) / (xs[mid] - xs[0]);
    let s2 = (ys[xs.len() - 1] - ys[mid]) / (xs[xs.len() - 1] - xs[mid]);
    assert!(s2.abs() > s1.abs(), "halves slopes {s1:.1} -> {s2:.1}");

    println!(
        "criterion 4 (trend): PASS — log err vs log N curvature {c2:.1} < 0, fitted slopes at 3 \
         consecutive triples {:?}, halves slopes {s1:.1} -> {s2:.1}",
        triple_slopes.iter().map(|s| format!("{s:.1}")).collect::<Vec<_>>()
    );
}

#[test]
fn criterion_4_global_baseline_contrast() {
    let data = sweep_2d();
    let (grid, op, kernel) = poisson_2d();
    let (k8, n8, hier_err) = *data.dense.last().unwrap();
    assert_eq!(k8, 8);

    // the established training process: squared-exponential forcings
    let cov = covariance_matrix_with_cap(
        grid,
        &KernelSpec::SquaredExponential { length_scale: 0.2 },
        4096,
    )
    .unwrap();
    let factor = factorize(&cov, 1e-12, 0).unwrap();
    let mut errs = Vec::new();
    for seed in 0..10u64 {
        let (approx, solves) = global_rsvd_baseline(op, n8 as usize, &factor, 77_000 + seed).unwrap();
        assert!(solves <= n8);
        errs.push((kernel - &approx).norm() / kernel.norm());
    }
    let baseline = median(&mut errs);
    println!(
        "criterion 4 (baseline): hierarchical err {hier_err:.2e} at N = {n8}, global GP-probed \
         randomized SVD err {baseline:.2e} at the same N, ratio {:.2}",
        baseline / hier_err
    );
    assert!(
        baseline >= 2.0 * hier_err,
        "UNATTAINABLE AT THIS SCALE: the largest sweep budget N = {n8} exceeds twice the \
         discretized operator dimension (1024), so any global randomized SVD with N/2 range \
         probes and N/2 co-range probes reconstructs the operator to numerical dust \
         ({baseline:.2e}) and cannot be 2x worse than the hierarchical result ({hier_err:.2e}). \
         The data-efficiency contrast requires budgets below the operator dimension, which the \
         per-level probe counts of this method already exceed at the smallest rank on a 32x32 \
         grid."
    );
}

// ---------------------------------------------------------------------------
// criterion 5: variable coefficients
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_checkerboard_adaptive() {
    let grid = Grid::new(2, 32).unwrap();
    let op = assemble(&grid, &CoefficientField::from_name("checkerboard").unwrap()).unwrap();
    let kernel = op.dense_kernel().unwrap();
    let tree = BoxTree::build(&grid, 3).unwrap();
    let floor = near_field_floor(&kernel, &tree);
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let config = PeelConfig::new(3).with_adaptive(1e-2, 24, 2).with_seed(81_000 + seed);
        let result = learn(&op, &config).expect("no failures allowed");
        assert_eq!(result.ledger, predicted_ledger(&grid, &config), "budget accounting");
        let errs = evaluate_exact(&result.approx, &kernel, &grid).unwrap();
        assert!(
            errs.err_op_rel <= 1e-2 + floor.op_frac,
            "seed {seed}: err_op_rel {:.4} above 1e-2 + floor {:.4}",
            errs.err_op_rel,
            floor.op_frac
        );
        worst = worst.max(errs.err_op_rel);
    }
    println!(
        "criterion 5: PASS — checkerboard contrast 10, adaptive 1e-2: 10 seeds, 0 failures, \
         worst err_op_rel {worst:.4} <= 1e-2 + near floor {:.4}",
        floor.op_frac
    );
}

// ---------------------------------------------------------------------------
// criterion 6: budget accounting
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_budget_accounting() {
    // every learn above asserts ledger == closed form; here the count is
    // surfaced, plus a direct spot check across modes and policies
    let grid = Grid::new(1, 64).unwrap();
    let op = assemble(&grid, &CoefficientField::Identity).unwrap();
    let mut checked = 0;
    for config in [
        PeelConfig::new(3).with_rank(2).with_seed(1),
        PeelConfig::new(3).with_rank(2).with_seed(2).with_near_field(NearFieldPolicy::DenseProbe),
        PeelConfig::new(3).with_adaptive(1e-3, 8, 2).with_seed(3),
        PeelConfig::new(3).with_rank(5).with_seed(4).with_kernel(KernelSpec::White),
    ] {
        let result = learn(&op, &config).unwrap();
        let predicted = predicted_ledger(&grid, &config);
        assert_eq!(result.ledger, predicted, "config {config:?}");
        assert_eq!(result.ledger.training_total(), predicted.training_total());
        checked += 1;
    }
    let sweep_checks = sweep_2d().ledger_checks;
    println!(
        "criterion 6: PASS — ledger equals the closed-form count exactly on {checked} spot \
         configurations and {sweep_checks} sweep runs (fixed and adaptive, both near-field \
         policies)"
    );
}

// ---------------------------------------------------------------------------
// criterion 7: theory overlays
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_theory_overlays() {
    // frozen independent evaluations (40-digit arithmetic)
    let fb = failure_bound(1e-3).unwrap();
    let fb_want = 7.05912735388148e-144;
    assert!(fb > 1e-144 && fb < 1e-143, "failure_bound(1e-3) = {fb:e}");
    assert!((fb - fb_want).abs() / fb_want <= 1e-12);

    let nt = n_theory((-std::f64::consts::E).exp(), 1.0, 1.0).unwrap();
    let nt_want = 148.4131591025766;
    assert!((nt - nt_want).abs() / nt_want <= 1e-12);

    // monotone in 1/eps and in 1/gamma
    let mut prev = 0.0;
    for k in 1..80 {
        let eps = 0.3 * 0.85f64.powi(k);
        let v = n_theory(eps, 0.7, 3.0).unwrap();
        assert!(v > prev);
        prev = v;
    }
    let mut prev = 0.0;
    for k in 1..60 {
        let v = n_theory(1e-4, 0.95f64.powi(k), 3.0).unwrap();
        assert!(v > prev);
        prev = v;
    }
    println!(
        "criterion 7: PASS — failure_bound(1e-3) = {fb:.3e} in (1e-144, 1e-143), n_theory at \
         e^-e = {nt:.6}, both within 1e-12 of independent evaluation; monotone in 1/eps and 1/gamma"
    );
}

// ---------------------------------------------------------------------------
// criterion 8: determinism and io
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_determinism_and_io() {
    // identical config + seed must give identical sweep rows on 1 and 8 workers
    let cfg = greenpeel_cli::config::RunConfig::from_json(
        r#"{
            "problem": {"d": 1, "n": 64, "coefficient": "identity"},
            "hierarchy": {"levels": 3},
            "sampling": {"kernel": "white", "master_seed": 9},
            "algorithm": {"rank": 1},
            "evaluation": {"dense_oracle": true, "test_set_size": 4},
            "sweep": {"budgets": [1, 2, 3], "seeds": [1, 2]}
        }"#,
    )
    .unwrap();
    let mut rows1 = greenpeel_cli::runner::run_sweep(&cfg, 1).unwrap();
    let mut rows8 = greenpeel_cli::runner::run_sweep(&cfg, 8).unwrap();
    for r in rows1.iter_mut().chain(rows8.iter_mut()) {
        r.wall_time = 0.0; // the only timing-dependent column
    }
    assert_eq!(write_sweep_csv(&rows1), write_sweep_csv(&rows8), "worker count changed results");

    // dataset round trip is bit-exact
    let grid = Grid::new(1, 32).unwrap();
    let op = assemble(&grid, &CoefficientField::Identity).unwrap();
    let config = PeelConfig::new(3).with_rank(1).with_seed(5);
    let recorder = greenpeel::peel::RecordingOracle::new(&op);
    let _ = learn(&recorder, &config).unwrap();
    let set = recorder.into_training_set(&config, "identity");
    let bytes = greenpeel_cli::dataset::dataset_to_bytes(&set);
    let back = greenpeel_cli::dataset::dataset_from_bytes(&bytes).unwrap();
    for ((f0, u0), (f1, u1)) in set.pairs.iter().zip(&back.pairs) {
        assert_eq!(f0.values, f1.values, "forcing bits changed");
        assert_eq!(u0.values, u1.values, "solution bits changed");
    }
    assert_eq!(bytes, greenpeel_cli::dataset::dataset_to_bytes(&back), "re-serialization differs");

    // csv round trip preserves rows exactly
    let text = write_sweep_csv(&rows1);
    let reread = read_sweep_csv(&text).unwrap();
    assert_eq!(rows1, reread);

    println!(
        "criterion 8: PASS — identical CSV rows with 1 and 8 workers ({} rows, wall_time \
         excluded as timing); dataset of {} pairs round-trips bit-exact; csv round-trips",
        rows1.len(),
        set.pairs.len()
    );
}
