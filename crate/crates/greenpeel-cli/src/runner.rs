//! Command implementations: problem setup, single runs, sweeps, reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use greenpeel::coeff::CoefficientField;
use greenpeel::evaluate::{
    evaluate_exact, evaluate_sampled, generate_test_pairs, near_field_floor,
};
use greenpeel::grid::Grid;
use greenpeel::hier::BoxTree;
use greenpeel::ledger::LedgerCounts;
use greenpeel::lowrank::orthonormal_columns;
use greenpeel::operator::{assemble, hs_norm, DiscreteOperator};
use greenpeel::peel::{
    learn, learn_from_dataset, predicted_ledger, DatasetLearnMode, PeelConfig,
};
use greenpeel::sampling::{
    covariance_matrix_with_cap, factorize, identity_factor, quality_proxy, CovarianceFactor,
    KernelSpec,
};

use crate::config::{RunConfig, DENSE_ORACLE_CAP};
use crate::dataset;
use crate::report::{median_by_budget, render_sweep_svg, write_sweep_csv, SweepRow};

/// Errors split by exit code: validation failures exit 1, runtime failures 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<greenpeel::Error> for CliError {
    fn from(e: greenpeel::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<crate::dataset::DatasetError> for CliError {
    fn from(e: crate::dataset::DatasetError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<crate::report::ReportError> for CliError {
    fn from(e: crate::report::ReportError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("io error on {}: {e}", path.display()))
}

/// Expensive per-problem artifacts shared across sweep points.
pub struct PreparedProblem {
    pub grid: Grid,
    pub operator: DiscreteOperator,
    /// Dense kernel oracle when enabled and under the cap.
    pub kernel: Option<DMatrix<f64>>,
    /// Data-quality proxy of the training process against the kernel's
    /// dominant 8 modes; NaN when the dense oracle is off.
    pub gamma_hat: f64,
    /// Covariance factor for drawing evaluation forcings.
    pub eval_factor: CovarianceFactor,
}

pub fn prepare(cfg: &RunConfig) -> Result<PreparedProblem, CliError> {
    let grid = cfg.grid()?;
    let coeff = CoefficientField::from_name(&cfg.problem.coefficient)?;
    let operator = assemble(&grid, &coeff)?;
    let kernel = if cfg.evaluation.dense_oracle {
        Some(operator.dense_kernel_with_cap(DENSE_ORACLE_CAP)?)
    } else {
        None
    };
    let eval_factor = match cfg.kernel_spec() {
        KernelSpec::White => identity_factor(grid.total_nodes(), cfg.sampling.master_seed),
        kernel_spec => {
            let c = covariance_matrix_with_cap(&grid, &kernel_spec, DENSE_ORACLE_CAP)?;
            factorize(&c, 1e-12, cfg.sampling.master_seed)?
        }
    };
    let gamma_hat = match (&kernel, cfg.kernel_spec()) {
        (Some(_), KernelSpec::White) => 1.0,
        (Some(g), spec @ KernelSpec::SquaredExponential { .. }) => {
            let c = covariance_matrix_with_cap(&grid, &spec, DENSE_ORACLE_CAP)?;
            quality_gamma(g, &c)
        }
        (None, _) => f64::NAN,
    };
    Ok(PreparedProblem { grid, operator, kernel, gamma_hat, eval_factor })
}

/// Quality proxy against the dominant 8 kernel modes.
fn quality_gamma(kernel: &DMatrix<f64>, covariance: &DMatrix<f64>) -> f64 {
    const MODES: usize = 8;
    let sym = 0.5 * (kernel + kernel.transpose());
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b].abs().partial_cmp(&eig.eigenvalues[a].abs()).unwrap()
    });
    let k = MODES.min(order.len());
    let mut v = DMatrix::zeros(kernel.nrows(), k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        v.set_column(col, &eig.eigenvectors.column(idx));
    }
    let v = orthonormal_columns(&v, 1e-13);
    match quality_proxy(covariance, &v) {
        Ok(report) => report.gamma_hat,
        Err(_) => f64::NAN,
    }
}

fn ledger_json(counts: &LedgerCounts) -> Value {
    json!({
        "sketch_by_level": counts.sketch_by_level,
        "posterior_by_level": counts.posterior_by_level,
        "near_field": counts.near_field,
        "hs_estimate": counts.hs_estimate,
        "evaluation": counts.evaluation,
        "training_total": counts.training_total(),
        "note": "training_total excludes evaluation solves and includes HS-estimate probes",
    })
}

/// One learning run at the given budget and seed; panics are impossible, any
/// failure lands in the row's note.
pub fn run_point(
    prepared: &PreparedProblem,
    cfg: &RunConfig,
    budget: Option<f64>,
    seed: u64,
) -> SweepRow {
    let peel_cfg = cfg.peel_config(budget, Some(seed));
    let budget_value = budget.unwrap_or(match (cfg.algorithm.rank, cfg.algorithm.epsilon) {
        (Some(k), _) => k as f64,
        (None, Some(eps)) => eps,
        (None, None) => f64::NAN,
    });
    let started = Instant::now();
    match run_point_inner(prepared, cfg, &peel_cfg) {
        Ok((n_train, err_hs, err_op, sampled)) => SweepRow {
            n_train,
            budget: budget_value,
            levels: cfg.hierarchy.levels,
            err_hs_rel: err_hs,
            err_op_rel: err_op,
            sampled_err: sampled,
            gamma_hat: prepared.gamma_hat,
            seed,
            wall_time: started.elapsed().as_secs_f64(),
            note: String::new(),
        },
        Err(e) => SweepRow {
            n_train: predicted_ledger(&prepared.grid, &peel_cfg).training_total(),
            budget: budget_value,
            levels: cfg.hierarchy.levels,
            err_hs_rel: f64::NAN,
            err_op_rel: f64::NAN,
            sampled_err: f64::NAN,
            gamma_hat: prepared.gamma_hat,
            seed,
            wall_time: started.elapsed().as_secs_f64(),
            note: e.to_string(),
        },
    }
}

fn run_point_inner(
    prepared: &PreparedProblem,
    cfg: &RunConfig,
    peel_cfg: &PeelConfig,
) -> Result<(u64, f64, f64, f64), CliError> {
    let result = learn(&prepared.operator, peel_cfg)?;
    let (err_hs, err_op) = match &prepared.kernel {
        Some(kernel) => {
            let errs = evaluate_exact(&result.approx, kernel, &prepared.grid)?;
            (errs.err_hs_rel, errs.err_op_rel)
        }
        None => (f64::NAN, f64::NAN),
    };
    let pairs = generate_test_pairs(
        &prepared.operator,
        &prepared.eval_factor,
        cfg.evaluation.test_set_size,
        peel_cfg.master_seed,
    )?;
    let hs_est = match &prepared.kernel {
        Some(kernel) => hs_norm(kernel, &prepared.grid),
        None => result.info.hs_estimate.unwrap_or(1.0),
    };
    let sampled = evaluate_sampled(&result.approx, &pairs, hs_est)?.mean_rel;
    Ok((result.ledger.training_total(), err_hs, err_op, sampled))
}

/// Sweep across budgets and seeds on a worker pool. Rows are ordered by
/// (budget index, seed index) regardless of completion order.
pub fn run_sweep(cfg: &RunConfig, workers: usize) -> Result<Vec<SweepRow>, CliError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Validation("config key `sweep`: missing section".into()))?;
    if cfg.algorithm.mode != "active" {
        return Err(CliError::Validation(
            "config key `algorithm.mode`: sweeps require active mode".into(),
        ));
    }
    let prepared = prepare(cfg)?;
    let points: Vec<(f64, u64)> = sweep
        .budgets
        .iter()
        .flat_map(|&b| sweep.seeds.iter().map(move |&s| (b, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let rows = pool.install(|| {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|&(budget, seed)| run_point(&prepared, cfg, Some(budget), seed))
            .collect::<Vec<_>>()
    });
    Ok(rows)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_summary(out_dir: &Path, name: &str, summary: &Value) -> Result<PathBuf, CliError> {
    let path = out_dir.join(name);
    write_text(&path, &format!("{:#}\n", summary))?;
    Ok(path)
}

/// `check`: quick solver self-tests. Returns (summary, all passed).
pub fn cmd_check() -> (Value, bool) {
    let mut checks = Vec::new();
    let mut all = true;
    let mut push = |name: &str, pass: bool, detail: String| {
        if !pass {
            all = false;
        }
        checks.push(json!({"name": name, "pass": pass, "detail": detail}));
    };

    // quadratic solution is exact in 1d
    match (|| -> Result<f64, greenpeel::Error> {
        let grid = Grid::new(1, 3)?;
        let op = assemble(&grid, &CoefficientField::Identity)?;
        let f = greenpeel::field::FieldVector::forcing(nalgebra::DVector::from_element(3, 1.0));
        let u = op.solve(&f)?;
        Ok((u.values[1] - 0.125).abs())
    })() {
        Ok(dev) => push("poisson_1d_quadratic", dev < 1e-12, format!("deviation {dev:.2e}")),
        Err(e) => push("poisson_1d_quadratic", false, e.to_string()),
    }

    // kernel symmetry and positivity on a small 2d problem
    match (|| -> Result<(f64, bool), greenpeel::Error> {
        let grid = Grid::new(2, 8)?;
        let op = assemble(&grid, &CoefficientField::from_name("smooth")?)?;
        let g = op.dense_kernel()?;
        let sym = (&g - g.transpose()).norm() / g.norm();
        Ok((sym, g.iter().all(|&v| v > 0.0)))
    })() {
        Ok((sym, positive)) => {
            push("kernel_symmetry", sym < 1e-10, format!("relative asymmetry {sym:.2e}"));
            push("kernel_positivity", positive, "maximum principle".into());
        }
        Err(e) => push("kernel_symmetry", false, e.to_string()),
    }

    // second-order convergence
    match (|| -> Result<f64, greenpeel::Error> {
        let mut errs = Vec::new();
        for n in [16usize, 32] {
            let grid = Grid::new(1, n)?;
            let op = assemble(&grid, &CoefficientField::Identity)?;
            let f = nalgebra::DVector::from_fn(n, |i, _| {
                (std::f64::consts::PI * grid.coords(i)[0]).sin()
            });
            let u = op.solve_raw(&f)?;
            let mut err = 0.0f64;
            for i in 0..n {
                let x = grid.coords(i)[0];
                err = err
                    .max((u[i] - (std::f64::consts::PI * x).sin() / std::f64::consts::PI.powi(2)).abs());
            }
            errs.push(err);
        }
        Ok(errs[0] / errs[1])
    })() {
        Ok(ratio) => push(
            "convergence_order",
            (ratio - 4.0).abs() <= 0.6,
            format!("refinement ratio {ratio:.3}"),
        ),
        Err(e) => push("convergence_order", false, e.to_string()),
    }

    // conjugate gradients on a small 3d problem
    match (|| -> Result<f64, greenpeel::Error> {
        let grid = Grid::new(3, 6)?;
        let op = assemble(&grid, &CoefficientField::from_name("checkerboard")?)?;
        let f = nalgebra::DVector::from_fn(grid.total_nodes(), |i, _| ((i % 7) as f64) - 3.0);
        let u = op.solve_raw(&f)?;
        Ok((op.apply_stiffness(&u) - &f).norm() / f.norm())
    })() {
        Ok(res) => push("cg_3d_residual", res <= 1e-10, format!("relative residual {res:.2e}")),
        Err(e) => push("cg_3d_residual", false, e.to_string()),
    }

    (json!({"command": "check", "checks": checks, "pass": all}), all)
}

/// `sample`: draw forcings from the configured process, solve, persist.
pub fn cmd_sample(cfg: &RunConfig, out_path: &Path, count: Option<usize>) -> Result<Value, CliError> {
    let prepared = prepare(cfg)?;
    let count = count.unwrap_or(cfg.sampling.dataset_size);
    let draws = prepared.eval_factor.draw(count, 1);
    let pairs: Result<Vec<_>, greenpeel::Error> = draws
        .into_iter()
        .map(|f| {
            let u = prepared.operator.solve(&f)?;
            Ok((f, u))
        })
        .collect();
    let pairs = pairs?;
    let (kernel_name, length_scale) = match cfg.kernel_spec() {
        KernelSpec::White => ("white".to_string(), None),
        KernelSpec::SquaredExponential { length_scale } => {
            ("squared_exponential".to_string(), Some(length_scale))
        }
    };
    let set = greenpeel::peel::TrainingSet {
        d: cfg.problem.d,
        n: cfg.problem.n,
        pairs,
        provenance: greenpeel::peel::Provenance {
            kernel_name,
            length_scale,
            master_seed: cfg.sampling.master_seed,
            coefficient: cfg.problem.coefficient.clone(),
            source: greenpeel::peel::ProvenanceSource::External,
        },
    };
    set.consistency_check(&prepared.operator, 3)?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    dataset::write_dataset(out_path, &set)?;
    let bytes = 24 + 2 * set.pairs.len() * cfg.problem.n.pow(cfg.problem.d as u32) * 8;
    Ok(json!({
        "command": "sample",
        "path": out_path.display().to_string(),
        "pairs": set.pairs.len(),
        "bytes": bytes,
        "kernel": cfg.sampling.kernel,
        "master_seed": cfg.sampling.master_seed,
    }))
}

/// `learn` / `evaluate`: one run; `evaluate` adds the error metrics.
pub fn cmd_learn(
    cfg: &RunConfig,
    seed: Option<u64>,
    budget: Option<f64>,
    evaluate: bool,
) -> Result<Value, CliError> {
    let started = Instant::now();
    let peel_cfg = cfg.peel_config(budget, seed);
    match cfg.algorithm.mode.as_str() {
        "dataset" => {
            let path = PathBuf::from(cfg.algorithm.dataset_path.as_ref().expect("validated"));
            let (data, missing_sidecar) = dataset::read_dataset(&path)?;
            let (approx, diag) = learn_from_dataset(&data, &peel_cfg)?;
            let mut summary = json!({
                "command": if evaluate { "evaluate" } else { "learn" },
                "mode": "dataset",
                "dataset": path.display().to_string(),
                "dataset_mode": match diag.mode {
                    DatasetLearnMode::Replay => "replay",
                    DatasetLearnMode::Passive => "passive",
                },
                "sidecar_missing": missing_sidecar,
                "pairs_used": diag.pairs_used,
                "digest": format!("{:016x}", approx.digest()),
                "wall_time": started.elapsed().as_secs_f64(),
            });
            if evaluate {
                attach_evaluation(cfg, &peel_cfg, &approx, &mut summary)?;
            }
            Ok(summary)
        }
        _ => {
            let prepared = prepare(cfg)?;
            let result = learn(&prepared.operator, &peel_cfg)?;
            let mut summary = json!({
                "command": if evaluate { "evaluate" } else { "learn" },
                "mode": "active",
                "n_train": result.ledger.training_total(),
                "ledger": ledger_json(&result.ledger),
                "predicted_n_train": predicted_ledger(&prepared.grid, &peel_cfg).training_total(),
                "unmet_blocks": result.info.unmet_blocks,
                "hs_estimate": result.info.hs_estimate,
                "digest": format!("{:016x}", result.approx.digest()),
                "gamma_hat": nan_to_null(prepared.gamma_hat),
                "wall_time": started.elapsed().as_secs_f64(),
            });
            if evaluate {
                let pairs = generate_test_pairs(
                    &prepared.operator,
                    &prepared.eval_factor,
                    cfg.evaluation.test_set_size,
                    peel_cfg.master_seed,
                )?;
                let hs_est = match &prepared.kernel {
                    Some(kernel) => hs_norm(kernel, &prepared.grid),
                    None => result.info.hs_estimate.unwrap_or(1.0),
                };
                let sampled = evaluate_sampled(&result.approx, &pairs, hs_est)?;
                summary["sampled_err"] = json!(sampled.mean_rel);
                summary["sampled_err_max"] = json!(sampled.max_rel);
                if let Some(kernel) = &prepared.kernel {
                    let errs = evaluate_exact(&result.approx, kernel, &prepared.grid)?;
                    summary["err_hs_rel"] = json!(errs.err_hs_rel);
                    summary["err_op_rel"] = json!(errs.err_op_rel);
                    let tree = BoxTree::build(&prepared.grid, cfg.hierarchy.levels)?;
                    let floor = near_field_floor(kernel, &tree);
                    summary["near_floor_hs"] = json!(floor.hs_frac);
                    summary["near_floor_op"] = json!(floor.op_frac);
                }
            }
            Ok(summary)
        }
    }
}

fn attach_evaluation(
    cfg: &RunConfig,
    peel_cfg: &PeelConfig,
    approx: &greenpeel::HierarchicalApprox,
    summary: &mut Value,
) -> Result<(), CliError> {
    let prepared = prepare(cfg)?;
    let pairs = generate_test_pairs(
        &prepared.operator,
        &prepared.eval_factor,
        cfg.evaluation.test_set_size,
        peel_cfg.master_seed,
    )?;
    let hs_est = match &prepared.kernel {
        Some(kernel) => hs_norm(kernel, &prepared.grid),
        None => 1.0,
    };
    let sampled = evaluate_sampled(approx, &pairs, hs_est)?;
    summary["sampled_err"] = json!(sampled.mean_rel);
    if let Some(kernel) = &prepared.kernel {
        let errs = evaluate_exact(approx, kernel, &prepared.grid)?;
        summary["err_hs_rel"] = json!(errs.err_hs_rel);
        summary["err_op_rel"] = json!(errs.err_op_rel);
    }
    Ok(())
}

fn nan_to_null(v: f64) -> Value {
    if v.is_nan() {
        Value::Null
    } else {
        json!(v)
    }
}

/// `sweep`: run the grid, write CSV + SVG + summary.
pub fn cmd_sweep(
    cfg: &RunConfig,
    out_dir: &Path,
    workers: usize,
    budgets_override: Option<Vec<f64>>,
) -> Result<Value, CliError> {
    let mut cfg = cfg.clone();
    if let Some(budgets) = budgets_override {
        match &mut cfg.sweep {
            Some(s) => s.budgets = budgets,
            None => {
                cfg.sweep = Some(crate::config::SweepConfig { budgets, seeds: vec![1, 2, 3] })
            }
        }
        cfg.validate()?;
    }
    let rows = run_sweep(&cfg, workers)?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let csv_path = out_dir.join("sweep.csv");
    write_text(&csv_path, &write_sweep_csv(&rows))?;
    let svg_path = out_dir.join("sweep.svg");
    let svg_ok = match render_sweep_svg(&rows) {
        Ok(svg) => {
            write_text(&svg_path, &svg)?;
            true
        }
        Err(_) => false,
    };
    let medians: Vec<Value> = median_by_budget(&rows)
        .into_iter()
        .map(|(b, n, e)| json!({"budget": b, "n_train_median": n, "err_hs_rel_median": e}))
        .collect();
    let failures = rows.iter().filter(|r| !r.note.is_empty()).count();
    Ok(json!({
        "command": "sweep",
        "csv": csv_path.display().to_string(),
        "svg": if svg_ok { json!(svg_path.display().to_string()) } else { Value::Null },
        "rows": rows.len(),
        "failures": failures,
        "medians": medians,
        "budget_note": "reported N excludes evaluation solves and includes HS-estimate probes",
    }))
}

/// `report`: re-render plots and a median table from an existing CSV.
pub fn cmd_report(csv_path: &Path, out_dir: &Path) -> Result<(Value, String), CliError> {
    let text = std::fs::read_to_string(csv_path).map_err(|e| io_err(csv_path, e))?;
    let rows = crate::report::read_sweep_csv(&text)?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let svg_path = out_dir.join("report.svg");
    let svg = render_sweep_svg(&rows)?;
    write_text(&svg_path, &svg)?;
    let medians = median_by_budget(&rows);
    let mut table = String::from("budget  N_median  err_hs_rel_median\n");
    for (b, n, e) in &medians {
        table.push_str(&format!("{b:<7} {n:<9} {e:.6e}\n"));
    }
    let fit = crate::report::fit_theory_constant(&rows);
    let summary = json!({
        "command": "report",
        "rows": rows.len(),
        "svg": svg_path.display().to_string(),
        "medians": medians.iter().map(|(b, n, e)| json!({"budget": b, "n_train_median": n, "err_hs_rel_median": e})).collect::<Vec<_>>(),
        "theory_fit": fit.map(|(c0, gamma)| json!({
            "c0": c0,
            "gamma": gamma,
            "note": "C0 is a fitted display constant, not a calibrated theoretical value",
        })),
        "budget_note": "reported N excludes evaluation solves and includes HS-estimate probes",
    });
    Ok((summary, table))
}
