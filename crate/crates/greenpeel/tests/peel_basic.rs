//! End-to-end reconstruction checks on small problems.

use greenpeel::coeff::CoefficientField;
use greenpeel::evaluate::{evaluate_exact, near_field_floor};
use greenpeel::grid::Grid;
use greenpeel::hier::BoxTree;
use greenpeel::operator::assemble;
use greenpeel::peel::{learn, predicted_ledger, NearFieldPolicy, PeelConfig, SyntheticOperator};
use greenpeel::sampling::KernelSpec;

#[test]
fn poisson_1d_rank1_dense_near_field_is_exact() {
    // off-diagonal kernel of -u'' is exactly rank 1 on one-sided blocks
    let grid = Grid::new(1, 256).unwrap();
    let op = assemble(&grid, &CoefficientField::Identity).unwrap();
    let config = PeelConfig::new(5)
        .with_rank(1)
        .with_seed(7)
        .with_near_field(NearFieldPolicy::DenseProbe);
    let result = learn(&op, &config).unwrap();
    let kernel = op.dense_kernel().unwrap();
    let errs = evaluate_exact(&result.approx, &kernel, &grid).unwrap();
    assert!(errs.err_hs_rel <= 1e-8, "err_hs_rel = {:.3e}", errs.err_hs_rel);
    // ledger equals the closed form
    assert_eq!(result.ledger, predicted_ledger(&grid, &config));
}

#[test]
fn poisson_1d_rank1_neglect_hits_near_field_floor() {
    let grid = Grid::new(1, 256).unwrap();
    let op = assemble(&grid, &CoefficientField::Identity).unwrap();
    let kernel = op.dense_kernel().unwrap();
    let mut previous = f64::INFINITY;
    for depth in [3usize, 4, 5] {
        let config = PeelConfig::new(depth).with_rank(1).with_seed(11);
        let result = learn(&op, &config).unwrap();
        let errs = evaluate_exact(&result.approx, &kernel, &grid).unwrap();
        let tree = BoxTree::build(&grid, depth).unwrap();
        let floor = near_field_floor(&kernel, &tree);
        assert!(
            (errs.err_hs_rel - floor.hs_frac).abs() <= 1e-6,
            "depth {depth}: err {:.8} vs floor {:.8}",
            errs.err_hs_rel,
            floor.hs_frac
        );
        assert!(errs.err_hs_rel < previous, "floor decreases with depth");
        previous = errs.err_hs_rel;
    }
}

#[test]
fn synthetic_exact_rank_blocks_are_recovered() {
    let grid = Grid::new(1, 128).unwrap();
    let truth_op = SyntheticOperator::exact_rank(&grid, 4, 3, 901).unwrap();
    let config = PeelConfig::new(4).with_rank(3).with_seed(31);
    let result = learn(&truth_op, &config).unwrap();
    for level in 2..=4 {
        let truth_blocks = truth_op.truth().blocks_at(level);
        let learned_blocks = result.approx.blocks_at(level);
        assert_eq!(truth_blocks.len(), learned_blocks.len());
        for (t_block, l_block) in truth_blocks.iter().zip(learned_blocks) {
            assert_eq!((t_block.target_box, t_block.source_box), (l_block.target_box, l_block.source_box));
            let diff = (t_block.to_dense() - l_block.to_dense()).norm();
            let rel = diff / t_block.to_dense().norm();
            assert!(
                rel <= 1e-10,
                "level {level} block ({},{}) error {rel:.3e}",
                t_block.target_box,
                t_block.source_box
            );
        }
    }
}

#[test]
fn zero_operator_learns_rank_zero_blocks() {
    let grid = Grid::new(1, 64).unwrap();
    let zero = SyntheticOperator::exact_rank(&grid, 3, 0, 1).unwrap();
    let config = PeelConfig::new(3).with_rank(2).with_seed(3);
    let result = learn(&zero, &config).unwrap();
    for level in 2..=3 {
        for block in result.approx.blocks_at(level) {
            assert_eq!(block.rank(), 0);
        }
    }
    assert_eq!(result.ledger, predicted_ledger(&grid, &config));
}

#[test]
fn analytic_kernel_oracle_first_admissible_level_is_rank_one() {
    // the continuous kernel min(x,y)(1-max(x,y)) restricted to any one-sided
    // block is x(1-y): exactly rank 1, learned to full precision with k=1
    use greenpeel::hier::block_lists;
    use greenpeel::peel::DenseKernelOracle;
    use nalgebra::DMatrix;

    let grid = Grid::new(1, 64).unwrap();
    let g = DMatrix::from_fn(64, 64, |i, j| {
        let (x, y) = (grid.coords(i)[0], grid.coords(j)[0]);
        x.min(y) * (1.0 - x.max(y))
    });
    let oracle = DenseKernelOracle::new(grid, g.clone()).unwrap();
    let config = PeelConfig::new(2).with_rank(1).with_seed(17);
    let result = learn(&oracle, &config).unwrap();

    let tree = BoxTree::build(&grid, 2).unwrap();
    let lists = block_lists(&tree);
    for (pair, block) in lists[2].admissible.iter().zip(result.approx.blocks_at(2)) {
        assert_eq!(block.rank(), 1);
        let t_nodes = tree.level(2).boxes[pair.0].node_indices(&grid);
        let s_nodes = tree.level(2).boxes[pair.1].node_indices(&grid);
        let truth = DMatrix::from_fn(t_nodes.len(), s_nodes.len(), |i, j| {
            g[(t_nodes[i], s_nodes[j])]
        });
        let rel = (block.to_dense() - &truth).norm() / truth.norm();
        assert!(rel <= 1e-10, "block {pair:?}: {rel:.3e}");
    }
}

#[test]
fn per_level_solve_budget_is_bounded_by_window_classes() {
    // 1d with W=7: at most 7 classes per level, so each level consumes at most
    // 7 (rank + oversampling + posterior) solves regardless of box count
    let grid = Grid::new(1, 128).unwrap();
    let op = assemble(&grid, &CoefficientField::Identity).unwrap();
    let (r, p, q) = (2usize, 10usize, 10usize);
    let config = PeelConfig::new(4).with_rank(r).with_seed(23);
    let result = learn(&op, &config).unwrap();
    for level in 2..=4 {
        let used = result.ledger.sketch_by_level[level] + result.ledger.posterior_by_level[level];
        assert!(used <= (7 * (r + p + q)) as u64, "level {level}: {used} solves");
    }
    // levels with 7+ boxes hit the bound exactly
    assert_eq!(
        result.ledger.sketch_by_level[3] + result.ledger.posterior_by_level[3],
        (7 * (r + p + q)) as u64
    );
}

#[test]
fn white_kernel_probes_work_too() {
    let grid = Grid::new(1, 128).unwrap();
    let truth_op = SyntheticOperator::exact_rank(&grid, 3, 2, 55).unwrap();
    let config = PeelConfig::new(3)
        .with_rank(2)
        .with_seed(8)
        .with_kernel(KernelSpec::White);
    let result = learn(&truth_op, &config).unwrap();
    for level in 2..=3 {
        for (t_block, l_block) in
            truth_op.truth().blocks_at(level).iter().zip(result.approx.blocks_at(level))
        {
            let rel = (t_block.to_dense() - l_block.to_dense()).norm() / t_block.to_dense().norm();
            assert!(rel <= 1e-10);
        }
    }
}
