//! Statistical behavior of the Gaussian-process sampler and the quality proxy.

use greenpeel::coeff::CoefficientField;
use greenpeel::grid::Grid;
use greenpeel::lowrank::orthonormal_columns;
use greenpeel::operator::assemble;
use greenpeel::sampling::{covariance_matrix, factorize, quality_proxy, KernelSpec};
use nalgebra::DMatrix;

#[test]
fn empirical_covariance_converges() {
    // 1e4 draws reproduce C within 5 max(diag)/sqrt(count), for white and
    // smooth kernels, across 3 fixed seeds.
    let grid = Grid::new(1, 8).unwrap();
    let count = 10_000usize;
    let tol = 5.0 / (count as f64).sqrt();
    for kernel in [KernelSpec::White, KernelSpec::SquaredExponential { length_scale: 0.3 }] {
        let c = covariance_matrix(&grid, &kernel).unwrap();
        for seed in [101u64, 202, 303] {
            let factor = factorize(&c, 1e-12, seed).unwrap();
            let draws = factor.draw(count, 17);
            let mut emp = DMatrix::<f64>::zeros(8, 8);
            for d in &draws {
                emp += &d.values * d.values.transpose();
            }
            emp /= count as f64;
            let max_err = (&emp - &c).amax();
            assert!(max_err <= tol, "kernel {kernel:?} seed {seed}: max err {max_err} > {tol}");
        }
    }
}

#[test]
fn near_white_data_probes_poisson_modes_well() {
    // SE with length scale 0.01 on a grid with spacing ~0.03 is near-white;
    // its quality proxy on the 4 dominant kernel modes stays above 0.5.
    let grid = Grid::new(1, 32).unwrap();
    let kernel = KernelSpec::SquaredExponential { length_scale: 0.01 };
    let c = covariance_matrix(&grid, &kernel).unwrap();
    let op = assemble(&grid, &CoefficientField::Identity).unwrap();
    let g = op.dense_kernel().unwrap();
    let eig = nalgebra::SymmetricEigen::new(g);
    // dominant 4 modes of the kernel
    let mut order: Vec<usize> = (0..32).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b].abs().partial_cmp(&eig.eigenvalues[a].abs()).unwrap()
    });
    let mut v4 = DMatrix::<f64>::zeros(32, 4);
    for (col, &idx) in order.iter().take(4).enumerate() {
        v4.set_column(col, &eig.eigenvectors.column(idx));
    }
    let v4 = orthonormal_columns(&v4, 1e-14);
    let q = quality_proxy(&c, &v4).unwrap();
    assert!(q.gamma_hat >= 0.5, "gamma_hat = {}", q.gamma_hat);
    assert!(q.method.contains("proxy"));
}

#[test]
fn smooth_data_misses_fine_modes() {
    // very smooth SE process scores poorly on high-frequency modes
    let grid = Grid::new(1, 32).unwrap();
    let kernel = KernelSpec::SquaredExponential { length_scale: 0.5 };
    let c = covariance_matrix(&grid, &kernel).unwrap();
    // highest-frequency discrete sine mode
    let mut v = DMatrix::<f64>::zeros(32, 1);
    for i in 0..32 {
        v[(i, 0)] = if i % 2 == 0 { 1.0 } else { -1.0 };
    }
    let v = orthonormal_columns(&v, 1e-14);
    let q = quality_proxy(&c, &v).unwrap();
    // measured suppression is ~5e-4; anything near 1 would mean the proxy is blind
    assert!(q.gamma_hat < 1e-2, "smooth process should miss the alternating mode: {}", q.gamma_hat);
}
