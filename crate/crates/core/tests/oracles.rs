//! Library results against independent dense computations (Cholesky / LU /
//! symmetric eigendecomposition instead of the SVD-based kernels).

use daclab::augment::{build_augmented, d_prime, AugmentationKind, AugmentationSpec, AugmentedDataset};
use daclab::estimators::{da_erm_ls, dac_hard_ls, dac_soft_ls, ols};
use daclab::matkit::{self, from_row_major, min_dominating_scalar, pinv, Matrix, Vector};
use daclab::rng::substream;
use daclab::theory::{optimal_lambda, rademacher_linear_dac, soft_bias_variance, two_layer_bound};
use rand_distr::{Distribution, StandardNormal};

fn gauss(n: usize, d: usize, key: u64) -> Matrix {
    let mut r = substream(77, &[key]);
    Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut r))
}

fn gvec(n: usize, key: u64) -> Vector {
    gauss(n, 1, key).column(0).into_owned()
}

fn jitter(n: usize, d: usize, d_pert: usize, alpha: usize, key: u64) -> AugmentedDataset {
    let x = gauss(n, d, key);
    let y = gvec(n, key + 1000);
    let spec = AugmentationSpec::new(AugmentationKind::GaussianJitter { d_pert, noise_std: 0.8 }, alpha);
    build_augmented(&x, &y, &spec, &mut substream(77, &[key, 1])).unwrap()
}

fn col(v: &Vector) -> Matrix {
    Matrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn chol_solve(a: &Matrix, b: &Matrix) -> Matrix {
    a.clone().cholesky().expect("positive definite").solve(b)
}

/// Stacked `[I; I; ...]`, i.e. M̃.
fn m_tilde(n: usize, alpha: usize) -> Matrix {
    let mut m = Matrix::zeros((1 + alpha) * n, n);
    for k in 0..=alpha {
        m.view_mut((k * n, 0), (n, n)).fill_with_identity();
    }
    m
}

/// Orthonormal basis of Null(Δ) from the eigenvectors of ΔᵀΔ.
fn null_basis_eig(delta: &Matrix) -> Matrix {
    let g = delta.transpose() * delta;
    let eig = g.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax().max(1e-300);
    let cols: Vec<_> = (0..g.ncols())
        .filter(|&i| eig.eigenvalues[i] <= 1e-10 * top)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        Matrix::zeros(g.ncols(), 0)
    } else {
        Matrix::from_columns(&cols)
    }
}

fn col_projector(a: &Matrix) -> Matrix {
    a * chol_solve(&(a.transpose() * a), &a.transpose())
}

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + b.amax())
}

#[test]
fn ols_matches_normal_equations() {
    for key in 0..5 {
        let x = gauss(4 + key as usize, 3, key);
        let y = gvec(4 + key as usize, key + 50);
        let want = chol_solve(&(x.transpose() * &x), &col(&(x.transpose() * &y)));
        let got = ols(&x, &y).unwrap().theta_hat;
        assert!(close(&col(&got), &want, 1e-8));
    }
}

#[test]
fn da_erm_matches_dense_stacked_system() {
    // 6×4 design, one jitter copy: a 12×4 stacked system.
    let aug = jitter(6, 4, 2, 1, 3);
    let a = aug.x_aug_stacked();
    assert_eq!(a.shape(), (12, 4));
    let my = m_tilde(6, 1) * aug.y();
    let want = chol_solve(&(a.transpose() * a), &col(&(a.transpose() * my)));
    let got = da_erm_ls(&aug).unwrap().theta_hat;
    assert!(close(&col(&got), &want, 1e-8));
}

#[test]
fn dac_hard_matches_reduced_normal_equations() {
    for key in 10..16 {
        let aug = jitter(20, 8, 3, 2, key);
        let q = null_basis_eig(aug.delta());
        assert_eq!(q.ncols(), 5);
        let xq = aug.x() * &q;
        let want = &q * chol_solve(&(xq.transpose() * &xq), &col(&(xq.transpose() * aug.y())));
        let got = dac_hard_ls(&aug).unwrap().theta_hat;
        assert!(close(&col(&got), &want, 1e-8));
        assert!((aug.delta() * got).amax() < 1e-8);
    }
}

#[test]
fn dac_soft_matches_regularized_normal_equations() {
    let aug = jitter(25, 6, 3, 2, 20);
    let (n, r) = (aug.n() as f64, aug.rows_stacked() as f64);
    for lam in [0.05, 0.7, 3.0, 40.0] {
        let h = aug.x().transpose() * aug.x() / n + aug.delta().transpose() * aug.delta() * (lam / r);
        let want = chol_solve(&h, &col(&(aug.x().transpose() * aug.y() / n)));
        let got = dac_soft_ls(&aug, lam).unwrap().theta_hat;
        assert!(close(&col(&got), &want, 1e-8), "lambda {lam}");
    }
}

#[test]
fn soft_bias_variance_matches_explicit_inverse() {
    let aug = jitter(30, 6, 4, 1, 30);
    let theta = Vector::from_vec(vec![1.0, -0.5, 0.3, 0.8, -1.2, 0.4]);
    let (n, sigma) = (aug.n() as f64, 0.6);
    let sx = aug.sigma_x();
    let sd = aug.sigma_delta();
    for lam in [0.1, 1.0, 12.0] {
        let g = (&sx + &sd * lam).lu().solve(&sx).unwrap();
        let var = sigma * sigma / n * (&g * &g).trace();
        let bias = (aug.x() * (&g * &theta - &theta)).norm_squared() / n;
        let got = soft_bias_variance(&aug, &theta, sigma, lam).unwrap();
        assert!((got.var - var).abs() <= 1e-8 * var, "{lam}");
        assert!((got.bias - bias).abs() <= 1e-8 * bias.max(1e-12), "{lam}");
    }
}

#[test]
fn d_prime_matches_projector_formula() {
    for (key, alpha) in [(40u64, 1usize), (41, 2), (42, 3)] {
        let aug = jitter(15, 6, 3, alpha, key);
        let mt = m_tilde(15, alpha);
        let p_a = col_projector(aug.x_aug_stacked());
        let q = null_basis_eig(aug.delta());
        let s = &mt * aug.x() * q;
        let p_s = col_projector(&s);
        let want = (mt.transpose() * (p_a - p_s) * &mt).trace() / (1 + alpha) as f64;
        let got = d_prime(&aug).unwrap();
        assert!((got.unclamped - want).abs() < 1e-8, "{} vs {want}", got.unclamped);
        assert_eq!(got.d_aug, 3);
    }
}

#[test]
fn optimal_lambda_matches_trace_formula() {
    let aug = jitter(40, 5, 2, 2, 50);
    let theta = Vector::from_vec(vec![0.5, 1.0, -1.0, 0.7, 0.2]);
    let sigma = 0.3;
    let sd = aug.sigma_delta();
    let eig = sd.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let mut sd_pinv = Matrix::zeros(5, 5);
    for i in 0..5 {
        if eig.eigenvalues[i] > 1e-10 * top {
            let v = eig.eigenvectors.column(i);
            sd_pinv += v * v.transpose() / eig.eigenvalues[i];
        }
    }
    let tr = (aug.sigma_x() * sd_pinv).trace();
    let m = (theta.transpose() * &sd * &theta)[(0, 0)];
    let want = (sigma * sigma * tr / (aug.n() as f64 * m)).sqrt();
    let got = optimal_lambda(&aug, &theta, sigma).unwrap();
    assert!((got - want).abs() <= 1e-8 * want, "{got} vs {want}");
}

#[test]
fn pinv_of_column_of_ones() {
    let a = from_row_major(2, 1, &[1.0, 1.0]).unwrap();
    let p = pinv(&a, 1e-12).unwrap();
    assert!((p[(0, 0)] - 0.5).abs() < 1e-15 && (p[(0, 1)] - 0.5).abs() < 1e-15);
    assert!(close(&(&a * &p * &a), &a, 1e-14));
    assert!(close(&(&p * &a * &p), &p, 1e-14));
    let ap = &a * &p;
    let pa = &p * &a;
    assert!(close(&ap.transpose(), &ap, 1e-14) && close(&pa.transpose(), &pa, 1e-14));
}

#[test]
fn dominating_scalar_matches_generalized_eigenvalue() {
    for key in 60..65 {
        let g = gauss(7, 4, key);
        let b = g.transpose() * &g + Matrix::identity(4, 4) * 0.1;
        let h = gauss(6, 4, key + 10);
        let a = h.transpose() * &h;
        let l = b.clone().cholesky().unwrap().l();
        let li = l.clone().try_inverse().unwrap();
        let k = &li * &a * li.transpose();
        let want = k.symmetric_eigen().eigenvalues.max();
        let got = min_dominating_scalar(&a, &b, matkit::DEFAULT_TOL).unwrap();
        assert!((got - want).abs() <= 1e-8 * want, "{got} vs {want}");
    }
}

#[test]
fn complexity_closed_forms() {
    let aug = jitter(50, 6, 2, 1, 70);
    let q = null_basis_eig(aug.delta());
    let v = aug.x() * &q * q.transpose();
    let rad = rademacher_linear_dac(aug.x(), aug.delta(), 2.0, 200, 1).unwrap();
    assert!((rad.closed_form_bound - 2.0 / 50.0 * v.norm()).abs() < 1e-12);
    let tl = two_layer_bound(aug.x(), aug.delta(), 1.5, 0.5).unwrap();
    let c_n = (v.norm_squared() / 50.0).sqrt();
    assert!((tl.c_n - c_n).abs() < 1e-12);
    assert!((tl.bound - 0.5 * 1.5 * c_n / 50f64.sqrt()).abs() < 1e-12);
}
