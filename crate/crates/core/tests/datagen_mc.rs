//! Monte Carlo checks of the generators' moments.

use daclab::augment::{d_aug_quantile, AugmentationKind, AugmentationSpec};
use daclab::datagen::{gen_domain, gen_linear, gen_logistic, Domain, DomainSpec, LinearModelSpec, LogisticModelSpec};
use daclab::matkit::Matrix;
use daclab::rng::{substream, Stream};
use rand_distr::{Distribution, StandardNormal};

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn logistic_labels_are_fair_coins_at_zero_parameter() {
    let spec = LogisticModelSpec {
        d: 4,
        theta_star: vec![0.0; 4],
        c0: 1.0,
        feature_clip: 0.0,
    };
    let (_, y) = gen_logistic(&spec, 100_000, &mut substream(5, &[1])).unwrap();
    assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
    assert!((y.mean() - 0.5).abs() < 0.01, "{}", y.mean());
}

#[test]
fn logistic_label_rate_follows_margin() {
    // One feature, θ = 2: P(y=1) = E σ(2g) = 1/2 by symmetry, but P(y=1 | x>0) = E[σ(2g) | g>0].
    let spec = LogisticModelSpec {
        d: 1,
        theta_star: vec![2.0],
        c0: 3.0,
        feature_clip: 0.0,
    };
    let (x, y) = gen_logistic(&spec, 200_000, &mut substream(5, &[2])).unwrap();
    let pos: Vec<f64> = (0..y.len()).filter(|&i| x[(i, 0)] > 0.0).map(|i| y[i]).collect();
    // Quadrature of E[σ(2g) | g > 0] on a fine grid.
    let h = 1e-4;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut g = h / 2.0;
    while g < 10.0 {
        let w = (-g * g / 2.0f64).exp();
        num += w / (1.0 + (-2.0 * g).exp());
        den += w;
        g += h;
    }
    let want = num / den;
    let (m, se) = mean_se(&pos);
    assert!((m - want).abs() < 4.0 * se, "{m} vs {want}");
}

#[test]
fn feature_clipping_bounds_row_norms() {
    let spec = LogisticModelSpec {
        d: 6,
        theta_star: vec![0.1; 6],
        c0: 1.0,
        feature_clip: 1.5,
    };
    let (x, _) = gen_logistic(&spec, 500, &mut substream(5, &[3])).unwrap();
    assert!((0..500).all(|i| x.row(i).norm() <= 1.5 + 1e-12));
}

#[test]
fn linear_noise_variance() {
    let spec = LinearModelSpec {
        d: 3,
        theta_star: vec![1.0, -2.0, 0.5],
        sigma: 0.7,
    };
    let (x, y) = gen_linear(&spec, 100_000, &mut substream(6, &[0])).unwrap();
    let resid: Vec<f64> = (y - x * spec.theta()).iter().map(|r| r * r).collect();
    let (m, se) = mean_se(&resid);
    assert!((m - 0.49).abs() < 4.0 * se, "{m}");
}

fn domain_spec(sigma_t: f64) -> DomainSpec {
    DomainSpec::random(8, 3, 3, 1.0, sigma_t, &mut substream(9, &[0])).unwrap()
}

#[test]
fn environmental_features_are_uncorrelated_with_noise() {
    let spec = domain_spec(1.0);
    for which in [Domain::Source, Domain::Target] {
        let (x, y) = gen_domain(&spec, which, 100_000, &mut substream(9, &[1])).unwrap();
        let z = &y - &x * spec.theta();
        let ze = &x * &spec.s_e;
        for j in 0..spec.d_e {
            let prod: Vec<f64> = (0..z.len()).map(|i| z[i] * ze[(i, j)]).collect();
            let (m, se) = mean_se(&prod);
            assert!(m.abs() < 3.0 * se, "{which:?} coord {j}: {m} ± {se}");
        }
        // Sign coupling leaves the noise marginal untouched.
        let (m, _) = mean_se(&(0..z.len()).map(|i| z[i].abs()).collect::<Vec<_>>());
        assert!((m - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.01);
    }
}

#[test]
fn target_environment_covariance_scales_with_sigma_t() {
    for st in [1.0, 5.0] {
        let spec = domain_spec(st);
        let (x, _) = gen_domain(&spec, Domain::Target, 100_000, &mut substream(9, &[2])).unwrap();
        let ze = &x * &spec.s_e;
        let cov = ze.transpose() * &ze / x.nrows() as f64;
        let want = Matrix::identity(spec.d_e, spec.d_e) * st;
        assert!((cov - want).amax() < 0.05 * st, "sigma_t {st}");
        // The invariant block keeps unit covariance.
        let zi = &x * &spec.s_iv;
        let ci = zi.transpose() * &zi / x.nrows() as f64;
        assert!((ci - Matrix::identity(spec.d_iv, spec.d_iv)).amax() < 0.05);
    }
}

fn gaussian(n: usize, d: usize, r: &mut Stream) -> Matrix {
    Matrix::from_fn(n, d, |_, _| StandardNormal.sample(r))
}

#[test]
fn d_aug_quantiles_of_standard_augmentations() {
    let resample = AugmentationSpec::new(AugmentationKind::CoordinateResample { d_pert: 25 }, 1);
    let q = d_aug_quantile(&resample, |n, r| gaussian(n, 30, r), 50, 0.1, 200, 3).unwrap();
    assert_eq!(q.d_aug, 25);
    assert!(!q.degenerate_sampler);

    // αN ≥ d: perturbing every coordinate reaches full rank.
    let jitter = AugmentationSpec::new(
        AugmentationKind::GaussianJitter {
            d_pert: 30,
            noise_std: 0.3,
        },
        1,
    );
    let q = d_aug_quantile(&jitter, |n, r| gaussian(n, 30, r), 50, 0.1, 200, 3).unwrap();
    assert_eq!(q.d_aug, 30);

    // Fewer augmented rows than perturbed coordinates caps the rank at αN.
    let q = d_aug_quantile(&jitter, |n, r| gaussian(n, 30, r), 12, 0.1, 200, 3).unwrap();
    assert_eq!(q.d_aug, 12);
}
