//! Randomized invariants (proptest).

use daclab::augment::{build_augmented, d_prime, AugmentationKind, AugmentationSpec};
use daclab::estimators::{dac_hard_ls, dac_soft_ls, ols, project_l1_ball};
use daclab::expansion::{
    check_multiplicative_expansion, neighborhood, ClassifierTable, FiniteSpace, PointSet,
    minority_set, mu_of,
};
use daclab::matkit::{self, min_dominating_scalar, pinv, proj, rank_tol, seminorm_sq, Matrix, Subspace, Vector};
use daclab::rng::substream;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss<R: Rng>(m: usize, n: usize, r: &mut R) -> Matrix {
    Matrix::from_fn(m, n, |_, _| StandardNormal.sample(r))
}

/// Random matrix of prescribed rank and scale.
fn low_rank(seed: u64) -> Matrix {
    let mut r = substream(seed, &[0]);
    let m = r.random_range(1..=8);
    let n = r.random_range(1..=8);
    let k = r.random_range(0..=m.min(n));
    let scale = 10f64.powf(r.random_range(-3.0..3.0));
    gauss(m, k, &mut r) * gauss(k, n, &mut r) * scale
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax() / (1.0 + b.amax())
}

fn random_spec<R: Rng>(d: usize, r: &mut R) -> AugmentationSpec {
    let alpha = r.random_range(1..=3);
    let p = r.random_range(1..=d);
    let kind = match r.random_range(0..3) {
        0 => AugmentationKind::CoordinateResample { d_pert: p },
        1 => AugmentationKind::GaussianJitter {
            d_pert: p,
            noise_std: r.random_range(0.1..2.0),
        },
        _ => AugmentationKind::BlockScale {
            d_c1: d - p,
            d_e1: p,
            scale_e1: 2.0,
            scale_e2: -1.0,
        },
    };
    AugmentationSpec::new(kind, alpha)
}

/// Random finite space: chains within classes plus a few random extra edges.
fn random_space(seed: u64) -> FiniteSpace {
    let mut r = substream(seed, &[1]);
    let n = r.random_range(2..=9);
    let k = r.random_range(1..=3.min(n));
    let class_of: Vec<usize> = (0..n).map(|i| if i < k { i } else { r.random_range(0..k) }).collect();
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut prob: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let fix: f64 = 1.0 - prob.iter().sum::<f64>();
    prob[0] += fix;
    let aug_sets: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut s = vec![i];
            for j in 0..n {
                if j != i && class_of[j] == class_of[i] && r.random_bool(0.35) {
                    s.push(j);
                }
            }
            s
        })
        .collect();
    FiniteSpace::new((0..n).collect(), prob, class_of, aug_sets).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn moore_penrose(seed in any::<u64>()) {
        let a = low_rank(seed);
        let p = pinv(&a, matkit::DEFAULT_TOL).unwrap();
        prop_assert!(rel(&(&a * &p * &a), &a) < 1e-8);
        prop_assert!(rel(&(&p * &a * &p), &p) < 1e-8);
        let ap = &a * &p;
        let pa = &p * &a;
        prop_assert!(rel(&ap.transpose(), &ap) < 1e-8);
        prop_assert!(rel(&pa.transpose(), &pa) < 1e-8);
    }

    #[test]
    fn projector_invariants(seed in any::<u64>()) {
        let a = low_rank(seed);
        let r = rank_tol(&a, matkit::DEFAULT_TOL).unwrap();
        for which in [Subspace::RowSpace, Subspace::NullSpace, Subspace::ColumnSpace] {
            let pr = proj(&a, which, matkit::DEFAULT_TOL).unwrap();
            prop_assert!((&pr.p - pr.p.transpose()).amax() <= 1e-10);
            prop_assert!((&pr.p * &pr.p - &pr.p).amax() <= 1e-8);
            prop_assert!((pr.p.trace() - pr.rank as f64).abs() <= 1e-6);
            let expect = match which {
                Subspace::NullSpace => a.ncols() - r,
                _ => r,
            };
            prop_assert_eq!(pr.rank, expect);
        }
        // Row-space projector agrees with A⁺A.
        let p = pinv(&a, matkit::DEFAULT_TOL).unwrap();
        let row = proj(&a, Subspace::RowSpace, matkit::DEFAULT_TOL).unwrap();
        prop_assert!((&row.p - &p * &a).amax() <= 1e-8);
    }

    #[test]
    fn dominating_scalar_certificate(seed in any::<u64>()) {
        let mut r = substream(seed, &[2]);
        let d = r.random_range(1..=6);
        let k = r.random_range(1..=d);
        let g = gauss(k, d, &mut r);
        let b = g.transpose() * &g;
        // a lives in Range(b) so a finite c exists.
        let h = gauss(r.random_range(1..=6), k, &mut r) * &g;
        let a = h.transpose() * &h;
        let c = min_dominating_scalar(&a, &b, matkit::DEFAULT_TOL).unwrap();
        let gap = &b * c - &a;
        let scale = 1.0 + a.amax().max(b.amax() * c);
        prop_assert!(matkit::min_eigenvalue(&gap) >= -1e-8 * scale);
        if c > 1e-8 {
            // Slightly smaller c breaks domination.
            let under = &b * (c * (1.0 - 1e-4)) - &a;
            prop_assert!(matkit::min_eigenvalue(&under) < 0.0);
        }
    }

    #[test]
    fn seminorm_is_quadratic_form(seed in any::<u64>()) {
        let mut r = substream(seed, &[3]);
        let d = r.random_range(1..=6);
        let a = gauss(r.random_range(1..=6), d, &mut r);
        let u = gauss(d, 1, &mut r).column(0).into_owned();
        let s = seminorm_sq(&u, &(a.transpose() * &a)).unwrap();
        let want = (&a * &u).norm_squared();
        prop_assert!((s - want).abs() <= 1e-9 * (1.0 + want));
    }

    #[test]
    fn augmented_dataset_layout_and_d_prime(seed in any::<u64>()) {
        let mut r = substream(seed, &[4]);
        let d = r.random_range(2..=8);
        let n = r.random_range(d + 1..=20);
        let spec = random_spec(d, &mut r);
        let x = gauss(n, d, &mut r);
        let y = gauss(n, 1, &mut r).column(0).into_owned();
        let aug = build_augmented(&x, &y, &spec, &mut r).unwrap();
        prop_assert_eq!(aug.x_aug_stacked().rows(0, n).into_owned(), x.clone());
        prop_assert!(aug.delta().rows(0, n).iter().all(|v| *v == 0.0));
        let dp = d_prime(&aug).unwrap();
        prop_assert!(dp.unclamped >= -1e-9);
        prop_assert!(dp.unclamped <= dp.d_aug as f64 + 1e-6);
    }

    #[test]
    fn dac_estimators_respect_constraint_and_limits(seed in any::<u64>()) {
        let mut r = substream(seed, &[5]);
        let d = r.random_range(2..=7);
        let n = r.random_range(d + 2..=25);
        let spec = AugmentationSpec::new(
            AugmentationKind::GaussianJitter { d_pert: r.random_range(1..d), noise_std: 0.7 },
            r.random_range(1..=2),
        );
        let x = gauss(n, d, &mut r);
        let y = gauss(n, 1, &mut r).column(0).into_owned();
        let aug = build_augmented(&x, &y, &spec, &mut r).unwrap();
        let hard = dac_hard_ls(&aug).unwrap().theta_hat;
        let scale = aug.delta().norm() * hard.norm();
        prop_assert!((aug.delta() * &hard).amax() <= 1e-8 * scale.max(1.0));
        let zero = dac_soft_ls(&aug, 0.0).unwrap().theta_hat;
        let o = ols(&x, &y).unwrap().theta_hat;
        prop_assert!((&zero - &o).amax() <= 1e-8 * (1.0 + o.amax()));
        let big = dac_soft_ls(&aug, 1e10).unwrap().theta_hat;
        prop_assert!((&big - &hard).norm() <= 1e-4 * hard.norm().max(1e-12));
    }

    #[test]
    fn l1_projection_is_feasible_and_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..12), c in 0.01f64..20.0) {
        let v = Vector::from_vec(v);
        let p = project_l1_ball(&v, c);
        prop_assert!(p.lp_norm(1) <= c + 1e-9);
        let pp = project_l1_ball(&p, c);
        prop_assert!((&pp - &p).amax() <= 1e-9);
        if v.lp_norm(1) <= c {
            prop_assert_eq!(p, v);
        }
    }

    #[test]
    fn neighborhoods_are_monotone_and_contain_the_set(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let space = random_space(seed);
        let full = (1u64 << space.len()) - 1;
        let s = PointSet(a & full);
        let t = PointSet((a | b) & full);
        let ns = neighborhood(&space, s).unwrap();
        let nt = neighborhood(&space, t).unwrap();
        prop_assert!(s.is_subset(&ns));
        prop_assert!(ns.is_subset(&nt));
    }

    #[test]
    fn multiplicative_check_decomposes_by_class(seed in any::<u64>(), c in 1.0f64..4.0) {
        let space = random_space(seed);
        let global = check_multiplicative_expansion(&space, 0.5, c).unwrap().holds;
        let per_class = (0..space.num_classes()).all(|k| {
            let ids = space.class_set(k).indices();
            // Restrict to class k: renormalized probabilities, same augmentation sets.
            let pos = |i: usize| ids.iter().position(|&j| j == i).unwrap();
            let total: f64 = ids.iter().map(|&i| space.prob()[i]).sum();
            let sub = FiniteSpace::new(
                (0..ids.len()).collect(),
                ids.iter().map(|&i| space.prob()[i] / total).collect(),
                vec![0; ids.len()],
                ids.iter().map(|&i| space.aug_set(i).indices().into_iter().map(pos).collect()).collect(),
            );
            match sub {
                Ok(sub) => check_multiplicative_expansion(&sub, 0.5, c).unwrap().holds,
                // Renormalized masses can miss 1 by rounding; skip such cases.
                Err(_) => true,
            }
        });
        prop_assert_eq!(global, per_class);
    }

    #[test]
    fn minority_and_mu_are_probabilities(seed in any::<u64>(), labels in prop::collection::vec(0usize..3, 9)) {
        let space = random_space(seed);
        let h = ClassifierTable { h: labels[..space.len()].iter().map(|&l| l % space.num_classes()).collect() };
        let m = minority_set(&space, &h).unwrap();
        let mu = mu_of(&space, &h).unwrap();
        prop_assert!((0.0..=0.5 + 1e-12).contains(&m.p_m) || space.num_classes() > 2);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&mu));
        prop_assert!((space.mass(m.m) - m.p_m).abs() < 1e-12);
    }
}
