//! Augmented datasets, the difference matrix `Δ = Ã(X) − M̃X`, and the
//! augmentation-strength measures `d_aug`, `d_aug(δ)` and `d′`.
//!
//! Row order of the stacked design is `[x_1..x_N; x_{1,1}..x_{N,1}; ...]`:
//! row `k*N + i` (k = 1..α) is the k-th augmentation of sample i.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matkit::{self, rows_serde, Matrix, Vector, DEFAULT_TOL};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum AugmentationKind {
    IdentityCopies {},
    /// `(x_c, x_e1, x_e2) -> (x_c, scale_e1 x_e1, scale_e2 x_e2)`; the
    /// trailing block `x_e2` is whatever remains after `d_c1 + d_e1`.
    BlockScale {
        d_c1: usize,
        d_e1: usize,
        scale_e1: f64,
        scale_e2: f64,
    },
    /// Redraw the last `d_pert` coordinates from N(0, 1).
    CoordinateResample { d_pert: usize },
    /// Add N(0, noise_std^2) to each of the last `d_pert` coordinates.
    GaussianJitter { d_pert: usize, noise_std: f64 },
    /// Copy j is `X A_j^T`.
    LinearMaps {
        #[serde(with = "rows_serde::vec")]
        maps: Vec<Matrix>,
    },
    /// Negate the last `env_dim` coordinates.
    EnvSignFlip { env_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    #[serde(flatten)]
    pub kind: AugmentationKind,
    pub alpha: usize,
}

impl AugmentationSpec {
    pub fn new(kind: AugmentationKind, alpha: usize) -> Self {
        AugmentationSpec { kind, alpha }
    }

    pub fn identity(alpha: usize) -> Self {
        Self::new(AugmentationKind::IdentityCopies {}, alpha)
    }

    /// Check the spec against feature dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.alpha < 1 {
            return invalid("alpha must be at least 1");
        }
        match &self.kind {
            AugmentationKind::IdentityCopies {} => {}
            AugmentationKind::BlockScale {
                d_c1,
                d_e1,
                scale_e1,
                scale_e2,
            } => {
                if d_c1 + d_e1 > d {
                    return Err(Error::DimensionMismatch(format!(
                        "block scale d_c1 + d_e1 = {} exceeds d = {d}",
                        d_c1 + d_e1
                    )));
                }
                if !scale_e1.is_finite() || !scale_e2.is_finite() {
                    return invalid("block scale factors must be finite");
                }
            }
            AugmentationKind::CoordinateResample { d_pert } => {
                if *d_pert > d {
                    return Err(Error::DimensionMismatch(format!(
                        "d_pert = {d_pert} exceeds d = {d}"
                    )));
                }
            }
            AugmentationKind::GaussianJitter { d_pert, noise_std } => {
                if *d_pert > d {
                    return Err(Error::DimensionMismatch(format!(
                        "d_pert = {d_pert} exceeds d = {d}"
                    )));
                }
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    return invalid("noise_std must be finite and non-negative");
                }
            }
            AugmentationKind::LinearMaps { maps } => {
                if maps.len() != self.alpha {
                    return invalid(format!(
                        "{} linear maps supplied for alpha = {}",
                        maps.len(),
                        self.alpha
                    ));
                }
                for m in maps {
                    if m.nrows() != d || m.ncols() != d {
                        return Err(Error::DimensionMismatch(format!(
                            "linear map is {}x{}, expected {d}x{d}",
                            m.nrows(),
                            m.ncols()
                        )));
                    }
                    matkit::ensure_finite(m, "linear map")?;
                }
            }
            AugmentationKind::EnvSignFlip { env_dim } => {
                if *env_dim > d {
                    return Err(Error::DimensionMismatch(format!(
                        "env_dim = {env_dim} exceeds d = {d}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether the output depends on the random stream.
    pub fn is_random(&self) -> bool {
        matches!(
            self.kind,
            AugmentationKind::CoordinateResample { .. } | AugmentationKind::GaussianJitter { .. }
        )
    }

    /// The `copy`-th augmentation (0-based) of every row of `x`.
    fn augment_copy(&self, x: &Matrix, copy: usize, rng: &mut Stream) -> Matrix {
        let (n, d) = x.shape();
        let mut out = x.clone();
        match &self.kind {
            AugmentationKind::IdentityCopies {} => {}
            AugmentationKind::BlockScale {
                d_c1,
                d_e1,
                scale_e1,
                scale_e2,
            } => {
                for j in *d_c1..d {
                    let s = if j < d_c1 + d_e1 { *scale_e1 } else { *scale_e2 };
                    out.column_mut(j).scale_mut(s);
                }
            }
            AugmentationKind::CoordinateResample { d_pert } => {
                for i in 0..n {
                    for j in d - d_pert..d {
                        out[(i, j)] = rng.sample(StandardNormal);
                    }
                }
            }
            AugmentationKind::GaussianJitter { d_pert, noise_std } => {
                for i in 0..n {
                    for j in d - d_pert..d {
                        let z: f64 = rng.sample(StandardNormal);
                        out[(i, j)] += noise_std * z;
                    }
                }
            }
            AugmentationKind::LinearMaps { maps } => {
                out = x * maps[copy].transpose();
            }
            AugmentationKind::EnvSignFlip { env_dim } => {
                for j in d - env_dim..d {
                    out.column_mut(j).neg_mut();
                }
            }
        }
        out
    }
}

/// Original samples plus their stacked augmentations.
#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    x: Matrix,
    y: Vector,
    alpha: usize,
    x_aug: Matrix,
    delta: Matrix,
    pub tol: f64,
}

impl AugmentedDataset {
    /// Assemble from explicit augmented copies (each N×d, in copy order).
    pub fn from_copies(x: Matrix, y: Vector, copies: &[Matrix]) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {n} rows but y has length {}",
                y.len()
            )));
        }
        if copies.is_empty() {
            return invalid("at least one augmented copy is required");
        }
        matkit::ensure_finite(&x, "X")?;
        matkit::ensure_finite_vec(&y, "y")?;
        let alpha = copies.len();
        let mut x_aug = Matrix::zeros((1 + alpha) * n, d);
        x_aug.rows_mut(0, n).copy_from(&x);
        for (k, c) in copies.iter().enumerate() {
            if c.shape() != (n, d) {
                return Err(Error::DimensionMismatch(format!(
                    "augmented copy {k} is {:?}, expected {:?}",
                    c.shape(),
                    (n, d)
                )));
            }
            matkit::ensure_finite(c, "augmented copy")?;
            x_aug.rows_mut((k + 1) * n, n).copy_from(c);
        }
        let mut delta = Matrix::zeros((1 + alpha) * n, d);
        for k in 1..=alpha {
            let diff = x_aug.rows(k * n, n) - &x;
            delta.rows_mut(k * n, n).copy_from(&diff);
        }
        Ok(AugmentedDataset {
            x,
            y,
            alpha,
            x_aug,
            delta,
            tol: DEFAULT_TOL,
        })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }
    pub fn y(&self) -> &Vector {
        &self.y
    }
    pub fn alpha(&self) -> usize {
        self.alpha
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn d(&self) -> usize {
        self.x.ncols()
    }
    pub fn x_aug_stacked(&self) -> &Matrix {
        &self.x_aug
    }
    pub fn delta(&self) -> &Matrix {
        &self.delta
    }

    /// Same design, new labels.
    pub fn with_labels(&self, y: Vector) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} labels, got {}",
                self.n(),
                y.len()
            )));
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    /// `M̃ v`: stack `1 + α` copies of a length-N vector.
    pub fn replicate(&self, v: &Vector) -> Vector {
        let n = self.n();
        Vector::from_fn((1 + self.alpha) * n, |r, _| v[r % n])
    }

    /// `M̃ A`: stack `1 + α` copies of an N-row matrix.
    pub fn replicate_rows(&self, a: &Matrix) -> Matrix {
        let n = self.n();
        Matrix::from_fn((1 + self.alpha) * n, a.ncols(), |r, c| a[(r % n, c)])
    }

    /// `M̃ᵀ B`: sum the `1 + α` row blocks of a stacked matrix.
    pub fn fold_rows(&self, b: &Matrix) -> Matrix {
        let n = self.n();
        let mut out = Matrix::zeros(n, b.ncols());
        for k in 0..=self.alpha {
            out += b.rows(k * n, n);
        }
        out
    }

    /// `Σ_X = XᵀX / N`.
    pub fn sigma_x(&self) -> Matrix {
        self.x.transpose() * &self.x / self.n() as f64
    }

    /// `Σ_Δ = ΔᵀΔ / ((1+α)N)`.
    pub fn sigma_delta(&self) -> Matrix {
        self.delta.transpose() * &self.delta / self.rows_stacked() as f64
    }

    /// `Σ_Ã = ÃᵀÃ / ((1+α)N)`.
    pub fn sigma_aug(&self) -> Matrix {
        self.x_aug.transpose() * &self.x_aug / self.rows_stacked() as f64
    }

    pub fn rows_stacked(&self) -> usize {
        (1 + self.alpha) * self.n()
    }

    /// Orthonormal basis of Null(Δ).
    pub fn null_basis(&self) -> Result<Matrix> {
        matkit::null_space_basis(&self.delta, self.tol)
    }
}

/// Build `Ã(X)` and `Δ` from a spec. Randomness (if any) comes from `rng`.
pub fn build_augmented(
    x: &Matrix,
    y: &Vector,
    spec: &AugmentationSpec,
    rng: &mut Stream,
) -> Result<AugmentedDataset> {
    spec.validate(x.ncols())?;
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows but y has length {}",
            x.nrows(),
            y.len()
        )));
    }
    matkit::ensure_finite(x, "X")?;
    let copies: Vec<Matrix> = (0..spec.alpha)
        .map(|k| spec.augment_copy(x, k, rng))
        .collect();
    AugmentedDataset::from_copies(x.clone(), y.clone(), &copies)
}

/// `M̃y`.
pub fn replicate_labels(aug: &AugmentedDataset) -> Vector {
    aug.replicate(aug.y())
}

/// `d_aug = rank(Δ)`.
pub fn d_aug_of(aug: &AugmentedDataset) -> usize {
    // Entries were checked finite at construction, so this cannot fail.
    matkit::rank_tol(aug.delta(), aug.tol).unwrap_or(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DaugQuantile {
    pub d_aug: usize,
    /// rank -> number of trials.
    pub histogram: BTreeMap<usize, usize>,
    pub trials: usize,
    /// Sampler produced the same X every time.
    pub degenerate_sampler: bool,
}

/// Monte Carlo version of the high-probability augmentation strength: the
/// largest `k` with empirical `P(rank Δ < k) <= delta_prob`.
pub fn d_aug_quantile<F>(
    spec: &AugmentationSpec,
    sampler: F,
    n: usize,
    delta_prob: f64,
    trials: usize,
    seed: u64,
) -> Result<DaugQuantile>
where
    F: Fn(usize, &mut Stream) -> Matrix + Sync,
{
    if !(delta_prob > 0.0 && delta_prob < 1.0) {
        return invalid("delta_prob must lie in (0, 1)");
    }
    if trials < 100 {
        return invalid("d_aug_quantile needs at least 100 trials");
    }
    let draws: Vec<(usize, u64)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<(usize, u64)> {
            let mut r = rng::substream(seed, &[rng::purpose::DATA, t]);
            let x = sampler(n, &mut r);
            let h = hash_matrix(&x);
            let y = Vector::zeros(x.nrows());
            let mut ra = rng::substream(seed, &[rng::purpose::AUGMENT, t]);
            let aug = build_augmented(&x, &y, spec, &mut ra)?;
            Ok((d_aug_of(&aug), h))
        })
        .collect::<Result<_>>()?;
    let degenerate = draws.iter().all(|&(_, h)| h == draws[0].1);
    if degenerate {
        return Ok(DaugQuantile {
            d_aug: 0,
            histogram: BTreeMap::new(),
            trials,
            degenerate_sampler: true,
        });
    }
    let mut histogram = BTreeMap::new();
    for &(r, _) in &draws {
        *histogram.entry(r).or_insert(0) += 1;
    }
    let max_rank = draws.iter().map(|&(r, _)| r).max().unwrap_or(0);
    let mut best = 0;
    for k in 0..=max_rank + 1 {
        let below = draws.iter().filter(|&&(r, _)| r < k).count();
        if below as f64 <= delta_prob * trials as f64 {
            best = k;
        }
    }
    Ok(DaugQuantile {
        d_aug: best,
        histogram,
        trials,
        degenerate_sampler: false,
    })
}

/// FNV-1a over the bit patterns of the entries.
pub fn hash_matrix(m: &Matrix) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in m.iter() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DPrime {
    /// Clamped to `[0, d_aug]`.
    pub value: f64,
    pub unclamped: f64,
    pub d_aug: usize,
}

/// `d′ = tr(M̃ᵀ(P_Ã − P_S)M̃)/(1+α)`, where `S = Col(M̃XQ)` and `Q` spans Null(Δ).
pub fn d_prime(aug: &AugmentedDataset) -> Result<DPrime> {
    let d = aug.d();
    let rank = matkit::rank_tol(aug.x_aug_stacked(), aug.tol)?;
    if rank < d {
        return Err(Error::RankDeficient { rank, cols: d });
    }
    let k = (1 + aug.alpha()) as f64;
    // tr(M̃ᵀ P M̃) = ‖M̃ᵀU‖_F² for an orthonormal basis U of the range of P.
    let u_a = matkit::column_space_basis(aug.x_aug_stacked(), aug.tol)?;
    let t_a = aug.fold_rows(&u_a).norm_squared();
    let q = aug.null_basis()?;
    let t_s = if q.ncols() == 0 {
        0.0
    } else {
        let s = aug.replicate_rows(&(aug.x() * &q));
        let u_s = matkit::column_space_basis(&s, aug.tol)?;
        aug.fold_rows(&u_s).norm_squared()
    };
    let unclamped = (t_a - t_s) / k;
    let d_aug = d_aug_of(aug);
    Ok(DPrime {
        value: unclamped.clamp(0.0, d_aug as f64),
        unclamped,
        d_aug,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(n: usize, d: usize, seed: u64) -> Matrix {
        let mut r = rng::substream(seed, &[99]);
        Matrix::from_fn(n, d, |_, _| r.sample(StandardNormal))
    }

    fn build(x: &Matrix, spec: &AugmentationSpec, seed: u64) -> AugmentedDataset {
        let y = Vector::from_fn(x.nrows(), |i, _| i as f64);
        build_augmented(x, &y, spec, &mut rng::substream(seed, &[3])).unwrap()
    }

    #[test]
    fn identity_copies_stack() {
        let x = gauss(4, 3, 1);
        let aug = build(&x, &AugmentationSpec::identity(2), 0);
        assert_eq!(aug.x_aug_stacked().nrows(), 12);
        for k in 0..3 {
            assert_eq!(aug.x_aug_stacked().rows(4 * k, 4), x.rows(0, 4));
        }
        assert_eq!(aug.delta().amax(), 0.0);
        assert_eq!(d_aug_of(&aug), 0);
    }

    #[test]
    fn block_scale_rows() {
        let x = Matrix::from_row_slice(1, 5, &[1., 2., 3., 4., 5.]);
        let spec = AugmentationSpec::new(
            AugmentationKind::BlockScale {
                d_c1: 2,
                d_e1: 1,
                scale_e1: 2.0,
                scale_e2: -1.0,
            },
            1,
        );
        let aug = build(&x, &spec, 0);
        assert_eq!(
            aug.x_aug_stacked().row(1).iter().copied().collect::<Vec<_>>(),
            vec![1., 2., 6., -4., -5.]
        );
    }

    #[test]
    fn delta_head_is_zero_and_head_matches_x() {
        let x = gauss(6, 4, 2);
        let spec = AugmentationSpec::new(
            AugmentationKind::GaussianJitter {
                d_pert: 2,
                noise_std: 0.3,
            },
            3,
        );
        let aug = build(&x, &spec, 5);
        assert_eq!(aug.x_aug_stacked().rows(0, 6), x.rows(0, 6));
        assert_eq!(aug.delta().rows(0, 6).amax(), 0.0);
        assert_eq!(aug.delta().columns(0, 2).amax(), 0.0);
        assert_eq!(d_aug_of(&aug), 2);
    }

    #[test]
    fn replicate_labels_examples() {
        let x = Matrix::zeros(2, 1);
        let y = Vector::from_vec(vec![1., 2.]);
        let aug = build_augmented(&x, &y, &AugmentationSpec::identity(1), &mut rng::substream(0, &[])).unwrap();
        assert_eq!(replicate_labels(&aug).as_slice(), &[1., 2., 1., 2.]);
        let x = Matrix::zeros(1, 1);
        let y = Vector::from_vec(vec![5.]);
        let aug = build_augmented(&x, &y, &AugmentationSpec::identity(3), &mut rng::substream(0, &[])).unwrap();
        assert_eq!(replicate_labels(&aug).as_slice(), &[5., 5., 5., 5.]);
    }

    #[test]
    fn spec_validation() {
        let bad = AugmentationSpec::new(
            AugmentationKind::BlockScale {
                d_c1: 3,
                d_e1: 3,
                scale_e1: 2.0,
                scale_e2: -1.0,
            },
            1,
        );
        assert!(bad.validate(5).is_err());
        assert!(AugmentationSpec::identity(0).validate(5).is_err());
        let maps = AugmentationSpec::new(
            AugmentationKind::LinearMaps {
                maps: vec![Matrix::identity(2, 2)],
            },
            2,
        );
        assert!(maps.validate(2).is_err());
        let x = gauss(3, 4, 0);
        let y = Vector::zeros(2);
        assert!(build_augmented(&x, &y, &AugmentationSpec::identity(1), &mut rng::substream(0, &[])).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let spec = AugmentationSpec::new(AugmentationKind::CoordinateResample { d_pert: 25 }, 3);
        let v: serde_json::Value = serde_json::to_value(&spec).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"kind": "coordinate_resample", "alpha": 3, "params": {"d_pert": 25}})
        );
        let back: AugmentationSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);
        let id: AugmentationSpec =
            serde_json::from_str(r#"{"kind":"identity_copies","alpha":2,"params":{}}"#).unwrap();
        assert_eq!(id, AugmentationSpec::identity(2));
        let lm = AugmentationSpec::new(
            AugmentationKind::LinearMaps {
                maps: vec![Matrix::from_row_slice(2, 2, &[1., 2., 3., 4.])],
            },
            1,
        );
        let s = serde_json::to_string(&lm).unwrap();
        assert!(s.contains("[[1.0,2.0],[3.0,4.0]]"));
        assert_eq!(serde_json::from_str::<AugmentationSpec>(&s).unwrap(), lm);
    }

    #[test]
    fn linear_maps_use_transpose() {
        let x = Matrix::from_row_slice(1, 2, &[1., 0.]);
        let a = Matrix::from_row_slice(2, 2, &[0., 0., 1., 0.]);
        let spec = AugmentationSpec::new(AugmentationKind::LinearMaps { maps: vec![a.clone()] }, 1);
        let aug = build(&x, &spec, 0);
        // A x = (0, 1)
        assert_eq!(aug.x_aug_stacked().row(1).iter().copied().collect::<Vec<_>>(), vec![0., 1.]);
    }

    #[test]
    fn d_prime_zero_for_identity() {
        let x = gauss(10, 4, 3);
        let aug = build(&x, &AugmentationSpec::identity(2), 0);
        let dp = d_prime(&aug).unwrap();
        assert!(dp.unclamped.abs() < 1e-8);
        assert_eq!(dp.d_aug, 0);
    }

    #[test]
    fn d_prime_requires_full_rank() {
        let x = gauss(2, 4, 3);
        let aug = build(&x, &AugmentationSpec::identity(1), 0);
        assert!(matches!(d_prime(&aug), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn d_prime_hand_case() {
        // One sample x = (1, 1); copy scales the second coordinate by s.
        // Then Ã = [[1,1],[1,s]], S = Col(M̃ e1) so P_S projects onto (1,1)/√2.
        // tr(M̃ᵀ P_Ã M̃) = ‖(1,1)‖² = 2, tr(M̃ᵀ P_S M̃) = 2, so d′ = 0 here.
        let x = Matrix::from_row_slice(1, 2, &[1., 1.]);
        let copy = Matrix::from_row_slice(1, 2, &[1., 3.]);
        let aug = AugmentedDataset::from_copies(x, Vector::zeros(1), &[copy]).unwrap();
        let dp = d_prime(&aug).unwrap();
        assert!(dp.unclamped.abs() < 1e-12, "{dp:?}");
    }

    #[test]
    fn quantile_examples() {
        let sampler = |n: usize, r: &mut Stream| Matrix::from_fn(n, 30, |_, _| r.sample(StandardNormal));
        let q = d_aug_quantile(&AugmentationSpec::identity(1), sampler, 50, 0.1, 100, 1).unwrap();
        assert_eq!(q.d_aug, 0);
        let spec = AugmentationSpec::new(AugmentationKind::CoordinateResample { d_pert: 25 }, 1);
        let q = d_aug_quantile(&spec, sampler, 50, 0.02, 500, 1).unwrap();
        assert_eq!(q.d_aug, 25);
        assert_eq!(q.histogram.get(&25), Some(&500));
        let jitter = AugmentationSpec::new(
            AugmentationKind::GaussianJitter {
                d_pert: 6,
                noise_std: 1.0,
            },
            1,
        );
        let small = |n: usize, r: &mut Stream| Matrix::from_fn(n, 6, |_, _| r.sample(StandardNormal));
        assert_eq!(d_aug_quantile(&jitter, small, 10, 0.05, 100, 2).unwrap().d_aug, 6);
        let constant = |n: usize, _: &mut Stream| Matrix::from_element(n, 6, 1.0);
        let q = d_aug_quantile(&jitter, constant, 10, 0.05, 100, 2).unwrap();
        assert!(q.degenerate_sampler);
        assert_eq!(q.d_aug, 0);
        assert!(d_aug_quantile(&jitter, small, 10, 0.05, 10, 2).is_err());
    }
}
