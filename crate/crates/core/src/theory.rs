//! Closed-form risk predictions, bias/variance identities, optimal
//! regularization strength, distortion factors, complexity bounds and the
//! domain-adaptation quantities.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{d_aug_of, d_prime, AugmentedDataset};
use crate::datagen::DomainSpec;
use crate::error::{invalid, Error, Result};
use crate::estimators::soft_system;
use crate::matkit::{self, Matrix, Subspace, Vector};
use crate::rng;

/// `(d − d_aug) σ² / n`.
pub fn dac_risk_pred(d: usize, d_aug: usize, sigma: f64, n: usize) -> Result<f64> {
    if d_aug > d {
        return invalid(format!("d_aug = {d_aug} exceeds d = {d}"));
    }
    if n == 0 {
        return invalid("n must be at least 1");
    }
    Ok((d - d_aug) as f64 * sigma * sigma / n as f64)
}

/// `(d − d_aug + d′) σ² / n`.
pub fn da_erm_risk_pred(d: usize, d_aug: usize, d_prime: f64, sigma: f64, n: usize) -> Result<f64> {
    if !(d_prime >= 0.0 && d_prime <= d_aug as f64) {
        return invalid(format!("d′ = {d_prime} outside [0, {d_aug}]"));
    }
    Ok(dac_risk_pred(d, d_aug, sigma, n)? + d_prime * sigma * sigma / n as f64)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SoftBiasVariance {
    pub var: f64,
    pub bias: f64,
    /// Eigen-form cross-check, present when Σ_X is invertible.
    pub eigen_var: Option<f64>,
    pub eigen_bias: Option<f64>,
}

/// `G = (Σ_X + λΣ_Δ)⁺ Σ_X`; `λ = ∞` gives the hard-constraint limit.
fn shrinkage_operator(aug: &AugmentedDataset, lambda: f64) -> Result<Matrix> {
    let n = aug.n() as f64;
    if lambda == f64::INFINITY {
        let q = aug.null_basis()?;
        if q.ncols() == 0 {
            return Ok(Matrix::zeros(aug.d(), aug.d()));
        }
        let xq = aug.x() * &q;
        return Ok(&q * matkit::pinv(&xq, aug.tol)? * aug.x());
    }
    let a = soft_system(aug, lambda)?;
    let p = matkit::pinv(&a, aug.tol)?;
    Ok(p.columns(0, aug.n()) * aug.x() / n.sqrt())
}

/// Fixed-design variance and bias of soft DAC on the original design.
pub fn soft_bias_variance(
    aug: &AugmentedDataset,
    theta_star: &Vector,
    sigma: f64,
    lambda: f64,
) -> Result<SoftBiasVariance> {
    if theta_star.len() != aug.d() {
        return Err(Error::DimensionMismatch("theta_star length != d".into()));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return invalid("lambda must be non-negative");
    }
    let n = aug.n() as f64;
    let s2 = sigma * sigma;
    let g = shrinkage_operator(aug, lambda)?;
    let var = s2 / n * (&g * &g).trace();
    let resid = &g * theta_star - theta_star;
    let bias = (aug.x() * resid).norm_squared() / n;

    let sx = aug.sigma_x();
    let full_rank = matkit::rank_tol(&sx, aug.tol)? == aug.d();
    let (eigen_var, eigen_bias) = if full_rank {
        let (half, inv_half) = matkit::psd_sqrt_pair(&sx, aug.tol)?;
        let mut k = &inv_half * aug.sigma_delta() * &inv_half;
        matkit::symmetrize(&mut k);
        let eig = k.symmetric_eigen();
        let gmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let p_delta = matkit::proj(aug.delta(), Subspace::RowSpace, aug.tol)?;
        let vartheta = eig.eigenvectors.transpose() * (&half * (&p_delta.p * theta_star));
        let mut ev = 0.0;
        let mut eb = 0.0;
        for i in 0..aug.d() {
            let gamma = eig.eigenvalues[i];
            let active = gamma > aug.tol * gmax.max(f64::MIN_POSITIVE);
            // shrink = λγ/(1+λγ)
            let shrink = if !active {
                0.0
            } else if lambda == f64::INFINITY {
                1.0
            } else {
                lambda * gamma / (1.0 + lambda * gamma)
            };
            ev += (1.0 - shrink).powi(2);
            eb += vartheta[i].powi(2) * shrink * shrink;
        }
        (Some(s2 / n * ev), Some(eb))
    } else {
        (None, None)
    };
    Ok(SoftBiasVariance {
        var,
        bias,
        eigen_var,
        eigen_bias,
    })
}

/// `‖P_Δθ*‖²_{Σ_Δ}` and `tr(Σ_X Σ_Δ⁺)`.
fn misspec_pieces(aug: &AugmentedDataset, theta_star: &Vector) -> Result<(f64, f64, bool)> {
    if theta_star.len() != aug.d() {
        return Err(Error::DimensionMismatch("theta_star length != d".into()));
    }
    let r = aug.rows_stacked() as f64;
    let dt = aug.delta() * theta_star;
    let m = dt.norm_squared() / r;
    let scale = aug.delta().norm() * theta_star.norm();
    let invariant = dt.norm() <= 1e-12 * scale || scale == 0.0;
    let tr = (aug.sigma_x() * matkit::pinv(&aug.sigma_delta(), aug.tol)?).trace();
    Ok((m, tr, invariant))
}

/// `λ* = √(σ² tr(Σ_XΣ_Δ⁺) / (N ‖P_Δθ*‖²_{Σ_Δ}))`; `+∞` when `Δθ* = 0`.
pub fn optimal_lambda(aug: &AugmentedDataset, theta_star: &Vector, sigma: f64) -> Result<f64> {
    let (m, tr, invariant) = misspec_pieces(aug, theta_star)?;
    if invariant {
        return Ok(f64::INFINITY);
    }
    Ok((sigma * sigma * tr / (aug.n() as f64 * m)).sqrt())
}

/// Upper-bound surrogate minimized by [`optimal_lambda`].
pub fn lambda_surrogate_bound(
    aug: &AugmentedDataset,
    theta_star: &Vector,
    sigma: f64,
    lambda: f64,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return invalid("lambda must be positive");
    }
    let (m, tr, _) = misspec_pieces(aug, theta_star)?;
    let n = aug.n() as f64;
    let s2 = sigma * sigma;
    let d_aug = d_aug_of(aug);
    Ok(s2 * (aug.d() - d_aug) as f64 / n + s2 * tr / (2.0 * n * lambda) + 0.5 * lambda * m)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DaErmTerms {
    pub bias: f64,
    pub var_lb: f64,
    /// `+∞` when no finite constant exists.
    pub c_x: f64,
    pub c_s: f64,
    /// Exact fixed-design variance `(σ²/N) tr(Σ_X Σ_Ã⁻¹ Σ_S Σ_Ã⁻¹)`.
    pub exact_var: f64,
}

/// DA-ERM bias under misspecification, its exact variance and the
/// distortion-factor lower bound on that variance.
pub fn da_erm_misspec_terms(aug: &AugmentedDataset, theta_star: &Vector, sigma: f64) -> Result<DaErmTerms> {
    let d = aug.d();
    if theta_star.len() != d {
        return Err(Error::DimensionMismatch("theta_star length != d".into()));
    }
    let rank = matkit::rank_tol(aug.x_aug_stacked(), aug.tol)?;
    if rank < d {
        return Err(Error::RankDeficient { rank, cols: d });
    }
    let n = aug.n() as f64;
    let s2 = sigma * sigma;
    let a_pinv = matkit::pinv(aug.x_aug_stacked(), aug.tol)?;
    // ‖M̃XÃ⁺Δ P_Δθ*‖²/((1+α)N) = ‖XÃ⁺Δθ*‖²/N.
    let bias = (aug.x() * (&a_pinv * (aug.delta() * theta_star))).norm_squared() / n;

    let sx = aug.sigma_x();
    let sa = aug.sigma_aug();
    let s = aug.fold_rows(aug.x_aug_stacked()) / (1 + aug.alpha()) as f64;
    let mut ss = s.transpose() * &s / n;
    matkit::symmetrize(&mut ss);
    // No finite constant when Σ_Ã leaves the range; the bound is then vacuous.
    let dominate = |b: &Matrix| match matkit::min_dominating_scalar(&sa, b, aug.tol) {
        Err(Error::RangeContainment { .. }) => Ok(f64::INFINITY),
        other => other,
    };
    let c_x = dominate(&sx)?;
    let c_s = dominate(&ss)?;
    let sa_inv = matkit::pinv(&sa, aug.tol)?;
    let exact_var = s2 / n * (&sx * &sa_inv * &ss * &sa_inv).trace();
    let var_lb = s2 * d as f64 / (n * c_x * c_s);
    Ok(DaErmTerms {
        bias,
        var_lb,
        c_x,
        c_s,
        exact_var,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub closed_form_bound: f64,
}

/// Empirical Rademacher complexity of `{x ↦ θᵀx : ‖θ‖ ≤ c0, Δθ = 0}`.
pub fn rademacher_linear_dac(
    x: &Matrix,
    delta: &Matrix,
    c0: f64,
    mc_draws: usize,
    seed: u64,
) -> Result<RademacherEstimate> {
    if mc_draws < 100 {
        return invalid("at least 100 Monte Carlo draws are required");
    }
    if x.ncols() != delta.ncols() {
        return Err(Error::DimensionMismatch("X and Δ column counts differ".into()));
    }
    let n = x.nrows();
    let perp = matkit::proj(delta, Subspace::NullSpace, matkit::DEFAULT_TOL)?;
    let v = x * &perp.p;
    let vals: Vec<f64> = (0..mc_draws as u64)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::substream(seed, &[rng::purpose::RADEMACHER, t]);
            let eps = Vector::from_fn(n, |_, _| if r.random::<bool>() { 1.0 } else { -1.0 });
            c0 / n as f64 * v.tr_mul(&eps).norm()
        })
        .collect();
    let (mean, se) = crate::experiments::mean_se(&vals);
    Ok(RademacherEstimate {
        estimate: mean,
        std_error: se,
        closed_form_bound: c0 / n as f64 * v.norm(),
    })
}

/// `4 C_l R + √(2B² log(2/δ)/N)`.
pub fn prop51_bound(rad: f64, c_l: f64, b: f64, delta_prob: f64, n: usize) -> Result<f64> {
    if !(delta_prob > 0.0 && delta_prob < 1.0) {
        return invalid("delta_prob must lie in (0, 1)");
    }
    if n == 0 {
        return invalid("n must be at least 1");
    }
    Ok(4.0 * c_l * rad + (2.0 * b * b * (2.0 / delta_prob).ln() / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TwoLayerBound {
    pub c_n: f64,
    pub bound: f64,
}

/// `C_N = √((1/n) Σ ‖P_Δ^⊥ x_i‖²)` and `σ C_w C_N / √n`.
pub fn two_layer_bound(x: &Matrix, delta: &Matrix, c_w: f64, sigma: f64) -> Result<TwoLayerBound> {
    if x.ncols() != delta.ncols() {
        return Err(Error::DimensionMismatch("X and Δ column counts differ".into()));
    }
    let n = x.nrows() as f64;
    let perp = matkit::proj(delta, Subspace::NullSpace, matkit::DEFAULT_TOL)?;
    let c_n = ((x * &perp.p).norm_squared() / n).sqrt();
    Ok(TwoLayerBound {
        c_n,
        bound: sigma * c_w * c_n / n.sqrt(),
    })
}

/// Target covariance `P_iv + σ_t P_e` and target excess risk `½‖θ−θ*‖²_{Σ_{x,t}}`.
pub fn domain_target_quantities(spec: &DomainSpec, theta: &Vector) -> Result<(Matrix, f64)> {
    spec.validate()?;
    if theta.len() != spec.d {
        return Err(Error::DimensionMismatch("theta length != d".into()));
    }
    let mut sxt = spec.p_iv() + spec.p_e() * spec.sigma_t;
    matkit::symmetrize(&mut sxt);
    let ex = 0.5 * matkit::seminorm_sq(&(theta - spec.theta()), &sxt)?;
    Ok((sxt, ex))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EerEstimate {
    pub value: f64,
    pub std_error: f64,
    /// `σ²/2 ‖Ã(X_e)⁺ M̃‖_F²`, the exact expectation over z.
    pub closed_form: f64,
    /// The environmental block of the design is zero.
    pub degenerate: bool,
}

/// Environmental excess-risk term `E ½‖Ã(X_e)⁺ M̃ z‖²` with `Ã(X_e) = Ã P_e`
/// (the normalized pseudo-inverse form collapses to `Ã(X_e)⁺`).
pub fn eer_e(aug: &AugmentedDataset, spec: &DomainSpec, trials: usize, seed: u64) -> Result<EerEstimate> {
    if trials < 100 {
        return invalid("eer_e needs at least 100 trials");
    }
    if spec.d != aug.d() {
        return Err(Error::DimensionMismatch("domain spec and dataset disagree on d".into()));
    }
    let a_e = aug.x_aug_stacked() * spec.p_e();
    if a_e.amax() <= 1e-14 * aug.x_aug_stacked().amax().max(1.0) {
        return Ok(EerEstimate {
            value: 0.0,
            std_error: 0.0,
            closed_form: 0.0,
            degenerate: true,
        });
    }
    let op = aug.fold_rows(&matkit::pinv(&a_e, aug.tol)?.transpose()).transpose();
    let n = aug.n();
    let vals: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::substream(seed, &[rng::purpose::NOISE, t]);
            let z = Vector::from_fn(n, |_, _| spec.sigma * r.sample::<f64, _>(rand_distr::StandardNormal));
            0.5 * (&op * z).norm_squared()
        })
        .collect();
    let (mean, se) = crate::experiments::mean_se(&vals);
    Ok(EerEstimate {
        value: mean,
        std_error: se,
        closed_form: 0.5 * spec.sigma * spec.sigma * op.norm_squared(),
        degenerate: false,
    })
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Every closed-form prediction for one fixed design.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TheoryReport {
    pub d: usize,
    pub d_aug: usize,
    pub d_prime: f64,
    pub dac_risk_pred: f64,
    pub da_erm_risk_pred: f64,
    pub soft_var: f64,
    pub soft_bias: f64,
    /// `null` in JSON when infinite (no misspecification).
    #[serde(with = "inf_as_null")]
    pub optimal_lambda: f64,
    #[serde(with = "inf_as_null")]
    pub c_x: f64,
    #[serde(with = "inf_as_null")]
    pub c_s: f64,
    pub da_erm_bias: f64,
    pub da_erm_var_lb: f64,
}

impl TheoryReport {
    /// Soft-DAC terms are evaluated at `lambda`, or at the optimal λ when
    /// `None` (the hard-constraint limit if that is infinite).
    pub fn compute(aug: &AugmentedDataset, theta_star: &Vector, sigma: f64, lambda: Option<f64>) -> Result<TheoryReport> {
        let d = aug.d();
        let n = aug.n();
        let dp = d_prime(aug)?;
        let opt = optimal_lambda(aug, theta_star, sigma)?;
        let sbv = soft_bias_variance(aug, theta_star, sigma, lambda.unwrap_or(opt))?;
        let erm = da_erm_misspec_terms(aug, theta_star, sigma)?;
        Ok(TheoryReport {
            d,
            d_aug: dp.d_aug,
            d_prime: dp.value,
            dac_risk_pred: dac_risk_pred(d, dp.d_aug, sigma, n)?,
            da_erm_risk_pred: da_erm_risk_pred(d, dp.d_aug, dp.value, sigma, n)?,
            soft_var: sbv.var,
            soft_bias: sbv.bias,
            optimal_lambda: opt,
            c_x: erm.c_x,
            c_s: erm.c_s,
            da_erm_bias: erm.bias,
            da_erm_var_lb: erm.var_lb,
        })
    }
}
