//! Learning procedures: OLS, DA-ERM and DAC least squares (hard and soft),
//! constrained logistic regression and two-layer ReLU fitting.
//!
//! The linear estimators are linear maps of the label vector. They are built
//! as explicit `d × N` operators ([`LinearOperatorFit`]) so Monte Carlo loops
//! over label noise only pay a matrix-vector product per draw.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::augment::{replicate_labels, AugmentedDataset};
use crate::error::{invalid, Error, Result};
use crate::matkit::{self, Matrix, Vector};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum LinearMethod {
    Ols,
    DaErm,
    DacHard,
    DacSoft { lambda: f64 },
}

impl LinearMethod {
    pub fn label(&self) -> String {
        match self {
            LinearMethod::Ols => "ols".into(),
            LinearMethod::DaErm => "da_erm".into(),
            LinearMethod::DacHard => "dac_hard".into(),
            LinearMethod::DacSoft { .. } => "dac_soft".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearEstimate {
    pub theta_hat: Vector,
    pub method: LinearMethod,
    pub diagnostics: BTreeMap<String, f64>,
}

/// A linear estimator frozen on a fixed design: `θ̂ = operator · y`.
#[derive(Debug, Clone)]
pub struct LinearOperatorFit {
    pub method: LinearMethod,
    pub operator: Matrix,
    pub effective_rank: usize,
    /// Null(Δ) was trivial (hard DAC only).
    pub degenerate_constraint: bool,
}

impl LinearOperatorFit {
    pub fn theta(&self, y: &Vector) -> Vector {
        &self.operator * y
    }

    /// Apply to labels and attach diagnostics computed against `aug`'s design.
    pub fn fit(&self, aug: &AugmentedDataset, y: &Vector) -> LinearEstimate {
        let theta = self.theta(y);
        let mut diagnostics = BTreeMap::new();
        diagnostics.insert("residual_norm".into(), (y - aug.x() * &theta).norm());
        diagnostics.insert("effective_rank".into(), self.effective_rank as f64);
        diagnostics.insert(
            "constraint_residual".into(),
            (aug.delta() * &theta).amax(),
        );
        if self.degenerate_constraint {
            diagnostics.insert("degenerate_constraint".into(), 1.0);
        }
        if let LinearMethod::DacSoft { lambda } = self.method {
            diagnostics.insert("lambda".into(), lambda);
        }
        LinearEstimate {
            theta_hat: theta,
            method: self.method,
            diagnostics,
        }
    }
}

/// `X⁺`.
pub fn ols_operator(x: &Matrix) -> Result<LinearOperatorFit> {
    let p = matkit::pinv(x, matkit::DEFAULT_TOL)?;
    Ok(LinearOperatorFit {
        method: LinearMethod::Ols,
        effective_rank: matkit::rank_tol(x, matkit::DEFAULT_TOL)?,
        operator: p,
        degenerate_constraint: false,
    })
}

/// `Ã⁺ M̃`.
pub fn da_erm_operator(aug: &AugmentedDataset) -> Result<LinearOperatorFit> {
    let p = matkit::pinv(aug.x_aug_stacked(), aug.tol)?;
    // Right-multiplying by M̃ sums the column blocks.
    let op = aug.fold_rows(&p.transpose()).transpose();
    Ok(LinearOperatorFit {
        method: LinearMethod::DaErm,
        effective_rank: matkit::rank_tol(aug.x_aug_stacked(), aug.tol)?,
        operator: op,
        degenerate_constraint: false,
    })
}

/// `Q (XQ)⁺` with `Q` an orthonormal basis of Null(Δ).
pub fn dac_hard_operator(aug: &AugmentedDataset) -> Result<LinearOperatorFit> {
    let q = aug.null_basis()?;
    if q.ncols() == 0 {
        return Ok(LinearOperatorFit {
            method: LinearMethod::DacHard,
            operator: Matrix::zeros(aug.d(), aug.n()),
            effective_rank: 0,
            degenerate_constraint: true,
        });
    }
    let xq = aug.x() * &q;
    let op = &q * matkit::pinv(&xq, aug.tol)?;
    Ok(LinearOperatorFit {
        method: LinearMethod::DacHard,
        effective_rank: matkit::rank_tol(&xq, aug.tol)?,
        operator: op,
        degenerate_constraint: false,
    })
}

/// `(Σ_X + λΣ_Δ)⁺ Xᵀ / N`, computed as the pseudoinverse of the stacked
/// least-squares system `[X/√N; √(λ/((1+α)N)) Δ]` so huge λ stays accurate.
pub fn dac_soft_operator(aug: &AugmentedDataset, lambda: f64) -> Result<LinearOperatorFit> {
    let a = soft_system(aug, lambda)?;
    let p = matkit::pinv(&a, aug.tol)?;
    let n = aug.n();
    let op = p.columns(0, n) / (n as f64).sqrt();
    Ok(LinearOperatorFit {
        method: LinearMethod::DacSoft { lambda },
        effective_rank: matkit::rank_tol(&a, aug.tol)?,
        operator: op,
        degenerate_constraint: false,
    })
}

/// `A` with `AᵀA = Σ_X + λΣ_Δ`.
pub(crate) fn soft_system(aug: &AugmentedDataset, lambda: f64) -> Result<Matrix> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return invalid(format!("lambda must be finite and non-negative, got {lambda}"));
    }
    let n = aug.n();
    let r = aug.rows_stacked();
    let mut a = Matrix::zeros(n + r, aug.d());
    a.rows_mut(0, n).copy_from(&(aug.x() / (n as f64).sqrt()));
    a.rows_mut(n, r)
        .copy_from(&(aug.delta() * (lambda / r as f64).sqrt()));
    Ok(a)
}

/// Minimum-norm least squares `X⁺y`.
pub fn ols(x: &Matrix, y: &Vector) -> Result<LinearEstimate> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch("X rows != y length".into()));
    }
    let op = ols_operator(x)?;
    let theta = op.theta(y);
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("residual_norm".into(), (y - x * &theta).norm());
    diagnostics.insert("effective_rank".into(), op.effective_rank as f64);
    Ok(LinearEstimate {
        theta_hat: theta,
        method: LinearMethod::Ols,
        diagnostics,
    })
}

/// Least squares on the stacked augmented data with replicated labels.
pub fn da_erm_ls(aug: &AugmentedDataset) -> Result<LinearEstimate> {
    Ok(da_erm_operator(aug)?.fit(aug, aug.y()))
}

/// `min ‖y − Xθ‖²` subject to `Δθ = 0`.
pub fn dac_hard_ls(aug: &AugmentedDataset) -> Result<LinearEstimate> {
    Ok(dac_hard_operator(aug)?.fit(aug, aug.y()))
}

/// `min ‖y − Xθ‖²/N + λ‖Δθ‖²/((1+α)N)`.
pub fn dac_soft_ls(aug: &AugmentedDataset, lambda: f64) -> Result<LinearEstimate> {
    Ok(dac_soft_operator(aug, lambda)?.fit(aug, aug.y()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Augmented,
    Original,
}

/// `‖Ã(θ−θ*)‖²/((1+α)N)` or `‖X(θ−θ*)‖²/N`.
pub fn excess_risk_fixed_design(
    theta: &Vector,
    theta_star: &Vector,
    aug: &AugmentedDataset,
    design: Design,
) -> Result<f64> {
    if theta.len() != aug.d() || theta_star.len() != aug.d() {
        return Err(Error::DimensionMismatch(format!(
            "parameter lengths {} / {} against d = {}",
            theta.len(),
            theta_star.len(),
            aug.d()
        )));
    }
    let diff = theta - theta_star;
    Ok(match design {
        Design::Augmented => (aug.x_aug_stacked() * diff).norm_squared() / aug.rows_stacked() as f64,
        Design::Original => (aug.x() * diff).norm_squared() / aug.n() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub grad_tol: f64,
    pub seed: u64,
    /// Step at iteration t is `step_size / (1 + decay * t)`.
    #[serde(default)]
    pub decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 5000,
            step_size: 0.1,
            grad_tol: 1e-7,
            seed: 0,
            decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.grad_tol > 0.0) || self.decay < 0.0 {
            return invalid("step_size and grad_tol must be positive, decay non-negative");
        }
        Ok(())
    }

    fn step(&self, t: usize) -> f64 {
        self.step_size / (1.0 + self.decay * t as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogisticMode {
    DaErm,
    DacHard,
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub estimate: LinearEstimate,
    pub converged: bool,
    pub iterations: usize,
    /// Loss at every visited iterate, starting from θ = 0.
    pub loss_trace: Vec<f64>,
}

fn softplus(m: f64) -> f64 {
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

/// Mean logistic loss `(1/m) Σ log(1 + e^{fᵢθ}) − yᵢ fᵢθ` and its gradient.
pub fn logistic_loss_grad(f: &Matrix, y: &Vector, theta: &Vector) -> (f64, Vector) {
    let m = f * theta;
    let rows = f.nrows() as f64;
    let loss = m.iter().zip(y.iter()).map(|(&mi, &yi)| softplus(mi) - yi * mi).sum::<f64>() / rows;
    let r = Vector::from_iterator(
        m.len(),
        m.iter().zip(y.iter()).map(|(&mi, &yi)| crate::datagen::sigmoid(mi) - yi),
    );
    let g = f.tr_mul(&r) / rows;
    (loss, g)
}

fn project_ball(v: &mut Vector, radius: f64) {
    let n = v.norm();
    if n > radius {
        v.scale_mut(radius / n);
    }
}

/// Projected gradient descent on the logistic loss over `‖θ‖₂ ≤ c0`.
pub fn logistic_fit(
    aug: &AugmentedDataset,
    mode: LogisticMode,
    c0: f64,
    opt: &OptimizerConfig,
) -> Result<LogisticFit> {
    if !(c0 > 0.0) {
        return invalid("c0 must be positive");
    }
    opt.validate()?;
    let (features, labels, basis) = match mode {
        LogisticMode::DaErm => (aug.x_aug_stacked().clone(), replicate_labels(aug), None),
        LogisticMode::DacHard => {
            let q = aug.null_basis()?;
            (aug.x() * &q, aug.y().clone(), Some(q))
        }
    };
    let k = features.ncols();
    let mut beta = Vector::zeros(k);
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, beta.clone());
    let mut converged = false;
    let mut iterations = 0;
    if k > 0 {
        for t in 0..opt.max_iters {
            let (loss, g) = logistic_loss_grad(&features, &labels, &beta);
            trace.push(loss);
            if loss < best.0 {
                best = (loss, beta.clone());
            }
            let eta = opt.step(t);
            let mut next = &beta - &g * eta;
            project_ball(&mut next, c0);
            let moved = (&next - &beta).norm() / eta;
            beta = next;
            iterations = t + 1;
            if moved <= opt.grad_tol {
                converged = true;
                break;
            }
        }
        let (loss, _) = logistic_loss_grad(&features, &labels, &beta);
        trace.push(loss);
        if loss <= best.0 {
            best = (loss, beta.clone());
        }
    } else {
        converged = true;
    }
    let beta = if converged { beta } else { best.1 };
    let train_loss = logistic_loss_grad(&features, &labels, &beta).0;
    let theta = match &basis {
        Some(q) => q * &beta,
        None => beta,
    };
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("train_loss".into(), train_loss);
    diagnostics.insert("iterations".into(), iterations as f64);
    diagnostics.insert("converged".into(), if converged { 1.0 } else { 0.0 });
    diagnostics.insert("constraint_residual".into(), (aug.delta() * &theta).amax());
    Ok(LogisticFit {
        estimate: LinearEstimate {
            theta_hat: theta,
            method: match mode {
                LogisticMode::DaErm => LinearMethod::DaErm,
                LogisticMode::DacHard => LinearMethod::DacHard,
            },
            diagnostics,
        },
        converged,
        iterations,
        loss_trace: trace,
    })
}

/// 0-1 error of `sign(θᵀx)` against {0, 1} labels.
pub fn classification_error(x: &Matrix, y: &Vector, theta: &Vector) -> f64 {
    let m = x * theta;
    let wrong = m
        .iter()
        .zip(y.iter())
        .filter(|(&mi, &yi)| (mi > 0.0) != (yi > 0.5))
        .count();
    wrong as f64 / y.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReluMode {
    DaErm,
    Dac,
}

#[derive(Debug, Clone)]
pub struct ReluEstimate {
    pub b_hat: Matrix,
    pub w_hat: Vector,
    pub method: ReluMode,
    pub train_loss: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ReluEstimate {
    pub fn predict(&self, x: &Matrix) -> Vector {
        crate::datagen::relu_forward(x, &self.b_hat, &self.w_hat)
    }
}

/// Euclidean projection onto the ℓ₁ ball of radius `c` (sort-based).
pub fn project_l1_ball(v: &Vector, c: f64) -> Vector {
    if v.lp_norm(1) <= c {
        return v.clone();
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - c) / (j + 1) as f64;
        if uj > t {
            tau = t;
        }
    }
    v.map(|x| x.signum() * (x.abs() - tau).max(0.0))
}

fn normalize_columns(b: &mut Matrix, fallback: &Matrix) {
    for k in 0..b.ncols() {
        let n = b.column(k).norm();
        if n > 1e-12 {
            b.column_mut(k).scale_mut(1.0 / n);
        } else {
            let f = fallback.column(k).into_owned();
            b.set_column(k, &(&f / f.norm()));
        }
    }
}

/// Gradient descent on `(1/2m) Σ ((x_iᵀB)₊ w − y_i)²` over unit-norm columns of
/// `B` and `‖w‖₁ ≤ c_w`. In DAC mode the columns of `B` stay in Null(Δ).
pub fn relu_fit(
    aug: &AugmentedDataset,
    mode: ReluMode,
    width: usize,
    c_w: f64,
    opt: &OptimizerConfig,
) -> Result<ReluEstimate> {
    if width == 0 {
        return invalid("width must be at least 1");
    }
    if !(c_w > 0.0) {
        return invalid("c_w must be positive");
    }
    opt.validate()?;
    let d = aug.d();
    let (x, y, perp) = match mode {
        ReluMode::DaErm => (aug.x_aug_stacked().clone(), replicate_labels(aug), None),
        ReluMode::Dac => {
            let q = aug.null_basis()?;
            if q.ncols() == 0 {
                return invalid("Null(Δ) is trivial: no consistent hidden unit exists");
            }
            (aug.x().clone(), aug.y().clone(), Some(&q * q.transpose()))
        }
    };
    let m = x.nrows() as f64;
    let mut r = rng::substream(opt.seed, &[rng::purpose::INIT]);
    let raw = Matrix::from_fn(d, width, |_, _| r.sample(StandardNormal));
    let fallback = match &perp {
        Some(p) => p * &raw,
        None => raw.clone(),
    };
    let mut b = fallback.clone();
    normalize_columns(&mut b, &fallback);
    let mut w = project_l1_ball(
        &Vector::from_fn(width, |_, _| r.sample::<f64, _>(StandardNormal) / width as f64),
        c_w,
    );

    let loss_grad = |b: &Matrix, w: &Vector| -> (f64, Matrix, Vector) {
        let pre = &x * b;
        let h = pre.map(|v| v.max(0.0));
        let res = &h * w - &y;
        let loss = 0.5 * res.norm_squared() / m;
        let gw = h.tr_mul(&res) / m;
        let mut gpre = &res * w.transpose();
        gpre.zip_apply(&pre, |g, p| {
            if p <= 0.0 {
                *g = 0.0
            }
        });
        let gb = x.tr_mul(&gpre) / m;
        (loss, gb, gw)
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut loss = f64::INFINITY;
    for t in 0..opt.max_iters {
        let (l, gb, gw) = loss_grad(&b, &w);
        loss = l;
        let eta = opt.step(t);
        let mut nb = &b - gb * eta;
        if let Some(p) = &perp {
            nb = p * nb;
        }
        normalize_columns(&mut nb, &fallback);
        let nw = project_l1_ball(&(&w - gw * eta), c_w);
        let moved = ((&nb - &b).norm_squared() + (&nw - &w).norm_squared()).sqrt() / eta;
        b = nb;
        w = nw;
        iterations = t + 1;
        if moved <= opt.grad_tol {
            converged = true;
            break;
        }
    }
    if iterations > 0 {
        loss = loss_grad(&b, &w).0;
    }
    Ok(ReluEstimate {
        b_hat: b,
        w_hat: w,
        method: mode,
        train_loss: loss,
        converged,
        iterations,
    })
}
