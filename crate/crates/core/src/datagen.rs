//! Synthetic data generators and the named example presets.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentationKind, AugmentationSpec};
use crate::error::{invalid, Error, Result};
use crate::matkit::{self, rows_serde, Matrix, Vector};
use crate::rng::Stream;

fn gaussian_matrix(n: usize, d: usize, rng: &mut Stream) -> Matrix {
    // Row-major fill so draws do not depend on storage order.
    let mut m = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

fn gaussian_vector(n: usize, rng: &mut Stream) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModelSpec {
    pub d: usize,
    pub theta_star: Vec<f64>,
    pub sigma: f64,
}

impl LinearModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.theta_star.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "theta_star has length {}, d = {}",
                self.theta_star.len(),
                self.d
            )));
        }
        if self.theta_star.iter().any(|v| !v.is_finite()) {
            return invalid("theta_star must be finite");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return invalid("sigma must be finite and non-negative");
        }
        Ok(())
    }

    pub fn theta(&self) -> Vector {
        Vector::from_column_slice(&self.theta_star)
    }
}

/// Rows of X iid N(0, I); `y = Xθ* + ε` with ε iid N(0, σ²).
pub fn gen_linear(spec: &LinearModelSpec, n: usize, rng: &mut Stream) -> Result<(Matrix, Vector)> {
    spec.validate()?;
    if n == 0 {
        return invalid("n must be at least 1");
    }
    let x = gaussian_matrix(n, spec.d, rng);
    let eps = gaussian_vector(n, rng);
    let y = &x * spec.theta() + eps * spec.sigma;
    Ok((x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModelSpec {
    pub d: usize,
    pub theta_star: Vec<f64>,
    /// Radius of the parameter ball.
    pub c0: f64,
    /// Max feature norm; 0 disables clipping.
    pub feature_clip: f64,
}

impl LogisticModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.theta_star.len() != self.d {
            return Err(Error::DimensionMismatch("theta_star length != d".into()));
        }
        let norm = self.theta().norm();
        if !norm.is_finite() || norm > self.c0 {
            return invalid(format!("‖θ*‖ = {norm} exceeds c0 = {}", self.c0));
        }
        if self.feature_clip < 0.0 {
            return invalid("feature_clip must be non-negative");
        }
        Ok(())
    }

    pub fn theta(&self) -> Vector {
        Vector::from_column_slice(&self.theta_star)
    }
}

/// Draw `n` Gaussian features, clipped to the ball of radius `clip` if enabled.
pub fn logistic_features(spec: &LogisticModelSpec, n: usize, rng: &mut Stream) -> Matrix {
    let mut x = gaussian_matrix(n, spec.d, rng);
    if spec.feature_clip > 0.0 {
        for i in 0..n {
            let nrm = x.row(i).norm();
            if nrm > spec.feature_clip {
                x.row_mut(i).scale_mut(spec.feature_clip / nrm);
            }
        }
    }
    x
}

/// `y_i ~ Bernoulli(σ(θ*ᵀx_i))`, labels in {0, 1}.
pub fn gen_logistic(spec: &LogisticModelSpec, n: usize, rng: &mut Stream) -> Result<(Matrix, Vector)> {
    spec.validate()?;
    if n == 0 {
        return invalid("n must be at least 1");
    }
    let x = logistic_features(spec, n, rng);
    let margins = &x * spec.theta();
    let y = margins.map(|m| if rng.random::<f64>() < sigmoid(m) { 1.0 } else { 0.0 });
    Ok((x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluNetSpec {
    pub d: usize,
    pub width: usize,
    /// d×q, unit-norm columns.
    #[serde(with = "rows_serde")]
    pub b_star: Matrix,
    pub w_star: Vec<f64>,
    pub sigma: f64,
    pub c_w: f64,
}

impl ReluNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.b_star.shape() != (self.d, self.width) || self.w_star.len() != self.width {
            return Err(Error::DimensionMismatch("b_star must be d×width and w_star length width".into()));
        }
        for k in 0..self.width {
            if (self.b_star.column(k).norm() - 1.0).abs() > 1e-10 {
                return invalid(format!("column {k} of b_star is not unit norm"));
            }
        }
        let l1: f64 = self.w_star.iter().map(|v| v.abs()).sum();
        if l1 > self.c_w + 1e-12 {
            return invalid(format!("‖w*‖₁ = {l1} exceeds c_w = {}", self.c_w));
        }
        if self.sigma < 0.0 {
            return invalid("sigma must be non-negative");
        }
        Ok(())
    }
}

/// Two-layer ReLU network output `(XB)₊ w`.
pub fn relu_forward(x: &Matrix, b: &Matrix, w: &Vector) -> Vector {
    (x * b).map(|v| v.max(0.0)) * w
}

/// `y = (XB*)₊ w* + z`, z iid N(0, σ²).
pub fn gen_relu(spec: &ReluNetSpec, n: usize, rng: &mut Stream) -> Result<(Matrix, Vector)> {
    spec.validate()?;
    if n == 0 {
        return invalid("n must be at least 1");
    }
    let x = gaussian_matrix(n, spec.d, rng);
    let z = gaussian_vector(n, rng);
    let w = Vector::from_column_slice(&spec.w_star);
    let y = relu_forward(&x, &spec.b_star, &w) + z * spec.sigma;
    Ok((x, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub d: usize,
    pub d_iv: usize,
    pub d_e: usize,
    #[serde(with = "rows_serde")]
    pub s_iv: Matrix,
    #[serde(with = "rows_serde")]
    pub s_e: Matrix,
    pub theta_star: Vec<f64>,
    pub sigma: f64,
    /// Covariance multiplier of the environmental block in the target domain.
    pub sigma_t: f64,
}

impl DomainSpec {
    /// Random orthonormal `[S_iv, S_e]` and `θ* = S_iv g` with `g ~ N(0, I)`.
    pub fn random(
        d: usize,
        d_iv: usize,
        d_e: usize,
        sigma: f64,
        sigma_t: f64,
        rng: &mut Stream,
    ) -> Result<DomainSpec> {
        if d_iv + d_e > d {
            return Err(Error::DimensionMismatch(format!("d_iv + d_e = {} > d = {d}", d_iv + d_e)));
        }
        let g = gaussian_matrix(d, d_iv + d_e, rng);
        let q = g.qr().q();
        let s_iv = q.columns(0, d_iv).into_owned();
        let s_e = q.columns(d_iv, d_e).into_owned();
        let coef = gaussian_vector(d_iv, rng);
        let theta = &s_iv * coef;
        let spec = DomainSpec {
            d,
            d_iv,
            d_e,
            s_iv,
            s_e,
            theta_star: theta.iter().copied().collect(),
            sigma,
            sigma_t,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_iv.shape() != (self.d, self.d_iv) || self.s_e.shape() != (self.d, self.d_e) {
            return Err(Error::DimensionMismatch("S_iv / S_e shapes".into()));
        }
        if self.theta_star.len() != self.d {
            return Err(Error::DimensionMismatch("theta_star length != d".into()));
        }
        let mut s = Matrix::zeros(self.d, self.d_iv + self.d_e);
        s.columns_mut(0, self.d_iv).copy_from(&self.s_iv);
        s.columns_mut(self.d_iv, self.d_e).copy_from(&self.s_e);
        let k = self.d_iv + self.d_e;
        if (s.transpose() * &s - Matrix::identity(k, k)).amax() > 1e-10 {
            return invalid("[S_iv, S_e] must have orthonormal columns");
        }
        let th = self.theta();
        if (self.p_iv() * &th - &th).amax() > 1e-10 * th.amax().max(1.0) {
            return invalid("theta_star must lie in Range(S_iv)");
        }
        if !(self.sigma >= 0.0 && self.sigma_t >= 0.0) {
            return invalid("sigma and sigma_t must be non-negative");
        }
        Ok(())
    }

    pub fn theta(&self) -> Vector {
        Vector::from_column_slice(&self.theta_star)
    }

    pub fn p_iv(&self) -> Matrix {
        &self.s_iv * self.s_iv.transpose()
    }

    pub fn p_e(&self) -> Matrix {
        &self.s_e * self.s_e.transpose()
    }
}

/// `x = S_iv ζ_iv + S_e sign(z) e`, `y = θ*ᵀx + z`.
pub fn gen_domain(spec: &DomainSpec, which: Domain, n: usize, rng: &mut Stream) -> Result<(Matrix, Vector)> {
    spec.validate()?;
    if n == 0 {
        return invalid("n must be at least 1");
    }
    let e_scale = match which {
        Domain::Source => 1.0,
        Domain::Target => spec.sigma_t.sqrt(),
    };
    let zeta_iv = gaussian_matrix(n, spec.d_iv, rng);
    let e = gaussian_matrix(n, spec.d_e, rng) * e_scale;
    let z = gaussian_vector(n, rng) * spec.sigma;
    let mut zeta_e = e;
    for i in 0..n {
        if z[i] < 0.0 {
            zeta_e.row_mut(i).neg_mut();
        }
    }
    let x = zeta_iv * spec.s_iv.transpose() + zeta_e * spec.s_e.transpose();
    let y = &x * spec.theta() + z;
    Ok((x, y))
}

/// Reading of the "N(0, 0.1)" jitter in the misspecification example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JitterReading {
    /// 0.1 is the variance, noise std = √0.1.
    #[default]
    Variance,
    /// 0.1 is the standard deviation.
    Std,
}

impl JitterReading {
    pub fn noise_std(self) -> f64 {
        match self {
            JitterReading::Variance => 0.1f64.sqrt(),
            JitterReading::Std => 0.1,
        }
    }
}

/// Block-scale regression example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearExample {
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    /// Support size of θ*.
    pub d_c: usize,
    /// (d_c1, d_e1) cells of the BlockScale grid.
    pub grid: Vec<(usize, usize)>,
    pub alpha: usize,
    pub scale_e1: f64,
    pub scale_e2: f64,
}

impl LinearExample {
    pub fn model(&self, rng: &mut Stream) -> LinearModelSpec {
        let mut theta = vec![0.0; self.d];
        for t in theta.iter_mut().take(self.d_c) {
            *t = rng.sample(StandardNormal);
        }
        LinearModelSpec {
            d: self.d,
            theta_star: theta,
            sigma: self.sigma,
        }
    }

    pub fn augmentation(&self, d_c1: usize, d_e1: usize) -> AugmentationSpec {
        AugmentationSpec::new(
            AugmentationKind::BlockScale {
                d_c1,
                d_e1,
                scale_e1: self.scale_e1,
                scale_e2: self.scale_e2,
            },
            self.alpha,
        )
    }
}

/// Coordinate-resampling logistic regression example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticExample {
    pub d: usize,
    pub n: usize,
    pub d_c: usize,
    pub d_aug: Vec<usize>,
    pub alpha: Vec<usize>,
    pub c0: f64,
    pub test_size: usize,
}

impl LogisticExample {
    pub fn model(&self, rng: &mut Stream) -> LogisticModelSpec {
        let mut theta = vec![0.0; self.d];
        for t in theta.iter_mut().take(self.d_c) {
            *t = rng.sample(StandardNormal);
        }
        LogisticModelSpec {
            d: self.d,
            theta_star: theta,
            c0: self.c0,
            feature_clip: 0.0,
        }
    }

    pub fn augmentation(&self, d_aug: usize, alpha: usize) -> AugmentationSpec {
        AugmentationSpec::new(AugmentationKind::CoordinateResample { d_pert: d_aug }, alpha)
    }
}

/// Misspecified Gaussian-jitter regression example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecExample {
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    pub d_c: usize,
    pub d_aug: Vec<usize>,
    pub alpha: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub jitter: JitterReading,
}

impl MisspecExample {
    /// θ* = [θ_c; 0] with θ_c uniform on {−1, +1}^{d_c}.
    pub fn model(&self, rng: &mut Stream) -> LinearModelSpec {
        let mut theta = vec![0.0; self.d];
        for t in theta.iter_mut().take(self.d_c) {
            *t = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        LinearModelSpec {
            d: self.d,
            theta_star: theta,
            sigma: self.sigma,
        }
    }

    pub fn augmentation(&self, d_aug: usize, alpha: usize) -> AugmentationSpec {
        AugmentationSpec::new(
            AugmentationKind::GaussianJitter {
                d_pert: d_aug,
                noise_std: self.jitter.noise_std(),
            },
            alpha,
        )
    }
}

/// Domain adaptation with invariant and environmental feature subspaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainExample {
    pub d: usize,
    pub d_iv: usize,
    pub d_e: usize,
    pub n: usize,
    pub sigma: f64,
    pub sigma_t: Vec<f64>,
    pub alpha: usize,
}

impl DomainExample {
    /// Domain model (with `sigma_t` set to the first grid value) and the maps
    /// `A_j = P_iv + u_j v_jᵀ` with `u_j, v_j ∈ Col(S_e)`.
    pub fn instantiate(&self, rng: &mut Stream) -> Result<(DomainSpec, AugmentationSpec)> {
        let spec = DomainSpec::random(
            self.d,
            self.d_iv,
            self.d_e,
            self.sigma,
            self.sigma_t.first().copied().unwrap_or(1.0),
            rng,
        )?;
        let p_iv = spec.p_iv();
        let maps = (0..self.alpha)
            .map(|_| {
                let u = &spec.s_e * gaussian_vector(self.d_e, rng);
                let v = &spec.s_e * gaussian_vector(self.d_e, rng);
                &p_iv + u * v.transpose()
            })
            .collect();
        Ok((spec, AugmentationSpec::new(AugmentationKind::LinearMaps { maps }, self.alpha)))
    }
}

/// Conditioning scalars of the maps: `ν₁ = max(1, max_j σ_max(A_j))` and
/// `ν₂ = σ_min((I + Σ_j A_j)/(1+α))` restricted to `Col(S_e)`.
pub fn map_conditioning(spec: &DomainSpec, aug: &AugmentationSpec) -> Result<(f64, f64)> {
    let AugmentationKind::LinearMaps { maps } = &aug.kind else {
        return invalid("map conditioning needs linear maps");
    };
    let mut nu1: f64 = 1.0;
    let mut mean = Matrix::identity(spec.d, spec.d);
    for a in maps {
        nu1 = nu1.max(matkit::singular_values(a)?.first().copied().unwrap_or(0.0));
        mean += a;
    }
    mean /= (1 + maps.len()) as f64;
    let restricted = spec.s_e.transpose() * mean * &spec.s_e;
    let nu2 = matkit::singular_values(&restricted)?.last().copied().unwrap_or(0.0);
    Ok((nu1, nu2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Preset {
    #[serde(rename = "example_4_1")]
    Linear(LinearExample),
    #[serde(rename = "example_4_2")]
    Logistic(LogisticExample),
    #[serde(rename = "example_6")]
    Misspec(MisspecExample),
    #[serde(rename = "example_C1")]
    Domain(DomainExample),
}

pub const PRESET_NAMES: [&str; 4] = ["example_4_1", "example_4_2", "example_6", "example_C1"];

/// The example configurations by name.
pub fn preset(name: &str) -> Result<Preset> {
    Ok(match name {
        "example_4_1" => Preset::Linear(LinearExample {
            d: 30,
            n: 50,
            sigma: 1.0,
            d_c: 5,
            // d_aug = 30 − d_c1; d′ varies with d_e1 at fixed d_aug.
            grid: vec![(5, 0), (5, 5), (5, 10), (5, 15), (5, 20), (5, 25), (10, 0), (10, 5), (10, 10), (10, 15), (10, 20)],
            alpha: 1,
            scale_e1: 2.0,
            scale_e2: -1.0,
        }),
        "example_4_2" => Preset::Logistic(LogisticExample {
            d: 30,
            n: 50,
            d_c: 3,
            d_aug: vec![20, 25],
            alpha: vec![1, 3, 7, 15],
            c0: 10.0,
            test_size: 10_000,
        }),
        "example_6" => Preset::Misspec(MisspecExample {
            d: 30,
            n: 50,
            sigma: 0.1,
            d_c: 10,
            d_aug: (20..=28).collect(),
            alpha: vec![1],
            lambda_grid: vec![
                1e-3, 3.2e-3, 1e-2, 3.2e-2, 0.1, 0.32, 1.0, 3.2, 10.0, 32.0, 100.0, 320.0, 1000.0,
            ],
            jitter: JitterReading::Variance,
        }),
        "example_C1" => Preset::Domain(DomainExample {
            d: 12,
            d_iv: 5,
            d_e: 5,
            n: 50,
            sigma: 1.0,
            sigma_t: vec![1.0, 5.0, 10.0],
            alpha: 1,
        }),
        other => return Err(Error::UnknownPreset(other.to_string())),
    })
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Linear(_) => "example_4_1",
            Preset::Logistic(_) => "example_4_2",
            Preset::Misspec(_) => "example_6",
            Preset::Domain(_) => "example_C1",
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Preset::Linear(p) => p.n,
            Preset::Logistic(p) => p.n,
            Preset::Misspec(p) => p.n,
            Preset::Domain(p) => p.n,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Preset::Linear(p) => p.d,
            Preset::Logistic(p) => p.d,
            Preset::Misspec(p) => p.d,
            Preset::Domain(p) => p.d,
        }
    }

    /// Label noise std (logistic labels have no additive noise).
    pub fn sigma(&self) -> f64 {
        match self {
            Preset::Linear(p) => p.sigma,
            Preset::Logistic(_) => 0.0,
            Preset::Misspec(p) => p.sigma,
            Preset::Domain(p) => p.sigma,
        }
    }

    pub fn lambda_grid(&self) -> &[f64] {
        match self {
            Preset::Misspec(p) => &p.lambda_grid,
            _ => &[],
        }
    }
}
