//! Seeded Monte Carlo runners for the example experiments, the expansion
//! fuzzer, and CSV / JSON emission of per-trial records.
//!
//! Every draw comes from a substream keyed by `(seed, purpose, cell, trial)`,
//! and trials are collected in index order, so output does not depend on the
//! number of worker threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{build_augmented, hash_matrix, AugmentationSpec, AugmentedDataset};
use crate::datagen::{
    gen_domain, gen_linear, gen_logistic, preset, sigmoid, Domain, DomainExample, LinearExample, LogisticExample,
    MisspecExample, Preset,
};
use crate::error::{invalid, Error, Result};
use crate::estimators::{
    classification_error, da_erm_operator, dac_hard_operator, dac_soft_operator, excess_risk_fixed_design,
    logistic_fit, ols_operator, Design, LinearOperatorFit, LogisticMode, OptimizerConfig,
};
use crate::expansion::{
    max_multiplicative_c, random_chain_space, verify_lemma_c3, BranchOutcome, ClassifierTable, ExpansionMeasure,
    FiniteSpace, LemmaC3Report,
};
use crate::matkit::{Matrix, Vector};
use crate::rng::{purpose, substream, Stream};
use crate::theory::{domain_target_quantities, eer_e, optimal_lambda, TheoryReport};

/// Sample mean and its standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// A preset by name or spelled out inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PresetRef {
    Name(String),
    Inline(Preset),
}

impl PresetRef {
    pub fn resolve(&self) -> Result<Preset> {
        match self {
            PresetRef::Name(n) => preset(n),
            PresetRef::Inline(p) => Ok(p.clone()),
        }
    }
}

fn default_trials() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: PresetRef,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Method descriptors: `ols`, `da_erm`, `dac_hard`, `dac_soft` (whole λ
    /// grid), `dac_soft:<λ>`, `dac_soft_opt`. Empty selects the preset default.
    #[serde(default)]
    pub methods: Vec<String>,
    /// Overrides of the preset's grids, e.g. `{"d_aug": [24], "lambda": [0.1, 1]}`.
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<f64>>,
    /// Defaults to true for the regression presets and false otherwise.
    #[serde(default)]
    pub fixed_design: Option<bool>,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// Logistic solver settings.
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
}

impl ExperimentConfig {
    pub fn new(preset_name: &str, trials: usize, seed: u64) -> Self {
        ExperimentConfig {
            preset: PresetRef::Name(preset_name.to_string()),
            trials,
            seed,
            methods: vec![],
            sweep: BTreeMap::new(),
            fixed_design: None,
            output_path: None,
            optimizer: None,
        }
    }

    pub fn with_sweep(mut self, key: &str, values: &[f64]) -> Self {
        self.sweep.insert(key.to_string(), values.to_vec());
        self
    }

    pub fn with_methods(mut self, methods: &[&str]) -> Self {
        self.methods = methods.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Check trials, sweep keys and method descriptors against the preset.
    pub fn validate(&self) -> Result<Preset> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let p = self.preset.resolve()?;
        let allowed: &[&str] = match p {
            Preset::Linear(_) => &["d_aug", "d_e1", "alpha"],
            Preset::Logistic(_) => &["d_aug", "alpha"],
            Preset::Misspec(_) => &["d_aug", "alpha", "lambda"],
            Preset::Domain(_) => &["sigma_t"],
        };
        for (k, v) in &self.sweep {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!(
                    "sweep parameter '{k}' is not recognized for {} (allowed: {})",
                    p.name(),
                    allowed.join(", ")
                )));
            }
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("sweep parameter '{k}' needs finite values")));
            }
        }
        let methods = self.method_list(&p)?;
        if matches!(p, Preset::Logistic(_) | Preset::Domain(_))
            && methods.iter().any(|m| !matches!(m, MethodDesc::DaErm | MethodDesc::DacHard))
        {
            return Err(Error::Config(format!("{} supports only da_erm and dac_hard", p.name())));
        }
        if matches!(p, Preset::Logistic(_) | Preset::Domain(_)) && self.fixed_design == Some(true) {
            return Err(Error::Config(format!("{} runs in random-design mode only", p.name())));
        }
        Ok(p)
    }

    fn method_list(&self, p: &Preset) -> Result<Vec<MethodDesc>> {
        if self.methods.is_empty() {
            return Ok(match p {
                Preset::Misspec(_) => vec![
                    MethodDesc::DacSoft(None),
                    MethodDesc::DacSoftOpt,
                    MethodDesc::DaErm,
                    MethodDesc::DacHard,
                ],
                _ => vec![MethodDesc::DacHard, MethodDesc::DaErm],
            });
        }
        self.methods.iter().map(|s| s.parse()).collect()
    }

    fn fixed(&self, p: &Preset) -> bool {
        self.fixed_design
            .unwrap_or(matches!(p, Preset::Linear(_) | Preset::Misspec(_)))
    }

    fn grid_usize(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.sweep.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .iter()
                .map(|&x| {
                    if x >= 0.0 && x.fract() == 0.0 {
                        Ok(x as usize)
                    } else {
                        Err(Error::Config(format!("sweep parameter '{key}' needs integers, got {x}")))
                    }
                })
                .collect(),
        }
    }
}

/// Parsed method descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodDesc {
    Ols,
    DaErm,
    DacHard,
    /// Fixed λ, or every λ of the grid when `None`.
    DacSoft(Option<f64>),
    /// Soft DAC at the theory-optimal λ.
    DacSoftOpt,
}

impl FromStr for MethodDesc {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ols" => MethodDesc::Ols,
            "da_erm" => MethodDesc::DaErm,
            "dac_hard" => MethodDesc::DacHard,
            "dac_soft" => MethodDesc::DacSoft(None),
            "dac_soft_opt" => MethodDesc::DacSoftOpt,
            other => match other.strip_prefix("dac_soft:") {
                Some(l) => {
                    let lambda: f64 = l
                        .parse()
                        .map_err(|_| Error::Config(format!("bad lambda in method '{other}'")))?;
                    if !(lambda >= 0.0 && lambda.is_finite()) {
                        return Err(Error::Config(format!("bad lambda in method '{other}'")));
                    }
                    MethodDesc::DacSoft(Some(lambda))
                }
                None => return Err(Error::Config(format!("unknown method '{other}'"))),
            },
        })
    }
}

/// One estimator on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: String,
    pub params: BTreeMap<String, f64>,
    pub excess_risk: f64,
    pub aux: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub params: BTreeMap<String, f64>,
    /// Hash of the stacked design, fixed-design cells only.
    pub design_hash: Option<u64>,
    pub theory: Option<TheoryReport>,
    /// Keyed by method label, with `@λ` appended for grid points.
    pub methods: BTreeMap<String, MethodSummary>,
}

impl CellSummary {
    pub fn method(&self, key: &str) -> Option<&MethodSummary> {
        self.methods.get(key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub preset: String,
    pub records: Vec<TrialRecord>,
    pub cells: Vec<CellSummary>,
}

impl SweepResult {
    /// First cell whose parameters contain all of `params`.
    pub fn cell(&self, params: &[(&str, f64)]) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| params.iter().all(|(k, v)| c.params.get(*k) == Some(v)))
    }

    /// Excess risks of one method in one cell, in trial order.
    pub fn values(&self, cell: &CellSummary, key: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| record_key(r) == key && cell.params.iter().all(|(k, v)| r.params.get(k) == Some(v)))
            .map(|r| r.excess_risk)
            .collect()
    }
}

fn record_key(r: &TrialRecord) -> String {
    match r.params.get("lambda") {
        Some(l) => format!("{}@{l}", r.method),
        None => r.method.clone(),
    }
}

fn clamp_risk(v: f64) -> f64 {
    if (-1e-12..0.0).contains(&v) {
        0.0
    } else {
        v
    }
}

fn summarize(cell: usize, params: BTreeMap<String, f64>, records: &[TrialRecord]) -> CellSummary {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(record_key(r)).or_default().push(r.excess_risk);
    }
    let methods = groups
        .into_iter()
        .map(|(k, v)| {
            let (mean, std_error) = mean_se(&v);
            (
                k,
                MethodSummary {
                    mean,
                    std_error,
                    trials: v.len(),
                },
            )
        })
        .collect();
    CellSummary {
        cell,
        params,
        design_hash: None,
        theory: None,
        methods,
    }
}

/// Dispatch on the preset.
pub fn run(cfg: &ExperimentConfig) -> Result<SweepResult> {
    match cfg.validate()? {
        Preset::Linear(_) => run_linear_sweep(cfg),
        Preset::Logistic(_) => run_logistic_sweep(cfg),
        Preset::Misspec(_) => run_misspec_sweep(cfg),
        Preset::Domain(_) => run_domain_adaptation(cfg),
    }
}

struct Operator {
    label: String,
    lambda_param: Option<f64>,
    aux: BTreeMap<String, f64>,
    fit: LinearOperatorFit,
    track_constraint: bool,
}

fn build_operators(
    aug: &AugmentedDataset,
    methods: &[MethodDesc],
    lambdas: &[f64],
    theta_star: &Vector,
    sigma: f64,
) -> Result<Vec<Operator>> {
    let mut ops = Vec::new();
    let plain = |label: &str, fit: LinearOperatorFit, track: bool| Operator {
        label: label.into(),
        lambda_param: None,
        aux: BTreeMap::new(),
        fit,
        track_constraint: track,
    };
    for m in methods {
        match *m {
            MethodDesc::Ols => ops.push(plain("ols", ols_operator(aug.x())?, false)),
            MethodDesc::DaErm => ops.push(plain("da_erm", da_erm_operator(aug)?, false)),
            MethodDesc::DacHard => ops.push(plain("dac_hard", dac_hard_operator(aug)?, true)),
            MethodDesc::DacSoft(Some(l)) => ops.push(Operator {
                lambda_param: Some(l),
                ..plain("dac_soft", dac_soft_operator(aug, l)?, true)
            }),
            MethodDesc::DacSoft(None) => {
                if lambdas.is_empty() {
                    return Err(Error::Config("dac_soft needs a lambda grid".into()));
                }
                for &l in lambdas {
                    ops.push(Operator {
                        lambda_param: Some(l),
                        ..plain("dac_soft", dac_soft_operator(aug, l)?, true)
                    });
                }
            }
            MethodDesc::DacSoftOpt => {
                let l = optimal_lambda(aug, theta_star, sigma)?;
                let mut op = if l.is_finite() {
                    plain("dac_soft_opt", dac_soft_operator(aug, l)?, true)
                } else {
                    plain("dac_soft_opt", dac_hard_operator(aug)?, true)
                };
                if l.is_finite() {
                    op.aux.insert("lambda_star".into(), l);
                } else {
                    op.aux.insert("lambda_star_infinite".into(), 1.0);
                }
                ops.push(op);
            }
        }
    }
    Ok(ops)
}

fn apply_operators(
    ops: &[Operator],
    aug: &AugmentedDataset,
    y: &Vector,
    theta_star: &Vector,
    design: Design,
    trial: usize,
    params: &BTreeMap<String, f64>,
) -> Result<Vec<TrialRecord>> {
    ops.iter()
        .map(|op| {
            let theta = op.fit.theta(y);
            let mut p = params.clone();
            if let Some(l) = op.lambda_param {
                p.insert("lambda".into(), l);
            }
            let mut aux = op.aux.clone();
            if op.track_constraint {
                aux.insert("constraint_residual".into(), (aug.delta() * &theta).amax());
            }
            Ok(TrialRecord {
                trial,
                method: op.label.clone(),
                params: p,
                excess_risk: clamp_risk(excess_risk_fixed_design(&theta, theta_star, aug, design)?),
                aux,
            })
        })
        .collect()
}

/// Regression cell: either one design for all trials (noise resampled) or a
/// fresh design per trial.
#[allow(clippy::too_many_arguments)]
fn regression_cell(
    cfg: &ExperimentConfig,
    fixed: bool,
    cell: usize,
    params: BTreeMap<String, f64>,
    make_design: &(dyn Fn(&mut Stream, &mut Stream) -> Result<AugmentedDataset> + Sync),
    theta_star: &Vector,
    sigma: f64,
    methods: &[MethodDesc],
    lambdas: &[f64],
    design: Design,
) -> Result<(Vec<TrialRecord>, CellSummary)> {
    let seed = cfg.seed;
    let c = cell as u64;
    let noisy_labels = |aug: &AugmentedDataset, t: usize| {
        let mut r = substream(seed, &[purpose::NOISE, c, t as u64]);
        let eps = Vector::from_fn(aug.n(), |_, _| r.sample::<f64, _>(StandardNormal));
        aug.x() * theta_star + eps * sigma
    };
    if fixed {
        let aug = make_design(
            &mut substream(seed, &[purpose::DATA, c]),
            &mut substream(seed, &[purpose::AUGMENT, c]),
        )?;
        let ops = build_operators(&aug, methods, lambdas, theta_star, sigma)?;
        let hash = hash_matrix(aug.x_aug_stacked());
        let per_trial: Vec<Vec<TrialRecord>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| apply_operators(&ops, &aug, &noisy_labels(&aug, t), theta_star, design, t, &params))
            .collect::<Result<_>>()?;
        let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
        if hash_matrix(aug.x_aug_stacked()) != hash {
            return invalid("design changed during a fixed-design cell");
        }
        let mut summary = summarize(cell, params, &records);
        summary.design_hash = Some(hash);
        summary.theory = TheoryReport::compute(&aug, theta_star, sigma, None).ok();
        Ok((records, summary))
    } else {
        let per_trial: Vec<Vec<TrialRecord>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let aug = make_design(
                    &mut substream(seed, &[purpose::DATA, c, t as u64]),
                    &mut substream(seed, &[purpose::AUGMENT, c, t as u64]),
                )?;
                let ops = build_operators(&aug, methods, lambdas, theta_star, sigma)?;
                apply_operators(&ops, &aug, &noisy_labels(&aug, t), theta_star, design, t, &params)
            })
            .collect::<Result<_>>()?;
        let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
        let summary = summarize(cell, params, &records);
        Ok((records, summary))
    }
}

fn linear_preset(cfg: &ExperimentConfig) -> Result<LinearExample> {
    match cfg.validate()? {
        Preset::Linear(p) => Ok(p),
        other => Err(Error::Config(format!("expected example_4_1, got {}", other.name()))),
    }
}

/// Closed-form report for one fixed-design cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTheory {
    pub cell: usize,
    pub params: BTreeMap<String, f64>,
    pub design_hash: u64,
    pub report: TheoryReport,
}

/// Theory for every cell of a regression config, on the same fixed designs
/// that `run` would draw with this seed.
pub fn theory_reports(cfg: &ExperimentConfig) -> Result<Vec<CellTheory>> {
    let p = cfg.validate()?;
    if !matches!(p, Preset::Linear(_) | Preset::Misspec(_)) {
        return Err(Error::Config(format!("theory needs a regression preset, got {}", p.name())));
    }
    let mut c = cfg.clone();
    c.trials = 1;
    c.fixed_design = Some(true);
    c.methods = vec!["dac_hard".into()];
    c.sweep.remove("lambda");
    let res = run(&c)?;
    res.cells
        .into_iter()
        .map(|cell| match (cell.theory, cell.design_hash) {
            (Some(report), Some(design_hash)) => Ok(CellTheory {
                cell: cell.cell,
                params: cell.params,
                design_hash,
                report,
            }),
            _ => Err(Error::Numerical(format!("theory report unavailable for cell {}", cell.cell))),
        })
        .collect()
}

/// Block-scale regression: DAC and DA-ERM risk on the augmented design, per
/// `(d_c1, d_e1)` cell, with the closed-form predictions attached.
pub fn run_linear_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let ex = linear_preset(cfg)?;
    let p = Preset::Linear(ex.clone());
    let methods = cfg.method_list(&p)?;
    let fixed = cfg.fixed(&p);
    let model = ex.model(&mut substream(cfg.seed, &[purpose::MODEL]));
    let theta = model.theta();
    let alphas = cfg.grid_usize("alpha", &[ex.alpha])?;
    let keep_daug = cfg.grid_usize("d_aug", &[])?;
    let keep_de1 = cfg.grid_usize("d_e1", &[])?;
    let mut cells = Vec::new();
    for &(d_c1, d_e1) in &ex.grid {
        let d_aug = ex.d - d_c1;
        if (!keep_daug.is_empty() && !keep_daug.contains(&d_aug)) || (!keep_de1.is_empty() && !keep_de1.contains(&d_e1)) {
            continue;
        }
        for &alpha in &alphas {
            cells.push((d_c1, d_e1, alpha));
        }
    }
    if cells.is_empty() {
        return Err(Error::Config("sweep filters leave no cells".into()));
    }
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for (ci, &(d_c1, d_e1, alpha)) in cells.iter().enumerate() {
        let mut spec = ex.augmentation(d_c1, d_e1);
        spec.alpha = alpha;
        let params: BTreeMap<String, f64> = [
            ("d_c1", d_c1 as f64),
            ("d_e1", d_e1 as f64),
            ("d_aug", (ex.d - d_c1) as f64),
            ("alpha", alpha as f64),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let make = |rd: &mut Stream, ra: &mut Stream| -> Result<AugmentedDataset> {
            let (x, _) = gen_linear(&model, ex.n, rd)?;
            build_augmented(&x, &Vector::zeros(ex.n), &spec, ra)
        };
        let (mut recs, mut summary) = regression_cell(
            cfg,
            fixed,
            ci,
            params,
            &make,
            &theta,
            ex.sigma,
            &methods,
            &[],
            Design::Augmented,
        )?;
        if let Some(th) = &summary.theory {
            for r in recs.iter_mut() {
                r.aux.insert("d_prime".into(), th.d_prime);
            }
        }
        summary.cell = ci;
        records.append(&mut recs);
        summaries.push(summary);
    }
    Ok(SweepResult {
        preset: p.name().into(),
        records,
        cells: summaries,
    })
}

fn misspec_preset(cfg: &ExperimentConfig) -> Result<MisspecExample> {
    match cfg.validate()? {
        Preset::Misspec(p) => Ok(p),
        other => Err(Error::Config(format!("expected example_6, got {}", other.name()))),
    }
}

/// Gaussian-jitter regression: soft DAC over the λ grid, soft DAC at the
/// theory-optimal λ, DA-ERM and hard DAC, risk on the original design.
pub fn run_misspec_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let ex = misspec_preset(cfg)?;
    let p = Preset::Misspec(ex.clone());
    let methods = cfg.method_list(&p)?;
    let fixed = cfg.fixed(&p);
    let model = ex.model(&mut substream(cfg.seed, &[purpose::MODEL]));
    let theta = model.theta();
    let lambdas = cfg.sweep.get("lambda").cloned().unwrap_or_else(|| ex.lambda_grid.clone());
    if lambdas.iter().any(|&l| l < 0.0) {
        return Err(Error::Config("lambda values must be non-negative".into()));
    }
    let daugs = cfg.grid_usize("d_aug", &ex.d_aug)?;
    let alphas = cfg.grid_usize("alpha", &ex.alpha)?;
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    let mut ci = 0;
    for &d_aug in &daugs {
        for &alpha in &alphas {
            let spec = ex.augmentation(d_aug, alpha);
            spec.validate(ex.d)?;
            let params: BTreeMap<String, f64> = [("d_aug", d_aug as f64), ("alpha", alpha as f64)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
            let make = |rd: &mut Stream, ra: &mut Stream| -> Result<AugmentedDataset> {
                let (x, _) = gen_linear(&model, ex.n, rd)?;
                build_augmented(&x, &Vector::zeros(ex.n), &spec, ra)
            };
            let (mut recs, summary) = regression_cell(
                cfg,
                fixed,
                ci,
                params,
                &make,
                &theta,
                ex.sigma,
                &methods,
                &lambdas,
                Design::Original,
            )?;
            records.append(&mut recs);
            summaries.push(summary);
            ci += 1;
        }
    }
    Ok(SweepResult {
        preset: p.name().into(),
        records,
        cells: summaries,
    })
}

fn logistic_preset(cfg: &ExperimentConfig) -> Result<LogisticExample> {
    match cfg.validate()? {
        Preset::Logistic(p) => Ok(p),
        other => Err(Error::Config(format!("expected example_4_2, got {}", other.name()))),
    }
}

/// Solver settings used when the config gives none.
pub fn default_logistic_optimizer() -> OptimizerConfig {
    OptimizerConfig {
        max_iters: 1500,
        step_size: 2.0,
        grad_tol: 1e-6,
        seed: 0,
        decay: 0.0,
    }
}

/// Excess 0-1 risk over the Bayes classifier, averaged over test inputs:
/// `|2σ(θ*ᵀx) − 1|` wherever `θ̂` and `θ*` disagree in sign.
fn logistic_excess(x: &Matrix, theta_star: &Vector, theta: &Vector) -> f64 {
    let ms = x * theta_star;
    let mh = x * theta;
    ms.iter()
        .zip(mh.iter())
        .filter(|(&a, &b)| (a > 0.0) != (b > 0.0))
        .map(|(&a, _)| (2.0 * sigmoid(a) - 1.0).abs())
        .sum::<f64>()
        / x.nrows() as f64
}

/// Coordinate-resampling logistic regression in random design. The excess
/// risk is the conditional 0-1 excess on a held-out set drawn once per cell;
/// `aux.test_error` is the plain error against sampled held-out labels.
pub fn run_logistic_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let ex = logistic_preset(cfg)?;
    let p = Preset::Logistic(ex.clone());
    let methods = cfg.method_list(&p)?;
    let opt = cfg.optimizer.unwrap_or_else(default_logistic_optimizer);
    opt.validate()?;
    let model = ex.model(&mut substream(cfg.seed, &[purpose::MODEL]));
    let theta_star = model.theta();
    let daugs = cfg.grid_usize("d_aug", &ex.d_aug)?;
    let alphas = cfg.grid_usize("alpha", &ex.alpha)?;
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    let mut ci = 0u64;
    // Test set and per-trial training samples are shared by every cell (they
    // do not depend on the augmentation), so cells differ only through it.
    let (xt, yt) = gen_logistic(&model, ex.test_size, &mut substream(cfg.seed, &[purpose::TEST]))?;
    for &d_aug in &daugs {
        for &alpha in &alphas {
            let spec: AugmentationSpec = ex.augmentation(d_aug, alpha);
            spec.validate(ex.d)?;
            let params: BTreeMap<String, f64> = [("d_aug", d_aug as f64), ("alpha", alpha as f64)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
            let per_trial: Vec<Vec<TrialRecord>> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let (x, y) = gen_logistic(&model, ex.n, &mut substream(cfg.seed, &[purpose::DATA, t as u64]))?;
                    let aug = build_augmented(
                        &x,
                        &y,
                        &spec,
                        &mut substream(cfg.seed, &[purpose::AUGMENT, ci, t as u64]),
                    )?;
                    methods
                        .iter()
                        .map(|m| {
                            let (mode, label) = match m {
                                MethodDesc::DacHard => (LogisticMode::DacHard, "dac_hard"),
                                _ => (LogisticMode::DaErm, "da_erm"),
                            };
                            let fit = logistic_fit(&aug, mode, ex.c0, &opt)?;
                            let th = &fit.estimate.theta_hat;
                            let mut aux = BTreeMap::new();
                            aux.insert("test_error".into(), classification_error(&xt, &yt, th));
                            aux.insert("converged".into(), if fit.converged { 1.0 } else { 0.0 });
                            aux.insert("iterations".into(), fit.iterations as f64);
                            aux.insert("train_loss".into(), fit.estimate.diagnostics["train_loss"]);
                            aux.insert("constraint_residual".into(), fit.estimate.diagnostics["constraint_residual"]);
                            Ok(TrialRecord {
                                trial: t,
                                method: label.into(),
                                params: params.clone(),
                                excess_risk: clamp_risk(logistic_excess(&xt, &theta_star, th)),
                                aux,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let mut recs: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
            summaries.push(summarize(ci as usize, params, &recs));
            records.append(&mut recs);
            ci += 1;
        }
    }
    Ok(SweepResult {
        preset: p.name().into(),
        records,
        cells: summaries,
    })
}

fn domain_preset(cfg: &ExperimentConfig) -> Result<DomainExample> {
    match cfg.validate()? {
        Preset::Domain(p) => Ok(p),
        other => Err(Error::Config(format!("expected example_C1, got {}", other.name()))),
    }
}

/// Source-trained DAC and DA-ERM evaluated on the target domain, one cell per
/// target environmental scale `σ_t`. The domain model and maps are drawn once.
pub fn run_domain_adaptation(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let ex = domain_preset(cfg)?;
    let p = Preset::Domain(ex.clone());
    let methods = cfg.method_list(&p)?;
    let (base, spec) = ex.instantiate(&mut substream(cfg.seed, &[purpose::MODEL]))?;
    let sigmas = cfg.sweep.get("sigma_t").cloned().unwrap_or_else(|| ex.sigma_t.clone());
    if sigmas.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Config("sigma_t values must be positive".into()));
    }
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for (ci, &st) in sigmas.iter().enumerate() {
        let mut dspec = base.clone();
        dspec.sigma_t = st;
        let params: BTreeMap<String, f64> = [("sigma_t".to_string(), st)].into_iter().collect();
        let c = ci as u64;
        let per_trial: Vec<Vec<TrialRecord>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let (x, y) = gen_domain(
                    &dspec,
                    Domain::Source,
                    ex.n,
                    &mut substream(cfg.seed, &[purpose::DATA, c, t as u64]),
                )?;
                let aug = build_augmented(&x, &y, &spec, &mut substream(cfg.seed, &[purpose::AUGMENT, c, t as u64]))?;
                let eer = eer_e(&aug, &dspec, 100, cfg.seed ^ (c << 32 | t as u64))?;
                methods
                    .iter()
                    .map(|m| {
                        let (fit, label) = match m {
                            MethodDesc::DacHard => (dac_hard_operator(&aug)?, "dac_hard"),
                            _ => (da_erm_operator(&aug)?, "da_erm"),
                        };
                        let th = fit.theta(&y);
                        let (_, target) = domain_target_quantities(&dspec, &th)?;
                        let mut aux = BTreeMap::new();
                        aux.insert("constraint_residual".into(), (aug.delta() * &th).amax());
                        if label == "da_erm" {
                            aux.insert("eer_e".into(), eer.value);
                            aux.insert("eer_e_closed_form".into(), eer.closed_form);
                        }
                        Ok(TrialRecord {
                            trial: t,
                            method: label.into(),
                            params: params.clone(),
                            excess_risk: clamp_risk(target),
                            aux,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut recs: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
        summaries.push(summarize(ci, params, &recs));
        records.append(&mut recs);
    }
    Ok(SweepResult {
        preset: p.name().into(),
        records,
        cells: summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuzzConfig {
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "FuzzConfig::default_min")]
    pub min_points: usize,
    #[serde(default = "FuzzConfig::default_max")]
    pub max_points: usize,
    #[serde(default = "FuzzConfig::default_classes")]
    pub classes: usize,
    /// Largest per-point label-flip probability of the random classifiers.
    #[serde(default = "FuzzConfig::default_flip")]
    pub max_flip: f64,
    #[serde(default = "FuzzConfig::default_q")]
    pub q_grid: Vec<f64>,
}

impl FuzzConfig {
    fn default_min() -> usize {
        6
    }
    fn default_max() -> usize {
        12
    }
    fn default_classes() -> usize {
        2
    }
    fn default_flip() -> f64 {
        0.4
    }
    fn default_q() -> Vec<f64> {
        vec![0.05, 0.1, 0.2, 0.3, 0.4]
    }

    pub fn new(trials: usize, seed: u64) -> Self {
        FuzzConfig {
            trials,
            seed,
            min_points: Self::default_min(),
            max_points: Self::default_max(),
            classes: Self::default_classes(),
            max_flip: Self::default_flip(),
            q_grid: Self::default_q(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzInstance {
    pub trial: usize,
    pub points: usize,
    pub mu: f64,
    pub p_m: f64,
    pub q: f64,
    pub c: f64,
    pub constant: BranchOutcome,
    pub multiplicative: BranchOutcome,
    pub premise_mu_small: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzCounterexample {
    pub trial: usize,
    pub space: FiniteSpace,
    pub h: ClassifierTable,
    pub report: LemmaC3Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub config: FuzzConfig,
    pub constant_checked: usize,
    pub constant_violations: usize,
    pub multiplicative_checked: usize,
    pub multiplicative_violations: usize,
    /// Instances where neither premise held.
    pub skipped: usize,
    pub instances: Vec<FuzzInstance>,
    pub first_violation: Option<FuzzCounterexample>,
}

impl FuzzReport {
    pub fn violations(&self) -> usize {
        self.constant_violations + self.multiplicative_violations
    }
}

/// Random chain-augmented spaces and perturbed classifiers, each checked
/// against the minority-set bounds with exhaustive subset enumeration.
/// `c` is the largest multiplicative constant the space supports (capped at 8).
pub fn run_expansion_fuzz(cfg: &FuzzConfig) -> Result<FuzzReport> {
    if cfg.trials == 0 {
        return Err(Error::Config("fuzz trials must be at least 1".into()));
    }
    if cfg.min_points < 2 * cfg.classes || cfg.min_points > cfg.max_points || cfg.max_points > crate::expansion::ENUM_LIMIT {
        return Err(Error::Config(format!(
            "need 2·classes ≤ min_points ≤ max_points ≤ {}",
            crate::expansion::ENUM_LIMIT
        )));
    }
    if cfg.q_grid.is_empty() || !(0.0..=1.0).contains(&cfg.max_flip) {
        return Err(Error::Config("q_grid must be non-empty and max_flip in [0, 1]".into()));
    }
    let results: Vec<(FuzzInstance, FiniteSpace, ClassifierTable, LemmaC3Report)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut r = substream(cfg.seed, &[purpose::FUZZ, t as u64]);
            let n = r.random_range(cfg.min_points..=cfg.max_points);
            let space = random_chain_space(n, cfg.classes, &mut r)?;
            let flip = r.random::<f64>() * cfg.max_flip;
            let mut h = ClassifierTable::ground_truth(&space);
            for label in h.h.iter_mut() {
                if r.random::<f64>() < flip {
                    *label = (*label + r.random_range(1..cfg.classes)) % cfg.classes;
                }
            }
            let q = cfg.q_grid[r.random_range(0..cfg.q_grid.len())];
            let c = max_multiplicative_c(&space, 0.5, ExpansionMeasure::ClassConditional)?.min(8.0);
            let rep = verify_lemma_c3(&space, &h, q, c)?;
            let inst = FuzzInstance {
                trial: t,
                points: n,
                mu: rep.mu,
                p_m: rep.p_m,
                q,
                c,
                constant: rep.constant_branch.clone(),
                multiplicative: rep.multiplicative_branch.clone(),
                premise_mu_small: rep.premise_mu_small,
            };
            Ok((inst, space, h, rep))
        })
        .collect::<Result<_>>()?;
    let mut report = FuzzReport {
        config: cfg.clone(),
        constant_checked: 0,
        constant_violations: 0,
        multiplicative_checked: 0,
        multiplicative_violations: 0,
        skipped: 0,
        instances: Vec::with_capacity(results.len()),
        first_violation: None,
    };
    for (inst, space, h, rep) in results {
        report.constant_checked += inst.constant.applicable() as usize;
        report.constant_violations += inst.constant.failed() as usize;
        report.multiplicative_checked += inst.multiplicative.applicable() as usize;
        report.multiplicative_violations += inst.multiplicative.failed() as usize;
        report.skipped += (!inst.constant.applicable() && !inst.multiplicative.applicable()) as usize;
        if rep.violated() && report.first_violation.is_none() {
            report.first_violation = Some(FuzzCounterexample {
                trial: inst.trial,
                space,
                h,
                report: rep,
            });
        }
        report.instances.push(inst);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown format '{other}' (csv or json)"))),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Column layout: `trial, method, <params...>, excess_risk, aux_<keys...>`,
/// parameter and aux names sorted over the union of all records.
pub fn csv_header(records: &[TrialRecord]) -> Vec<String> {
    let params: BTreeSet<&String> = records.iter().flat_map(|r| r.params.keys()).collect();
    let aux: BTreeSet<&String> = records.iter().flat_map(|r| r.aux.keys()).collect();
    let mut h = vec!["trial".to_string(), "method".to_string()];
    h.extend(params.into_iter().cloned());
    h.push("excess_risk".into());
    h.extend(aux.into_iter().map(|k| format!("aux_{k}")));
    h
}

fn write_csv<W: Write>(records: &[TrialRecord], w: W) -> Result<()> {
    let header = csv_header(records);
    let n_params = header.iter().position(|h| h == "excess_risk").unwrap_or(2) - 2;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&header)?;
    for r in records {
        let mut row = vec![r.trial.to_string(), r.method.clone()];
        for k in &header[2..2 + n_params] {
            row.push(r.params.get(k).map(|v| v.to_string()).unwrap_or_default());
        }
        row.push(r.excess_risk.to_string());
        for k in &header[3 + n_params..] {
            row.push(r.aux.get(&k[4..]).map(|v| v.to_string()).unwrap_or_default());
        }
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Write records in either format to any writer.
pub fn write_records<W: Write>(records: &[TrialRecord], format: OutputFormat, mut w: W) -> Result<()> {
    match format {
        OutputFormat::Csv => write_csv(records, &mut w),
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut w, records)?;
            w.write_all(b"\n").map_err(serde_json::Error::io)?;
            Ok(())
        }
    }
}

/// Write records to `path`, creating parent directories.
pub fn emit(records: &[TrialRecord], format: OutputFormat, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_records(records, format, &mut w)?;
    w.flush().map_err(io_err(path))
}

/// `<path>.meta.json`.
pub fn metadata_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub library: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Per-cell summaries and closed-form predictions.
    #[serde(default)]
    pub cells: Vec<CellSummary>,
}

/// Write records plus the metadata sidecar. Returns the sidecar path.
pub fn emit_with_metadata(
    result: &SweepResult,
    cfg: &ExperimentConfig,
    format: OutputFormat,
    path: &Path,
) -> Result<PathBuf> {
    emit(&result.records, format, path)?;
    let meta = RunMetadata {
        library: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg)?,
        cells: result.cells.clone(),
    };
    let mp = metadata_path(path);
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&mp, text + "\n").map_err(io_err(&mp))?;
    Ok(mp)
}

pub fn read_records_json(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(trial: usize, method: &str, lambda: Option<f64>) -> TrialRecord {
        let mut params = BTreeMap::from([("d_aug".to_string(), 24.0)]);
        if let Some(l) = lambda {
            params.insert("lambda".into(), l);
        }
        TrialRecord {
            trial,
            method: method.into(),
            params,
            excess_risk: 0.125 + trial as f64,
            aux: BTreeMap::from([("constraint_residual".to_string(), 1e-17)]),
        }
    }

    #[test]
    fn mean_se_values() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(mean_se(&[1.0]).1.is_nan());
    }

    #[test]
    fn method_descriptors() {
        assert_eq!("dac_soft:0.5".parse::<MethodDesc>().unwrap(), MethodDesc::DacSoft(Some(0.5)));
        assert_eq!("dac_soft".parse::<MethodDesc>().unwrap(), MethodDesc::DacSoft(None));
        assert!("dac_soft:-1".parse::<MethodDesc>().is_err());
        assert!("ridge".parse::<MethodDesc>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::new("example_4_1", 0, 1).validate().is_err());
        assert!(matches!(
            ExperimentConfig::new("nope", 1, 1).validate(),
            Err(Error::UnknownPreset(_))
        ));
        let bad = ExperimentConfig::new("example_4_1", 1, 1).with_sweep("lambda", &[1.0]);
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = ExperimentConfig::new("example_4_2", 1, 1).with_methods(&["ols"]);
        assert!(bad.validate().is_err());
        let json = r#"{"preset": "example_6", "trials": 3, "seed": 9, "sweep": {"d_aug": [24]}}"#;
        let cfg = ExperimentConfig::from_json_str(json).unwrap();
        assert_eq!(cfg.trials, 3);
        assert!(cfg.validate().is_ok());
        assert!(ExperimentConfig::from_json_str(r#"{"preset": "example_6", "trails": 3}"#).is_err());
    }

    #[test]
    fn inline_preset_config() {
        let p = serde_json::to_value(preset("example_C1").unwrap()).unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({"preset": p, "trials": 2})).unwrap();
        assert!(matches!(cfg.validate().unwrap(), Preset::Domain(_)));
    }

    #[test]
    fn csv_layout() {
        let recs = vec![rec(0, "dac_soft", Some(0.1)), rec(0, "da_erm", None)];
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "trial,method,d_aug,lambda,excess_risk,aux_constraint_residual");
        assert_eq!(lines[1], "0,dac_soft,24,0.1,0.125,0.00000000000000001");
        assert_eq!(lines[2], "0,da_erm,24,,0.125,0.00000000000000001");
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "trial,method,excess_risk\n");
    }

    #[test]
    fn record_keys_and_clamp() {
        assert_eq!(record_key(&rec(0, "dac_soft", Some(3.2))), "dac_soft@3.2");
        assert_eq!(record_key(&rec(0, "da_erm", None)), "da_erm");
        assert_eq!(clamp_risk(-1e-13), 0.0);
        assert_eq!(clamp_risk(-1e-3), -1e-3);
    }

    #[test]
    fn metadata_sidecar_name() {
        assert_eq!(metadata_path(Path::new("out/run.csv")), PathBuf::from("out/run.csv.meta.json"));
    }

    #[test]
    fn small_linear_run() {
        let cfg = ExperimentConfig::new("example_4_1", 5, 3).with_sweep("d_aug", &[25.0]).with_sweep("d_e1", &[0.0, 10.0]);
        let res = run(&cfg).unwrap();
        assert_eq!(res.cells.len(), 2);
        assert_eq!(res.records.len(), 2 * 5 * 2);
        let th = res.cells[0].theory.as_ref().unwrap();
        assert_eq!(th.d_aug, 25);
        assert!((th.dac_risk_pred - 0.1).abs() < 1e-12);
        assert!(res.cells.iter().all(|c| c.design_hash.is_some()));
    }

    #[test]
    fn logistic_excess_zero_at_truth() {
        let x = Matrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.5, 0.2, -2.0]);
        let t = Vector::from_column_slice(&[1.0, 1.0]);
        assert_eq!(logistic_excess(&x, &t, &t), 0.0);
        let e = logistic_excess(&x, &t, &(-&t));
        assert!(e > 0.0);
    }

    #[test]
    fn fuzz_is_deterministic() {
        let cfg = FuzzConfig::new(12, 5);
        let a = serde_json::to_string(&run_expansion_fuzz(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_expansion_fuzz(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
