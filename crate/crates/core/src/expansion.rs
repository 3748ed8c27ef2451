//! Expansion properties of augmentation graphs on finite probability spaces,
//! checked by brute-force subset enumeration, and the minority-set bound.
//!
//! Point sets are bitmasks over point positions, so spaces hold at most 64
//! points; exhaustive checks are further capped at [`ENUM_LIMIT`] points.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

pub const ENUM_LIMIT: usize = 22;
const MAX_POINTS: usize = 64;
const EPS: f64 = 1e-12;

/// Subset of the points of a [`FiniteSpace`], by position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PointSet(pub u64);

impl PointSet {
    pub fn from_indices(idx: &[usize]) -> PointSet {
        PointSet(idx.iter().fold(0u64, |m, &i| m | (1 << i)))
    }
    pub fn contains(&self, i: usize) -> bool {
        i < 64 && self.0 >> i & 1 == 1
    }
    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }
    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
    pub fn is_subset(&self, other: &PointSet) -> bool {
        self.0 & !other.0 == 0
    }
    pub fn indices(&self) -> Vec<usize> {
        (0..64).filter(|&i| self.contains(i)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSpace {
    points: Vec<usize>,
    prob: Vec<f64>,
    class_of: Vec<usize>,
    aug_sets: Vec<Vec<usize>>,
}

/// Finite probability space with classes and augmentation sets `A(x)`.
/// `class_of` and `aug_sets` are aligned with `points`; `aug_sets` holds ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct FiniteSpace {
    points: Vec<usize>,
    prob: Vec<f64>,
    class_of: Vec<usize>,
    aug_sets: Vec<Vec<usize>>,
    aug_mask: Vec<u64>,
    nb_mask: Vec<u64>,
    class_mask: Vec<u64>,
    index: HashMap<usize, usize>,
}

impl PartialEq for FiniteSpace {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
            && self.prob == other.prob
            && self.class_of == other.class_of
            && self.aug_sets == other.aug_sets
    }
}

impl TryFrom<RawSpace> for FiniteSpace {
    type Error = Error;
    fn try_from(r: RawSpace) -> Result<Self> {
        FiniteSpace::new(r.points, r.prob, r.class_of, r.aug_sets)
    }
}

impl From<FiniteSpace> for RawSpace {
    fn from(s: FiniteSpace) -> Self {
        RawSpace {
            points: s.points,
            prob: s.prob,
            class_of: s.class_of,
            aug_sets: s.aug_sets,
        }
    }
}

impl FiniteSpace {
    pub fn new(points: Vec<usize>, prob: Vec<f64>, class_of: Vec<usize>, aug_sets: Vec<Vec<usize>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return invalid("space needs at least one point");
        }
        if n > MAX_POINTS {
            return Err(Error::TooLarge {
                size: n,
                limit: MAX_POINTS,
            });
        }
        if prob.len() != n || class_of.len() != n || aug_sets.len() != n {
            return Err(Error::DimensionMismatch(
                "points, prob, class_of and aug_sets must have equal length".into(),
            ));
        }
        let mut index = HashMap::new();
        for (i, &p) in points.iter().enumerate() {
            if index.insert(p, i).is_some() {
                return invalid(format!("duplicate point id {p}"));
            }
        }
        if prob.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return invalid("probabilities must be positive");
        }
        let total: f64 = prob.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("probabilities sum to {total}, not 1"));
        }
        let mut aug_mask = vec![0u64; n];
        for (i, set) in aug_sets.iter().enumerate() {
            for id in set {
                let j = *index.get(id).ok_or(Error::UnknownPoint(*id))?;
                if class_of[j] != class_of[i] {
                    return invalid(format!(
                        "augmentation of point {} leaves its class",
                        points[i]
                    ));
                }
                aug_mask[i] |= 1 << j;
            }
            if aug_mask[i] >> i & 1 == 0 {
                return invalid(format!("point {} is missing from its own augmentation set", points[i]));
            }
        }
        let nb_mask = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| aug_mask[i] & aug_mask[j] != 0)
                    .fold(0u64, |m, j| m | (1 << j))
            })
            .collect();
        let k = class_of.iter().max().map_or(0, |m| m + 1);
        let mut class_mask = vec![0u64; k];
        for (i, &c) in class_of.iter().enumerate() {
            class_mask[c] |= 1 << i;
        }
        Ok(FiniteSpace {
            points,
            prob,
            class_of,
            aug_sets,
            aug_mask,
            nb_mask,
            class_mask,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn num_classes(&self) -> usize {
        self.class_mask.len()
    }
    pub fn points(&self) -> &[usize] {
        &self.points
    }
    pub fn prob(&self) -> &[f64] {
        &self.prob
    }
    pub fn class_of(&self) -> &[usize] {
        &self.class_of
    }

    pub fn class_set(&self, k: usize) -> PointSet {
        PointSet(self.class_mask.get(k).copied().unwrap_or(0))
    }

    pub fn aug_set(&self, i: usize) -> PointSet {
        PointSet(self.aug_mask[i])
    }

    /// Positions of the given point ids.
    pub fn set_of_ids(&self, ids: &[usize]) -> Result<PointSet> {
        let mut m = 0u64;
        for id in ids {
            m |= 1 << *self.index.get(id).ok_or(Error::UnknownPoint(*id))?;
        }
        Ok(PointSet(m))
    }

    pub fn ids_of(&self, s: PointSet) -> Vec<usize> {
        s.indices().into_iter().map(|i| self.points[i]).collect()
    }

    pub fn mass(&self, s: PointSet) -> f64 {
        // fold from +0.0: an empty float sum is -0.0
        s.indices().iter().fold(0.0, |acc, &i| acc + self.prob[i])
    }

    fn all(&self) -> u64 {
        if self.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.len()) - 1
        }
    }

    fn check_set(&self, s: PointSet) -> Result<()> {
        let extra = s.0 & !self.all();
        if extra != 0 {
            return Err(Error::UnknownPoint(extra.trailing_zeros() as usize));
        }
        Ok(())
    }

    /// Every `A(x)` strictly contains `x`.
    pub fn is_strict(&self) -> bool {
        (0..self.len()).all(|i| self.aug_mask[i].count_ones() > 1)
    }

    fn nb(&self, s: u64) -> u64 {
        let mut out = 0;
        let mut m = s;
        while m != 0 {
            let i = m.trailing_zeros() as usize;
            out |= self.nb_mask[i];
            m &= m - 1;
        }
        out
    }
}

/// `NB(S) = ∪_{x∈S} {x′ : A(x) ∩ A(x′) ≠ ∅}`.
pub fn neighborhood(space: &FiniteSpace, s: PointSet) -> Result<PointSet> {
    space.check_set(s)?;
    Ok(PointSet(space.nb(s.0)))
}

/// How "P(S ∩ X_k) ≤ a" is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMeasure {
    /// Joint mass `P(S ∩ X_k)`.
    Joint,
    /// Class-conditional mass `P(S ∩ X_k) / P(X_k)`.
    ClassConditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EnumerationMode {
    Exhaustive,
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionOptions {
    pub constant_measure: ExpansionMeasure,
    pub multiplicative_measure: ExpansionMeasure,
    pub mode: EnumerationMode,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        ExpansionOptions {
            constant_measure: ExpansionMeasure::Joint,
            multiplicative_measure: ExpansionMeasure::ClassConditional,
            mode: EnumerationMode::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCheck {
    pub holds: bool,
    pub witness: Option<PointSet>,
    /// Class of the witness (multiplicative checks only).
    pub witness_class: Option<usize>,
    /// False in sampled mode: `holds` then means "no violation found".
    pub exhaustive: bool,
    pub subsets_checked: u64,
}

/// Visit subsets of `universe` (or a random sample of them). Stops early when
/// `visit` returns false.
fn for_subsets(universe: u64, mode: EnumerationMode, mut visit: impl FnMut(u64) -> bool) -> Result<(u64, bool)> {
    let bits: Vec<u32> = (0..64).filter(|&i| universe >> i & 1 == 1).collect();
    match mode {
        EnumerationMode::Exhaustive => {
            if bits.len() > ENUM_LIMIT {
                return Err(Error::TooLarge {
                    size: bits.len(),
                    limit: ENUM_LIMIT,
                });
            }
            let mut count = 0;
            for code in 1u64..(1u64 << bits.len()) {
                let mut s = 0u64;
                let mut c = code;
                while c != 0 {
                    s |= 1 << bits[c.trailing_zeros() as usize];
                    c &= c - 1;
                }
                count += 1;
                if !visit(s) {
                    return Ok((count, true));
                }
            }
            Ok((count, true))
        }
        EnumerationMode::Sampled { samples, seed } => {
            if samples < 10_000 {
                return invalid("sampled mode needs at least 10^4 subsets");
            }
            let mut r = rng::substream(seed, &[rng::purpose::FUZZ, universe]);
            let mut count = 0;
            for _ in 0..samples {
                let s = r.random::<u64>() & universe;
                if s == 0 {
                    continue;
                }
                count += 1;
                if !visit(s) {
                    return Ok((count, false));
                }
            }
            Ok((count, false))
        }
    }
}

fn class_fraction(space: &FiniteSpace, s: u64, k: usize, measure: ExpansionMeasure) -> f64 {
    let ck = space.class_mask[k];
    let m = space.mass(PointSet(s & ck));
    match measure {
        ExpansionMeasure::Joint => m,
        ExpansionMeasure::ClassConditional => m / space.mass(PointSet(ck)),
    }
}

/// `(q, ξ)`-constant expansion with default options.
pub fn check_constant_expansion(space: &FiniteSpace, q: f64, xi: f64) -> Result<ExpansionCheck> {
    check_constant_expansion_with(space, q, xi, &ExpansionOptions::default())
}

/// For every `S` with `P(S) ≥ q` and `P(S ∩ X_k) ≤ ½` for all k:
/// `P(NB(S)) ≥ min{P(S), ξ} + P(S)`.
pub fn check_constant_expansion_with(
    space: &FiniteSpace,
    q: f64,
    xi: f64,
    opts: &ExpansionOptions,
) -> Result<ExpansionCheck> {
    let mut witness = None;
    let (count, exhaustive) = for_subsets(space.all(), opts.mode, |s| {
        let ps = space.mass(PointSet(s));
        if ps < q - EPS {
            return true;
        }
        if (0..space.num_classes()).any(|k| class_fraction(space, s, k, opts.constant_measure) > 0.5 + EPS) {
            return true;
        }
        let pnb = space.mass(PointSet(space.nb(s)));
        if pnb < ps.min(xi) + ps - EPS {
            witness = Some(PointSet(s));
            return false;
        }
        true
    })?;
    Ok(ExpansionCheck {
        holds: witness.is_none(),
        witness,
        witness_class: None,
        exhaustive,
        subsets_checked: count,
    })
}

/// `(a, c)`-multiplicative expansion with default options.
pub fn check_multiplicative_expansion(space: &FiniteSpace, a: f64, c: f64) -> Result<ExpansionCheck> {
    check_multiplicative_expansion_with(space, a, c, &ExpansionOptions::default())
}

/// For every class k and `S ⊆ X_k` with `P(S ∩ X_k) ≤ a`:
/// `P(NB(S) ∩ X_k) ≥ min{c P(S ∩ X_k), 1}`, both sides in the chosen measure.
/// Subsets of a single class suffice because neighborhoods never leave a class.
pub fn check_multiplicative_expansion_with(
    space: &FiniteSpace,
    a: f64,
    c: f64,
    opts: &ExpansionOptions,
) -> Result<ExpansionCheck> {
    let measure = opts.multiplicative_measure;
    let mut total = 0;
    let mut exhaustive = true;
    for k in 0..space.num_classes() {
        let mut witness = None;
        let (count, ex) = for_subsets(space.class_mask[k], opts.mode, |s| {
            let ps = class_fraction(space, s, k, measure);
            if ps > a + EPS {
                return true;
            }
            let pnb = class_fraction(space, space.nb(s), k, measure);
            if pnb < (c * ps).min(1.0) - EPS {
                witness = Some(PointSet(s));
                return false;
            }
            true
        })?;
        total += count;
        exhaustive &= ex;
        if witness.is_some() {
            return Ok(ExpansionCheck {
                holds: false,
                witness,
                witness_class: Some(k),
                exhaustive,
                subsets_checked: total,
            });
        }
    }
    Ok(ExpansionCheck {
        holds: true,
        witness: None,
        witness_class: None,
        exhaustive,
        subsets_checked: total,
    })
}

/// Largest `c` for which `(a, c)`-multiplicative expansion holds
/// (`+∞` if every qualifying set's neighborhood fills its class).
pub fn max_multiplicative_c(space: &FiniteSpace, a: f64, measure: ExpansionMeasure) -> Result<f64> {
    let mut best = f64::INFINITY;
    for k in 0..space.num_classes() {
        for_subsets(space.class_mask[k], EnumerationMode::Exhaustive, |s| {
            let ps = class_fraction(space, s, k, measure);
            if ps > a + EPS {
                return true;
            }
            let pnb = class_fraction(space, space.nb(s), k, measure);
            if pnb < 1.0 - EPS {
                best = best.min(pnb / ps);
            }
            true
        })?;
    }
    Ok(best)
}

/// A classifier as a label per point position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierTable {
    pub h: Vec<usize>,
}

impl ClassifierTable {
    /// The ground-truth classifier `h*`.
    pub fn ground_truth(space: &FiniteSpace) -> Self {
        ClassifierTable {
            h: space.class_of.clone(),
        }
    }

    fn check(&self, space: &FiniteSpace) -> Result<()> {
        if self.h.len() != space.len() {
            return Err(Error::DimensionMismatch(format!(
                "classifier has {} labels for {} points",
                self.h.len(),
                space.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minority {
    pub m: PointSet,
    pub p_m: f64,
    /// Class -> majority label of `h` within the class.
    pub majority: BTreeMap<usize, usize>,
}

/// Class-wise majority labels of `h` and the points disagreeing with them.
pub fn minority_set(space: &FiniteSpace, h: &ClassifierTable) -> Result<Minority> {
    h.check(space)?;
    let mut m = 0u64;
    let mut majority = BTreeMap::new();
    for k in 0..space.num_classes() {
        let ck = space.class_mask[k];
        if ck == 0 {
            continue;
        }
        let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
        for i in PointSet(ck).indices() {
            *mass.entry(h.h[i]).or_insert(0.0) += space.prob[i];
        }
        // BTreeMap iterates labels in increasing order, so ties keep the smallest.
        let (&label, _) = mass
            .iter()
            .fold(None::<(&usize, &f64)>, |best, cur| match best {
                Some(b) if *b.1 >= *cur.1 => Some(b),
                _ => Some(cur),
            })
            .expect("class is non-empty");
        majority.insert(k, label);
        for i in PointSet(ck).indices() {
            if h.h[i] != label {
                m |= 1 << i;
            }
        }
    }
    Ok(Minority {
        m: PointSet(m),
        p_m: space.mass(PointSet(m)),
        majority,
    })
}

/// Mass of points with some augmentation labelled differently by `h`.
pub fn mu_of(space: &FiniteSpace, h: &ClassifierTable) -> Result<f64> {
    h.check(space)?;
    Ok((0..space.len())
        .filter(|&i| PointSet(space.aug_mask[i]).indices().iter().any(|&j| h.h[j] != h.h[i]))
        .fold(0.0, |acc, i| acc + space.prob[i]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BranchOutcome {
    Skipped { reason: String },
    Checked { bound: f64, passed: bool },
}

impl BranchOutcome {
    pub fn failed(&self) -> bool {
        matches!(self, BranchOutcome::Checked { passed: false, .. })
    }
    pub fn applicable(&self) -> bool {
        matches!(self, BranchOutcome::Checked { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaC3Report {
    pub mu: f64,
    pub p_m: f64,
    pub q: f64,
    pub c: f64,
    /// `P(M) ≤ max{q, 2μ}` under `(q, 2μ)`-constant expansion.
    pub constant_branch: BranchOutcome,
    /// `P(M) ≤ max{2μ/(c−1), 2μ}` under `(½, c)`-multiplicative expansion, `c > 1 + 4μ`.
    pub multiplicative_branch: BranchOutcome,
    /// `μ ≤ (c − 1)/4`.
    pub premise_mu_small: bool,
    /// Every `A(x)` strictly contains `x`.
    pub strict_augmentation: bool,
    pub witness: Option<PointSet>,
}

impl LemmaC3Report {
    pub fn violated(&self) -> bool {
        self.constant_branch.failed() || self.multiplicative_branch.failed()
    }
}

pub fn verify_lemma_c3(space: &FiniteSpace, h: &ClassifierTable, q: f64, c: f64) -> Result<LemmaC3Report> {
    verify_lemma_c3_with(space, h, q, c, &ExpansionOptions::default())
}

/// Minority-set bounds under constant and multiplicative expansion.
pub fn verify_lemma_c3_with(
    space: &FiniteSpace,
    h: &ClassifierTable,
    q: f64,
    c: f64,
    opts: &ExpansionOptions,
) -> Result<LemmaC3Report> {
    let mu = mu_of(space, h)?;
    let minority = minority_set(space, h)?;
    let p_m = minority.p_m;
    let mut witness = None;
    let constant_branch = if !(q > 0.0 && q < 0.5) {
        BranchOutcome::Skipped {
            reason: format!("q = {q} outside (0, 1/2)"),
        }
    } else {
        let chk = check_constant_expansion_with(space, q, 2.0 * mu, opts)?;
        if chk.holds {
            let bound = q.max(2.0 * mu);
            BranchOutcome::Checked {
                bound,
                passed: p_m <= bound + EPS,
            }
        } else {
            witness = chk.witness;
            BranchOutcome::Skipped {
                reason: "constant expansion premise fails".into(),
            }
        }
    };
    let multiplicative_branch = if !(c > 1.0 + 4.0 * mu) {
        BranchOutcome::Skipped {
            reason: format!("c = {c} does not exceed 1 + 4μ = {}", 1.0 + 4.0 * mu),
        }
    } else {
        let chk = check_multiplicative_expansion_with(space, 0.5, c, opts)?;
        if chk.holds {
            let bound = (2.0 * mu / (c - 1.0)).max(2.0 * mu);
            BranchOutcome::Checked {
                bound,
                passed: p_m <= bound + EPS,
            }
        } else {
            BranchOutcome::Skipped {
                reason: "multiplicative expansion premise fails".into(),
            }
        }
    };
    Ok(LemmaC3Report {
        mu,
        p_m,
        q,
        c,
        constant_branch,
        multiplicative_branch,
        premise_mu_small: mu <= (c - 1.0) / 4.0,
        strict_augmentation: space.is_strict(),
        witness,
    })
}

/// Random space with `n` points in `k` classes and chain augmentations
/// `A(x_i) = {x_i, x_{i+1}}` along a random order inside each class.
pub fn random_chain_space(n: usize, k: usize, rng: &mut rng::Stream) -> Result<FiniteSpace> {
    if k == 0 || n < 2 * k {
        return invalid("need at least two points per class");
    }
    let mut class_of: Vec<usize> = (0..n).map(|i| if i < 2 * k { i % k } else { rng.random_range(0..k) }).collect();
    // Shuffle class assignment.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        class_of.swap(i, j);
    }
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut prob: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let drift: f64 = 1.0 - prob.iter().sum::<f64>();
    prob[0] += drift;
    let mut aug_sets = vec![vec![]; n];
    for c in 0..k {
        let mut members: Vec<usize> = (0..n).filter(|&i| class_of[i] == c).collect();
        for i in (1..members.len()).rev() {
            let j = rng.random_range(0..=i);
            members.swap(i, j);
        }
        for (pos, &i) in members.iter().enumerate() {
            let next = if pos + 1 < members.len() { members[pos + 1] } else { members[pos - 1] };
            aug_sets[i] = vec![i, next];
        }
    }
    FiniteSpace::new((0..n).collect(), prob, class_of, aug_sets)
}
