//! Shared domain types and the ranking convention.
//!
//! Ranking: labels are ordered by score descending; equal scores put the
//! higher label index first. [`rank_cmp`] is the only comparator used for
//! label rankings and for argmax over cardinalities.

use std::cmp::Ordering;
use std::ops::Deref;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on probability sums.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Label space `0..n`, `n >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    n: usize,
}

impl LabelSpace {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::range("n", n, "[2, inf)"));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn check_label(&self, y: usize) -> Result<()> {
        check_label(y, self.n)
    }
}

pub(crate) fn check_label(y: usize, n: usize) -> Result<()> {
    if y >= n {
        return Err(Error::range("y", y, format!("[0, {n})")));
    }
    Ok(())
}

pub(crate) fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::range("k", k, format!("[1, {n}]")));
    }
    Ok(())
}

/// Finite real scores over a label (or cardinality) space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("score[{i}] = {}", values[i])));
        }
        if values.is_empty() {
            return Err(Error::InvalidInput("empty score vector".into()));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ScoreVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ScoreVector> for Vec<f64> {
    fn from(s: ScoreVector) -> Self {
        s.0
    }
}

impl Deref for ScoreVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Conditional probability vector `p(·|x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_simplex(&values, "p")?;
        Ok(Self(values))
    }

    /// Normalizes nonnegative weights onto the simplex.
    pub fn from_weights(mut w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and >= 0".into()));
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("weights sum to zero".into()));
        }
        w.iter_mut().for_each(|v| *v /= total);
        Self::new(w)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput(format!("{what} is empty")));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput(format!("{what}[{i}] = {} is not a probability", v[i])));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidInput(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// Joint distribution over (instance, label) with finitely many instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    weights: Vec<f64>,
    cond: Vec<ProbVector>,
}

impl FiniteDistribution {
    pub fn new(instances: Vec<(f64, ProbVector)>) -> Result<Self> {
        let (weights, cond): (Vec<f64>, Vec<ProbVector>) = instances.into_iter().unzip();
        check_simplex(&weights, "instance weights")?;
        let n = cond[0].len();
        for p in &cond {
            if p.len() != n {
                return Err(Error::Dimension { expected: n, got: p.len() });
            }
        }
        Ok(Self { weights, cond })
    }

    pub fn n(&self) -> usize {
        self.cond[0].len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cond(&self) -> &[ProbVector] {
        &self.cond
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &ProbVector)> {
        self.weights.iter().copied().zip(self.cond.iter())
    }

    /// Marginal label distribution `Σ_x w(x) p(·|x)`.
    pub fn label_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (w, p) in self.iter() {
            for (o, pi) in out.iter_mut().zip(p.iter()) {
                *o += w * pi;
            }
        }
        out
    }
}

/// Features (row-major `m × dim`) with 0-based labels in `0..n_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension is zero".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Dimension { expected: labels.len() * dim, got: features.len() });
        }
        LabelSpace::new(n_classes)?;
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::range("label", y, format!("[0, {n_classes})")));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature {} of row {}", i % dim, i / dim)));
        }
        Ok(Self { features, dim, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset { features, dim: self.dim, labels, n_classes: self.n_classes }
    }

    /// Shuffled (train, test) split; `test_fraction` of rows go to test.
    pub fn split<R: Rng + ?Sized>(&self, test_fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::range("test_fraction", test_fraction, "[0, 1)"));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        let (test, train) = idx.split_at(n_test);
        Ok((self.subset(train), self.subset(test)))
    }
}

/// Candidate cardinalities, strictly ascending, each in `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CardinalitySet {
    ks: Vec<usize>,
}

impl CardinalitySet {
    pub fn new(ks: Vec<usize>) -> Result<Self> {
        if ks.is_empty() {
            return Err(Error::InvalidInput("empty cardinality set".into()));
        }
        if ks[0] == 0 {
            return Err(Error::range("k", 0, "[1, n]"));
        }
        if ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!("cardinalities {ks:?} are not strictly ascending")));
        }
        Ok(Self { ks })
    }

    pub fn with_n(ks: Vec<usize>, n: usize) -> Result<Self> {
        let set = Self::new(ks)?;
        set.check_within(n)?;
        Ok(set)
    }

    pub fn check_within(&self, n: usize) -> Result<()> {
        check_k(self.max(), n)
    }

    /// `{1, 2, 4, ..., max}` with the largest power of two not exceeding `max`.
    pub fn doubling(max: usize) -> Result<Self> {
        if max == 0 {
            return Err(Error::range("max", 0, "[1, inf)"));
        }
        let mut ks = vec![1];
        while ks[ks.len() - 1] * 2 <= max {
            ks.push(ks[ks.len() - 1] * 2);
        }
        Self::new(ks)
    }

    /// Expanding schedule `{1}, {1,2}, {1,2,4}, ...` up to `max`.
    pub fn doubling_schedule(max: usize) -> Result<Vec<Self>> {
        let full = Self::doubling(max)?;
        Ok((1..=full.len()).map(|m| Self { ks: full.ks[..m].to_vec() }).collect())
    }

    pub fn ks(&self) -> &[usize] {
        &self.ks
    }

    pub fn len(&self) -> usize {
        self.ks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }

    pub fn max(&self) -> usize {
        self.ks[self.ks.len() - 1]
    }

    pub fn index_of(&self, k: usize) -> Option<usize> {
        self.ks.binary_search(&k).ok()
    }
}

impl TryFrom<Vec<usize>> for CardinalitySet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CardinalitySet> for Vec<usize> {
    fn from(s: CardinalitySet) -> Self {
        s.ks
    }
}

/// Ordering of labels `a`, `b` under scores `s`: `Less` means `a` ranks first.
#[inline]
pub fn rank_cmp(s: &[f64], a: usize, b: usize) -> Ordering {
    s[b].total_cmp(&s[a]).then(b.cmp(&a))
}

pub fn sorted_labels_desc(s: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| rank_cmp(s, a, b));
    idx
}

pub fn top_k_set(s: &[f64], k: usize) -> Result<Vec<usize>> {
    check_k(k, s.len())?;
    let mut v = sorted_labels_desc(s);
    v.truncate(k);
    Ok(v)
}

/// 0-based position of `y` in the ranking of `s`, in O(n).
#[inline]
pub fn rank_of(s: &[f64], y: usize) -> usize {
    (0..s.len()).filter(|&j| rank_cmp(s, j, y) == Ordering::Less).count()
}

/// Highest-ranked index under [`rank_cmp`].
#[inline]
pub fn argmax(s: &[f64]) -> usize {
    (1..s.len()).fold(0, |best, j| if rank_cmp(s, j, best) == Ordering::Less { j } else { best })
}

/// Sum of the `k` largest entries of `p`.
pub fn top_k_probs(p: &[f64], k: usize) -> Result<f64> {
    check_k(k, p.len())?;
    Ok(sorted_labels_desc(p).iter().take(k).map(|&i| p[i]).sum())
}
