//! Instance-dependent costs and the cardinality-aware losses.
//!
//! A base classifier's scores `h(x, ·)` fix, for each candidate cardinality
//! `k ∈ K` and label `y`, the cost
//!
//! ```text
//! c(x, k, y) = 1[y ∉ top_k(h(x))] + λ C(k)          (optionally / (1 + λ C(max K)))
//! ```
//!
//! A selector `r(x, ·)` scores the entries of `K`; its argmax picks the
//! prediction-set size. The surrogates are weighted sums of standard kernels
//! over the label space `K`: comp-sum weights `1 - c`, constrained weights `c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self, check_sum_zero, LossKind};
use crate::types::{argmax, check_label, rank_of, CardinalitySet};

/// Cardinality penalty `C(k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    LogK,
    LinearK,
    /// One value per entry of the cardinality set, in the same order.
    Table(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub lambda: f64,
    pub penalty: Penalty,
    pub kset: CardinalitySet,
    pub normalize: bool,
}

impl CostSpec {
    pub fn new(lambda: f64, penalty: Penalty, kset: CardinalitySet, normalize: bool) -> Result<Self> {
        let spec = Self { lambda, penalty, kset, normalize };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::range("lambda", self.lambda, "[0, inf)"));
        }
        if let Penalty::Table(t) = &self.penalty {
            if t.len() != self.kset.len() {
                return Err(Error::Dimension { expected: self.kset.len(), got: t.len() });
            }
            if t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidInput("penalty table entries must be finite and >= 0".into()));
            }
            if t.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidInput("penalty table must be nondecreasing in k".into()));
            }
        }
        Ok(())
    }

    /// `C(k)` for the `idx`-th entry of the cardinality set.
    pub fn penalty_at(&self, idx: usize) -> f64 {
        let k = self.kset.ks()[idx];
        match &self.penalty {
            Penalty::LogK => (k as f64).ln(),
            Penalty::LinearK => k as f64,
            Penalty::Table(t) => t[idx],
        }
    }

    /// Divisor applied to raw costs (1 when not normalizing).
    pub fn scale(&self) -> f64 {
        if self.normalize {
            1.0 + self.lambda * self.penalty_at(self.kset.len() - 1)
        } else {
            1.0
        }
    }

    /// Same spec over a different cardinality set (table penalties are not
    /// transferable and are rejected).
    pub fn with_kset(&self, kset: CardinalitySet) -> Result<Self> {
        if let Penalty::Table(_) = self.penalty {
            return Err(Error::InvalidInput("a table penalty is tied to its cardinality set".into()));
        }
        Self::new(self.lambda, self.penalty.clone(), kset, self.normalize)
    }

    /// `c(x, k, y)` for every `k ∈ K` at label `y`, written into `out`.
    pub(crate) fn costs_for_label_into(&self, base_scores: &[f64], y: usize, out: &mut [f64]) {
        let rank = rank_of(base_scores, y);
        let scale = self.scale();
        for (idx, (o, &k)) in out.iter_mut().zip(self.kset.ks()).enumerate() {
            let miss = if rank < k { 0.0 } else { 1.0 };
            *o = (miss + self.lambda * self.penalty_at(idx)) / scale;
        }
    }

    pub fn costs_for_label(&self, base_scores: &[f64], y: usize) -> Result<Vec<f64>> {
        check_label(y, base_scores.len())?;
        self.kset.check_within(base_scores.len())?;
        let mut out = vec![0.0; self.kset.len()];
        self.costs_for_label_into(base_scores, y, &mut out);
        Ok(out)
    }
}

/// `c(x, k, y)` for one instance: `|K|` rows by `n` labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    n: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    /// Arbitrary costs (row-major, `rows × n`) in `[0, 1]`.
    pub fn new(rows: usize, n: usize, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != rows * n {
            return Err(Error::Dimension { expected: rows * n, got: costs.len() });
        }
        if let Some(v) = costs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::range("cost", v, "[0, 1]"));
        }
        Ok(Self { rows, n, costs })
    }

    pub fn from_base(spec: &CostSpec, base_scores: &[f64]) -> Result<Self> {
        let n = base_scores.len();
        spec.kset.check_within(n)?;
        let rows = spec.kset.len();
        let mut costs = vec![0.0; rows * n];
        let mut col = vec![0.0; rows];
        for y in 0..n {
            spec.costs_for_label_into(base_scores, y, &mut col);
            for (i, c) in col.iter().enumerate() {
                costs[i * n + y] = *c;
            }
        }
        Ok(Self { rows, n, costs })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, y: usize) -> f64 {
        self.costs[row * self.n + y]
    }

    /// Costs of every cardinality at label `y`.
    pub fn column(&self, y: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, y)).collect()
    }

    /// Expected cost of each row under `p`: `Σ_y p(y) c(k, y)`.
    pub fn expected(&self, p: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| p.iter().enumerate().map(|(y, py)| py * self.get(i, y)).sum()).collect()
    }
}

pub fn cost(spec: &CostSpec, base_scores: &[f64], k: usize, y: usize) -> Result<f64> {
    let idx = spec.kset.index_of(k).ok_or_else(|| Error::range("k", k, format!("{:?}", spec.kset.ks())))?;
    Ok(spec.costs_for_label(base_scores, y)?[idx])
}

/// Index into `K` of the selected cardinality (ties go to the larger k).
pub fn select_index(r_scores: &[f64]) -> usize {
    argmax(r_scores)
}

pub fn select_cardinality(kset: &CardinalitySet, r_scores: &[f64]) -> Result<usize> {
    check_r(kset, r_scores)?;
    Ok(kset.ks()[select_index(r_scores)])
}

fn check_r(kset: &CardinalitySet, r: &[f64]) -> Result<()> {
    if r.len() != kset.len() {
        return Err(Error::Dimension { expected: kset.len(), got: r.len() });
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("selector score".into()));
    }
    Ok(())
}

pub fn target_cardinality_loss(spec: &CostSpec, base_scores: &[f64], r_scores: &[f64], y: usize) -> Result<f64> {
    check_r(&spec.kset, r_scores)?;
    Ok(spec.costs_for_label(base_scores, y)?[select_index(r_scores)])
}

/// Cost-sensitive surrogate from a cost vector over `K` (one entry per
/// cardinality, for the true label).
pub fn cs_loss_from_costs(kind: LossKind, costs: &[f64], r: &[f64]) -> Result<f64> {
    check_cs(kind, costs, r)?;
    Ok(cs_value(kind, costs, r))
}

pub fn cs_grad_from_costs(kind: LossKind, costs: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    check_cs(kind, costs, r)?;
    let mut g = vec![0.0; r.len()];
    let mut scratch = vec![0.0; r.len()];
    cs_value_grad(kind, costs, r, &mut g, &mut scratch);
    Ok(g)
}

fn check_cs(kind: LossKind, costs: &[f64], r: &[f64]) -> Result<()> {
    kind.validate()?;
    if costs.len() != r.len() {
        return Err(Error::Dimension { expected: r.len(), got: costs.len() });
    }
    if r.is_empty() {
        return Err(Error::InvalidInput("empty selector scores".into()));
    }
    if kind.is_constrained() {
        check_sum_zero(r)?;
    }
    Ok(())
}

pub(crate) fn cs_value(kind: LossKind, costs: &[f64], r: &[f64]) -> f64 {
    if kind.is_constrained() {
        costs.iter().zip(r).map(|(c, &t)| c * losses::phi_neg(kind, t).0).sum()
    } else {
        costs.iter().enumerate().filter(|(_, c)| **c != 1.0).map(|(k, c)| (1.0 - c) * losses::value(kind, r, k)).sum()
    }
}

/// Value and gradient; `g` is overwritten, `scratch` has length `r.len()`.
pub(crate) fn cs_value_grad(kind: LossKind, costs: &[f64], r: &[f64], g: &mut [f64], scratch: &mut [f64]) -> f64 {
    if kind.is_constrained() {
        let mut total = 0.0;
        for ((gk, c), &t) in g.iter_mut().zip(costs).zip(r) {
            let (v, d) = losses::phi_neg(kind, t);
            total += c * v;
            *gk = c * d;
        }
        return total;
    }
    g.iter_mut().for_each(|v| *v = 0.0);
    let mut total = 0.0;
    for (k, c) in costs.iter().enumerate() {
        let w = 1.0 - c;
        if w == 0.0 {
            continue;
        }
        total += w * losses::value_grad(kind, r, k, scratch);
        for (gj, sj) in g.iter_mut().zip(scratch.iter()) {
            *gj += w * sj;
        }
    }
    total
}

pub fn cs_comp_sum_loss(
    kind: LossKind,
    spec: &CostSpec,
    base_scores: &[f64],
    r_scores: &[f64],
    y: usize,
) -> Result<f64> {
    if kind.is_constrained() {
        return Err(Error::InvalidInput(format!("{} is not a comp-sum loss", kind.name())));
    }
    check_r(&spec.kset, r_scores)?;
    cs_loss_from_costs(kind, &spec.costs_for_label(base_scores, y)?, r_scores)
}

pub fn cs_constrained_loss(
    kind: LossKind,
    spec: &CostSpec,
    base_scores: &[f64],
    r_scores: &[f64],
    y: usize,
) -> Result<f64> {
    if !kind.is_constrained() {
        return Err(Error::InvalidInput(format!("{} is not a constrained loss", kind.name())));
    }
    check_r(&spec.kset, r_scores)?;
    cs_loss_from_costs(kind, &spec.costs_for_label(base_scores, y)?, r_scores)
}

pub fn cs_grad(kind: LossKind, spec: &CostSpec, base_scores: &[f64], r_scores: &[f64], y: usize) -> Result<Vec<f64>> {
    check_r(&spec.kset, r_scores)?;
    cs_grad_from_costs(kind, &spec.costs_for_label(base_scores, y)?, r_scores)
}
