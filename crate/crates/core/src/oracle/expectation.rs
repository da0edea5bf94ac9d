//! Expectation-level quantities over a finite distribution and the bound
//! checks built on them.

use serde::{Deserialize, Serialize};

use super::pointwise::{best_conditional_error_surrogate, OptimizerConfig, PointLoss};
use crate::bounds::{self, BoundKind};
use crate::costsens::CostMatrix;
use crate::error::{Error, Result};
use crate::losses::check_sum_zero;
use crate::types::FiniteDistribution;

/// A bound counts as satisfied when `lhs ≤ rhs + BOUND_SLACK`.
pub const BOUND_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisGrid {
    /// Every measurable function: each instance is optimized on its own.
    AllMeasurable,
    /// A finite class of constant hypotheses; each score vector is applied
    /// to every instance.
    SharedGrid(Vec<Vec<f64>>),
    /// All constant hypotheses `x ↦ s` (symmetric and complete).
    Constant,
}

/// How conditional infima over all score vectors are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Infimum {
    Analytic,
    Numeric(OptimizerConfig),
}

/// Target and surrogate losses of a bound.
pub fn theorem_losses(theorem: &BoundKind) -> (PointLoss, PointLoss) {
    match *theorem {
        BoundKind::TopK { loss, k, .. } => (PointLoss::TopK { k }, PointLoss::Surrogate(loss)),
        BoundKind::Cardinality { loss, .. } => (PointLoss::CardinalityTarget, PointLoss::CostSensitive(loss)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalReport {
    pub lhs: f64,
    pub rhs: f64,
    pub surrogate_regret: f64,
    pub satisfied: bool,
    pub optimizer_converged: bool,
}

impl ConditionalReport {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Both sides of the pointwise inequality
/// `Δ𝒞_target(s, x) ≤ rhs(Δ𝒞_surrogate(s, x))`.
pub fn check_bound_conditional(
    theorem: &BoundKind,
    s: &[f64],
    p: &[f64],
    costs: Option<&CostMatrix>,
    infimum: &Infimum,
) -> Result<ConditionalReport> {
    theorem.validate()?;
    if let BoundKind::TopK { n, .. } = theorem {
        if p.len() != *n {
            return Err(Error::Dimension { expected: *n, got: p.len() });
        }
    }
    let (target, surrogate) = theorem_losses(theorem);
    let wt = target.weights(p, costs)?;
    let ws = surrogate.weights(p, costs)?;
    if s.len() != ws.len() {
        return Err(Error::Dimension { expected: ws.len(), got: s.len() });
    }
    if surrogate.sum_to_zero() {
        check_sum_zero(s)?;
    }
    let lhs = (target.conditional(s, &wt) - target.infimum(&wt)).max(0.0);
    let (best, converged) = match infimum {
        Infimum::Analytic => (surrogate.infimum(&ws), true),
        Infimum::Numeric(cfg) => {
            let opt = best_conditional_error_surrogate(&surrogate, &ws, cfg)?;
            (opt.value, opt.converged)
        }
    };
    let surrogate_regret = (surrogate.conditional(s, &ws) - best).max(0.0);
    let rhs = bounds::rhs(theorem, surrogate_regret)?;
    Ok(ConditionalReport {
        lhs,
        rhs,
        surrogate_regret,
        satisfied: lhs <= rhs + BOUND_SLACK,
        optimizer_converged: converged,
    })
}

fn instance_weights(
    loss: &PointLoss,
    dist: &FiniteDistribution,
    costs: Option<&[CostMatrix]>,
) -> Result<Vec<Vec<f64>>> {
    if let Some(c) = costs {
        if c.len() != dist.len() {
            return Err(Error::Dimension { expected: dist.len(), got: c.len() });
        }
    }
    dist.cond().iter().enumerate().map(|(i, p)| loss.weights(p, costs.map(|c| &c[i]))).collect()
}

fn mix(dist: &FiniteDistribution, ws: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; ws[0].len()];
    for (a, w) in dist.weights().iter().zip(ws) {
        for (o, v) in out.iter_mut().zip(w) {
            *o += a * v;
        }
    }
    out
}

fn check_scores(loss: &PointLoss, s: &[f64], dim: usize) -> Result<()> {
    if s.len() != dim {
        return Err(Error::Dimension { expected: dim, got: s.len() });
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score".into()));
    }
    if loss.sum_to_zero() {
        check_sum_zero(s)?;
    }
    Ok(())
}

/// `ℰ_ℓ(h) = Σ_x w(x) 𝒞_ℓ(h(x), x)` with one score vector per instance.
pub fn generalization_error(
    loss: &PointLoss,
    scorer: &[Vec<f64>],
    dist: &FiniteDistribution,
    costs: Option<&[CostMatrix]>,
) -> Result<f64> {
    if scorer.len() != dist.len() {
        return Err(Error::Dimension { expected: dist.len(), got: scorer.len() });
    }
    let ws = instance_weights(loss, dist, costs)?;
    let mut total = 0.0;
    for ((a, w), s) in dist.weights().iter().zip(&ws).zip(scorer) {
        check_scores(loss, s, w.len())?;
        total += a * loss.conditional(s, w);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassErrors {
    /// `ℰ*_ℓ(ℋ)`.
    pub best_in_class: f64,
    /// `𝔼_x[𝒞*_ℓ(ℋ, x)]`.
    pub expected_best_conditional: f64,
    /// `ℰ*_ℓ(ℋ_all) = 𝔼_x[𝒞*_ℓ(ℋ_all, x)]`.
    pub bayes: f64,
}

impl ClassErrors {
    pub fn minimizability_gap(&self) -> f64 {
        (self.best_in_class - self.expected_best_conditional).max(0.0)
    }

    pub fn approximation_error(&self) -> f64 {
        (self.best_in_class - self.bayes).max(0.0)
    }
}

pub fn class_errors(
    loss: &PointLoss,
    grid: &HypothesisGrid,
    dist: &FiniteDistribution,
    costs: Option<&[CostMatrix]>,
) -> Result<ClassErrors> {
    let ws = instance_weights(loss, dist, costs)?;
    let a = dist.weights();
    let bayes: f64 = a.iter().zip(&ws).map(|(a, w)| a * loss.infimum(w)).sum();
    Ok(match grid {
        HypothesisGrid::AllMeasurable => ClassErrors { best_in_class: bayes, expected_best_conditional: bayes, bayes },
        HypothesisGrid::Constant => {
            let best = loss.infimum(&mix(dist, &ws));
            ClassErrors { best_in_class: best, expected_best_conditional: bayes, bayes }
        }
        HypothesisGrid::SharedGrid(hs) => {
            if hs.is_empty() {
                return Err(Error::InvalidInput("empty hypothesis grid".into()));
            }
            for h in hs {
                check_scores(loss, h, ws[0].len())?;
            }
            // table[h][x] = 𝒞(h, x)
            let table: Vec<Vec<f64>> = hs.iter().map(|h| ws.iter().map(|w| loss.conditional(h, w)).collect()).collect();
            let best = table
                .iter()
                .map(|row| row.iter().zip(a).map(|(c, a)| a * c).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let pointwise: f64 =
                (0..ws.len()).map(|x| a[x] * table.iter().map(|row| row[x]).fold(f64::INFINITY, f64::min)).sum();
            ClassErrors { best_in_class: best, expected_best_conditional: pointwise, bayes }
        }
    })
}

/// `𝓜_ℓ(ℋ) = ℰ*_ℓ(ℋ) - 𝔼_x[𝒞*_ℓ(ℋ, x)]`.
pub fn minimizability_gap(
    loss: &PointLoss,
    grid: &HypothesisGrid,
    dist: &FiniteDistribution,
    costs: Option<&[CostMatrix]>,
) -> Result<f64> {
    Ok(class_errors(loss, grid, dist, costs)?.minimizability_gap())
}

/// Numeric version of `𝔼_x[𝒞*_ℓ(ℋ_all, x)]`, for cross-checking.
pub fn expected_best_numeric(
    loss: &PointLoss,
    dist: &FiniteDistribution,
    costs: Option<&[CostMatrix]>,
    cfg: &OptimizerConfig,
) -> Result<(f64, bool)> {
    let ws = instance_weights(loss, dist, costs)?;
    let mut total = 0.0;
    let mut converged = true;
    for (a, w) in dist.weights().iter().zip(&ws) {
        let opt = best_conditional_error_surrogate(loss, w, cfg)?;
        total += a * opt.value;
        converged &= opt.converged;
    }
    Ok((total, converged))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationReport {
    pub target_error: f64,
    pub target_best: f64,
    pub target_gap: f64,
    pub surrogate_error: f64,
    pub surrogate_best: f64,
    pub surrogate_gap: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl ExpectationReport {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

fn check_membership(grid: &HypothesisGrid, h: &[Vec<f64>]) -> Result<()> {
    let constant = h.windows(2).all(|w| w[0] == w[1]);
    match grid {
        HypothesisGrid::AllMeasurable => Ok(()),
        HypothesisGrid::Constant if constant => Ok(()),
        HypothesisGrid::SharedGrid(hs) if constant && hs.iter().any(|g| *g == h[0]) => Ok(()),
        _ => Err(Error::InvalidInput("hypothesis is not a member of the class".into())),
    }
}

/// Full statement
/// `ℰ_T(h) - ℰ*_T(ℋ) + 𝓜_T(ℋ) ≤ rhs(ℰ_S(h) - ℰ*_S(ℋ) + 𝓜_S(ℋ))`
/// for a hypothesis `h` given by its score vector at each instance.
pub fn check_bound_expectation(
    theorem: &BoundKind,
    grid: &HypothesisGrid,
    dist: &FiniteDistribution,
    costs: Option<&[CostMatrix]>,
    h: &[Vec<f64>],
) -> Result<ExpectationReport> {
    theorem.validate()?;
    check_membership(grid, h)?;
    let (target, surrogate) = theorem_losses(theorem);
    let t = class_errors(&target, grid, dist, costs)?;
    let s = class_errors(&surrogate, grid, dist, costs)?;
    let target_error = generalization_error(&target, h, dist, costs)?;
    let surrogate_error = generalization_error(&surrogate, h, dist, costs)?;
    let lhs = (target_error - t.best_in_class + t.minimizability_gap()).max(0.0);
    let v = (surrogate_error - s.best_in_class + s.minimizability_gap()).max(0.0);
    let rhs = bounds::rhs(theorem, v)?;
    Ok(ExpectationReport {
        target_error,
        target_best: t.best_in_class,
        target_gap: t.minimizability_gap(),
        surrogate_error,
        surrogate_best: s.best_in_class,
        surrogate_gap: s.minimizability_gap(),
        lhs,
        rhs,
        satisfied: lhs <= rhs + BOUND_SLACK,
    })
}

/// Checks every constant hypothesis in `candidates` against the class
/// `grid`.
pub fn check_bound_expectation_grid(
    theorem: &BoundKind,
    grid: &HypothesisGrid,
    candidates: &[Vec<f64>],
    dist: &FiniteDistribution,
    costs: Option<&[CostMatrix]>,
) -> Result<Vec<ExpectationReport>> {
    candidates
        .iter()
        .map(|c| check_bound_expectation(theorem, grid, dist, costs, &vec![c.clone(); dist.len()]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::types::ProbVector;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn two_instances() -> FiniteDistribution {
        FiniteDistribution::new(vec![(0.5, pv(&[0.9, 0.1])), (0.5, pv(&[0.2, 0.8]))]).unwrap()
    }

    #[test]
    fn generalization_error_examples() {
        let loss = PointLoss::Surrogate(LossKind::CompLog);
        let single = FiniteDistribution::new(vec![(1.0, pv(&[0.3, 0.7]))]).unwrap();
        let s = vec![0.2, -0.4];
        let e = generalization_error(&loss, std::slice::from_ref(&s), &single, None).unwrap();
        assert_eq!(e, loss.conditional(&s, &[0.3, 0.7]));

        let d = two_instances();
        let h = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let e = generalization_error(&loss, &h, &d, None).unwrap();
        let mean = 0.5 * (loss.conditional(&h[0], &[0.9, 0.1]) + loss.conditional(&h[1], &[0.2, 0.8]));
        assert!((e - mean).abs() < 1e-15);
    }

    #[test]
    fn all_measurable_gap_is_zero() {
        let d = two_instances();
        for kind in LossKind::all_default() {
            let g = minimizability_gap(&PointLoss::Surrogate(kind), &HypothesisGrid::AllMeasurable, &d, None).unwrap();
            assert!(g.abs() < 1e-8);
        }
    }

    #[test]
    fn crafted_positive_gap_by_enumeration() {
        // Two instances preferring opposite labels; ℋ = {h_a, h_b}, both
        // constant. Top-1 errors: h_a → (0.1, 0.8), h_b → (0.9, 0.2).
        let d = two_instances();
        let grid = HypothesisGrid::SharedGrid(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let loss = PointLoss::TopK { k: 1 };
        let ce = class_errors(&loss, &grid, &d, None).unwrap();
        // ℰ*(ℋ) = min(0.45, 0.55) = 0.45; 𝔼_x 𝒞* = 0.5·0.1 + 0.5·0.2 = 0.15.
        assert!((ce.best_in_class - 0.45).abs() < 1e-15);
        assert!((ce.expected_best_conditional - 0.15).abs() < 1e-15);
        assert!((ce.minimizability_gap() - 0.30).abs() < 1e-15);
        assert!(ce.minimizability_gap() <= ce.approximation_error() + 1e-15);

        let single = HypothesisGrid::SharedGrid(vec![vec![1.0, 0.0]]);
        let ce = class_errors(&loss, &single, &d, None).unwrap();
        assert!((ce.minimizability_gap() - 0.0).abs() < 1e-15);
    }

    #[test]
    fn crafted_example_satisfies_constant_class_bound() {
        let d = two_instances();
        let theorem = BoundKind::TopK { loss: LossKind::CompLog, k: 1, n: 2 };
        let reports = check_bound_expectation_grid(
            &theorem,
            &HypothesisGrid::Constant,
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &d,
            None,
        )
        .unwrap();
        for r in reports {
            assert!(r.satisfied && r.slack() > 0.0, "{r:?}");
            assert!(r.target_gap > 1e-3 && r.surrogate_gap > 1e-3);
        }
    }

    #[test]
    fn all_measurable_expectation_reduces_to_average() {
        let d = two_instances();
        let theorem = BoundKind::TopK { loss: LossKind::CompExp, k: 1, n: 2 };
        let h = vec![vec![0.3, 0.1], vec![0.5, 0.2]];
        let r = check_bound_expectation(&theorem, &HypothesisGrid::AllMeasurable, &d, None, &h).unwrap();
        assert!(r.satisfied);
        assert_eq!(r.target_gap, 0.0);
        let per: Vec<_> = d
            .cond()
            .iter()
            .zip(&h)
            .map(|(p, s)| check_bound_conditional(&theorem, s, p, None, &Infimum::Analytic).unwrap())
            .collect();
        let avg_lhs = 0.5 * (per[0].lhs + per[1].lhs);
        assert!((r.lhs - avg_lhs).abs() < 1e-14);
    }

    #[test]
    fn membership_is_enforced() {
        let d = two_instances();
        let theorem = BoundKind::TopK { loss: LossKind::CompLog, k: 1, n: 2 };
        let h = vec![vec![0.3, 0.1], vec![0.5, 0.2]];
        assert!(check_bound_expectation(&theorem, &HypothesisGrid::Constant, &d, None, &h).is_err());
        let grid = HypothesisGrid::SharedGrid(vec![vec![1.0, 0.0]]);
        assert!(check_bound_expectation(&theorem, &grid, &d, None, &[vec![0.0, 1.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn zero_regret_point_reports_zero() {
        let theorem = BoundKind::TopK { loss: LossKind::CompLog, k: 1, n: 3 };
        let p = [0.5, 0.25, 0.25];
        let s: Vec<f64> = p.iter().map(|v: &f64| v.ln()).collect();
        let r = check_bound_conditional(&theorem, &s, &p, None, &Infimum::Analytic).unwrap();
        assert!(r.lhs == 0.0 && r.rhs < 1e-6 && r.satisfied);
    }

    #[test]
    fn numeric_and_analytic_reports_agree() {
        let theorem = BoundKind::TopK { loss: LossKind::CompLog, k: 2, n: 4 };
        let p = [0.4, 0.3, 0.2, 0.1];
        let s = [0.0, 1.0, -0.5, 0.3];
        let a = check_bound_conditional(&theorem, &s, &p, None, &Infimum::Analytic).unwrap();
        let b = check_bound_conditional(&theorem, &s, &p, None, &Infimum::Numeric(OptimizerConfig::default())).unwrap();
        assert!(b.optimizer_converged);
        assert!((a.surrogate_regret - b.surrogate_regret).abs() < 1e-8);
        assert_eq!(a.lhs, b.lhs);
    }
}
