//! Conditional errors and their infima at a single instance.
//!
//! Every loss handled here has a conditional error that is linear in a
//! nonnegative weight vector `w` indexed like the score vector:
//!
//! | loss                         | `w`                          | `𝒞(s, w)`                     |
//! |------------------------------|------------------------------|-------------------------------|
//! | top-k                        | `p`                          | `Σ_y w_y 1[y ∉ top_k(s)]`     |
//! | standard surrogate           | `p`                          | `Σ_y w_y ℓ(s, y)`             |
//! | cardinality target           | `q̃_k = Σ_y p_y c(k, y)`      | `w[argmax r]`                 |
//! | cost-sensitive comp-sum      | `q̄_k = Σ_y p_y (1 - c(k, y))`| `Σ_k w_k ℓ^comp(r, k)`        |
//! | cost-sensitive constrained   | `q̃`                          | `Σ_k w_k Φ(-r_k)`             |
//!
//! Linearity means mixtures of instances are handled by mixing weights.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::costsens::CostMatrix;
use crate::error::{Error, Result};
use crate::losses::{self, check_sum_zero, LossKind};
use crate::rng::StreamRng;
use crate::types::{argmax, check_k, rank_of, sorted_labels_desc};

/// Box used for numeric infima and for sampled near-optimal scores.
pub const SCORE_BOX: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PointLoss {
    TopK { k: usize },
    Surrogate(LossKind),
    CardinalityTarget,
    CostSensitive(LossKind),
}

impl PointLoss {
    pub fn sum_to_zero(&self) -> bool {
        matches!(self, PointLoss::Surrogate(k) | PointLoss::CostSensitive(k) if k.is_constrained())
    }

    pub fn needs_costs(&self) -> bool {
        matches!(self, PointLoss::CardinalityTarget | PointLoss::CostSensitive(_))
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            PointLoss::TopK { k } => check_k(*k, dim),
            PointLoss::Surrogate(kind) | PointLoss::CostSensitive(kind) => kind.validate(),
            PointLoss::CardinalityTarget => Ok(()),
        }
    }

    /// Weight vector of this loss at an instance with label distribution `p`.
    pub fn weights(&self, p: &[f64], costs: Option<&CostMatrix>) -> Result<Vec<f64>> {
        if !self.needs_costs() {
            return Ok(p.to_vec());
        }
        let c = costs.ok_or_else(|| Error::InvalidInput("cost-sensitive loss needs a cost matrix".into()))?;
        if c.n() != p.len() {
            return Err(Error::Dimension { expected: c.n(), got: p.len() });
        }
        let q_tilde = c.expected(p);
        Ok(match self {
            PointLoss::CostSensitive(kind) if !kind.is_constrained() => {
                // Σ_y p_y (1 - c) = 1 - q̃ as long as p sums to one.
                let total: f64 = p.iter().sum();
                q_tilde.iter().map(|q| (total - q).max(0.0)).collect()
            }
            _ => q_tilde,
        })
    }

    /// `𝒞(s, w)`; callers have validated lengths and, for constrained
    /// kinds, the sum-zero condition.
    pub fn conditional(&self, s: &[f64], w: &[f64]) -> f64 {
        match *self {
            PointLoss::TopK { k } => (0..s.len()).filter(|&y| rank_of(s, y) >= k).map(|y| w[y]).sum(),
            PointLoss::CardinalityTarget => w[argmax(s)],
            PointLoss::Surrogate(kind) if kind.is_constrained() => {
                let total: f64 = w.iter().sum();
                s.iter().zip(w).map(|(&t, wj)| (total - wj) * losses::phi_neg(kind, t).0).sum()
            }
            PointLoss::CostSensitive(kind) if kind.is_constrained() => {
                s.iter().zip(w).map(|(&t, wj)| wj * losses::phi_neg(kind, t).0).sum()
            }
            PointLoss::Surrogate(kind) | PointLoss::CostSensitive(kind) => {
                w.iter().enumerate().filter(|(_, wy)| **wy != 0.0).map(|(y, wy)| wy * losses::value(kind, s, y)).sum()
            }
        }
    }

    /// Closed-form `inf_s 𝒞(s, w)` over all score vectors (centered ones
    /// for constrained kinds).
    pub fn infimum(&self, w: &[f64]) -> f64 {
        let total: f64 = w.iter().sum();
        match *self {
            PointLoss::TopK { k } => {
                let order = sorted_labels_desc(w);
                total - order.iter().take(k).map(|&i| w[i]).sum::<f64>()
            }
            PointLoss::CardinalityTarget => w.iter().copied().fold(f64::INFINITY, f64::min),
            PointLoss::Surrogate(kind) if kind.is_constrained() => {
                let q: Vec<f64> = w.iter().map(|wj| total - wj).collect();
                constrained_infimum(kind, &q)
            }
            PointLoss::CostSensitive(kind) if kind.is_constrained() => constrained_infimum(kind, w),
            PointLoss::Surrogate(kind) | PointLoss::CostSensitive(kind) => comp_infimum(kind, w, total),
        }
    }

    /// A score vector inside `[-SCORE_BOX, SCORE_BOX]` at or near the
    /// infimum (exact up to the box for every loss).
    pub fn near_argmin(&self, w: &[f64]) -> Vec<f64> {
        let m = w.len();
        let b = SCORE_BOX;
        let logs = |scale: f64| -> Vec<f64> {
            let raw: Vec<f64> = w.iter().map(|&v| if v > 0.0 { scale * v.ln() } else { f64::NEG_INFINITY }).collect();
            let top = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !top.is_finite() {
                return vec![0.0; m];
            }
            raw.iter().map(|v| (v - top).max(-2.0 * b) + b).collect()
        };
        match *self {
            PointLoss::TopK { .. } => w.to_vec(),
            PointLoss::CardinalityTarget => {
                let mut r = vec![0.0; m];
                r[argmax(&w.iter().map(|v| -v).collect::<Vec<_>>())] = 1.0;
                r
            }
            PointLoss::Surrogate(kind) | PointLoss::CostSensitive(kind) if kind.is_constrained() => {
                let q: Vec<f64> = if let PointLoss::Surrogate(_) = self {
                    let total: f64 = w.iter().sum();
                    w.iter().map(|wj| total - wj).collect()
                } else {
                    w.to_vec()
                };
                constrained_argmin(kind, &q)
            }
            PointLoss::Surrogate(kind) | PointLoss::CostSensitive(kind) => match kind {
                LossKind::CompLog => logs(1.0),
                LossKind::CompExp => logs(0.5),
                LossKind::CompGce { alpha } => logs(1.0 / (1.0 - alpha)),
                LossKind::CompMae => {
                    let mut s = vec![-b; m];
                    s[argmax(w)] = b;
                    s
                }
                _ => unreachable!(),
            },
        }
    }
}

fn comp_infimum(kind: LossKind, w: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    match kind {
        LossKind::CompLog => -w.iter().filter(|&&v| v > 0.0).map(|&v| v * (v / total).ln()).sum::<f64>(),
        LossKind::CompExp => {
            let r: f64 = w.iter().map(|v| v.sqrt()).sum();
            (r * r - total).max(0.0)
        }
        LossKind::CompMae => total - w.iter().copied().fold(0.0, f64::max),
        LossKind::CompGce { alpha } => {
            let b = 1.0 / (1.0 - alpha);
            let norm = w.iter().map(|v| v.powf(b)).sum::<f64>().powf(1.0 - alpha);
            ((total - norm) / alpha).max(0.0)
        }
        _ => unreachable!(),
    }
}

/// `inf Σ_j q_j Φ(-s_j)` subject to `Σ s = 0`.
fn constrained_infimum(kind: LossKind, q: &[f64]) -> f64 {
    let m = q.len() as f64;
    let min_q = q.iter().copied().fold(f64::INFINITY, f64::min);
    match kind {
        LossKind::CstndExp => {
            if min_q <= 0.0 {
                0.0
            } else {
                m * (q.iter().map(|v| v.ln()).sum::<f64>() / m).exp()
            }
        }
        LossKind::CstndSqHinge => {
            if min_q <= 0.0 {
                0.0
            } else {
                m * m / q.iter().map(|v| 1.0 / v).sum::<f64>()
            }
        }
        LossKind::CstndHinge => m * min_q,
        LossKind::CstndRho { .. } => min_q,
        _ => unreachable!(),
    }
}

fn constrained_argmin(kind: LossKind, q: &[f64]) -> Vec<f64> {
    let m = q.len();
    let b = SCORE_BOX;
    let j = argmax(&q.iter().map(|v| -v).collect::<Vec<_>>());
    let mut s = match kind {
        LossKind::CstndExp => q.iter().map(|&v| if v > 0.0 { -v.ln() } else { b }).collect(),
        LossKind::CstndSqHinge => {
            if q.iter().any(|&v| v <= 0.0) {
                q.iter().map(|&v| if v > 0.0 { -1.0 } else { b }).collect()
            } else {
                let mu = m as f64 / q.iter().map(|v| 1.0 / v).sum::<f64>();
                q.iter().map(|v| mu / v - 1.0).collect::<Vec<f64>>()
            }
        }
        LossKind::CstndHinge => {
            let mut s = vec![-1.0; m];
            s[j] = (m - 1) as f64;
            s
        }
        LossKind::CstndRho { rho } => {
            let mut s = vec![-rho; m];
            s[j] = (m - 1) as f64 * rho;
            s
        }
        _ => unreachable!(),
    };
    for v in s.iter_mut() {
        *v = v.clamp(-b, b);
    }
    center(&mut s);
    s
}

pub(crate) fn center(s: &mut [f64]) {
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    s.iter_mut().for_each(|v| *v -= mean);
}

fn check_inputs(loss: &PointLoss, s: &[f64], w: &[f64]) -> Result<()> {
    if s.len() != w.len() {
        return Err(Error::Dimension { expected: w.len(), got: s.len() });
    }
    loss.validate(s.len())?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score".into()));
    }
    if loss.sum_to_zero() {
        check_sum_zero(s)?;
    }
    Ok(())
}

/// `𝒞_ℓ(s, x) = Σ_y p(y) ℓ(s, y)`, with `w` as in the module table.
pub fn conditional_error(loss: &PointLoss, s: &[f64], w: &[f64]) -> Result<f64> {
    check_inputs(loss, s, w)?;
    Ok(loss.conditional(s, w))
}

/// `1 - Σ_{i ≤ k} p_(i)`.
pub fn best_conditional_error_topk(p: &[f64], k: usize) -> Result<f64> {
    check_k(k, p.len())?;
    Ok(PointLoss::TopK { k }.infimum(p))
}

/// Minimum of the top-k conditional error over every ordered k-tuple of
/// distinct labels.
pub fn enumerate_best_topk(p: &[f64], k: usize) -> Result<f64> {
    check_k(k, p.len())?;
    let n = p.len();
    let mut best = f64::INFINITY;
    let mut tuple = Vec::with_capacity(k);
    let mut used = vec![false; n];
    fn rec(p: &[f64], k: usize, tuple: &mut Vec<usize>, used: &mut [bool], best: &mut f64) {
        if tuple.len() == k {
            let covered: f64 = tuple.iter().map(|&i| p[i]).sum();
            let err: f64 = (0..p.len()).filter(|i| !tuple.contains(i)).map(|i| p[i]).sum();
            debug_assert!((covered + err - p.iter().sum::<f64>()).abs() < 1e-12);
            *best = best.min(err);
            return;
        }
        for i in 0..p.len() {
            if !used[i] {
                used[i] = true;
                tuple.push(i);
                rec(p, k, tuple, used, best);
                tuple.pop();
                used[i] = false;
            }
        }
    }
    rec(p, k, &mut tuple, &mut used, &mut best);
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Random starts, counting the zero start; one start favouring each
    /// coordinate is always added.
    pub starts: usize,
    pub max_sweeps: usize,
    /// A sweep improving less than this halves the step.
    pub tol: f64,
    /// Converged once the step falls below this.
    pub min_step: f64,
    pub bound: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { starts: 16, max_sweeps: 500, tol: 1e-11, min_step: 1e-10, bound: SCORE_BOX, seed: 0x0dd_ba11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericOptimum {
    pub value: f64,
    pub argmin: Vec<f64>,
    pub converged: bool,
}

/// Multi-start pattern search (coordinate moves, pairwise moves on the
/// sum-zero plane, plus random directions) with step halving.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, dim: usize, sum_to_zero: bool, cfg: &OptimizerConfig) -> NumericOptimum {
    let mut rng = StreamRng::seed_from_u64(cfg.seed);
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    if sum_to_zero {
        for i in 0..dim {
            for j in i + 1..dim {
                let mut d = vec![0.0; dim];
                d[i] = 1.0;
                d[j] = -1.0;
                dirs.push(d);
            }
        }
    } else {
        for i in 0..dim {
            let mut d = vec![0.0; dim];
            d[i] = 1.0;
            dirs.push(d);
        }
    }
    let n_fixed = dirs.len();

    let mut best = NumericOptimum { value: f64::INFINITY, argmin: vec![0.0; dim], converged: false };
    let mut all_converged = true;
    let mut trial = vec![0.0; dim];
    // Zero, then one start favouring each coordinate, then random starts.
    // Piecewise-linear losses have flat local minima, one per favoured label.
    for start in 0..cfg.starts.max(1) + dim {
        let mut x: Vec<f64> = if start == 0 {
            vec![0.0; dim]
        } else if start <= dim {
            let mut v = vec![0.0; dim];
            v[start - 1] = 2.0 * dim as f64;
            v
        } else {
            (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()
        };
        if sum_to_zero {
            center(&mut x);
        }
        let mut fx = f(&x);
        let mut step = 1.0;
        let mut converged = false;
        for _ in 0..cfg.max_sweeps {
            dirs.truncate(n_fixed);
            for _ in 0..dim {
                let mut d: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                if sum_to_zero {
                    center(&mut d);
                }
                let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    d.iter_mut().for_each(|v| *v /= norm);
                    dirs.push(d);
                }
            }
            let before = fx;
            for d in &dirs {
                for sign in [1.0, -1.0] {
                    let mut moves = 0;
                    loop {
                        let mut inside = true;
                        for ((t, xi), di) in trial.iter_mut().zip(&x).zip(d) {
                            *t = xi + sign * step * di;
                            if t.abs() > cfg.bound {
                                if sum_to_zero {
                                    inside = false;
                                }
                                *t = t.clamp(-cfg.bound, cfg.bound);
                            }
                        }
                        if !inside {
                            break;
                        }
                        let ft = f(&trial);
                        if ft < fx {
                            fx = ft;
                            x.copy_from_slice(&trial);
                            moves += 1;
                            if moves >= 64 {
                                break;
                            }
                        } else {
                            break;
                        }
                    }
                }
            }
            if before - fx < cfg.tol {
                step *= 0.5;
                if step < cfg.min_step {
                    converged = true;
                    break;
                }
            }
        }
        all_converged &= converged;
        if fx < best.value {
            best.value = fx;
            best.argmin = x;
        }
    }
    best.converged = all_converged;
    best
}

/// Numeric `inf_s 𝒞(s, w)`; the closed form ([`PointLoss::infimum`]) is
/// the primary path and this is its independent check.
pub fn best_conditional_error_surrogate(loss: &PointLoss, w: &[f64], cfg: &OptimizerConfig) -> Result<NumericOptimum> {
    loss.validate(w.len())?;
    let total: f64 = w.iter().sum();
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !total.is_finite() {
        return Err(Error::InvalidInput("weights must be finite and >= 0".into()));
    }
    Ok(minimize(|s| loss.conditional(s, w), w.len(), loss.sum_to_zero(), cfg))
}

/// `𝒞(s, w) - inf 𝒞(·, w)`, clipped at 0.
pub fn conditional_regret(loss: &PointLoss, s: &[f64], w: &[f64]) -> Result<f64> {
    check_inputs(loss, s, w)?;
    Ok((loss.conditional(s, w) - loss.infimum(w)).max(0.0))
}

/// `Σ_{i ≤ k} [p(p_i) - p(h_i)]` with `p_i`, `h_i` the i-th labels ranked by
/// `p` and by `s`.
pub fn topk_regret_by_ranks(s: &[f64], p: &[f64], k: usize) -> Result<f64> {
    check_k(k, p.len())?;
    if s.len() != p.len() {
        return Err(Error::Dimension { expected: p.len(), got: s.len() });
    }
    let by_p = sorted_labels_desc(p);
    let by_s = sorted_labels_desc(s);
    Ok((0..k).map(|i| p[by_p[i]] - p[by_s[i]]).sum::<f64>().max(0.0))
}

/// Target regret of the cardinality-aware loss, `q̃(r̂) - min_k q̃_k`,
/// computed by enumerating every cardinality.
pub fn cardinality_regret_by_enumeration(r: &[f64], p: &[f64], costs: &CostMatrix) -> f64 {
    let expected: Vec<f64> = (0..costs.rows()).map(|k| (0..p.len()).map(|y| p[y] * costs.get(k, y)).sum()).collect();
    let chosen = expected[argmax(r)];
    let best = expected.iter().copied().fold(f64::INFINITY, f64::min);
    (chosen - best).max(0.0)
}
