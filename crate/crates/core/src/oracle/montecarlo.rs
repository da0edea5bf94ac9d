//! Seeded Monte Carlo campaigns over random conditional instances.
//!
//! Each trial draws its own stream from `(seed, theorem name, trial index)`,
//! so results do not depend on thread count or scheduling, and records
//! come back in trial order.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::expectation::{check_bound_conditional, ClassErrors, ExpectationReport, HypothesisGrid, Infimum};
use super::pointwise::{center, PointLoss, SCORE_BOX};
use crate::bounds::BoundKind;
use crate::costsens::{CostMatrix, CostSpec, Penalty};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::rng::{SeedSplitter, StreamRng};
use crate::types::{CardinalitySet, FiniteDistribution, ProbVector};

/// A bound family, with `k` and `n` left to the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Theorem {
    TopK(LossKind),
    Cardinality(LossKind),
}

impl Theorem {
    pub fn all(alpha: f64, rho: f64) -> Vec<Theorem> {
        let kinds = LossKind::all(alpha, rho);
        kinds.iter().map(|&k| Theorem::TopK(k)).chain(kinds.iter().map(|&k| Theorem::Cardinality(k))).collect()
    }

    pub fn loss(&self) -> LossKind {
        match *self {
            Theorem::TopK(l) | Theorem::Cardinality(l) => l,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Theorem::TopK(l) => l.name().to_string(),
            Theorem::Cardinality(l) => format!("cs_{}", l.name()),
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theorem::TopK(l) => write!(f, "{l}"),
            Theorem::Cardinality(l) => write!(f, "cs_{l}"),
        }
    }
}

/// `comp_log`, `comp_gce:0.5`, `cs_cstnd_rho:2`, ...
impl FromStr for Theorem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("cs_") {
            Some(rest) => Ok(Theorem::Cardinality(rest.parse()?)),
            None => Ok(Theorem::TopK(s.parse()?)),
        }
    }
}

/// Which `n` enters γ for the cost-sensitive GCE and MAE bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardinalityN {
    /// Size of the cardinality set.
    KSize,
    /// Number of classes of the underlying problem.
    Classes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub trials: usize,
    pub seed: u64,
    pub max_n: usize,
    /// Fixed top-k cardinality; `None` draws `k` uniformly from `1..=n`.
    pub k: Option<usize>,
    pub cardinality_n: CardinalityN,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self { trials: 10_000, seed: 0, max_n: 8, k: None, cardinality_n: CardinalityN::KSize }
    }
}

/// One line of the JSONL report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub theorem: String,
    pub trial: u64,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub surrogate_regret: f64,
    pub satisfied: bool,
    pub optimizer_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub theorem: String,
    pub trials: usize,
    pub violations: usize,
    pub min_slack: f64,
    pub max_lhs: f64,
}

impl CampaignSummary {
    pub fn from_records(theorem: &str, records: &[TrialRecord]) -> Self {
        Self {
            theorem: theorem.to_string(),
            trials: records.len(),
            violations: records.iter().filter(|r| !r.satisfied).count(),
            min_slack: records.iter().map(|r| r.rhs - r.lhs).fold(f64::INFINITY, f64::min),
            max_lhs: records.iter().map(|r| r.lhs).fold(0.0, f64::max),
        }
    }
}

pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, n: usize, a: f64) -> Vec<f64> {
    let g = Gamma::new(a, 1.0).expect("positive shape");
    let w: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
    normalize_or_uniform(w)
}

fn normalize_or_uniform(w: Vec<f64>) -> Vec<f64> {
    let n = w.len();
    match ProbVector::from_weights(w) {
        Ok(p) => p.into_inner(),
        Err(_) => vec![1.0 / n as f64; n],
    }
}

/// Conditional distribution from a mixture of regimes: flat, spiky and
/// concentrated Dirichlet draws, draws with an exact zero, and near-ties.
pub fn sample_p<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    match rng.random_range(0..5) {
        0 => dirichlet(rng, n, 1.0),
        1 => dirichlet(rng, n, 0.2),
        2 => dirichlet(rng, n, 5.0),
        3 => {
            let mut w = dirichlet(rng, n, 1.0);
            let z = rng.random_range(0..n);
            w[z] = 0.0;
            normalize_or_uniform(w)
        }
        _ => {
            let eps = [0.0, 1e-9, 1e-4][rng.random_range(0..3)];
            let mut w = dirichlet(rng, n, 1.0);
            let i = rng.random_range(0..n);
            let j = (i + 1 + rng.random_range(0..n - 1)) % n;
            w[j] = w[i] * (1.0 + eps);
            normalize_or_uniform(w)
        }
    }
}

/// Scores for `loss` at weights `w`: Gaussian draws, perturbations of the
/// minimizer, or small integers (ties).
pub fn sample_scores<R: Rng + ?Sized>(rng: &mut R, loss: &PointLoss, w: &[f64]) -> Vec<f64> {
    let m = w.len();
    let mut s: Vec<f64> = match rng.random_range(0..5) {
        0 | 1 => {
            let sigma = [0.1, 1.0, 3.0, 10.0][rng.random_range(0..4)];
            (0..m).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
        }
        2 | 3 => {
            let delta = [1e-3, 1e-2, 0.1][rng.random_range(0..3)];
            loss.near_argmin(w)
                .into_iter()
                .map(|v| (v + delta * rng.sample::<f64, _>(StandardNormal)).clamp(-SCORE_BOX, SCORE_BOX))
                .collect()
        }
        _ => (0..m).map(|_| rng.random_range(-2i32..=2) as f64).collect(),
    };
    if loss.sum_to_zero() {
        center(&mut s);
    }
    s
}

/// Random cost matrix over `n` classes and `|K|` rows: half built from base
/// scores, half arbitrary in `[0, 1]`.
pub fn sample_costs<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CostMatrix {
    let m = rng.random_range(2..=n.min(6));
    let mut ks: Vec<usize> = sample(rng, n, m).into_iter().map(|i| i + 1).collect();
    ks.sort_unstable();
    if rng.random_bool(0.5) {
        let lambda = [0.0, 0.01, 0.05, 0.2, 1.0][rng.random_range(0..5)];
        let penalty = if rng.random_bool(0.5) { Penalty::LogK } else { Penalty::LinearK };
        // Normalized so that costs stay in [0, 1].
        let spec = CostSpec::new(lambda, penalty, CardinalitySet::new(ks).expect("sorted distinct"), true)
            .expect("valid spec");
        let base: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-2i32..=2) as f64 * 0.5 + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        CostMatrix::from_base(&spec, &base).expect("kset within n")
    } else {
        CostMatrix::new(m, n, (0..m * n).map(|_| rng.random::<f64>()).collect()).expect("unit costs")
    }
}

/// One conditional trial; deterministic in `seed`.
pub fn run_trial(theorem: Theorem, cfg: &CampaignConfig, trial: u64, seed: u64) -> Result<TrialRecord> {
    let mut rng = StreamRng::seed_from_u64(seed);
    let lo = cfg.k.unwrap_or(1).max(2);
    if lo > cfg.max_n {
        return Err(Error::range("k", lo, format!("[1, {}]", cfg.max_n)));
    }
    let n = rng.random_range(lo..=cfg.max_n);
    let p = sample_p(&mut rng, n);
    let (bound, costs, k) = match theorem {
        Theorem::TopK(loss) => {
            let k = cfg.k.unwrap_or_else(|| rng.random_range(1..=n));
            (BoundKind::TopK { loss, k, n }, None, k)
        }
        Theorem::Cardinality(loss) => {
            let c = sample_costs(&mut rng, n);
            let gamma_n = match cfg.cardinality_n {
                CardinalityN::KSize => c.rows(),
                CardinalityN::Classes => n,
            };
            (BoundKind::Cardinality { loss, n: gamma_n }, Some(c), 0)
        }
    };
    let surrogate = super::expectation::theorem_losses(&bound).1;
    let w = surrogate.weights(&p, costs.as_ref())?;
    let s = sample_scores(&mut rng, &surrogate, &w);
    let rep = check_bound_conditional(&bound, &s, &p, costs.as_ref(), &Infimum::Analytic)?;
    Ok(TrialRecord {
        theorem: theorem.name(),
        trial,
        seed,
        n,
        k,
        lhs: rep.lhs,
        rhs: rep.rhs,
        surrogate_regret: rep.surrogate_regret,
        satisfied: rep.satisfied,
        optimizer_converged: rep.optimizer_converged,
    })
}

/// Conditional-regret campaign for one theorem, parallel over trials.
pub fn run_campaign(theorem: Theorem, cfg: &CampaignConfig) -> Result<Vec<TrialRecord>> {
    if cfg.trials == 0 {
        return Err(Error::InvalidInput("trials must be >= 1".into()));
    }
    let split = SeedSplitter::new(cfg.seed);
    let name = theorem.name();
    (0..cfg.trials as u64).into_par_iter().map(|t| run_trial(theorem, cfg, t, split.derive_indexed(&name, t))).collect()
}

/// Random expectation-level configuration: a distribution over a few
/// instances, per-instance costs (cardinality theorems) and a shared grid
/// of constant hypotheses.
#[derive(Debug, Clone)]
pub struct GridConfig {
    pub dist: FiniteDistribution,
    pub costs: Option<Vec<CostMatrix>>,
    pub grid: Vec<Vec<f64>>,
    pub bound: BoundKind,
}

pub fn sample_grid_config<R: Rng + ?Sized>(
    rng: &mut R,
    theorem: Theorem,
    max_instances: usize,
    max_n: usize,
    max_grid: usize,
) -> GridConfig {
    let n = rng.random_range(2..=max_n);
    let m_inst = rng.random_range(2..=max_instances);
    let weights = dirichlet(rng, m_inst, 1.0);
    let instances: Vec<(f64, ProbVector)> =
        weights.iter().map(|&a| (a, ProbVector::new(sample_p(rng, n)).expect("sampled simplex"))).collect();
    let dist = FiniteDistribution::new(instances).expect("valid distribution");
    let (bound, costs) = match theorem {
        Theorem::TopK(loss) => (BoundKind::TopK { loss, k: rng.random_range(1..=n), n }, None),
        Theorem::Cardinality(loss) => {
            // One cardinality set for all instances, costs from per-instance base scores.
            let m = rng.random_range(2..=n.min(6));
            let mut ks: Vec<usize> = sample(rng, n, m).into_iter().map(|i| i + 1).collect();
            ks.sort_unstable();
            let lambda = [0.0, 0.05, 0.2, 1.0][rng.random_range(0..4)];
            let spec =
                CostSpec::new(lambda, Penalty::LogK, CardinalitySet::new(ks).expect("sorted"), true).expect("spec");
            let costs: Vec<CostMatrix> = (0..m_inst)
                .map(|_| {
                    let base: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    CostMatrix::from_base(&spec, &base).expect("kset within n")
                })
                .collect();
            (BoundKind::Cardinality { loss, n: m }, Some(costs))
        }
    };
    let surrogate = super::expectation::theorem_losses(&bound).1;
    let g = rng.random_range(1..=max_grid);
    let grid = (0..g)
        .map(|_| {
            let i = rng.random_range(0..m_inst);
            let w = surrogate.weights(&dist.cond()[i], costs.as_ref().map(|c| &c[i])).expect("weights");
            sample_scores(rng, &surrogate, &w)
        })
        .collect();
    GridConfig { dist, costs, grid, bound }
}

/// Outcome of one expectation-level configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub reports: Vec<ExpectationReport>,
    pub target_gap: f64,
    pub surrogate_gap: f64,
}

/// Checks every grid hypothesis against the constant class, and reports the
/// class's minimizability gaps.
pub fn run_grid_config(cfg: &GridConfig) -> Result<GridOutcome> {
    let class = HypothesisGrid::Constant;
    let reports = super::expectation::check_bound_expectation_grid(
        &cfg.bound,
        &class,
        &cfg.grid,
        &cfg.dist,
        cfg.costs.as_deref(),
    )?;
    let (t, s) = super::expectation::theorem_losses(&cfg.bound);
    let gap = |l: &PointLoss| -> Result<ClassErrors> {
        super::expectation::class_errors(l, &class, &cfg.dist, cfg.costs.as_deref())
    };
    Ok(GridOutcome { reports, target_gap: gap(&t)?.minimizability_gap(), surrogate_gap: gap(&s)?.minimizability_gap() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::bound_rhs;
    use crate::oracle::pointwise::conditional_regret;

    fn small(seed: u64) -> CampaignConfig {
        CampaignConfig { trials: 300, seed, ..Default::default() }
    }

    #[test]
    fn theorem_names_roundtrip() {
        for t in Theorem::all(0.7, 1.0) {
            assert_eq!(t.to_string().parse::<Theorem>().unwrap(), t);
        }
        assert_eq!(
            "cs_comp_gce:0.5".parse::<Theorem>().unwrap(),
            Theorem::Cardinality(LossKind::CompGce { alpha: 0.5 })
        );
        assert!("cs_nope".parse::<Theorem>().is_err());
    }

    #[test]
    fn campaign_is_deterministic_and_ordered() {
        let a = run_campaign(Theorem::TopK(LossKind::CompLog), &small(3)).unwrap();
        let b = run_campaign(Theorem::TopK(LossKind::CompLog), &small(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, r)| r.trial == i as u64));
        let c = run_campaign(Theorem::TopK(LossKind::CompLog), &small(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn holding_bounds_hold_on_small_campaigns() {
        let mut theorems: Vec<Theorem> =
            [LossKind::CompLog, LossKind::CompExp, LossKind::CstndExp].into_iter().map(Theorem::TopK).collect();
        theorems.extend(LossKind::all_default().into_iter().map(Theorem::Cardinality));
        for t in theorems {
            let recs = run_campaign(t, &small(1)).unwrap();
            let s = CampaignSummary::from_records(&t.name(), &recs);
            assert_eq!(s.violations, 0, "{s:?}");
        }
    }

    // p = (e, 1-e, 0): the sq-hinge minimizer separates labels 0 and 2 by
    // O(e^2), so swapping them costs O(e^4) surrogate regret and e top-2 regret.
    #[test]
    fn sq_hinge_top2_bound_fails_near_a_tie() {
        let e = 0.02;
        let q = [1.0 - e, e, 1.0];
        let lam = 3.0 / q.iter().map(|v| 1.0 / v).sum::<f64>();
        let mut s: Vec<f64> = q.iter().map(|v| lam / v - 1.0).collect();
        s.swap(0, 2);
        let p = [e, 1.0 - e, 0.0];
        let sur = conditional_regret(&PointLoss::Surrogate(LossKind::CstndSqHinge), &s, &p).unwrap();
        let top2 = conditional_regret(&PointLoss::TopK { k: 2 }, &s, &p).unwrap();
        let rhs = bound_rhs(&BoundKind::TopK { loss: LossKind::CstndSqHinge, k: 2, n: 3 }, sur).unwrap();
        assert!((top2 - e).abs() < 1e-15);
        assert!((sur - 18.0 * e.powi(4)).abs() < 0.2 * 18.0 * e.powi(4), "{sur}");
        assert!(rhs < 0.5 * top2, "{rhs} vs {top2}");
    }

    #[test]
    fn every_top1_bound_holds() {
        for loss in LossKind::all_default() {
            let cfg = CampaignConfig { k: Some(1), ..small(2) };
            let recs = run_campaign(Theorem::TopK(loss), &cfg).unwrap();
            let s = CampaignSummary::from_records(loss.name(), &recs);
            assert_eq!(s.violations, 0, "{s:?}");
        }
    }

    #[test]
    fn sampled_scores_respect_constraint() {
        let mut rng = StreamRng::seed_from_u64(9);
        for _ in 0..200 {
            let p = sample_p(&mut rng, 5);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let loss = PointLoss::Surrogate(LossKind::CstndHinge);
            let s = sample_scores(&mut rng, &loss, &p);
            assert!(crate::losses::check_sum_zero(&s).is_ok());
            let c = sample_costs(&mut rng, 5);
            assert!((0..c.rows()).all(|i| (0..5).all(|y| (0.0..=1.0).contains(&c.get(i, y)))));
        }
    }

    #[test]
    fn grid_configs_have_positive_gaps() {
        let mut rng = StreamRng::seed_from_u64(5);
        let mut seen = false;
        for _ in 0..20 {
            let cfg = sample_grid_config(&mut rng, Theorem::TopK(LossKind::CompLog), 6, 5, 64);
            let out = run_grid_config(&cfg).unwrap();
            assert!(out.reports.iter().all(|r| r.satisfied));
            seen |= out.target_gap > 1e-3 && out.surrogate_gap > 1e-3;
        }
        assert!(seen);
    }
}
