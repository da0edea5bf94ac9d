//! Top-k loss and the two surrogate families.
//!
//! Comp-sum kernels are written in terms of the softmax probability of the
//! target, `P_y = exp(s_y - lse(s))`:
//!
//! | family   | value                    | gradient             |
//! |----------|--------------------------|----------------------|
//! | log      | `-ln P_y`                | `P - e_y`            |
//! | exp      | `Σ_{j≠y} e^{s_j - s_y}`  | see [`comp_sum_grad`]|
//! | mae      | `1 - P_y`                | `-P_y (e_y - P)`     |
//! | gce(α)   | `(1 - P_y^α) / α`        | `-P_y^α (e_y - P)`   |
//!
//! Constrained kernels sum `Φ(-s_j)` over the non-target labels and require
//! `Σ s = 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_k, check_label, rank_of};

pub const DEFAULT_ALPHA: f64 = 0.7;
pub const DEFAULT_RHO: f64 = 1.0;

/// Base tolerance for `Σ s = 0`, scaled by `max(1, max|s|)`.
pub const SUM_ZERO_TOL: f64 = 1e-9;

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_rho() -> f64 {
    DEFAULT_RHO
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    CompLog,
    CompExp,
    CompMae,
    CompGce {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    CstndExp,
    CstndSqHinge,
    CstndHinge,
    CstndRho {
        #[serde(default = "default_rho")]
        rho: f64,
    },
}

impl LossKind {
    pub const NAMES: [&'static str; 8] =
        ["comp_log", "comp_exp", "comp_mae", "comp_gce", "cstnd_exp", "cstnd_sq_hinge", "cstnd_hinge", "cstnd_rho"];

    /// All eight families with the given α and ρ.
    pub fn all(alpha: f64, rho: f64) -> [LossKind; 8] {
        [
            LossKind::CompLog,
            LossKind::CompExp,
            LossKind::CompMae,
            LossKind::CompGce { alpha },
            LossKind::CstndExp,
            LossKind::CstndSqHinge,
            LossKind::CstndHinge,
            LossKind::CstndRho { rho },
        ]
    }

    pub fn all_default() -> [LossKind; 8] {
        Self::all(DEFAULT_ALPHA, DEFAULT_RHO)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::CompLog => "comp_log",
            LossKind::CompExp => "comp_exp",
            LossKind::CompMae => "comp_mae",
            LossKind::CompGce { .. } => "comp_gce",
            LossKind::CstndExp => "cstnd_exp",
            LossKind::CstndSqHinge => "cstnd_sq_hinge",
            LossKind::CstndHinge => "cstnd_hinge",
            LossKind::CstndRho { .. } => "cstnd_rho",
        }
    }

    pub fn is_constrained(&self) -> bool {
        matches!(self, LossKind::CstndExp | LossKind::CstndSqHinge | LossKind::CstndHinge | LossKind::CstndRho { .. })
    }

    /// Families whose value is not differentiable everywhere.
    pub fn has_kinks(&self) -> bool {
        matches!(self, LossKind::CstndSqHinge | LossKind::CstndHinge | LossKind::CstndRho { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::CompGce { alpha } if !(alpha > 0.0 && alpha < 1.0) => Err(Error::range("alpha", alpha, "(0, 1)")),
            LossKind::CstndRho { rho } if !(rho > 0.0 && rho.is_finite()) => Err(Error::range("rho", rho, "(0, inf)")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::CompGce { alpha } => write!(f, "comp_gce:{alpha}"),
            LossKind::CstndRho { rho } => write!(f, "cstnd_rho:{rho}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Parses `comp_log`, `comp_gce`, `comp_gce:0.5`, `cstnd_rho:2`, ...
impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((a, b)) => {
                let v: f64 = b.parse().map_err(|_| Error::InvalidInput(format!("bad parameter in '{s}'")))?;
                (a, Some(v))
            }
            None => (s, None),
        };
        let kind = match (name, param) {
            ("comp_log", None) => LossKind::CompLog,
            ("comp_exp", None) => LossKind::CompExp,
            ("comp_mae", None) => LossKind::CompMae,
            ("comp_gce", a) => LossKind::CompGce { alpha: a.unwrap_or(DEFAULT_ALPHA) },
            ("cstnd_exp", None) => LossKind::CstndExp,
            ("cstnd_sq_hinge", None) => LossKind::CstndSqHinge,
            ("cstnd_hinge", None) => LossKind::CstndHinge,
            ("cstnd_rho", r) => LossKind::CstndRho { rho: r.unwrap_or(DEFAULT_RHO) },
            _ => return Err(Error::InvalidInput(format!("unknown loss '{s}'"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

pub fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(s: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(s);
    s.iter().map(|v| (v - lse).exp()).collect()
}

pub fn topk_loss(s: &[f64], y: usize, k: usize) -> Result<f64> {
    check_label(y, s.len())?;
    check_k(k, s.len())?;
    Ok(if rank_of(s, y) < k { 0.0 } else { 1.0 })
}

fn check_comp(kind: LossKind, s: &[f64], y: usize) -> Result<()> {
    if kind.is_constrained() {
        return Err(Error::InvalidInput(format!("{} is not a comp-sum loss", kind.name())));
    }
    kind.validate()?;
    check_label(y, s.len())
}

fn check_cstnd(kind: LossKind, s: &[f64], y: usize) -> Result<()> {
    if !kind.is_constrained() {
        return Err(Error::InvalidInput(format!("{} is not a constrained loss", kind.name())));
    }
    kind.validate()?;
    check_label(y, s.len())?;
    check_sum_zero(s)
}

pub fn check_sum_zero(s: &[f64]) -> Result<()> {
    let total: f64 = s.iter().sum();
    let scale = s.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if total.abs() > SUM_ZERO_TOL * scale {
        return Err(Error::Precondition(format!("scores sum to {total:e}, expected 0")));
    }
    Ok(())
}

pub fn comp_sum_loss(kind: LossKind, s: &[f64], y: usize) -> Result<f64> {
    check_comp(kind, s, y)?;
    Ok(comp_value(kind, s, y))
}

pub fn comp_sum_grad(kind: LossKind, s: &[f64], y: usize) -> Result<Vec<f64>> {
    check_comp(kind, s, y)?;
    let mut g = vec![0.0; s.len()];
    comp_value_grad(kind, s, y, &mut g);
    Ok(g)
}

pub fn constrained_loss(kind: LossKind, s: &[f64], y: usize) -> Result<f64> {
    check_cstnd(kind, s, y)?;
    Ok(cstnd_value(kind, s, y))
}

pub fn constrained_grad(kind: LossKind, s: &[f64], y: usize) -> Result<Vec<f64>> {
    check_cstnd(kind, s, y)?;
    let mut g = vec![0.0; s.len()];
    cstnd_value_grad(kind, s, y, &mut g);
    Ok(g)
}

/// Either family, with the family's own preconditions.
pub fn surrogate_loss(kind: LossKind, s: &[f64], y: usize) -> Result<f64> {
    if kind.is_constrained() {
        constrained_loss(kind, s, y)
    } else {
        comp_sum_loss(kind, s, y)
    }
}

pub fn surrogate_grad(kind: LossKind, s: &[f64], y: usize) -> Result<Vec<f64>> {
    if kind.is_constrained() {
        constrained_grad(kind, s, y)
    } else {
        comp_sum_grad(kind, s, y)
    }
}

/// Unchecked value; callers guarantee `y < s.len()` and, for constrained
/// kinds, that `s` is centered.
pub(crate) fn value(kind: LossKind, s: &[f64], y: usize) -> f64 {
    if kind.is_constrained() {
        cstnd_value(kind, s, y)
    } else {
        comp_value(kind, s, y)
    }
}

/// Unchecked value and gradient; the gradient overwrites `g`.
pub(crate) fn value_grad(kind: LossKind, s: &[f64], y: usize, g: &mut [f64]) -> f64 {
    if kind.is_constrained() {
        cstnd_value_grad(kind, s, y, g)
    } else {
        comp_value_grad(kind, s, y, g)
    }
}

fn comp_value(kind: LossKind, s: &[f64], y: usize) -> f64 {
    match kind {
        LossKind::CompExp => sum_exp_value(s, y),
        _ => {
            let d = s[y] - log_sum_exp(s); // ln P_y <= 0
            match kind {
                LossKind::CompLog => -d,
                LossKind::CompMae => -d.exp_m1(),
                LossKind::CompGce { alpha } => -(alpha * d).exp_m1() / alpha,
                _ => unreachable!(),
            }
        }
    }
}

fn sum_exp_value(s: &[f64], y: usize) -> f64 {
    let m = s.iter().enumerate().filter(|&(j, _)| j != y).fold(f64::NEG_INFINITY, |a, (_, &v)| a.max(v));
    let inner: f64 = s.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, v)| (v - m).exp()).sum();
    (m - s[y]).exp() * inner
}

fn comp_value_grad(kind: LossKind, s: &[f64], y: usize, g: &mut [f64]) -> f64 {
    if let LossKind::CompExp = kind {
        let sy = s[y];
        let mut total = 0.0;
        for (j, (gj, &sj)) in g.iter_mut().zip(s).enumerate() {
            if j != y {
                *gj = (sj - sy).exp();
                total += *gj;
            }
        }
        g[y] = -total;
        return total;
    }
    let lse = log_sum_exp(s);
    for (gj, &sj) in g.iter_mut().zip(s) {
        *gj = (sj - lse).exp();
    }
    let d = s[y] - lse;
    let py = d.exp();
    match kind {
        LossKind::CompLog => {
            g[y] -= 1.0;
            -d
        }
        LossKind::CompMae => {
            // -P_y (e_y - P)
            for gj in g.iter_mut() {
                *gj *= py;
            }
            g[y] -= py;
            -d.exp_m1()
        }
        LossKind::CompGce { alpha } => {
            let pa = (alpha * d).exp();
            for gj in g.iter_mut() {
                *gj *= pa;
            }
            g[y] -= pa;
            -(alpha * d).exp_m1() / alpha
        }
        _ => unreachable!(),
    }
}

/// `Φ(-t)` and its derivative in `t` for one non-target score.
#[inline]
pub(crate) fn phi_neg(kind: LossKind, t: f64) -> (f64, f64) {
    match kind {
        LossKind::CstndExp => {
            let e = t.exp();
            (e, e)
        }
        LossKind::CstndSqHinge => {
            let h = (1.0 + t).max(0.0);
            (h * h, 2.0 * h)
        }
        LossKind::CstndHinge => {
            let h = 1.0 + t;
            if h > 0.0 {
                (h, 1.0)
            } else {
                (0.0, 0.0)
            }
        }
        LossKind::CstndRho { rho } => {
            if t >= 0.0 {
                (1.0, 0.0)
            } else if t <= -rho {
                (0.0, 0.0)
            } else {
                (1.0 + t / rho, 1.0 / rho)
            }
        }
        _ => unreachable!("not a constrained kind"),
    }
}

fn cstnd_value(kind: LossKind, s: &[f64], y: usize) -> f64 {
    s.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, &t)| phi_neg(kind, t).0).sum()
}

fn cstnd_value_grad(kind: LossKind, s: &[f64], y: usize, g: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for (j, (gj, &t)) in g.iter_mut().zip(s).enumerate() {
        if j == y {
            *gj = 0.0;
        } else {
            let (v, d) = phi_neg(kind, t);
            total += v;
            *gj = d;
        }
    }
    total
}

/// Score positions where `Φ(-t)` is not differentiable.
pub fn kinks(kind: LossKind) -> Vec<f64> {
    match kind {
        LossKind::CstndSqHinge | LossKind::CstndHinge => vec![-1.0],
        LossKind::CstndRho { rho } => vec![-rho, 0.0],
        _ => Vec::new(),
    }
}

/// Distance from the non-target scores of `s` to the nearest kink.
pub fn kink_distance(kind: LossKind, s: &[f64], y: usize) -> f64 {
    let ks = kinks(kind);
    s.iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .flat_map(|(_, &t)| ks.iter().map(move |k| (t - k).abs()))
        .fold(f64::INFINITY, f64::min)
}
