//! Regret transforms.
//!
//! Top-k bounds have the form `Δ_target ≤ k ψ⁻¹(Δ_surrogate)`; the
//! cardinality-aware bounds have the form `Δ_target ≤ γ(Δ_surrogate)`.
//!
//! | surrogate        | top-k right-hand side | cardinality γ(v) |
//! |------------------|-----------------------|------------------|
//! | comp_log         | k ψ⁻¹(v)              | 2√v              |
//! | comp_exp         | k ψ⁻¹(v)              | 2√v              |
//! | comp_mae         | k n v                 | n v              |
//! | comp_gce(α)      | k ψ⁻¹(v)              | 2√(n^α v)        |
//! | cstnd_exp        | 2k √v                 | 2√v              |
//! | cstnd_sq_hinge   | 2k √v                 | 2√v              |
//! | cstnd_hinge      | k v                   | v                |
//! | cstnd_rho        | k v                   | v                |
//!
//! For the families without a named ψ, [`psi`] returns the function whose
//! inverse reproduces the table (`t/n`, `t²/4`, `t`), so every bound can be
//! read as `k ψ⁻¹(v)` or `γ = ψ⁻¹`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum BoundKind {
    /// Standard surrogate against the top-k loss over `n` classes.
    TopK { loss: LossKind, k: usize, n: usize },
    /// Cost-sensitive surrogate against the cardinality-aware target;
    /// `n` is the size of the selector's label space.
    Cardinality { loss: LossKind, n: usize },
}

impl BoundKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BoundKind::TopK { loss, k, n } => {
                loss.validate()?;
                if n < 2 {
                    return Err(Error::range("n", n, "[2, inf)"));
                }
                crate::types::check_k(k, n)
            }
            BoundKind::Cardinality { loss, n } => {
                loss.validate()?;
                if n == 0 {
                    return Err(Error::range("n", n, "[1, inf)"));
                }
                Ok(())
            }
        }
    }

    pub fn loss(&self) -> LossKind {
        match *self {
            BoundKind::TopK { loss, .. } | BoundKind::Cardinality { loss, .. } => loss,
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            BoundKind::TopK { n, .. } | BoundKind::Cardinality { n, .. } => n,
        }
    }

    /// `comp_log`, ..., for top-k bounds and `cs_comp_log`, ... for
    /// cardinality bounds.
    pub fn name(&self) -> String {
        match self {
            BoundKind::TopK { loss, .. } => loss.name().to_string(),
            BoundKind::Cardinality { loss, .. } => format!("cs_{}", loss.name()),
        }
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} is")));
    }
    Ok(())
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn psi_unchecked(kind: &BoundKind, t: f64) -> f64 {
    let n = kind.n() as f64;
    match (kind, kind.loss()) {
        (BoundKind::TopK { .. }, LossKind::CompLog) => 0.5 * (xlogx(1.0 - t) + xlogx(1.0 + t)),
        (BoundKind::TopK { .. }, LossKind::CompExp) => 1.0 - (1.0 - t * t).sqrt(),
        (BoundKind::TopK { .. }, LossKind::CompMae) => t / n,
        (BoundKind::TopK { .. }, LossKind::CompGce { alpha }) => {
            let b = 1.0 / (1.0 - alpha);
            let mean = 0.5 * ((1.0 + t).powf(b) + (1.0 - t).powf(b));
            (mean.powf(1.0 - alpha) - 1.0) / (alpha * n.powf(alpha))
        }
        (BoundKind::TopK { .. }, LossKind::CstndExp | LossKind::CstndSqHinge) => t * t / 4.0,
        (BoundKind::TopK { .. }, _) => t,
        // Cardinality bounds: ψ = γ⁻¹ restricted to [0, 1].
        (BoundKind::Cardinality { .. }, LossKind::CompMae) => t / n,
        (BoundKind::Cardinality { .. }, LossKind::CompGce { alpha }) => t * t / (4.0 * n.powf(alpha)),
        (BoundKind::Cardinality { .. }, LossKind::CstndHinge | LossKind::CstndRho { .. }) => t,
        (BoundKind::Cardinality { .. }, _) => t * t / 4.0,
    }
}

pub fn psi(kind: &BoundKind, t: f64) -> Result<f64> {
    kind.validate()?;
    check_t(t)?;
    Ok(psi_unchecked(kind, t))
}

/// Root of `ψ(t) = v` on `[0, 1]` by bisection to full double resolution;
/// `v ≥ ψ(1)` maps to 1.
pub fn psi_inv(kind: &BoundKind, v: f64) -> Result<f64> {
    kind.validate()?;
    if v.is_nan() || v < 0.0 {
        return Err(Error::Domain(format!("v = {v} is")));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    if v >= psi_unchecked(kind, 1.0) {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if psi_unchecked(kind, mid) < v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Closed-form inverse of the sum-exponential ψ, `√(2v − v²)`.
pub fn sum_exp_psi_inv_closed(v: f64) -> f64 {
    if v >= 1.0 {
        1.0
    } else {
        (2.0 * v - v * v).max(0.0).sqrt()
    }
}

/// Right-hand side of a top-k bound at surrogate regret `v`.
pub fn bound_rhs(kind: &BoundKind, v: f64) -> Result<f64> {
    let BoundKind::TopK { loss, k, n } = *kind else {
        return Err(Error::InvalidInput("bound_rhs expects a top-k bound".into()));
    };
    kind.validate()?;
    if v.is_nan() || v < 0.0 {
        return Err(Error::Domain(format!("surrogate regret {v} is")));
    }
    let k = k as f64;
    Ok(match loss {
        LossKind::CompLog | LossKind::CompExp | LossKind::CompGce { .. } => k * psi_inv(kind, v)?,
        LossKind::CompMae => k * n as f64 * v,
        LossKind::CstndExp | LossKind::CstndSqHinge => 2.0 * k * v.sqrt(),
        LossKind::CstndHinge | LossKind::CstndRho { .. } => k * v,
    })
}

/// `γ(v)` of a cardinality-aware bound.
pub fn cs_bound_rhs(kind: &BoundKind, v: f64) -> Result<f64> {
    let BoundKind::Cardinality { loss, n } = *kind else {
        return Err(Error::InvalidInput("cs_bound_rhs expects a cardinality bound".into()));
    };
    kind.validate()?;
    if v.is_nan() || v < 0.0 {
        return Err(Error::Domain(format!("surrogate regret {v} is")));
    }
    let n = n as f64;
    Ok(match loss {
        LossKind::CompLog | LossKind::CompExp | LossKind::CstndExp | LossKind::CstndSqHinge => 2.0 * v.sqrt(),
        LossKind::CompGce { alpha } => 2.0 * (n.powf(alpha) * v).sqrt(),
        LossKind::CompMae => n * v,
        LossKind::CstndHinge | LossKind::CstndRho { .. } => v,
    })
}

/// Dispatches to [`bound_rhs`] or [`cs_bound_rhs`].
pub fn rhs(kind: &BoundKind, v: f64) -> Result<f64> {
    match kind {
        BoundKind::TopK { .. } => bound_rhs(kind, v),
        BoundKind::Cardinality { .. } => cs_bound_rhs(kind, v),
    }
}
