//! Finite-difference checks of analytic gradients.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::costsens;
use crate::losses::{self, LossKind};
use crate::rng::SeedSplitter;
use crate::train::{self, Model, ModelKind, Target};

pub const FD_STEP: f64 = 1e-5;
pub const KERNEL_TOL: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;
/// Points closer than this to a kink (or a ReLU hinge) are resampled.
pub const KINK_MARGIN: f64 = 1e-3;
/// Denominator floor so near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckResult {
    pub name: String,
    pub points: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// `‖a - b‖∞ / max(‖a‖∞, ‖b‖∞, REL_FLOOR)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return f64::INFINITY;
    }
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if diff.is_nan() {
        return f64::INFINITY;
    }
    diff / inf(a).max(inf(b)).max(REL_FLOOR)
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error between `grad(x)` and a central difference of `f` at `x`.
pub fn point_rel_err(f: impl Fn(&[f64]) -> f64, grad: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> f64 {
    rel_err(&grad(x), &central_diff(f, x, FD_STEP))
}

/// Runs `point(i)` for `i in 0..points` and keeps the worst error.
pub fn check_points(
    name: impl Into<String>,
    points: usize,
    tol: f64,
    mut point: impl FnMut(usize) -> f64,
) -> GradCheckResult {
    let max_rel_err =
        (0..points).map(&mut point).fold(0.0f64, |m, e| if e.is_nan() { f64::INFINITY } else { m.max(e) });
    GradCheckResult { name: name.into(), points, max_rel_err, tol }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect::<Vec<f64>>()
}

fn center(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn far_from_kinks(kind: LossKind, v: &[f64]) -> bool {
    let ks = losses::kinks(kind);
    v.iter().all(|t| ks.iter().all(|k| (t - k).abs() >= KINK_MARGIN))
}

/// Scores for `kind`: sum-zero when constrained, every coordinate at least
/// `KINK_MARGIN` from a kink.
fn sample_scores<R: Rng + ?Sized>(rng: &mut R, kind: LossKind, n: usize) -> Vec<f64> {
    loop {
        let mut s = gaussian(rng, n, 1.5);
        if kind.is_constrained() {
            center(&mut s);
        }
        if far_from_kinks(kind, &s) {
            return s;
        }
    }
}

/// Standard surrogate gradient at random `(s, y)`, `n ∈ [2, 8]`.
pub fn check_surrogate_kernel(kind: LossKind, points: usize, seed: u64) -> GradCheckResult {
    let mut rng = SeedSplitter::new(seed).stream(&format!("kernel/{}", kind.name()));
    check_points(kind.name(), points, KERNEL_TOL, |_| {
        let n = rng.random_range(2..=8);
        let y = rng.random_range(0..n);
        let s = sample_scores(&mut rng, kind, n);
        let g = losses::surrogate_grad(kind, &s, y).expect("valid sample");
        rel_err(&g, &central_diff(|x| losses::value(kind, x, y), &s, FD_STEP))
    })
}

/// Cost-sensitive surrogate gradient at random `(r, c)`, `|K| ∈ [2, 6]`.
pub fn check_cs_kernel(kind: LossKind, points: usize, seed: u64) -> GradCheckResult {
    let name = format!("cs_{}", kind.name());
    let mut rng = SeedSplitter::new(seed).stream(&format!("kernel/{name}"));
    check_points(name, points, KERNEL_TOL, |_| {
        let m = rng.random_range(2..=6);
        let c: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let r = sample_scores(&mut rng, kind, m);
        let g = costsens::cs_grad_from_costs(kind, &c, &r).expect("valid sample");
        rel_err(&g, &central_diff(|x| costsens::cs_value(kind, &c, x), &r, FD_STEP))
    })
}

/// All sixteen loss kernels (eight standard, eight cost-sensitive).
pub fn kernel_suite(alpha: f64, rho: f64, points: usize, seed: u64) -> Vec<GradCheckResult> {
    let kinds = LossKind::all(alpha, rho);
    let mut out: Vec<GradCheckResult> = kinds.iter().map(|&k| check_surrogate_kernel(k, points, seed)).collect();
    out.extend(kinds.iter().map(|&k| check_cs_kernel(k, points, seed)));
    out
}

/// Gradient of `loss ∘ model` with respect to all parameters, at random
/// parameters and inputs. `cost_sensitive` switches the target to a random
/// cost vector over the model outputs.
pub fn check_model(kind: ModelKind, loss: LossKind, cost_sensitive: bool, points: usize, seed: u64) -> GradCheckResult {
    let name = format!("{kind:?}/{}{}", if cost_sensitive { "cs_" } else { "" }, loss.name()).to_lowercase();
    let split = SeedSplitter::new(seed);
    let mut rng = split.stream(&format!("model/{name}"));
    check_points(name, points, MODEL_TOL, |_| {
        let (d, h, m) = (rng.random_range(1..=5), rng.random_range(2..=6), rng.random_range(2..=5));
        loop {
            let mut model = Model::init(kind, d, h, m, &mut rng).expect("positive dims");
            for p in model.params.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p += 0.1 * z;
            }
            let x = gaussian(&mut rng, d, 1.0);
            if model.min_preactivation(&x) < KINK_MARGIN {
                continue;
            }
            let mut s = model.forward(&x).expect("dims match");
            if loss.is_constrained() {
                center(&mut s);
            }
            if !far_from_kinks(loss, &s) {
                continue;
            }
            let costs: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let y = rng.random_range(0..m);
            let target = if cost_sensitive { Target::Costs(&costs) } else { Target::Label(y) };
            let (_, g) = train::backward(&model, &x, target, loss).expect("valid sample");
            let f = |p: &[f64]| {
                let mut probe = model.clone();
                probe.params.copy_from_slice(p);
                train::example_loss(&probe, &x, target, loss).expect("valid sample")
            };
            return rel_err(&g, &central_diff(f, &model.params, FD_STEP));
        }
    })
}

/// Linear and two-hidden-layer models under every standard and every
/// cost-sensitive loss.
pub fn model_suite(alpha: f64, rho: f64, points: usize, seed: u64) -> Vec<GradCheckResult> {
    let mut out = Vec::new();
    for cs in [false, true] {
        for kind in [ModelKind::Linear, ModelKind::Mlp2] {
            for loss in LossKind::all(alpha, rho) {
                out.push(check_model(kind, loss, cs, points, seed));
            }
        }
    }
    out
}
