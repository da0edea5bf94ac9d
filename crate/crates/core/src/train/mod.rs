//! Models, optimizer and training loops.
//!
//! Mini-batch gradients are summed over fixed-size chunks in parallel and
//! the chunk results are reduced in order, so a run is bitwise identical
//! for any thread count.

mod adam;
mod model;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use model::{Checkpoint, ForwardCache, Model, ModelKind, CHECKPOINT_VERSION};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costsens::{self, CostSpec};
use crate::error::{Error, Result};
use crate::losses::{self, LossKind};
use crate::rng::SeedSplitter;
use crate::types::{rank_of, Dataset};

/// Examples per parallel work unit; fixed so the reduction order is too.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub decoupled_decay: bool,
    pub hidden_dim: usize,
    /// Stop once the training error of the model's own target falls to
    /// this value (top-1 error for base models).
    pub early_stop_error: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 128,
            weight_decay: 1e-5,
            epochs: 50,
            seed: 0,
            loss: LossKind::CompLog,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            decoupled_decay: true,
            hidden_dim: 64,
            early_stop_error: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::range("lr", self.lr, "(0, inf)"));
        }
        if self.batch_size == 0 {
            return Err(Error::range("batch_size", 0, "[1, inf)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::range("weight_decay", self.weight_decay, "[0, inf)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidInput("Adam betas must lie in [0, 1)".into()));
        }
        if self.eps_adam.is_nan() || self.eps_adam <= 0.0 {
            return Err(Error::range("eps_adam", self.eps_adam, "(0, inf)"));
        }
        self.loss.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
            weight_decay: self.weight_decay,
            decoupled: self.decoupled_decay,
        }
    }
}

/// Supervision for one example.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Label(usize),
    /// Costs over the cardinality set for this example's true label.
    Costs(&'a [f64]),
}

/// Loss and `∂L/∂θ` for one example, accumulated into `grad`.
///
/// Constrained kinds are evaluated on the centered scores `s - mean(s)`, so
/// the gradient is that of the composition.
fn accumulate(
    model: &Model,
    x: &[f64],
    target: Target<'_>,
    loss: LossKind,
    grad: &mut [f64],
    cache: &mut ForwardCache,
) -> f64 {
    let mut s = model.forward_cached(x, cache);
    let m = s.len();
    if loss.is_constrained() {
        let mean = s.iter().sum::<f64>() / m as f64;
        s.iter_mut().for_each(|v| *v -= mean);
    }
    let mut ds = vec![0.0; m];
    let value = match target {
        Target::Label(y) => losses::value_grad(loss, &s, y, &mut ds),
        Target::Costs(c) => {
            let mut scratch = vec![0.0; m];
            costsens::cs_value_grad(loss, c, &s, &mut ds, &mut scratch)
        }
    };
    if loss.is_constrained() {
        let mean = ds.iter().sum::<f64>() / m as f64;
        ds.iter_mut().for_each(|v| *v -= mean);
    }
    model.backward_into(x, cache, &ds, grad);
    value
}

fn check_target(model: &Model, x: &[f64], target: Target<'_>, loss: LossKind) -> Result<()> {
    loss.validate()?;
    if x.len() != model.in_dim {
        return Err(Error::Dimension { expected: model.in_dim, got: x.len() });
    }
    match target {
        Target::Label(y) if y >= model.out_dim => Err(Error::range("y", y, format!("[0, {})", model.out_dim))),
        Target::Costs(c) if c.len() != model.out_dim => Err(Error::Dimension { expected: model.out_dim, got: c.len() }),
        _ => Ok(()),
    }
}

/// Per-example loss value of `loss ∘ forward`.
pub fn example_loss(model: &Model, x: &[f64], target: Target<'_>, loss: LossKind) -> Result<f64> {
    check_target(model, x, target, loss)?;
    let mut grad = vec![0.0; model.n_params()];
    Ok(accumulate(model, x, target, loss, &mut grad, &mut ForwardCache::default()))
}

/// Exact gradient of `loss ∘ forward` with respect to every parameter.
pub fn backward(model: &Model, x: &[f64], target: Target<'_>, loss: LossKind) -> Result<(f64, Vec<f64>)> {
    check_target(model, x, target, loss)?;
    let mut grad = vec![0.0; model.n_params()];
    let v = accumulate(model, x, target, loss, &mut grad, &mut ForwardCache::default());
    Ok((v, grad))
}

/// Summed loss and summed gradient over `idx`, reduced in chunk order.
fn batch_grad(
    model: &Model,
    ds: &Dataset,
    idx: &[usize],
    costs: Option<&[Vec<f64>]>,
    loss: LossKind,
) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; model.n_params()];
            let mut cache = ForwardCache::default();
            let mut total = 0.0;
            for &i in chunk {
                let target = match costs {
                    Some(c) => Target::Costs(&c[i]),
                    None => Target::Label(ds.label(i)),
                };
                total += accumulate(model, ds.row(i), target, loss, &mut grad, &mut cache);
            }
            (total, grad)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; model.n_params()];
    for (t, g) in parts {
        total += t;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (total, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's mini-batches (before each update).
    pub loss: f64,
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

fn run(
    mut model: Model,
    ds: &Dataset,
    costs: Option<&[Vec<f64>]>,
    cfg: &TrainConfig,
    mut metrics: impl FnMut(&Model) -> (Vec<(String, f64)>, f64),
) -> Result<TrainOutcome> {
    let split = SeedSplitter::new(cfg.seed);
    let mut shuffle = split.stream("shuffle");
    let adam = cfg.adam();
    let mut state = AdamState::new(model.n_params());
    let constrained = cfg.loss.is_constrained();
    if constrained {
        model.center_outputs();
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        idx.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for batch in idx.chunks(cfg.batch_size) {
            let (total, mut grad) = batch_grad(&model, ds, batch, costs, cfg.loss);
            epoch_loss += total;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam_step(&mut state, &mut model.params, &grad, &adam)?;
            if constrained {
                model.center_outputs();
            }
            if !model.is_finite() {
                return Err(Error::NonFinite(format!(
                    "model parameters after epoch {epoch}, optimizer step {}",
                    state.step
                )));
            }
        }
        let (m, err) = metrics(&model);
        log.push(EpochLog { epoch, loss: epoch_loss / ds.len().max(1) as f64, metrics: m });
        if cfg.early_stop_error.is_some_and(|t| err <= t) {
            break;
        }
    }
    Ok(TrainOutcome { model, log })
}

/// Fraction of examples whose label is among the model's top-k scores.
pub fn topk_accuracy(ds: &Dataset, model: &Model, k: usize) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let hits: usize = (0..ds.len())
        .into_par_iter()
        .map(|i| model.forward(ds.row(i)).map(|s| usize::from(rank_of(&s, ds.label(i)) < k)))
        .sum::<Result<usize>>()?;
    Ok(hits as f64 / ds.len() as f64)
}

/// Linear base classifier trained with a standard surrogate; logs top-k
/// training accuracy for each `k` in `eval_ks`.
pub fn train_base(ds: &Dataset, cfg: &TrainConfig, eval_ks: &[usize]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let split = SeedSplitter::new(cfg.seed);
    let model = Model::init(ModelKind::Linear, ds.dim(), 0, ds.n_classes(), &mut split.stream("init"))?;
    let mut ks: Vec<usize> = eval_ks.to_vec();
    if !ks.contains(&1) {
        ks.insert(0, 1);
    }
    for &k in &ks {
        crate::types::check_k(k, ds.n_classes())?;
    }
    run(model, ds, None, cfg, |m| {
        let accs: Vec<(String, f64)> =
            ks.iter().map(|&k| (format!("top{k}_acc"), topk_accuracy(ds, m, k).unwrap_or(f64::NAN))).collect();
        let err = 1.0 - accs[0].1;
        (accs, err)
    })
}

/// Costs `c(x, k, y)` over the cardinality set for every training example,
/// computed once from the frozen base model.
pub fn cost_cache(ds: &Dataset, base: &Model, spec: &CostSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    spec.kset.check_within(ds.n_classes())?;
    if base.out_dim != ds.n_classes() {
        return Err(Error::Dimension { expected: ds.n_classes(), got: base.out_dim });
    }
    (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let s = base.forward(ds.row(i))?;
            spec.costs_for_label(&s, ds.label(i))
        })
        .collect()
}

/// Two-hidden-layer selector over the cardinality set, trained with a
/// cost-sensitive surrogate against the frozen base model.
pub fn train_selector(ds: &Dataset, base: &Model, spec: &CostSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let costs = cost_cache(ds, base, spec)?;
    let split = SeedSplitter::new(cfg.seed);
    let model = Model::init(ModelKind::Mlp2, ds.dim(), cfg.hidden_dim, spec.kset.len(), &mut split.stream("init"))?;
    run(model, ds, Some(&costs), cfg, |m| {
        let (acc, card) = selector_metrics(ds, base, m, spec).unwrap_or((f64::NAN, f64::NAN));
        (vec![("accuracy".into(), acc), ("avg_cardinality".into(), card)], f64::INFINITY)
    })
}

/// `(𝔼[1 - ℓ_{r(x)}(h, x, y)], 𝔼[r(x)])` over the dataset.
pub fn selector_metrics(ds: &Dataset, base: &Model, selector: &Model, spec: &CostSpec) -> Result<(f64, f64)> {
    if selector.out_dim != spec.kset.len() {
        return Err(Error::Dimension { expected: spec.kset.len(), got: selector.out_dim });
    }
    if ds.is_empty() {
        return Ok((0.0, 0.0));
    }
    let ks = spec.kset.ks();
    let (hits, card) = (0..ds.len())
        .into_par_iter()
        .map(|i| -> Result<(usize, usize)> {
            let s = base.forward(ds.row(i))?;
            let r = selector.forward(ds.row(i))?;
            let k = ks[costsens::select_index(&r)];
            Ok((usize::from(rank_of(&s, ds.label(i)) < k), k))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    let m = ds.len() as f64;
    Ok((hits as f64 / m, card as f64 / m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costsens::Penalty;
    use crate::rng::StreamRng;
    use crate::types::CardinalitySet;
    use rand::{Rng, SeedableRng};

    fn blobs(n_classes: usize, per: usize, sep: f64, seed: u64) -> Dataset {
        let mut rng = StreamRng::seed_from_u64(seed);
        let mut f = Vec::new();
        let mut y = Vec::new();
        for c in 0..n_classes {
            let ang = c as f64 * std::f64::consts::TAU / n_classes as f64;
            for _ in 0..per {
                f.push(sep * ang.cos() + rng.random_range(-0.5..0.5));
                f.push(sep * ang.sin() + rng.random_range(-0.5..0.5));
                y.push(c);
            }
        }
        Dataset::new(f, 2, y, n_classes).unwrap()
    }

    fn quick(loss: LossKind, epochs: usize) -> TrainConfig {
        TrainConfig { lr: 0.05, batch_size: 16, epochs, loss, ..Default::default() }
    }

    #[test]
    fn separable_two_class_reaches_zero_error() {
        let ds = blobs(2, 50, 3.0, 1);
        let out = train_base(&ds, &quick(LossKind::CompLog, 200), &[1]).unwrap();
        assert_eq!(topk_accuracy(&ds, &out.model, 1).unwrap(), 1.0);
    }

    #[test]
    fn constrained_training_keeps_scores_centered() {
        let ds = blobs(3, 30, 3.0, 2);
        let out = train_base(&ds, &quick(LossKind::CstndSqHinge, 30), &[]).unwrap();
        let s = out.model.forward(ds.row(0)).unwrap();
        assert!(s.iter().sum::<f64>().abs() < 1e-9);
        assert!(topk_accuracy(&ds, &out.model, 1).unwrap() > 0.95);
    }

    #[test]
    fn training_is_replayable() {
        let ds = blobs(3, 40, 2.0, 3);
        let a = train_base(&ds, &quick(LossKind::CompExp, 5), &[2]).unwrap();
        let b = train_base(&ds, &quick(LossKind::CompExp, 5), &[2]).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let ds = blobs(3, 60, 2.0, 4);
        let cfg = quick(LossKind::CompGce { alpha: 0.7 }, 3);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| train_base(&ds, &cfg, &[]).unwrap());
        let b = four.install(|| train_base(&ds, &cfg, &[]).unwrap());
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn zero_lr_zero_decay_freezes_parameters() {
        let ds = blobs(2, 10, 2.0, 5);
        let mut cfg = quick(LossKind::CompLog, 2);
        cfg.lr = f64::MIN_POSITIVE;
        cfg.weight_decay = 0.0;
        let init = Model::init(ModelKind::Linear, 2, 0, 2, &mut SeedSplitter::new(cfg.seed).stream("init")).unwrap();
        let out = train_base(&ds, &cfg, &[]).unwrap();
        for (a, b) in out.model.params.iter().zip(&init.params) {
            assert!((a - b).abs() < 1e-300);
        }
    }

    #[test]
    fn forward_is_per_example() {
        let ds = blobs(3, 5, 2.0, 6);
        let mut rng = StreamRng::seed_from_u64(7);
        let m = Model::init(ModelKind::Mlp2, 2, 8, 3, &mut rng).unwrap();
        let alone = m.forward(ds.row(3)).unwrap();
        let sub = ds.subset(&[5, 3, 0]);
        assert_eq!(m.forward(sub.row(1)).unwrap(), alone);
    }

    #[test]
    fn cost_cache_matches_on_the_fly() {
        let ds = blobs(4, 10, 2.0, 8);
        let mut rng = StreamRng::seed_from_u64(9);
        let base = Model::init(ModelKind::Linear, 2, 0, 4, &mut rng).unwrap();
        let spec = CostSpec::new(0.05, Penalty::LogK, CardinalitySet::new(vec![1, 2, 4]).unwrap(), true).unwrap();
        let cache = cost_cache(&ds, &base, &spec).unwrap();
        for i in 0..ds.len() {
            let s = base.forward(ds.row(i)).unwrap();
            assert_eq!(cache[i], spec.costs_for_label(&s, ds.label(i)).unwrap());
        }
    }

    #[test]
    fn selector_metrics_fixed_choices() {
        let ds = blobs(4, 10, 1.0, 10);
        let mut rng = StreamRng::seed_from_u64(11);
        let base = Model::init(ModelKind::Linear, 2, 0, 4, &mut rng).unwrap();
        let spec = CostSpec::new(0.05, Penalty::LogK, CardinalitySet::new(vec![1, 2, 4]).unwrap(), true).unwrap();
        let mut sel = Model::zeros(ModelKind::Mlp2, 2, 3, 3).unwrap();
        let bias = sel.n_params() - 3;
        // Ties go to the largest k.
        let (acc, card) = selector_metrics(&ds, &base, &sel, &spec).unwrap();
        assert_eq!((acc, card), (1.0, 4.0));
        sel.params[bias] = 1.0;
        let (acc, card) = selector_metrics(&ds, &base, &sel, &spec).unwrap();
        assert_eq!(card, 1.0);
        assert_eq!(acc, topk_accuracy(&ds, &base, 1).unwrap());
    }

    #[test]
    fn dominant_penalty_collapses_to_smallest_k() {
        let ds = blobs(4, 40, 1.0, 12);
        let base = train_base(&ds, &quick(LossKind::CompLog, 20), &[]).unwrap().model;
        let spec = CostSpec::new(1e6, Penalty::LogK, CardinalitySet::new(vec![1, 2, 4]).unwrap(), true).unwrap();
        let cfg = TrainConfig { lr: 0.01, batch_size: 32, epochs: 20, hidden_dim: 16, ..Default::default() };
        let sel = train_selector(&ds, &base, &spec, &cfg).unwrap().model;
        let (_, card) = selector_metrics(&ds, &base, &sel, &spec).unwrap();
        assert!(card <= 1.03, "{card}");
    }

    #[test]
    fn nan_guard_aborts() {
        let ds = blobs(2, 10, 2.0, 13);
        let cfg = TrainConfig { lr: 1e300, batch_size: 4, epochs: 3, loss: LossKind::CompExp, ..Default::default() };
        match train_base(&ds, &cfg, &[]) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("epoch")),
            other => panic!("expected a NaN abort, got {:?}", other.map(|o| o.log.len())),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { weight_decay: -1.0, ..Default::default() }.validate().is_err());
        let js = r#"{"lr": 0.001, "batch_size": 128, "weight_decay": 1e-5}"#;
        let cfg: TrainConfig = serde_json::from_str(js).unwrap();
        assert_eq!((cfg.lr, cfg.batch_size, cfg.weight_decay), (1e-3, 128, 1e-5));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
    }
}
