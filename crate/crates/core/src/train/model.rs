use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    /// Two ReLU hidden layers of equal width.
    Mlp2,
}

/// Dense layers stored flat: for each layer, the row-major weight matrix
/// (`out × in`) followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub params: Vec<f64>,
}

/// Versioned on-disk form of a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ModelKind,
    /// `(out, in)` for each layer, in order.
    pub layer_shapes: Vec<(usize, usize)>,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub params: Vec<f64>,
}

/// Activations kept by [`Model::forward_cached`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// Post-ReLU activations of each hidden layer.
    hidden: Vec<Vec<f64>>,
}

impl Model {
    pub fn zeros(kind: ModelKind, in_dim: usize, hidden_dim: usize, out_dim: usize) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 || (kind == ModelKind::Mlp2 && hidden_dim == 0) {
            return Err(Error::InvalidInput("model dimensions must be positive".into()));
        }
        let mut m = Self { kind, in_dim, hidden_dim, out_dim, params: Vec::new() };
        m.params = vec![0.0; m.shapes().iter().map(|(o, i)| o * i + o).sum()];
        Ok(m)
    }

    /// Weights uniform in `±√(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(
        kind: ModelKind,
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut m = Self::zeros(kind, in_dim, hidden_dim, out_dim)?;
        let mut off = 0;
        for (o, i) in m.shapes() {
            let a = (6.0 / (o + i) as f64).sqrt();
            for w in &mut m.params[off..off + o * i] {
                *w = rng.random_range(-a..=a);
            }
            off += o * i + o;
        }
        Ok(m)
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        match self.kind {
            ModelKind::Linear => vec![(self.out_dim, self.in_dim)],
            ModelKind::Mlp2 => vec![
                (self.hidden_dim, self.in_dim),
                (self.hidden_dim, self.hidden_dim),
                (self.out_dim, self.hidden_dim),
            ],
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Offset of the last layer's weights.
    fn last_layer_offset(&self) -> usize {
        let shapes = self.shapes();
        shapes[..shapes.len() - 1].iter().map(|(o, i)| o * i + o).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::Dimension { expected: self.in_dim, got: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cache = ForwardCache::default();
        Ok(self.forward_cached(x, &mut cache))
    }

    /// Forward pass without the dimension check, recording activations.
    pub(crate) fn forward_cached(&self, x: &[f64], cache: &mut ForwardCache) -> Vec<f64> {
        let shapes = self.shapes();
        cache.hidden.clear();
        let mut off = 0;
        let mut input: Vec<f64> = x.to_vec();
        for (li, &(o, i)) in shapes.iter().enumerate() {
            let w = &self.params[off..off + o * i];
            let b = &self.params[off + o * i..off + o * i + o];
            let mut out: Vec<f64> = b.to_vec();
            for (r, out_r) in out.iter_mut().enumerate() {
                *out_r += w[r * i..(r + 1) * i].iter().zip(&input).map(|(a, b)| a * b).sum::<f64>();
            }
            off += o * i + o;
            if li + 1 < shapes.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                cache.hidden.push(out.clone());
            }
            input = out;
        }
        input
    }

    /// Adds `∂L/∂θ` to `grad` given `∂L/∂scores`.
    pub(crate) fn backward_into(&self, x: &[f64], cache: &ForwardCache, dscores: &[f64], grad: &mut [f64]) {
        let shapes = self.shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for &(o, i) in &shapes {
            offsets.push(off);
            off += o * i + o;
        }
        let mut delta: Vec<f64> = dscores.to_vec();
        for li in (0..shapes.len()).rev() {
            let (o, i) = shapes[li];
            let off = offsets[li];
            let input: &[f64] = if li == 0 { x } else { &cache.hidden[li - 1] };
            for r in 0..o {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                for (g, a) in grad[off + r * i..off + (r + 1) * i].iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[off + o * i + r] += d;
            }
            if li > 0 {
                let w = &self.params[off..off + o * i];
                let mut prev = vec![0.0; i];
                for r in 0..o {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wv) in prev.iter_mut().zip(&w[r * i..(r + 1) * i]) {
                        *p += d * wv;
                    }
                }
                // ReLU: derivative 0 at and below zero.
                for (p, a) in prev.iter_mut().zip(&cache.hidden[li - 1]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Removes the mean over outputs from the last layer's weight columns
    /// and bias, so that every output vector sums to zero.
    pub fn center_outputs(&mut self) {
        let (o, i) = *self.shapes().last().expect("at least one layer");
        let off = self.last_layer_offset();
        for c in 0..i {
            let mean = (0..o).map(|r| self.params[off + r * i + c]).sum::<f64>() / o as f64;
            for r in 0..o {
                self.params[off + r * i + c] -= mean;
            }
        }
        let b = &mut self.params[off + o * i..off + o * i + o];
        let mean = b.iter().sum::<f64>() / o as f64;
        b.iter_mut().for_each(|v| *v -= mean);
    }

    /// Minimum |pre-activation| over hidden units at `x` (infinite for
    /// linear models); used to keep finite differences away from ReLU kinks.
    pub fn min_preactivation(&self, x: &[f64]) -> f64 {
        if self.kind == ModelKind::Linear {
            return f64::INFINITY;
        }
        let shapes = self.shapes();
        let mut off = 0;
        let mut input = x.to_vec();
        let mut best = f64::INFINITY;
        for &(o, i) in &shapes[..shapes.len() - 1] {
            let w = &self.params[off..off + o * i];
            let b = &self.params[off + o * i..off + o * i + o];
            let pre: Vec<f64> = (0..o)
                .map(|r| b[r] + w[r * i..(r + 1) * i].iter().zip(&input).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            best = pre.iter().fold(best, |m, v| m.min(v.abs()));
            input = pre.iter().map(|v| v.max(0.0)).collect();
            off += o * i + o;
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            layer_shapes: self.shapes(),
            in_dim: self.in_dim,
            hidden_dim: self.hidden_dim,
            out_dim: self.out_dim,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!("unsupported checkpoint version {}", c.version)));
        }
        let m = Self::zeros(c.kind, c.in_dim, c.hidden_dim, c.out_dim)?;
        if m.shapes() != c.layer_shapes {
            return Err(Error::InvalidInput("layer shapes disagree with dimensions".into()));
        }
        if c.params.len() != m.n_params() {
            return Err(Error::Dimension { expected: m.n_params(), got: c.params.len() });
        }
        let model = Self { params: c.params, ..m };
        if !model.is_finite() {
            return Err(Error::NonFinite("checkpoint parameter".into()));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    /// Straightforward re-implementation: explicit matrices, no flat layout.
    fn reference_forward(m: &Model, x: &[f64]) -> Vec<f64> {
        let mut off = 0;
        let mut a = x.to_vec();
        let shapes = m.shapes();
        for (li, &(o, i)) in shapes.iter().enumerate() {
            let mut wmat = vec![vec![0.0; i]; o];
            for r in 0..o {
                for c in 0..i {
                    wmat[r][c] = m.params[off + r * i + c];
                }
            }
            let bias = &m.params[off + o * i..off + o * i + o];
            let mut z = Vec::with_capacity(o);
            for r in 0..o {
                let mut acc = 0.0;
                for c in 0..i {
                    acc += wmat[r][c] * a[c];
                }
                z.push(acc + bias[r]);
            }
            if li + 1 < shapes.len() {
                z = z.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect();
            }
            a = z;
            off += o * i + o;
        }
        a
    }

    #[test]
    fn zero_model_gives_zero_scores() {
        let m = Model::zeros(ModelKind::Mlp2, 3, 4, 5).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn identity_linear() {
        let mut m = Model::zeros(ModelKind::Linear, 3, 0, 3).unwrap();
        for i in 0..3 {
            m.params[i * 3 + i] = 1.0;
        }
        assert_eq!(m.forward(&[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn mlp2_matches_reference() {
        let mut rng = StreamRng::seed_from_u64(1);
        for _ in 0..20 {
            let m = Model::init(ModelKind::Mlp2, 4, 7, 3, &mut rng).unwrap();
            let mut m = m;
            for b in m.params.iter_mut() {
                *b += rng.random_range(-0.1..0.1);
            }
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = m.forward(&x).unwrap();
            let b = reference_forward(&m, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn init_range_and_zero_biases() {
        let mut rng = StreamRng::seed_from_u64(2);
        let m = Model::init(ModelKind::Mlp2, 10, 6, 4, &mut rng).unwrap();
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(m.params[..60].iter().all(|w| w.abs() <= bound));
        assert!(m.params[60..66].iter().all(|b| *b == 0.0));
        assert_eq!(m.n_params(), 10 * 6 + 6 + 6 * 6 + 6 + 6 * 4 + 4);
    }

    #[test]
    fn centered_outputs_sum_to_zero() {
        let mut rng = StreamRng::seed_from_u64(3);
        let mut m = Model::init(ModelKind::Mlp2, 3, 5, 4, &mut rng).unwrap();
        m.params.iter_mut().for_each(|v| *v += 0.3);
        m.center_outputs();
        let s = m.forward(&[0.2, 1.0, -0.7]).unwrap();
        assert!(s.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut rng = StreamRng::seed_from_u64(4);
        let m = Model::init(ModelKind::Mlp2, 3, 5, 4, &mut rng).unwrap();
        let js = serde_json::to_string(&m.to_checkpoint()).unwrap();
        let back = Model::from_checkpoint(serde_json::from_str(&js).unwrap()).unwrap();
        assert_eq!(m, back);
        let mut bad = m.to_checkpoint();
        bad.version = 9;
        assert!(Model::from_checkpoint(bad).is_err());
        let mut bad = m.to_checkpoint();
        bad.params.pop();
        assert!(Model::from_checkpoint(bad).is_err());
    }
}
