//! Small feedforward embedding network with manual forward/backward passes
//! and a final per-column l2 normalization layer.
//!
//! Checkpoint format (`NetCheckpoint`, version 1): JSON with the layer
//! list, each layer carrying its shape, activation, row-major weights and
//! bias; plus the normalization flag. The format is stable and independent
//! of the matrix library's internal layout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Guard added to the norm in the l2 layer so zero vectors stay finite.
pub const NORM_EPS: f64 = 1e-12;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

/// One affine layer with an optional elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// out×in weight matrix.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

/// The embedding network z: R^D -> R^d; columns are examples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedNet {
    layers: Vec<Layer>,
    normalize: bool,
    /// Bumped on every parameter update; caches carry the value they were
    /// created under so a stale backward is rejected.
    generation: u64,
}

/// Learning-rate schedule for the network update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// lr(t) = lr / sqrt(t), t >= 1.
    InvSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub schedule: LrSchedule,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 1e-4,
            schedule: LrSchedule::Constant,
        }
    }
}

impl SgdConfig {
    /// The effective rate at step `t` (1-based; 0 is treated as 1).
    pub fn rate_at(&self, t: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::InvSqrt => self.lr / (t.max(1) as f64).sqrt(),
        }
    }
}

/// Per-parameter gradients, shaped like the network.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl NetGrads {
    /// Frobenius norm over all parameters.
    pub fn norm(&self) -> f64 {
        let sq: f64 = self.weights.iter().map(|w| w.norm_squared()).sum::<f64>()
            + self.biases.iter().map(|b| b.norm_squared()).sum::<f64>();
        sq.sqrt()
    }
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// Input to each layer (the previous layer's activated output).
    layer_inputs: Vec<DMatrix<f64>>,
    /// Affine outputs before activation, per layer.
    pre_activations: Vec<DMatrix<f64>>,
    /// Embeddings before normalization, with their column norms.
    pre_norm: DMatrix<f64>,
    norms: DVector<f64>,
}

impl EmbedNet {
    /// Builds a network from explicit layers; consecutive shapes must
    /// compose.
    pub fn new(layers: Vec<Layer>, normalize: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::invalid(format!("layer {i}: bias/weight mismatch")));
            }
            if i > 0 && layers[i - 1].weight.nrows() != l.weight.ncols() {
                return Err(Error::invalid(format!(
                    "layer {i} expects input {} but layer {} outputs {}",
                    l.weight.ncols(),
                    i - 1,
                    layers[i - 1].weight.nrows()
                )));
            }
        }
        Ok(EmbedNet {
            layers,
            normalize,
            generation: 0,
        })
    }

    /// He-style uniform initialization over `widths = [D, h1, .., d]`:
    /// weights from U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases, ReLU on
    /// hidden layers, linear last layer, normalization on.
    pub fn random(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("need at least input and output widths"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for i in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let weight = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
            let activation = if i + 1 == widths.len() - 1 {
                Activation::None
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                weight,
                bias: DVector::zeros(fan_out),
                activation,
            });
        }
        EmbedNet::new(layers, true)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    /// Embedding dimension d.
    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Forward pass over a batch (columns are examples). Returns the d×B
    /// embeddings and the cache for [`EmbedNet::backward`].
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        if x.nrows() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input width {} does not match first layer ({})",
                x.nrows(),
                self.input_dim()
            )));
        }
        let batch = x.ncols();
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let mut affine = &layer.weight * &current;
            for mut col in affine.column_iter_mut() {
                col += &layer.bias;
            }
            layer_inputs.push(current);
            pre_activations.push(affine.clone());
            if layer.activation == Activation::Relu {
                affine.apply(|v| *v = v.max(0.0));
            }
            current = affine;
        }
        let pre_norm = current.clone();
        let mut norms = DVector::zeros(batch);
        if self.normalize {
            for i in 0..batch {
                let n = current.column(i).norm();
                norms[i] = n;
                current.column_mut(i).unscale_mut(n + NORM_EPS);
            }
        }
        Ok((
            current,
            ForwardCache {
                generation: self.generation,
                layer_inputs,
                pre_activations,
                pre_norm,
                norms,
            },
        ))
    }

    /// Forward without keeping the cache.
    pub fn embed(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Reverse-mode gradients for a batch: `d_out` is dJ/d(embeddings) with
    /// the same shape forward returned. Gives parameter gradients and the
    /// gradient w.r.t. the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: &DMatrix<f64>,
    ) -> Result<(NetGrads, DMatrix<f64>)> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache(
                "forward cache predates a parameter update".to_string(),
            ));
        }
        let batch = cache.pre_norm.ncols();
        if d_out.nrows() != self.out_dim() || d_out.ncols() != batch {
            return Err(Error::invalid("d_out shape mismatch"));
        }
        // l2 layer: y = v / (||v|| + eps);
        // dv = dy/(||v||+eps) - v <v,dy> / (||v|| (||v||+eps)^2)
        let mut delta = d_out.clone();
        if self.normalize {
            for i in 0..batch {
                let v = cache.pre_norm.column(i);
                let n = cache.norms[i];
                let denom = n + NORM_EPS;
                let dy = d_out.column(i);
                let radial = v.dot(&dy);
                let mut dv = dy / denom;
                if n > 0.0 {
                    dv -= v * (radial / (n * denom * denom));
                }
                delta.set_column(i, &dv);
            }
        }
        let mut weight_grads = vec![DMatrix::zeros(0, 0); self.layers.len()];
        let mut bias_grads = vec![DVector::zeros(0); self.layers.len()];
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                let pre = &cache.pre_activations[idx];
                delta.zip_apply(pre, |d, p| {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            weight_grads[idx] = &delta * cache.layer_inputs[idx].transpose();
            bias_grads[idx] = DVector::from_fn(delta.nrows(), |r, _| delta.row(r).sum());
            delta = layer.weight.transpose() * delta;
        }
        Ok((
            NetGrads {
                weights: weight_grads,
                biases: bias_grads,
            },
            delta,
        ))
    }

    /// One SGD update: `theta <- theta - rate(t) * grad`.
    pub fn sgd_step(&mut self, grads: &NetGrads, cfg: &SgdConfig, t: u64) -> Result<()> {
        if grads.weights.len() != self.layers.len() {
            return Err(Error::invalid("gradient/layer count mismatch"));
        }
        let rate = cfg.rate_at(t);
        for (layer, (dw, db)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            if dw.shape() != layer.weight.shape() || db.len() != layer.bias.len() {
                return Err(Error::invalid("gradient shape mismatch"));
            }
            layer.weight -= dw * rate;
            layer.bias -= db * rate;
        }
        self.generation += 1;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint {
            version: CHECKPOINT_VERSION,
            normalize: self.normalize,
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpec {
                    out_dim: l.weight.nrows(),
                    in_dim: l.weight.ncols(),
                    activation: l.activation,
                    weight_row_major: l
                        .weight
                        .row_iter()
                        .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
                        .collect(),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &NetCheckpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        let layers = ck
            .layers
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                if spec.weight_row_major.len() != spec.out_dim * spec.in_dim
                    || spec.bias.len() != spec.out_dim
                {
                    return Err(Error::invalid(format!("layer {i}: size mismatch")));
                }
                Ok(Layer {
                    weight: DMatrix::from_row_slice(
                        spec.out_dim,
                        spec.in_dim,
                        &spec.weight_row_major,
                    ),
                    bias: DVector::from_vec(spec.bias.clone()),
                    activation: spec.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EmbedNet::new(layers, ck.normalize)
    }
}

/// Stable on-disk description of one layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpec {
    pub out_dim: usize,
    pub in_dim: usize,
    pub activation: Activation,
    pub weight_row_major: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Versioned JSON checkpoint of a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub version: u32,
    pub normalize: bool,
    pub layers: Vec<LayerSpec>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
    }

    fn toy_net(seed: u64) -> EmbedNet {
        EmbedNet::random(&[4, 5, 3], seed).unwrap()
    }

    #[test]
    fn identity_net_normalizes_columns() {
        let net = EmbedNet::new(
            vec![Layer {
                weight: DMatrix::identity(3, 3),
                bias: DVector::zeros(3),
                activation: Activation::None,
            }],
            true,
        )
        .unwrap();
        let x = random_matrix(3, 6, 0);
        let (y, _) = net.forward(&x).unwrap();
        for i in 0..6 {
            let n = x.column(i).norm();
            let expect = x.column(i) / (n + NORM_EPS);
            assert!((y.column(i) - expect).norm() <= 1e-15);
            // guarded norm is n/(n+eps): unit up to eps/n
            assert!((y.column(i).norm() - 1.0).abs() <= NORM_EPS / n + 1e-14);
        }
    }

    #[test]
    fn zero_input_stays_finite() {
        let net = toy_net(1);
        let x = DMatrix::zeros(4, 2);
        let (y, _) = net.forward(&x).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = toy_net(2);
        let x = random_matrix(4, 5, 3);
        let (a, _) = net.forward(&x).unwrap();
        let (b, _) = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = toy_net(4);
        assert!(net.forward(&random_matrix(3, 2, 5)).is_err());
    }

    /// Scalar probe objective: s = sum_ij c_ij * out_ij, so d_out = c.
    fn probe(net: &EmbedNet, x: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
        net.embed(x).unwrap().dot(c)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = toy_net(6);
        let x = random_matrix(4, 3, 7);
        let c = random_matrix(3, 3, 8);
        let (_, cache) = net.forward(&x).unwrap();
        let (grads, d_input) = net.backward(&cache, &c).unwrap();
        let step = 1e-6;

        // parameters
        for li in 0..net.layers.len() {
            let (rows, cols) = net.layers[li].weight.shape();
            for r in 0..rows {
                for col in 0..cols {
                    let mut plus = net.clone();
                    plus.layers[li].weight[(r, col)] += step;
                    let mut minus = net.clone();
                    minus.layers[li].weight[(r, col)] -= step;
                    let fd = (probe(&plus, &x, &c) - probe(&minus, &x, &c)) / (2.0 * step);
                    let an = grads.weights[li][(r, col)];
                    assert!(
                        (an - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                        "layer {li} W[{r},{col}]: {an} vs {fd}"
                    );
                }
                let mut plus = net.clone();
                plus.layers[li].bias[r] += step;
                let mut minus = net.clone();
                minus.layers[li].bias[r] -= step;
                let fd = (probe(&plus, &x, &c) - probe(&minus, &x, &c)) / (2.0 * step);
                let an = grads.biases[li][r];
                assert!(
                    (an - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "layer {li} b[{r}]: {an} vs {fd}"
                );
            }
        }

        // inputs
        for r in 0..4 {
            for col in 0..3 {
                let mut plus = x.clone();
                plus[(r, col)] += step;
                let mut minus = x.clone();
                minus[(r, col)] -= step;
                let fd = (probe(&net, &plus, &c) - probe(&net, &minus, &c)) / (2.0 * step);
                let an = d_input[(r, col)];
                assert!(
                    (an - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "input [{r},{col}]: {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let net = toy_net(9);
        let x = random_matrix(4, 4, 10);
        let (_, cache) = net.forward(&x).unwrap();
        let (grads, d_input) = net.backward(&cache, &DMatrix::zeros(3, 4)).unwrap();
        assert_eq!(grads.norm(), 0.0);
        assert_eq!(d_input.norm(), 0.0);
    }

    #[test]
    fn norm_layer_annihilates_radial_directions() {
        // identity single layer: the only Jacobian in play is the l2 layer's
        let net = EmbedNet::new(
            vec![Layer {
                weight: DMatrix::identity(3, 3),
                bias: DVector::zeros(3),
                activation: Activation::None,
            }],
            true,
        )
        .unwrap();
        let x = random_matrix(3, 5, 11);
        let (y, cache) = net.forward(&x).unwrap();
        // upstream gradient parallel to each output column
        let (_, d_input) = net.backward(&cache, &y).unwrap();
        assert!(d_input.amax() <= 1e-12, "radial leak {}", d_input.amax());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = toy_net(12);
        let x = random_matrix(4, 2, 13);
        let (_, cache) = net.forward(&x).unwrap();
        let zero = NetGrads {
            weights: net
                .layers()
                .iter()
                .map(|l| DMatrix::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
            biases: net
                .layers()
                .iter()
                .map(|l| DVector::zeros(l.bias.len()))
                .collect(),
        };
        net.sgd_step(&zero, &SgdConfig::default(), 1).unwrap();
        let err = net.backward(&cache, &DMatrix::zeros(3, 2));
        assert!(matches!(err, Err(Error::StaleCache(_))));
    }

    #[test]
    fn sgd_arithmetic() {
        let mut net = EmbedNet::new(
            vec![Layer {
                weight: DMatrix::from_element(1, 1, 1.0),
                bias: DVector::zeros(1),
                activation: Activation::None,
            }],
            false,
        )
        .unwrap();
        let grads = NetGrads {
            weights: vec![DMatrix::from_element(1, 1, 0.5)],
            biases: vec![DVector::zeros(1)],
        };
        let cfg = SgdConfig {
            lr: 0.1,
            schedule: LrSchedule::Constant,
        };
        net.sgd_step(&grads, &cfg, 1).unwrap();
        assert_relative_eq!(net.layers()[0].weight[(0, 0)], 0.95);

        // zero grads leave the net unchanged
        let before = net.clone();
        let zeros = NetGrads {
            weights: vec![DMatrix::zeros(1, 1)],
            biases: vec![DVector::zeros(1)],
        };
        net.sgd_step(&zeros, &cfg, 2).unwrap();
        assert_eq!(net.layers()[0].weight, before.layers()[0].weight);

        // inv_sqrt halves the rate at t = 4
        let inv = SgdConfig {
            lr: 0.1,
            schedule: LrSchedule::InvSqrt,
        };
        assert_relative_eq!(inv.rate_at(4), 0.05);
        assert_relative_eq!(inv.rate_at(1), 0.1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = toy_net(14);
        let json = serde_json::to_string(&net.to_checkpoint()).unwrap();
        let back = EmbedNet::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        let x = random_matrix(4, 3, 15);
        assert_eq!(net.embed(&x).unwrap(), back.embed(&x).unwrap());
        assert_eq!(net.layers(), back.layers());
    }

    #[test]
    fn checkpoint_rejects_unknown_version() {
        let mut ck = toy_net(16).to_checkpoint();
        ck.version = 99;
        assert!(EmbedNet::from_checkpoint(&ck).is_err());
    }
}
