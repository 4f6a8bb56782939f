//! The latent decoder: 12 latent channels in, 9 material channels out.
//!
//! Hidden layers are affine + ReLU; the output layer is affine only. Outputs
//! are left unclamped here so training sees raw values; evaluation clamps.
//!
//! Parameters live in one flat vector, layer by layer: weights row-major
//! (`outputs x inputs`) followed by biases.

use rand::Rng;
use thiserror::Error;

use crate::pyramid::LATENT_CHANNELS;

pub const INPUT_DIM: usize = LATENT_CHANNELS;
pub const OUTPUT_DIM: usize = 9;

/// Rows per block in [`MlpDecoder::forward_batch`].
const BATCH_BLOCK: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MlpError {
    #[error("hidden dimension and hidden layer count must be at least 1 (got {hidden_dim}, {hidden_layers})")]
    BadShape { hidden_dim: usize, hidden_layers: usize },
    #[error("expected {expected} parameters, got {actual}")]
    ParameterCount { expected: usize, actual: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

fn layer_shapes(hidden_dim: usize, hidden_layers: usize) -> Vec<LayerShape> {
    let mut dims = vec![INPUT_DIM];
    dims.extend(std::iter::repeat_n(hidden_dim, hidden_layers));
    dims.push(OUTPUT_DIM);
    let mut offset = 0;
    dims.windows(2)
        .map(|w| {
            let shape = LayerShape {
                inputs: w[0],
                outputs: w[1],
                weight_offset: offset,
                bias_offset: offset + w[0] * w[1],
            };
            offset += shape.param_count();
            shape
        })
        .collect()
}

/// Number of weights and biases for a decoder shape.
pub fn parameter_count(hidden_dim: usize, hidden_layers: usize) -> usize {
    layer_shapes(hidden_dim, hidden_layers).iter().map(LayerShape::param_count).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpDecoder {
    hidden_dim: usize,
    hidden_layers: usize,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Per-call activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Activations {
    input: [f64; INPUT_DIM],
    /// Post-ReLU outputs of each hidden layer.
    hidden: Vec<Vec<f64>>,
}

impl MlpDecoder {
    pub fn zeros(hidden_dim: usize, hidden_layers: usize) -> Result<Self, MlpError> {
        if hidden_dim == 0 || hidden_layers == 0 {
            return Err(MlpError::BadShape {
                hidden_dim,
                hidden_layers,
            });
        }
        let layers = layer_shapes(hidden_dim, hidden_layers);
        let len = layers.iter().map(LayerShape::param_count).sum();
        Ok(Self {
            hidden_dim,
            hidden_layers,
            layers,
            params: vec![0.0; len],
        })
    }

    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
    pub fn random<R: Rng + ?Sized>(hidden_dim: usize, hidden_layers: usize, rng: &mut R) -> Result<Self, MlpError> {
        let mut m = Self::zeros(hidden_dim, hidden_layers)?;
        for layer in m.layers.clone() {
            let bound = (1.0 / layer.inputs as f64).sqrt();
            for w in &mut m.params[layer.weight_offset..layer.bias_offset] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(m)
    }

    pub fn from_params(hidden_dim: usize, hidden_layers: usize, params: Vec<f64>) -> Result<Self, MlpError> {
        let mut m = Self::zeros(hidden_dim, hidden_layers)?;
        if params.len() != m.params.len() {
            return Err(MlpError::ParameterCount {
                expected: m.params.len(),
                actual: params.len(),
            });
        }
        m.params = params;
        Ok(m)
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn hidden_layers(&self) -> usize {
        self.hidden_layers
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Copy with every parameter rounded through `f32`, as stored on disk.
    pub fn rounded_to_f32(&self) -> Self {
        let mut m = self.clone();
        for p in &mut m.params {
            *p = f64::from(*p as f32);
        }
        m
    }

    #[inline]
    pub fn weight(&self, layer: usize, out: usize, inp: usize) -> f64 {
        let l = &self.layers[layer];
        self.params[l.weight_offset + out * l.inputs + inp]
    }

    #[inline]
    pub fn bias(&self, layer: usize, out: usize) -> f64 {
        self.params[self.layers[layer].bias_offset + out]
    }

    /// `bias + sum_j w[o][j] * x[j]`, accumulated in index order. Every
    /// evaluation path goes through this so results agree bit-for-bit.
    #[inline]
    fn affine(&self, layer: &LayerShape, input: &[f64], out: &mut [f64], relu: bool) {
        let w = &self.params[layer.weight_offset..layer.bias_offset];
        let b = &self.params[layer.bias_offset..layer.bias_offset + layer.outputs];
        for (o, y) in out.iter_mut().enumerate() {
            let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
            let mut acc = b[o];
            for (wj, xj) in row.iter().zip(input) {
                acc += wj * xj;
            }
            *y = if relu && acc <= 0.0 { 0.0 } else { acc };
        }
    }

    pub fn forward(&self, x: &[f64; INPUT_DIM]) -> [f64; OUTPUT_DIM] {
        let mut cur = x.to_vec();
        let mut out = [0.0; OUTPUT_DIM];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if i == last {
                self.affine(layer, &cur, &mut out, false);
            } else {
                let mut next = vec![0.0; layer.outputs];
                self.affine(layer, &cur, &mut next, true);
                cur = next;
            }
        }
        out
    }

    /// Forward pass that records activations in `cache`.
    pub fn forward_cached(&self, x: &[f64; INPUT_DIM], cache: &mut Activations) -> [f64; OUTPUT_DIM] {
        cache.input = *x;
        cache.hidden.resize(self.hidden_layers, Vec::new());
        let last = self.layers.len() - 1;
        let mut out = [0.0; OUTPUT_DIM];
        for (i, layer) in self.layers.iter().enumerate() {
            if i == last {
                let input = if i == 0 { &cache.input[..] } else { &cache.hidden[i - 1][..] };
                self.affine(layer, input, &mut out, false);
            } else {
                let mut next = std::mem::take(&mut cache.hidden[i]);
                next.resize(layer.outputs, 0.0);
                {
                    let input = if i == 0 { &cache.input[..] } else { &cache.hidden[i - 1][..] };
                    self.affine(layer, input, &mut next, true);
                }
                cache.hidden[i] = next;
            }
        }
        out
    }

    /// Reverse-mode gradients for one sample.
    ///
    /// Parameter gradients are added into `grads` (same layout as
    /// [`params`](Self::params)); the gradient with respect to the input is
    /// returned.
    pub fn backward(&self, cache: &Activations, upstream: &[f64; OUTPUT_DIM], grads: &mut [f64]) -> [f64; INPUT_DIM] {
        assert_eq!(grads.len(), self.params.len());
        let mut delta = upstream.to_vec();
        let mut input_grad = [0.0; INPUT_DIM];
        for i in (0..self.layers.len()).rev() {
            let layer = self.layers[i];
            let input = if i == 0 { &cache.input[..] } else { &cache.hidden[i - 1][..] };
            let w = &self.params[layer.weight_offset..layer.bias_offset];
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = layer.weight_offset + o * layer.inputs;
                for j in 0..layer.inputs {
                    grads[row + j] += d * input[j];
                    prev[j] += d * w[o * layer.inputs + j];
                }
                grads[layer.bias_offset + o] += d;
            }
            if i == 0 {
                input_grad.copy_from_slice(&prev);
            } else {
                // ReLU: zero where the hidden unit was inactive.
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        input_grad
    }

    /// Row-blocked batch evaluation; row `i` equals `forward(&xs[i])` exactly.
    pub fn forward_batch(&self, xs: &[[f64; INPUT_DIM]]) -> Vec<[f64; OUTPUT_DIM]> {
        let mut out = Vec::with_capacity(xs.len());
        let widest = self.layers.iter().map(|l| l.outputs.max(l.inputs)).max().unwrap_or(0);
        let mut a = vec![0.0; BATCH_BLOCK * widest];
        let mut b = vec![0.0; BATCH_BLOCK * widest];
        let last = self.layers.len() - 1;
        for block in xs.chunks(BATCH_BLOCK) {
            for (r, x) in block.iter().enumerate() {
                a[r * INPUT_DIM..(r + 1) * INPUT_DIM].copy_from_slice(x);
            }
            for (i, layer) in self.layers.iter().enumerate() {
                for r in 0..block.len() {
                    let input = &a[r * layer.inputs..(r + 1) * layer.inputs];
                    let output = &mut b[r * layer.outputs..(r + 1) * layer.outputs];
                    self.affine(layer, input, output, i != last);
                }
                std::mem::swap(&mut a, &mut b);
            }
            for r in 0..block.len() {
                let mut y = [0.0; OUTPUT_DIM];
                y.copy_from_slice(&a[r * OUTPUT_DIM..(r + 1) * OUTPUT_DIM]);
                out.push(y);
            }
        }
        out
    }

    /// Single-precision batch evaluation (weights and activations in `f32`).
    pub fn forward_batch_f32(&self, xs: &[[f32; INPUT_DIM]]) -> Vec<[f32; OUTPUT_DIM]> {
        let params: Vec<f32> = self.params.iter().map(|&p| p as f32).collect();
        let last = self.layers.len() - 1;
        xs.iter()
            .map(|x| {
                let mut cur = x.to_vec();
                for (i, layer) in self.layers.iter().enumerate() {
                    let w = &params[layer.weight_offset..layer.bias_offset];
                    let bias = &params[layer.bias_offset..layer.bias_offset + layer.outputs];
                    cur = (0..layer.outputs)
                        .map(|o| {
                            let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                            let acc = row.iter().zip(&cur).fold(bias[o], |acc, (w, x)| acc + w * x);
                            if i != last && acc <= 0.0 {
                                0.0
                            } else {
                                acc
                            }
                        })
                        .collect();
                }
                let mut y = [0.0; OUTPUT_DIM];
                y.copy_from_slice(&cur);
                y
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng) -> [f64; INPUT_DIM] {
        std::array::from_fn(|_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn shapes_chain() {
        let m = MlpDecoder::zeros(16, 2).unwrap();
        let dims: Vec<_> = m.layers().iter().map(|l| (l.inputs, l.outputs)).collect();
        assert_eq!(dims, vec![(12, 16), (16, 16), (16, 9)]);
        assert_eq!(parameter_count(64, 1), 12 * 64 + 64 + 64 * 9 + 9);
        assert!(MlpDecoder::zeros(0, 1).is_err());
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut m = MlpDecoder::zeros(8, 1).unwrap();
        let out_layer = m.layers()[1];
        for o in 0..OUTPUT_DIM {
            m.params_mut()[out_layer.bias_offset + o] = o as f64 * 0.1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let y = m.forward(&random_input(&mut rng));
            for (o, v) in y.iter().enumerate() {
                assert_eq!(*v, o as f64 * 0.1);
            }
        }
    }

    #[test]
    fn relu_kills_negative_inputs() {
        // hidden = identity on the first 12 units, output sums them
        let mut m = MlpDecoder::zeros(12, 1).unwrap();
        let (h, o) = (m.layers()[0], m.layers()[1]);
        for j in 0..12 {
            m.params_mut()[h.weight_offset + j * 12 + j] = 1.0;
            m.params_mut()[o.weight_offset + j] = 1.0;
        }
        assert_eq!(m.forward(&[-1.0; 12]), [0.0; 9]);
        let y = m.forward(&[0.5; 12]);
        assert_eq!(y[0], 6.0);
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = MlpDecoder::random(32, 1, &mut rng).unwrap();
        for _ in 0..20 {
            let x = random_input(&mut rng);
            let mut hidden = [0.0; 32];
            for (o, h) in hidden.iter_mut().enumerate() {
                let mut acc = m.bias(0, o);
                for j in 0..12 {
                    acc += m.weight(0, o, j) * x[j];
                }
                *h = acc.max(0.0);
            }
            let y = m.forward(&x);
            for o in 0..9 {
                let mut acc = m.bias(1, o);
                for j in 0..32 {
                    acc += m.weight(1, o, j) * hidden[j];
                }
                assert!((acc - y[o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = MlpDecoder::random(16, 1, &mut rng).unwrap();
        let mut cache = Activations::default();
        m.forward_cached(&random_input(&mut rng), &mut cache);
        let mut grads = vec![0.0; m.params().len()];
        let dx = m.backward(&cache, &[0.0; 9], &mut grads);
        assert!(grads.iter().all(|g| *g == 0.0));
        assert_eq!(dx, [0.0; 12]);
    }

    #[test]
    fn output_weight_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = MlpDecoder::random(16, 1, &mut rng).unwrap();
        let x = random_input(&mut rng);
        let mut cache = Activations::default();
        m.forward_cached(&x, &mut cache);
        let upstream: [f64; 9] = std::array::from_fn(|i| i as f64 - 4.0);
        let mut grads = vec![0.0; m.params().len()];
        m.backward(&cache, &upstream, &mut grads);
        let out = m.layers()[1];
        for o in 0..9 {
            for j in 0..16 {
                assert_eq!(grads[out.weight_offset + o * 16 + j], upstream[o] * cache.hidden[0][j]);
            }
            assert_eq!(grads[out.bias_offset + o], upstream[o]);
        }
    }

    #[test]
    fn batch_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = MlpDecoder::random(64, 2, &mut rng).unwrap();
        let xs: Vec<_> = (0..77).map(|_| random_input(&mut rng)).collect();
        let ys = m.forward_batch(&xs);
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(m.forward(x), *y);
        }
        let dup = m.forward_batch(&[xs[0], xs[0]]);
        assert_eq!(dup[0], dup[1]);
    }

    #[test]
    fn f32_batch_close_to_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = MlpDecoder::random(32, 1, &mut rng).unwrap();
        let xs: Vec<_> = (0..32).map(|_| random_input(&mut rng)).collect();
        let xs32: Vec<[f32; 12]> = xs.iter().map(|x| x.map(|v| v as f32)).collect();
        let ys = m.forward_batch(&xs);
        let ys32 = m.forward_batch_f32(&xs32);
        for (a, b) in ys.iter().zip(&ys32) {
            for o in 0..9 {
                assert!((a[o] - f64::from(b[o])).abs() < 1e-5);
            }
        }
    }
}
