//! Quantization-aware latent textures and the Adam optimizer.
//!
//! Each latent texture keeps unconstrained real parameters: two endpoints per
//! 4x4 block and one alpha per texel. The forward pass squashes them with a
//! sigmoid and quantizes (2 bits for alpha, 5:6:5 for endpoints); the backward
//! pass treats quantization as the identity (straight-through estimator).

use rand::Rng;
use thiserror::Error;

use crate::bc1::{self, AlphaLevel, Bc1Image, Rgb565, BLOCK_DIM};
use crate::pyramid::{mip_dims, LatentImage};

pub const ALPHA_BITS: u32 = 2;
pub const ENDPOINT_BITS: [u32; 3] = [5, 6, 5];

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QatError {
    #[error("parameter array has {params} entries but gradient has {grads}")]
    ShapeMismatch { params: usize, grads: usize },
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn sigmoid_grad(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Grid code of `x` on `2^bits - 1` steps, rounding half away from zero.
#[inline]
pub fn quant_code(x: f64, bits: u32) -> u32 {
    let levels = f64::from((1u32 << bits) - 1);
    (x.clamp(0.0, 1.0) * levels).round() as u32
}

/// Forward value of the quantizer: `round(x * (2^b - 1)) / (2^b - 1)`.
/// Inputs outside [0, 1] are clamped first.
#[inline]
pub fn quant(x: f64, bits: u32) -> f64 {
    let levels = f64::from((1u32 << bits) - 1);
    f64::from(quant_code(x, bits)) / levels
}

/// Backward pass of the quantizer: the incoming gradient, unchanged.
#[inline]
pub fn quant_backward(upstream: f64) -> f64 {
    upstream
}

/// Whether the forward pass quantizes. `Smooth` replaces every quantizer with
/// the identity; the backward code is shared between the two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    Quantized,
    Smooth,
}

/// Offsets of one mip's parameters inside the flat parameter vector.
/// Layout per mip: endpoint0 (3 per block), endpoint1 (3 per block), alpha
/// (1 per texel), all row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MipLayout {
    pub width: usize,
    pub height: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub offset: usize,
}

impl MipLayout {
    pub fn blocks(&self) -> usize {
        self.blocks_x * self.blocks_y
    }

    pub fn endpoint0_offset(&self) -> usize {
        self.offset
    }

    pub fn endpoint1_offset(&self) -> usize {
        self.offset + 3 * self.blocks()
    }

    pub fn alpha_offset(&self) -> usize {
        self.offset + 6 * self.blocks()
    }

    pub fn param_count(&self) -> usize {
        6 * self.blocks() + self.width * self.height
    }

    #[inline]
    pub fn block_of(&self, x: usize, y: usize) -> usize {
        (y / BLOCK_DIM) * self.blocks_x + x / BLOCK_DIM
    }
}

/// Trainable latent texture with its full mip chain.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableLatentTexture {
    mips: Vec<MipLayout>,
    params: Vec<f64>,
}

impl TrainableLatentTexture {
    pub fn zeros(width: usize, height: usize, mip_count: usize) -> Self {
        let mut offset = 0;
        let mips: Vec<MipLayout> = (0..mip_count)
            .map(|l| {
                let (w, h) = mip_dims(width, height, l);
                let mip = MipLayout {
                    width: w,
                    height: h,
                    blocks_x: w.div_ceil(BLOCK_DIM),
                    blocks_y: h.div_ceil(BLOCK_DIM),
                    offset,
                };
                offset += mip.param_count();
                mip
            })
            .collect();
        Self {
            mips,
            params: vec![0.0; offset],
        }
    }

    /// Raw parameters drawn uniformly from [-1, 1].
    pub fn random<R: Rng + ?Sized>(width: usize, height: usize, mip_count: usize, rng: &mut R) -> Self {
        let mut t = Self::zeros(width, height, mip_count);
        for p in &mut t.params {
            *p = rng.gen_range(-1.0..=1.0);
        }
        t
    }

    pub fn mip_count(&self) -> usize {
        self.mips.len()
    }

    pub fn mip(&self, level: usize) -> &MipLayout {
        &self.mips[level]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Decoded RGB texels of one mip.
    pub fn decode(&self, level: usize, mode: QuantMode) -> LatentImage {
        let mip = self.mips[level];
        let mut image = LatentImage::new(mip.width, mip.height);
        let ends = self.block_endpoints(&mip);
        for y in 0..mip.height {
            for x in 0..mip.width {
                let b = &ends[mip.block_of(x, y)];
                let i = y * mip.width + x;
                let raw_alpha = self.params[mip.alpha_offset() + i];
                image.texels[i] = match mode {
                    QuantMode::Quantized => {
                        bc1::interpolate(b.codes.0.expand(), b.codes.1.expand(), alpha_level(raw_alpha))
                    }
                    QuantMode::Smooth => {
                        let a = sigmoid(raw_alpha);
                        let (e0, e1) = b.smooth;
                        [0, 1, 2].map(|c| (1.0 - a) * e0[c] + a * e1[c])
                    }
                };
            }
        }
        image
    }

    /// Accumulate parameter gradients for one mip given `dL/dtexel`.
    ///
    /// `grads` has the same layout as [`params`](Self::params).
    pub fn backward(&self, level: usize, mode: QuantMode, texel_grads: &[[f64; 3]], grads: &mut [f64]) {
        let mip = self.mips[level];
        assert_eq!(texel_grads.len(), mip.width * mip.height);
        assert_eq!(grads.len(), self.params.len());
        let ends = self.block_endpoints(&mip);
        let (o0, o1, oa) = (mip.endpoint0_offset(), mip.endpoint1_offset(), mip.alpha_offset());
        for y in 0..mip.height {
            for x in 0..mip.width {
                let i = y * mip.width + x;
                let g = texel_grads[i];
                if g == [0.0; 3] {
                    continue;
                }
                let b = mip.block_of(x, y);
                let ends = &ends[b];
                let raw_alpha = self.params[oa + i];
                let s_alpha = sigmoid(raw_alpha);
                // Forward values; in quantized mode these are the quantized ones.
                let (a, e0, e1) = match mode {
                    QuantMode::Quantized => (
                        alpha_level(raw_alpha).value(),
                        unit(ends.codes.0.expand()),
                        unit(ends.codes.1.expand()),
                    ),
                    QuantMode::Smooth => (s_alpha, ends.smooth.0, ends.smooth.1),
                };
                let mut d_alpha = 0.0;
                for c in 0..3 {
                    d_alpha += g[c] * (e1[c] - e0[c]);
                    grads[o0 + 3 * b + c] += quant_backward(g[c] * (1.0 - a)) * sigmoid_grad(ends.smooth.0[c]);
                    grads[o1 + 3 * b + c] += quant_backward(g[c] * a) * sigmoid_grad(ends.smooth.1[c]);
                }
                grads[oa + i] += quant_backward(d_alpha) * sigmoid_grad(s_alpha);
            }
        }
    }

    /// Freeze every mip into BC1 blocks.
    pub fn export_to_bc1(&self) -> Bc1Export {
        let mut degenerate_blocks = 0;
        let mips = self
            .mips
            .iter()
            .map(|mip| {
                let oa = mip.alpha_offset();
                let blocks = (0..mip.blocks())
                    .map(|b| {
                        let (bx, by) = (b % mip.blocks_x, b / mip.blocks_x);
                        let levels: [AlphaLevel; 16] = std::array::from_fn(|t| {
                            let (x, y) = (bx * BLOCK_DIM + t % 4, by * BLOCK_DIM + t / 4);
                            if x < mip.width && y < mip.height {
                                alpha_level(self.params[oa + y * mip.width + x])
                            } else {
                                AlphaLevel::Zero
                            }
                        });
                        let (e0, e1) = self.endpoint_codes(mip, b);
                        let enc = bc1::encode_block(e0, e1, &levels);
                        degenerate_blocks += usize::from(enc.degenerate);
                        enc.block
                    })
                    .collect();
                Bc1Image {
                    width: mip.width,
                    height: mip.height,
                    blocks,
                }
            })
            .collect();
        Bc1Export {
            mips,
            degenerate_blocks,
        }
    }

    fn endpoint_codes(&self, mip: &MipLayout, block: usize) -> (Rgb565, Rgb565) {
        let code = |offset: usize| {
            let raw = &self.params[offset + 3 * block..offset + 3 * block + 3];
            let c: [u8; 3] = std::array::from_fn(|c| quant_code(sigmoid(raw[c]), ENDPOINT_BITS[c]) as u8);
            Rgb565::new(c[0], c[1], c[2])
        };
        (code(mip.endpoint0_offset()), code(mip.endpoint1_offset()))
    }

    fn block_endpoints(&self, mip: &MipLayout) -> Vec<BlockEndpoints> {
        (0..mip.blocks())
            .map(|b| {
                let s = |offset: usize| -> [f64; 3] {
                    std::array::from_fn(|c| sigmoid(self.params[offset + 3 * b + c]))
                };
                let smooth = (s(mip.endpoint0_offset()), s(mip.endpoint1_offset()));
                let code = |v: [f64; 3]| {
                    let c: [u8; 3] = std::array::from_fn(|c| quant_code(v[c], ENDPOINT_BITS[c]) as u8);
                    Rgb565::new(c[0], c[1], c[2])
                };
                BlockEndpoints {
                    codes: (code(smooth.0), code(smooth.1)),
                    smooth,
                }
            })
            .collect()
    }
}

struct BlockEndpoints {
    /// sigmoid of the raw endpoint parameters
    smooth: ([f64; 3], [f64; 3]),
    codes: (Rgb565, Rgb565),
}

#[inline]
fn alpha_level(raw: f64) -> AlphaLevel {
    AlphaLevel::from_steps(quant_code(sigmoid(raw), ALPHA_BITS) as u8)
}

#[inline]
fn unit(c: [u8; 3]) -> [f64; 3] {
    c.map(|v| f64::from(v) / 255.0)
}

/// BC1 blocks for every mip of one latent texture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bc1Export {
    pub mips: Vec<Bc1Image>,
    /// Blocks whose endpoints collapsed to the same code.
    pub degenerate_blocks: usize,
}

pub fn export_to_bc1(texture: &TrainableLatentTexture) -> Bc1Export {
    texture.export_to_bc1()
}

/// Bias-corrected Adam state for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }

    /// One update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), QatError> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(QatError::ShapeMismatch {
                params: params.len(),
                grads: grads.len(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
