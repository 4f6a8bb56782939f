//! The compression loop.
//!
//! Each step draws a batch of `(uv, lod)` points, decodes the latent stack
//! through the MLP, compares against a trilinear reference fetch with an L1
//! loss, and backpropagates through the MLP, the trilinear/bilinear weights,
//! the quantizers (straight-through) and the sigmoids. Latent parameters and
//! MLP parameters are updated by separate Adam instances.
//!
//! Batch evaluation runs in parallel over fixed-size chunks; chunk results are
//! reduced in chunk order and latent gradients are scattered in sample order.
//! Results are independent of the worker thread count.

mod texture_set;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use texture_set::{ChannelRole, FeatureImage, TextureSet, FEATURE_CHANNELS};

use crate::mlp::{Activations, MlpDecoder, MlpError, OUTPUT_DIM};
use crate::pyramid::{
    Bc1Pyramid, LatentFootprint, LatentPyramid, LatentTexture, PyramidError, PyramidLayout, Variant,
    LATENT_TEXTURES,
};
use crate::qat::{AdamState, QuantMode, TrainableLatentTexture};

pub const DEFAULT_BATCH_SIZE: usize = 1 << 14;
pub const DEFAULT_LR_MLP: f64 = 1e-3;
pub const DEFAULT_LR_LATENT: f64 = 1e-2;

/// Samples per parallel work item.
const CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pyramid(#[from] PyramidError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("loss became non-finite at step {step} (offending group: {group})")]
    NonFiniteLoss { step: usize, group: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr_mlp: f64,
    pub lr_latent: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::A,
            hidden_dim: 32,
            hidden_layers: 1,
            steps: 1000,
            batch_size: DEFAULT_BATCH_SIZE,
            lr_mlp: DEFAULT_LR_MLP,
            lr_latent: DEFAULT_LR_LATENT,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr_mlp > 0.0 && self.lr_latent > 0.0) {
            return Err(TrainError::Config("learning rates must be positive".into()));
        }
        if self.hidden_dim == 0 || self.hidden_layers == 0 {
            return Err(TrainError::Config("hidden dimension and layer count must be positive".into()));
        }
        Ok(())
    }
}

/// One training point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingSample {
    pub uv: [f64; 2],
    pub lod: f64,
}

/// Draw `uv` uniformly in `[0,1)^2` and `lod = -log2(u)` with `u` uniform in
/// `(2^-max_lod, 1]`. The LOD density is `ln2 * 2^-l / (1 - 2^-max_lod)` on
/// `[0, max_lod]`, favoring fine mips.
pub fn sample_training_point<R: Rng + ?Sized>(rng: &mut R, max_lod: f64) -> TrainingSample {
    let uv = [rng.gen::<f64>(), rng.gen::<f64>()];
    let r = rng.gen::<f64>();
    let lod = if max_lod <= 0.0 {
        0.0
    } else {
        let floor = (-max_lod).exp2();
        let u = 1.0 - r * (1.0 - floor);
        (-u.log2()).clamp(0.0, max_lod)
    };
    TrainingSample { uv, lod }
}

/// Mean of the LOD density used by [`sample_training_point`].
pub fn expected_lod(max_lod: f64) -> f64 {
    if max_lod <= 0.0 {
        return 0.0;
    }
    let a = (-max_lod).exp2();
    1.0 / std::f64::consts::LN_2 - max_lod * a / (1.0 - a)
}

/// Gradients for every trainable parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub mlp: Vec<f64>,
    pub latents: Vec<Vec<f64>>,
}

/// Latent textures plus decoder, mid-training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub layout: PyramidLayout,
    pub latents: Vec<TrainableLatentTexture>,
    pub mlp: MlpDecoder,
}

impl TrainingState {
    /// Random initialization: latents first, then MLP weights.
    pub fn init<R: Rng + ?Sized>(
        layout: PyramidLayout,
        hidden_dim: usize,
        hidden_layers: usize,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        let latents = layout
            .textures
            .iter()
            .map(|&(w, h, mips)| TrainableLatentTexture::random(w, h, mips, rng))
            .collect();
        let mlp = MlpDecoder::random(hidden_dim, hidden_layers, rng)?;
        Ok(Self { layout, latents, mlp })
    }

    pub fn decode(&self, mode: QuantMode) -> LatentPyramid {
        let textures = self
            .latents
            .iter()
            .map(|t| LatentTexture {
                mips: (0..t.mip_count()).map(|l| t.decode(l, mode)).collect(),
            })
            .collect();
        LatentPyramid::new(self.layout.clone(), textures).expect("layout matches by construction")
    }

    /// Freeze the latents to BC1. Returns the pyramid and the number of
    /// degenerate blocks that needed the equal-endpoint rewrite.
    pub fn export(&self) -> (Bc1Pyramid, usize) {
        let mut degenerate = 0;
        let textures = self
            .latents
            .iter()
            .map(|t| {
                let e = t.export_to_bc1();
                degenerate += e.degenerate_blocks;
                e.mips
            })
            .collect();
        (
            Bc1Pyramid {
                layout: self.layout.clone(),
                textures,
            },
            degenerate,
        )
    }

    /// Mean L1 loss over the batch and the nine channels, with gradients for
    /// every parameter.
    pub fn loss_and_gradients(&self, reference: &TextureSet, batch: &[TrainingSample], mode: QuantMode) -> (f64, Gradients) {
        let pyramid = self.decode(mode);
        let scale = 1.0 / (batch.len() * OUTPUT_DIM) as f64;
        let mlp_len = self.mlp.params().len();

        struct ChunkResult {
            loss: f64,
            mlp_grad: Vec<f64>,
            footprints: Vec<LatentFootprint>,
            input_grads: Vec<[f64; 12]>,
        }

        let chunks: Vec<ChunkResult> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut cache = Activations::default();
                let mut out = ChunkResult {
                    loss: 0.0,
                    mlp_grad: vec![0.0; mlp_len],
                    footprints: Vec::with_capacity(chunk.len()),
                    input_grads: Vec::with_capacity(chunk.len()),
                };
                for s in chunk {
                    let fp = self.layout.footprint(s.uv, s.lod);
                    let x = pyramid.gather(&fp);
                    let y = self.mlp.forward_cached(&x, &mut cache);
                    let r = reference.reference_fetch(s.uv, s.lod);
                    let mut upstream = [0.0; OUTPUT_DIM];
                    for c in 0..OUTPUT_DIM {
                        let d = y[c] - r[c];
                        out.loss += d.abs();
                        upstream[c] = scale * sign(d);
                    }
                    let dx = self.mlp.backward(&cache, &upstream, &mut out.mlp_grad);
                    out.footprints.push(fp);
                    out.input_grads.push(dx);
                }
                out
            })
            .collect();

        let mut loss = 0.0;
        let mut mlp_grad = vec![0.0; mlp_len];
        let mut texel_grads: Vec<Vec<Vec<[f64; 3]>>> = pyramid
            .textures
            .iter()
            .map(|t| t.mips.iter().map(|m| vec![[0.0; 3]; m.texels.len()]).collect())
            .collect();
        for chunk in &chunks {
            loss += chunk.loss;
            for (g, c) in mlp_grad.iter_mut().zip(&chunk.mlp_grad) {
                *g += c;
            }
            for (fp, dx) in chunk.footprints.iter().zip(&chunk.input_grads) {
                for (k, tex) in fp.textures.iter().enumerate() {
                    for tap in tex.taps() {
                        let g = &mut texel_grads[k][tap.mip][tap.texel];
                        for c in 0..3 {
                            g[c] += tap.weight * dx[3 * k + c];
                        }
                    }
                }
            }
        }

        let latents = self
            .latents
            .par_iter()
            .zip(texel_grads.par_iter())
            .map(|(t, grads)| {
                let mut out = vec![0.0; t.params().len()];
                for (l, g) in grads.iter().enumerate() {
                    t.backward(l, mode, g, &mut out);
                }
                out
            })
            .collect();

        (
            loss * scale,
            Gradients {
                mlp: mlp_grad,
                latents,
            },
        )
    }

    /// Name of the first parameter group with non-finite values, checking
    /// parameters before gradients.
    fn first_non_finite_group(&self, grads: &Gradients) -> String {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(self.mlp.params()) {
            return "mlp".into();
        }
        if let Some(k) = self.latents.iter().position(|t| !finite(t.params())) {
            return format!("latent texture {k}");
        }
        if !finite(&grads.mlp) {
            return "mlp".into();
        }
        if let Some(k) = grads.latents.iter().position(|g| !finite(g)) {
            return format!("latent texture {k}");
        }
        "loss".into()
    }
}

#[inline]
fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub lr_mlp: f64,
    pub lr_latent: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    /// One `step loss lr_mlp lr_latent` line per step.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{} {:e} {:e} {:e}", e.step, e.loss, e.lr_mlp, e.lr_latent);
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    /// Mean loss over the `window` steps ending at `end` (exclusive).
    pub fn moving_average(&self, end: usize, window: usize) -> Option<f64> {
        if window == 0 || end < window || end > self.entries.len() {
            return None;
        }
        let sum: f64 = self.entries[end - window..end].iter().map(|e| e.loss).sum();
        Some(sum / window as f64)
    }
}

pub struct TrainOutput {
    pub bc1: Bc1Pyramid,
    /// The BC1 blocks decoded back to a sampleable pyramid.
    pub pyramid: LatentPyramid,
    pub mlp: MlpDecoder,
    pub log: TrainingLog,
    pub degenerate_blocks: usize,
}

pub fn train(reference: &TextureSet, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    train_with_progress(reference, cfg, |_| {})
}

/// [`train`], calling `progress` after every step.
pub fn train_with_progress(
    reference: &TextureSet,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&LogEntry),
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let layout = PyramidLayout::new(cfg.variant, reference.width(), reference.height())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = TrainingState::init(layout, cfg.hidden_dim, cfg.hidden_layers, &mut rng)?;

    let mut adam_mlp = AdamState::new(state.mlp.params().len(), cfg.lr_mlp);
    let mut adam_latents: Vec<AdamState> = state
        .latents
        .iter()
        .map(|t| AdamState::new(t.params().len(), cfg.lr_latent))
        .collect();

    let max_lod = reference.max_lod();
    let mut log = TrainingLog::default();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        batch.extend((0..cfg.batch_size).map(|_| sample_training_point(&mut rng, max_lod)));
        let (loss, grads) = state.loss_and_gradients(reference, &batch, QuantMode::Quantized);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                group: state.first_non_finite_group(&grads),
            });
        }
        let entry = LogEntry {
            step,
            loss,
            lr_mlp: cfg.lr_mlp,
            lr_latent: cfg.lr_latent,
        };
        log.entries.push(entry);
        progress(&entry);

        adam_mlp
            .step(state.mlp.params_mut(), &grads.mlp)
            .expect("gradient shape matches parameters");
        for ((t, adam), g) in state.latents.iter_mut().zip(&mut adam_latents).zip(&grads.latents) {
            adam.step(t.params_mut(), g).expect("gradient shape matches parameters");
        }
    }

    let (bc1, degenerate_blocks) = state.export();
    let pyramid = bc1.decode()?;
    debug_assert_eq!(pyramid.textures.len(), LATENT_TEXTURES);
    Ok(TrainOutput {
        bc1,
        pyramid,
        mlp: state.mlp,
        log,
        degenerate_blocks,
    })
}
