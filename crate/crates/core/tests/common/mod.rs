#![allow(dead_code)]

use std::collections::HashMap;

use nbtc_core::mlp::MlpDecoder;
use nbtc_core::pyramid::{LatentPyramid, PyramidLayout, Variant};
use nbtc_core::tilesim::{Asset, MaterialScreen, ScreenPixel};
use nbtc_core::trainer::{FeatureImage, TextureSet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stand-alone BC1 decoder written from the block description: returns the
/// palette numerators over 765 for each texel, row-major.
///
/// Endpoints widen to 8 bits by replicating their top bits, written here in
/// multiply form: `(v * 33) >> 2` and `(v * 65) >> 4`. Returns `None` for
/// three-color blocks.
pub fn reference_decode(bytes: &[u8; 8]) -> Option<[[u32; 3]; 16]> {
    let c0 = u32::from(bytes[0]) | (u32::from(bytes[1]) << 8);
    let c1 = u32::from(bytes[2]) | (u32::from(bytes[3]) << 8);
    if c0 <= c1 {
        return None;
    }
    let rgb = |c: u32| {
        [
            ((c >> 11) * 33) >> 2,
            (((c >> 5) & 63) * 65) >> 4,
            ((c & 31) * 33) >> 2,
        ]
    };
    let (a, b) = (rgb(c0), rgb(c1));
    let palette: [[u32; 3]; 4] = [
        a.map(|v| 3 * v),
        b.map(|v| 3 * v),
        [0, 1, 2].map(|i| 2 * a[i] + b[i]),
        [0, 1, 2].map(|i| a[i] + 2 * b[i]),
    ];
    let bits = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    Some(std::array::from_fn(|t| palette[((bits >> (2 * t)) & 3) as usize]))
}

/// Smooth, channel-correlated 9-channel material.
pub fn synthetic_set(size: usize, seed: u64) -> TextureSet {
    let mut r = rng(seed);
    let phase: [f64; 6] = std::array::from_fn(|_| r.gen_range(0.0..std::f64::consts::TAU));
    let base = FeatureImage::from_fn(size, size, |x, y| {
        let u = x as f64 / size as f64;
        let v = y as f64 / size as f64;
        let tau = std::f64::consts::TAU;
        let a = 0.5 + 0.3 * (tau * (2.0 * u) + phase[0]).sin() * (tau * v + phase[1]).cos();
        let b = 0.5 + 0.25 * (tau * (3.0 * v + u) + phase[2]).sin();
        let c = 0.5 + 0.2 * (tau * (u - 2.0 * v) + phase[3]).cos();
        let d = 0.5 + 0.15 * (tau * 5.0 * u + phase[4]).sin() * (tau * 4.0 * v + phase[5]).sin();
        [
            a,
            0.8 * a + 0.1,
            0.5 * a + 0.4 * b,
            0.5 + 0.3 * (b - 0.5),
            0.5 + 0.3 * (c - 0.5),
            0.9,
            c,
            0.3 * d + 0.2,
            0.6 * b + 0.3 * d,
        ]
    });
    TextureSet::from_base(base).unwrap()
}

/// Busier material: each channel mixes several sinusoids at up to 12 cycles
/// across the texture, with weaker coupling between channels.
pub fn detailed_set(size: usize, seed: u64) -> TextureSet {
    let mut r = rng(seed);
    let waves: Vec<[f64; 4]> = (0..12)
        .map(|_| {
            [
                r.gen_range(-12.0..12.0_f64).round(),
                r.gen_range(-12.0..12.0_f64).round(),
                r.gen_range(0.0..std::f64::consts::TAU),
                r.gen_range(0.3..1.0),
            ]
        })
        .collect();
    let mix: Vec<[f64; 12]> = (0..9).map(|_| std::array::from_fn(|_| r.gen_range(-1.0..1.0))).collect();
    let base = FeatureImage::from_fn(size, size, |x, y| {
        let u = x as f64 / size as f64;
        let v = y as f64 / size as f64;
        let w: Vec<f64> = waves
            .iter()
            .map(|[fu, fv, ph, a]| a * (std::f64::consts::TAU * (fu * u + fv * v) + ph).sin())
            .collect();
        std::array::from_fn(|c| {
            let s: f64 = mix[c].iter().zip(&w).map(|(m, w)| m * w).sum();
            (0.5 + 0.08 * s).clamp(0.0, 1.0)
        })
    });
    TextureSet::from_base(base).unwrap()
}

pub fn constant_set(size: usize, value: [f64; 9]) -> TextureSet {
    TextureSet::from_base(FeatureImage::from_fn(size, size, |_, _| value)).unwrap()
}

/// Decoder asset on a 32x32 base with random constant-per-texture latents
/// and a random MLP.
pub fn random_asset<R: Rng>(r: &mut R, hidden_dim: usize) -> Asset {
    let variant = if r.gen() { Variant::A } else { Variant::B };
    let layout = PyramidLayout::new(variant, 32, 32).unwrap();
    let mut pyramid = LatentPyramid::constant(layout, [0.0; 3]);
    for tex in &mut pyramid.textures {
        for mip in &mut tex.mips {
            for t in &mut mip.texels {
                *t = [r.gen(), r.gen(), r.gen()];
            }
        }
    }
    Asset {
        pyramid,
        mlp: MlpDecoder::random(hidden_dim, 1, r).unwrap(),
    }
}

pub fn random_assets<R: Rng>(r: &mut R, ids: &[u32]) -> HashMap<u32, Asset> {
    ids.iter().map(|&id| (id, random_asset(r, 8))).collect()
}

/// Random screen whose ids come from `ids` (plus empty pixels), built from
/// random rectangles so tiles of every class appear.
pub fn random_screen<R: Rng>(r: &mut R, width: usize, height: usize, ids: &[u32]) -> MaterialScreen {
    let mut s = MaterialScreen::new(width, height).unwrap();
    let pick = |r: &mut R| -> Option<u32> {
        let k = r.gen_range(0..=ids.len());
        ids.get(k).copied()
    };
    let rects = r.gen_range(1..12);
    for _ in 0..rects {
        let (x0, y0) = (r.gen_range(0..width), r.gen_range(0..height));
        let (x1, y1) = (r.gen_range(x0..width) + 1, r.gen_range(y0..height) + 1);
        let id = pick(r);
        let noise = r.gen_range(0.0..0.5);
        for y in y0..y1 {
            for x in x0..x1 {
                let id = if r.gen_bool(noise) { pick(r) } else { id };
                s.set(
                    x,
                    y,
                    ScreenPixel {
                        material: id,
                        uv: [r.gen(), r.gen()],
                        lod: r.gen_range(0.0..4.0),
                    },
                );
            }
        }
    }
    s
}
