//! The four-texture latent stack and its samplers.
//!
//! Addressing: texel `i` covers `[i/W, (i+1)/W)` with its center at
//! `(i + 0.5)/W`, and lookups clamp to the edge. Textures flagged as shifted
//! are sampled half a texel further along both axes, in the texel units of the
//! mip being read.
//!
//! Texture `k` has resolution `(W >> s_k, H >> s_k)`; a reference LOD `l`
//! reads its mip `max(0, l - s_k)`, clamped to the coarsest mip.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bc1::{Bc1Error, Bc1Image};

pub const LATENT_TEXTURES: usize = 4;
pub const LATENT_CHANNELS: usize = 3 * LATENT_TEXTURES;

/// Base dimensions must be a multiple of this so every variant resolution is
/// block aligned.
pub const BASE_ALIGNMENT: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PyramidError {
    #[error("base dimensions {width}x{height} must be nonzero multiples of {BASE_ALIGNMENT}")]
    BadDimensions { width: usize, height: usize },
    #[error("texture {texture} has {actual} mips, expected {expected}")]
    MipCount {
        texture: usize,
        expected: usize,
        actual: usize,
    },
    #[error("texture {texture} mip {mip} is {actual_w}x{actual_h}, expected {expected_w}x{expected_h}")]
    MipDimensions {
        texture: usize,
        mip: usize,
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },
    #[error(transparent)]
    Bc1(#[from] Bc1Error),
}

/// Resolution layout of the latent stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// `[1, 1, 1/2, 1/2]` of the base resolution.
    A,
    /// `[1, 1/2, 1/4, 1/8]` of the base resolution.
    B,
}

impl Variant {
    /// Half-texel shift on the second and fourth textures.
    pub const SHIFT_FLAGS: [bool; LATENT_TEXTURES] = [false, true, false, true];

    /// `log2` of the downscale factor of each texture.
    pub fn scale_offsets(self) -> [u32; LATENT_TEXTURES] {
        match self {
            Variant::A => [0, 0, 1, 1],
            Variant::B => [0, 1, 2, 3],
        }
    }

    pub fn resolutions(self, width: usize, height: usize) -> [(usize, usize); LATENT_TEXTURES] {
        self.scale_offsets().map(|s| (width >> s, height >> s))
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::A => 0,
            Variant::B => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Variant::A),
            1 => Some(Variant::B),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::A => "A",
            Variant::B => "B",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" | "varA" => Ok(Variant::A),
            "B" | "b" | "varB" => Ok(Variant::B),
            other => Err(format!("unknown variant `{other}` (expected A or B)")),
        }
    }
}

/// Number of mips such that the coarsest level is at least 4 texels on its
/// short side: `floor(log2(min(w, h))) - 1`.
pub fn mip_count(width: usize, height: usize) -> usize {
    let min = width.min(height);
    if min < 4 {
        return 1;
    }
    (min.ilog2() as usize) - 1
}

#[inline]
pub fn mip_dims(width: usize, height: usize, level: usize) -> (usize, usize) {
    ((width >> level).max(1), (height >> level).max(1))
}

pub fn validate_base_dims(width: usize, height: usize) -> Result<(), PyramidError> {
    if width == 0 || height == 0 || !width.is_multiple_of(BASE_ALIGNMENT) || !height.is_multiple_of(BASE_ALIGNMENT) {
        return Err(PyramidError::BadDimensions { width, height });
    }
    Ok(())
}

/// A decoded RGB latent image.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentImage {
    pub width: usize,
    pub height: usize,
    pub texels: Vec<[f64; 3]>,
}

impl LatentImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            texels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Self {
            width,
            height,
            texels: vec![value; width * height],
        }
    }

    #[inline]
    pub fn texel(&self, x: usize, y: usize) -> [f64; 3] {
        self.texels[y * self.width + x]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTexture {
    pub mips: Vec<LatentImage>,
}

/// One weighted texel read.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tap {
    pub mip: usize,
    pub texel: usize,
    pub weight: f64,
}

/// Bilinear taps in the order `(x0,y0) (x1,y0) (x0,y1) (x1,y1)`, as
/// `(texel index, weight)` pairs.
#[inline]
pub fn bilinear_taps(width: usize, height: usize, uv: [f64; 2], shifted: bool) -> [(usize, f64); 4] {
    let offset = if shifted { 0.0 } else { 0.5 };
    let fx = uv[0] * width as f64 - offset;
    let fy = uv[1] * height as f64 - offset;
    let (x0f, y0f) = (fx.floor(), fy.floor());
    let (wx, wy) = (fx - x0f, fy - y0f);
    let clamp = |v: f64, n: usize| -> usize { v.clamp(0.0, (n - 1) as f64) as usize };
    let (x0, x1) = (clamp(x0f, width), clamp(x0f + 1.0, width));
    let (y0, y1) = (clamp(y0f, height), clamp(y0f + 1.0, height));
    [
        (y0 * width + x0, (1.0 - wx) * (1.0 - wy)),
        (y0 * width + x1, wx * (1.0 - wy)),
        (y1 * width + x0, (1.0 - wx) * wy),
        (y1 * width + x1, wx * wy),
    ]
}

pub fn sample_bilinear(image: &LatentImage, uv: [f64; 2], shifted: bool) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (texel, weight) in bilinear_taps(image.width, image.height, uv, shifted) {
        let t = image.texels[texel];
        for c in 0..3 {
            out[c] += weight * t[c];
        }
    }
    out
}

/// Up to eight taps (two mips, four texels each) for one latent texture.
#[derive(Clone, Copy, Debug, Default)]
pub struct TextureFootprint {
    taps: [Tap; 8],
    len: usize,
}

impl TextureFootprint {
    pub fn taps(&self) -> &[Tap] {
        &self.taps[..self.len]
    }

    fn push_bilinear(&mut self, mip: usize, dims: (usize, usize), uv: [f64; 2], shifted: bool, scale: f64) {
        for (texel, weight) in bilinear_taps(dims.0, dims.1, uv, shifted) {
            self.taps[self.len] = Tap {
                mip,
                texel,
                weight: scale * weight,
            };
            self.len += 1;
        }
    }
}

/// All texel reads that make up one 12-channel latent sample.
#[derive(Clone, Copy, Debug, Default)]
pub struct LatentFootprint {
    pub textures: [TextureFootprint; LATENT_TEXTURES],
}

/// Geometry of a latent stack, independent of its contents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PyramidLayout {
    pub variant: Variant,
    pub width: usize,
    pub height: usize,
    /// `(width, height, mip count)` of each texture.
    pub textures: [(usize, usize, usize); LATENT_TEXTURES],
}

impl PyramidLayout {
    pub fn new(variant: Variant, width: usize, height: usize) -> Result<Self, PyramidError> {
        validate_base_dims(width, height)?;
        let textures = variant
            .resolutions(width, height)
            .map(|(w, h)| (w, h, mip_count(w, h)));
        Ok(Self {
            variant,
            width,
            height,
            textures,
        })
    }

    pub fn mip_dims(&self, texture: usize, mip: usize) -> (usize, usize) {
        let (w, h, _) = self.textures[texture];
        mip_dims(w, h, mip)
    }

    /// Effective (fractional) mip of texture `k` for reference LOD `lod`.
    pub fn effective_lod(&self, texture: usize, lod: f64) -> f64 {
        let s = f64::from(self.variant.scale_offsets()[texture]);
        let last = (self.textures[texture].2 - 1) as f64;
        (lod - s).max(0.0).min(last)
    }

    pub fn footprint(&self, uv: [f64; 2], lod: f64) -> LatentFootprint {
        let mut fp = LatentFootprint::default();
        for k in 0..LATENT_TEXTURES {
            let shifted = Variant::SHIFT_FLAGS[k];
            let e = self.effective_lod(k, lod);
            let l0 = e.floor();
            let frac = e - l0;
            let l0 = l0 as usize;
            let tex = &mut fp.textures[k];
            if frac == 0.0 {
                tex.push_bilinear(l0, self.mip_dims(k, l0), uv, shifted, 1.0);
            } else {
                tex.push_bilinear(l0, self.mip_dims(k, l0), uv, shifted, 1.0 - frac);
                tex.push_bilinear(l0 + 1, self.mip_dims(k, l0 + 1), uv, shifted, frac);
            }
        }
        fp
    }
}

/// A decoded latent stack ready for sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPyramid {
    pub layout: PyramidLayout,
    pub textures: Vec<LatentTexture>,
}

impl LatentPyramid {
    pub fn new(layout: PyramidLayout, textures: Vec<LatentTexture>) -> Result<Self, PyramidError> {
        assert_eq!(textures.len(), LATENT_TEXTURES, "latent stack needs {LATENT_TEXTURES} textures");
        for (k, tex) in textures.iter().enumerate() {
            let expected = layout.textures[k].2;
            if tex.mips.len() != expected {
                return Err(PyramidError::MipCount {
                    texture: k,
                    expected,
                    actual: tex.mips.len(),
                });
            }
            for (l, mip) in tex.mips.iter().enumerate() {
                let (ew, eh) = layout.mip_dims(k, l);
                if (mip.width, mip.height) != (ew, eh) {
                    return Err(PyramidError::MipDimensions {
                        texture: k,
                        mip: l,
                        expected_w: ew,
                        expected_h: eh,
                        actual_w: mip.width,
                        actual_h: mip.height,
                    });
                }
            }
        }
        Ok(Self { layout, textures })
    }

    /// Every texel of every texture set to `value`.
    pub fn constant(layout: PyramidLayout, value: [f64; 3]) -> Self {
        let textures = (0..LATENT_TEXTURES)
            .map(|k| LatentTexture {
                mips: (0..layout.textures[k].2)
                    .map(|l| {
                        let (w, h) = layout.mip_dims(k, l);
                        LatentImage::filled(w, h, value)
                    })
                    .collect(),
            })
            .collect();
        Self { layout, textures }
    }

    pub fn variant(&self) -> Variant {
        self.layout.variant
    }

    pub fn gather(&self, footprint: &LatentFootprint) -> [f64; LATENT_CHANNELS] {
        let mut out = [0.0; LATENT_CHANNELS];
        for (k, tex) in footprint.textures.iter().enumerate() {
            let mips = &self.textures[k].mips;
            for tap in tex.taps() {
                let t = mips[tap.mip].texels[tap.texel];
                for c in 0..3 {
                    out[3 * k + c] += tap.weight * t[c];
                }
            }
        }
        out
    }
}

/// Trilinear 12-channel latent lookup at reference LOD `lod`.
pub fn sample_latents(pyramid: &LatentPyramid, uv: [f64; 2], lod: f64) -> [f64; LATENT_CHANNELS] {
    pyramid.gather(&pyramid.layout.footprint(uv, lod))
}

/// Tap positions along the major axis: `taps` values evenly spaced over
/// `[-0.5, 0.5]`, or just `0` for a single tap.
pub fn aniso_offsets(taps: usize) -> Vec<f64> {
    assert!(taps >= 1, "anisotropic filtering needs at least one tap");
    if taps == 1 {
        return vec![0.0];
    }
    let last = (taps - 1) as f64;
    (0..taps).map(|i| i as f64 / last - 0.5).collect()
}

/// Average of `taps` trilinear lookups spread along `axis` (in uv units).
pub fn sample_latents_aniso(
    pyramid: &LatentPyramid,
    uv: [f64; 2],
    axis: [f64; 2],
    lod: f64,
    taps: usize,
) -> [f64; LATENT_CHANNELS] {
    let offsets = aniso_offsets(taps);
    let mut acc = [0.0; LATENT_CHANNELS];
    for t in &offsets {
        let p = [uv[0] + t * axis[0], uv[1] + t * axis[1]];
        let s = sample_latents(pyramid, p, lod);
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    let n = taps as f64;
    acc.map(|a| a / n)
}

/// BC1-backed latent stack, as exported or loaded from disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bc1Pyramid {
    pub layout: PyramidLayout,
    /// `textures[k][mip]`
    pub textures: Vec<Vec<Bc1Image>>,
}

impl Bc1Pyramid {
    pub fn decode(&self) -> Result<LatentPyramid, PyramidError> {
        let textures = self
            .textures
            .iter()
            .map(|mips| {
                Ok(LatentTexture {
                    mips: mips.iter().map(Bc1Image::decode).collect::<Result<_, _>>()?,
                })
            })
            .collect::<Result<Vec<_>, PyramidError>>()?;
        LatentPyramid::new(self.layout.clone(), textures)
    }
}
