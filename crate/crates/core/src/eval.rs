//! Quality and footprint metrics.

use std::fmt::Write as _;

use num_rational::Ratio;
use rayon::prelude::*;
use thiserror::Error;

use crate::mlp::{parameter_count, MlpDecoder};
use crate::pyramid::{
    aniso_offsets, sample_latents, sample_latents_aniso, validate_base_dims, LatentPyramid, PyramidError, Variant,
    LATENT_CHANNELS,
};
use crate::trainer::{ChannelRole, TextureSet, FEATURE_CHANNELS};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// 9 channels at 8 bits.
pub const REFERENCE_BITS_PER_TEXEL: u64 = 72;

/// BC1 stores a 4x4 block in 64 bits.
pub const BC1_BITS_PER_TEXEL: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("image sizes differ: {decoded} vs {reference} values")]
    SizeMismatch { decoded: usize, reference: usize },
    #[error("cannot compute PSNR of empty images")]
    Empty,
    #[error("LOD {0} is outside the reference mip chain")]
    BadLod(String),
    #[error("asset is {asset_w}x{asset_h} but reference is {ref_w}x{ref_h}")]
    ResolutionMismatch {
        asset_w: usize,
        asset_h: usize,
        ref_w: usize,
        ref_h: usize,
    },
    #[error(transparent)]
    Pyramid(#[from] PyramidError),
}

/// `10 log10(1 / mse)` for values in [0, 1], capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

pub fn mse(decoded: &[f64], reference: &[f64]) -> Result<f64, EvalError> {
    if decoded.len() != reference.len() {
        return Err(EvalError::SizeMismatch {
            decoded: decoded.len(),
            reference: reference.len(),
        });
    }
    if decoded.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum: f64 = decoded.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / decoded.len() as f64)
}

/// PSNR over flattened images with values in [0, 1].
pub fn psnr(decoded: &[f64], reference: &[f64]) -> Result<f64, EvalError> {
    Ok(psnr_from_mse(mse(decoded, reference)?))
}

/// Storage cost per base texel, in exact rationals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub latent_bits_per_texel: Ratio<u64>,
    pub mlp_bits_per_texel: Ratio<u64>,
    pub reference_bits_per_texel: Ratio<u64>,
}

impl Footprint {
    pub fn total_bits_per_texel(&self) -> Ratio<u64> {
        self.latent_bits_per_texel + self.mlp_bits_per_texel
    }

    /// Reference over latent payload alone.
    pub fn latent_ratio(&self) -> Ratio<u64> {
        self.reference_bits_per_texel / self.latent_bits_per_texel
    }

    /// Reference over latent payload plus MLP weights.
    pub fn compression_ratio(&self) -> Ratio<u64> {
        self.reference_bits_per_texel / self.total_bits_per_texel()
    }
}

pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Footprint of a variant at base size `width x height` with a one-hidden-
/// layer decoder of width `hidden_dim` stored as 32-bit floats. With
/// `include_mips`, latent and reference costs both carry a 4/3 mip factor.
pub fn footprint(
    variant: Variant,
    width: usize,
    height: usize,
    hidden_dim: usize,
    include_mips: bool,
) -> Result<Footprint, EvalError> {
    footprint_with_layers(variant, width, height, hidden_dim, 1, include_mips)
}

pub fn footprint_with_layers(
    variant: Variant,
    width: usize,
    height: usize,
    hidden_dim: usize,
    hidden_layers: usize,
    include_mips: bool,
) -> Result<Footprint, EvalError> {
    validate_base_dims(width, height)?;
    let base = (width * height) as u64;
    let latent_texels: u64 = variant
        .resolutions(width, height)
        .iter()
        .map(|&(w, h)| (w * h) as u64)
        .sum();
    let mut latent = Ratio::new(BC1_BITS_PER_TEXEL * latent_texels, base);
    let mut reference = Ratio::from_integer(REFERENCE_BITS_PER_TEXEL);
    if include_mips {
        let mip = Ratio::new(4, 3);
        latent *= mip;
        reference *= mip;
    }
    let mlp_bits = 32 * parameter_count(hidden_dim, hidden_layers) as u64;
    Ok(Footprint {
        latent_bits_per_texel: latent,
        mlp_bits_per_texel: Ratio::new(mlp_bits, base),
        reference_bits_per_texel: reference,
    })
}

/// Anisotropic footprint: major axis in uv units and tap count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aniso {
    pub axis: [f64; 2],
    pub taps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport {
    pub lod: f64,
    pub aniso: Option<Aniso>,
    pub width: usize,
    pub height: usize,
    pub channel_mse: [f64; FEATURE_CHANNELS],
    pub channel_psnr: [f64; FEATURE_CHANNELS],
    pub mse: f64,
    pub psnr: f64,
}

impl QualityReport {
    fn from_sums(lod: f64, aniso: Option<Aniso>, width: usize, height: usize, sums: [f64; FEATURE_CHANNELS]) -> Self {
        let n = (width * height) as f64;
        let channel_mse = sums.map(|s| s / n);
        let mse = sums.iter().sum::<f64>() / (n * FEATURE_CHANNELS as f64);
        Self {
            lod,
            aniso,
            width,
            height,
            channel_mse,
            channel_psnr: channel_mse.map(psnr_from_mse),
            mse,
            psnr: psnr_from_mse(mse),
        }
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lod: {}", self.lod);
        match self.aniso {
            Some(a) => {
                let _ = writeln!(out, "filter: anisotropic");
                let _ = writeln!(out, "aniso_axis: {},{}", a.axis[0], a.axis[1]);
                let _ = writeln!(out, "aniso_taps: {}", a.taps);
            }
            None => {
                let _ = writeln!(out, "filter: isotropic");
            }
        }
        let _ = writeln!(out, "resolution: {}x{}", self.width, self.height);
        let _ = writeln!(out, "psnr: {:.4}", self.psnr);
        let _ = writeln!(out, "mse: {:e}", self.mse);
        for (role, p) in ChannelRole::STANDARD.iter().zip(self.channel_psnr) {
            let _ = writeln!(out, "psnr_{}: {:.4}", role.name(), p);
        }
        out
    }

    pub fn csv_header() -> String {
        let mut h = String::from("lod,taps,width,height,psnr,mse");
        for role in ChannelRole::STANDARD {
            let _ = write!(h, ",psnr_{}", role.name());
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let taps = self.aniso.map_or(1, |a| a.taps);
        let mut row = format!(
            "{},{},{},{},{:.6},{:e}",
            self.lod, taps, self.width, self.height, self.psnr, self.mse
        );
        for p in self.channel_psnr {
            let _ = write!(row, ",{p:.6}");
        }
        row
    }
}

/// Decode one texel (clamped to [0, 1]) the way evaluation does.
pub fn decode_texel(
    pyramid: &LatentPyramid,
    mlp: &MlpDecoder,
    uv: [f64; 2],
    lod: f64,
    aniso: Option<Aniso>,
) -> [f64; FEATURE_CHANNELS] {
    let x: [f64; LATENT_CHANNELS] = match aniso {
        Some(a) => sample_latents_aniso(pyramid, uv, a.axis, lod, a.taps),
        None => sample_latents(pyramid, uv, lod),
    };
    mlp.forward(&x).map(|v| v.clamp(0.0, 1.0))
}

/// Reference value under the same footprint: a plain trilinear fetch, or the
/// mean of trilinear fetches at the anisotropic tap positions.
pub fn reference_texel(reference: &TextureSet, uv: [f64; 2], lod: f64, aniso: Option<Aniso>) -> [f64; FEATURE_CHANNELS] {
    match aniso {
        None => reference.reference_fetch(uv, lod),
        Some(a) => {
            let offsets = aniso_offsets(a.taps);
            let mut acc = [0.0; FEATURE_CHANNELS];
            for t in &offsets {
                let p = [uv[0] + t * a.axis[0], uv[1] + t * a.axis[1]];
                let r = reference.reference_fetch(p, lod);
                for (s, v) in acc.iter_mut().zip(r) {
                    *s += v;
                }
            }
            let n = a.taps as f64;
            acc.map(|s| s / n)
        }
    }
}

/// Decode every texel of the reference mip `floor(lod)` at its texel center
/// and compare with the reference.
pub fn evaluate_asset(
    pyramid: &LatentPyramid,
    mlp: &MlpDecoder,
    reference: &TextureSet,
    lod: f64,
    aniso: Option<Aniso>,
) -> Result<QualityReport, EvalError> {
    if (pyramid.layout.width, pyramid.layout.height) != (reference.width(), reference.height()) {
        return Err(EvalError::ResolutionMismatch {
            asset_w: pyramid.layout.width,
            asset_h: pyramid.layout.height,
            ref_w: reference.width(),
            ref_h: reference.height(),
        });
    }
    if !(lod >= 0.0 && lod <= reference.max_lod()) {
        return Err(EvalError::BadLod(lod.to_string()));
    }
    let mip = reference.mip(lod.floor() as usize);
    let (w, h) = (mip.width, mip.height);
    let rows: Vec<[f64; FEATURE_CHANNELS]> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut sums = [0.0; FEATURE_CHANNELS];
            for x in 0..w {
                let uv = [(x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64];
                let d = decode_texel(pyramid, mlp, uv, lod, aniso);
                let r = reference_texel(reference, uv, lod, aniso);
                for c in 0..FEATURE_CHANNELS {
                    let e = d[c] - r[c];
                    sums[c] += e * e;
                }
            }
            sums
        })
        .collect();
    let mut sums = [0.0; FEATURE_CHANNELS];
    for row in rows {
        for c in 0..FEATURE_CHANNELS {
            sums[c] += row[c];
        }
    }
    Ok(QualityReport::from_sums(lod, aniso, w, h, sums))
}

/// Isotropic reports at every integer LOD of the reference chain.
pub fn evaluate_per_lod(
    pyramid: &LatentPyramid,
    mlp: &MlpDecoder,
    reference: &TextureSet,
) -> Result<Vec<QualityReport>, EvalError> {
    (0..reference.mip_count())
        .map(|l| evaluate_asset(pyramid, mlp, reference, l as f64, None))
        .collect()
}

/// Mean PSNR over a set of reports.
pub fn mean_psnr(reports: &[QualityReport]) -> f64 {
    reports.iter().map(|r| r.psnr).sum::<f64>() / reports.len() as f64
}
