//! `.nbtc` files, texture-set import and decoded image export.
//!
//! All integers are little-endian. Layout:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `NBTC` |
//! | 4 | 2 | version (1) |
//! | 6 | 4 | base width |
//! | 10 | 4 | base height |
//! | 14 | 1 | variant tag (0 = A, 1 = B) |
//! | 15 | 1 | latent texture count (4) |
//! | 16 | 2 | hidden width |
//! | 18 | 1 | hidden layer count |
//! | 19 | 1 | channel count (9) |
//! | 20 | 9 | channel role tags |
//! | 29 | 4 * P | MLP parameters as f32 |
//!
//! followed, for each latent texture, by a mip count byte and the BC1 blocks
//! of every mip in row-major block order.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use thiserror::Error;

use crate::bc1::{Bc1Error, Bc1Image};
use crate::mlp::{parameter_count, MlpDecoder, MlpError};
use crate::pyramid::{Bc1Pyramid, LatentPyramid, PyramidError, PyramidLayout, Variant, LATENT_TEXTURES};
use crate::trainer::{ChannelRole, FeatureImage, TextureSet, FEATURE_CHANNELS};

pub const MAGIC: [u8; 4] = *b"NBTC";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 29;
pub const EXTENSION: &str = "nbtc";

const OFFSET_VERSION: usize = 4;
const OFFSET_WIDTH: usize = 6;
const OFFSET_HEIGHT: usize = 10;
const OFFSET_VARIANT: usize = 14;
const OFFSET_TEXTURES: usize = 15;
const OFFSET_HIDDEN_DIM: usize = 16;
const OFFSET_HIDDEN_LAYERS: usize = 18;
const OFFSET_CHANNELS: usize = 19;
const OFFSET_ROLES: usize = 20;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("file truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("bad magic at offset 0: found {found:02x?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { offset: usize, version: u16 },
    #[error("unknown variant tag {tag} at offset {offset}")]
    UnknownVariant { offset: usize, tag: u8 },
    #[error("invalid header field at offset {offset}: {message}")]
    BadHeader { offset: usize, message: String },
    #[error("latent texture {texture} at offset {offset} has {found} mips, expected {expected}")]
    MipCount {
        offset: usize,
        texture: usize,
        expected: usize,
        found: usize,
    },
    #[error("{extra} trailing bytes after offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error(transparent)]
    Pyramid(#[from] PyramidError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Bc1(#[from] Bc1Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path} is {actual_w}x{actual_h}, expected {expected_w}x{expected_h}")]
    ImageSize {
        path: PathBuf,
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },
}

impl ContainerError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for failures of the file system rather than of the content.
    pub fn is_io(&self) -> bool {
        matches!(self, Self::Io { .. })
    }
}

/// A compressed asset: BC1 latents plus decoder weights.
#[derive(Clone, Debug, PartialEq)]
pub struct NbtcFile {
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub roles: [ChannelRole; FEATURE_CHANNELS],
    pub mlp_params: Vec<f32>,
    pub latents: Bc1Pyramid,
}

impl NbtcFile {
    /// Store `mlp` with its weights rounded to f32.
    pub fn new(latents: Bc1Pyramid, mlp: &MlpDecoder) -> Self {
        Self {
            hidden_dim: mlp.hidden_dim(),
            hidden_layers: mlp.hidden_layers(),
            roles: ChannelRole::STANDARD,
            mlp_params: mlp.params().iter().map(|&p| p as f32).collect(),
            latents,
        }
    }

    pub fn width(&self) -> usize {
        self.latents.layout.width
    }

    pub fn height(&self) -> usize {
        self.latents.layout.height
    }

    pub fn variant(&self) -> Variant {
        self.latents.layout.variant
    }

    pub fn mlp(&self) -> Result<MlpDecoder, MlpError> {
        MlpDecoder::from_params(
            self.hidden_dim,
            self.hidden_layers,
            self.mlp_params.iter().map(|&p| f64::from(p)).collect(),
        )
    }

    pub fn pyramid(&self) -> Result<LatentPyramid, PyramidError> {
        self.latents.decode()
    }

    /// Total serialized size implied by the header fields.
    pub fn byte_len(&self) -> usize {
        payload_len(&self.latents.layout, self.mlp_params.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.width() as u32).to_le_bytes());
        out.extend_from_slice(&(self.height() as u32).to_le_bytes());
        out.push(self.variant().tag());
        out.push(LATENT_TEXTURES as u8);
        out.extend_from_slice(&(self.hidden_dim as u16).to_le_bytes());
        out.push(self.hidden_layers as u8);
        out.push(FEATURE_CHANNELS as u8);
        out.extend(self.roles.iter().map(|r| r.tag()));
        for p in &self.mlp_params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        for mips in &self.latents.textures {
            out.push(mips.len() as u8);
            for mip in mips {
                out.extend_from_slice(&mip.to_bytes());
            }
        }
        debug_assert_eq!(out.len(), self.byte_len());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let magic_len = bytes.len().min(MAGIC.len());
        if bytes[..magic_len] != MAGIC[..magic_len] {
            return Err(ContainerError::BadMagic {
                found: bytes[..magic_len].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(ContainerError::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let bad = |offset: usize, message: String| ContainerError::BadHeader { offset, message };

        let version = u16_at(OFFSET_VERSION);
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion {
                offset: OFFSET_VERSION,
                version,
            });
        }
        let width = u32_at(OFFSET_WIDTH) as usize;
        let height = u32_at(OFFSET_HEIGHT) as usize;
        let tag = bytes[OFFSET_VARIANT];
        let variant = Variant::from_tag(tag).ok_or(ContainerError::UnknownVariant {
            offset: OFFSET_VARIANT,
            tag,
        })?;
        if usize::from(bytes[OFFSET_TEXTURES]) != LATENT_TEXTURES {
            return Err(bad(
                OFFSET_TEXTURES,
                format!("latent texture count {} (expected {LATENT_TEXTURES})", bytes[OFFSET_TEXTURES]),
            ));
        }
        let hidden_dim = usize::from(u16_at(OFFSET_HIDDEN_DIM));
        let hidden_layers = usize::from(bytes[OFFSET_HIDDEN_LAYERS]);
        if hidden_dim == 0 || hidden_layers == 0 {
            return Err(bad(OFFSET_HIDDEN_DIM, format!("empty decoder {hidden_dim}x{hidden_layers}")));
        }
        if usize::from(bytes[OFFSET_CHANNELS]) != FEATURE_CHANNELS {
            return Err(bad(
                OFFSET_CHANNELS,
                format!("channel count {} (expected {FEATURE_CHANNELS})", bytes[OFFSET_CHANNELS]),
            ));
        }
        let mut roles = ChannelRole::STANDARD;
        for (i, role) in roles.iter_mut().enumerate() {
            let offset = OFFSET_ROLES + i;
            *role = ChannelRole::from_tag(bytes[offset])
                .ok_or_else(|| bad(offset, format!("unknown channel role {}", bytes[offset])))?;
        }
        let layout = PyramidLayout::new(variant, width, height)
            .map_err(|e| bad(OFFSET_WIDTH, e.to_string()))?;

        let param_count = parameter_count(hidden_dim, hidden_layers);
        let expected = payload_len(&layout, param_count);
        if bytes.len() < expected {
            return Err(ContainerError::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(ContainerError::TrailingBytes {
                offset: expected,
                extra: bytes.len() - expected,
            });
        }

        let mut at = HEADER_LEN;
        let mlp_params = bytes[at..at + 4 * param_count]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        at += 4 * param_count;

        let mut textures = Vec::with_capacity(LATENT_TEXTURES);
        for (k, &(w, h, mips)) in layout.textures.iter().enumerate() {
            let found = usize::from(bytes[at]);
            if found != mips {
                return Err(ContainerError::MipCount {
                    offset: at,
                    texture: k,
                    expected: mips,
                    found,
                });
            }
            at += 1;
            let mut images = Vec::with_capacity(mips);
            for l in 0..mips {
                let (mw, mh) = crate::pyramid::mip_dims(w, h, l);
                let len = Bc1Image::byte_len(mw, mh);
                images.push(Bc1Image::from_bytes(mw, mh, &bytes[at..at + len])?);
                at += len;
            }
            textures.push(images);
        }
        debug_assert_eq!(at, expected);

        Ok(Self {
            hidden_dim,
            hidden_layers,
            roles,
            mlp_params,
            latents: Bc1Pyramid { layout, textures },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        fs::write(path, self.to_bytes()).map_err(|e| ContainerError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        let bytes = fs::read(path).map_err(|e| ContainerError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn payload_len(layout: &PyramidLayout, param_count: usize) -> usize {
    let latents: usize = layout
        .textures
        .iter()
        .map(|&(w, h, mips)| {
            1 + (0..mips)
                .map(|l| {
                    let (mw, mh) = crate::pyramid::mip_dims(w, h, l);
                    Bc1Image::byte_len(mw, mh)
                })
                .sum::<usize>()
        })
        .sum();
    HEADER_LEN + 4 * param_count + latents
}

/// Source images for the five material maps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TexturePaths {
    pub albedo: PathBuf,
    pub normal: PathBuf,
    pub roughness: PathBuf,
    pub metalness: PathBuf,
    pub ao: PathBuf,
}

pub const EXPORT_NAMES: [&str; 5] = ["albedo.png", "normal.png", "roughness.png", "metalness.png", "ao.png"];

impl TexturePaths {
    /// The five standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            albedo: dir.join(EXPORT_NAMES[0]),
            normal: dir.join(EXPORT_NAMES[1]),
            roughness: dir.join(EXPORT_NAMES[2]),
            metalness: dir.join(EXPORT_NAMES[3]),
            ao: dir.join(EXPORT_NAMES[4]),
        }
    }
}

fn open_image(path: &Path) -> Result<DynamicImage, ContainerError> {
    image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => ContainerError::io(path, e),
        source => ContainerError::Image {
            path: path.to_path_buf(),
            source,
        },
    })
}

/// Single channel in [0, 1]: the luma of a gray image or the red channel of a
/// color one.
fn scalar_channel(img: &DynamicImage) -> Vec<f64> {
    if img.color().has_color() {
        img.to_rgb8().pixels().map(|p| f64::from(p[0]) / 255.0).collect()
    } else {
        img.to_luma8().pixels().map(|p| f64::from(p[0]) / 255.0).collect()
    }
}

fn rgb_channels(img: &DynamicImage) -> Vec<[f64; 3]> {
    img.to_rgb8()
        .pixels()
        .map(|p| p.0.map(|v| f64::from(v) / 255.0))
        .collect()
}

/// Load the five maps into a 9-channel set with its mip chain.
pub fn import_texture_set(paths: &TexturePaths) -> Result<TextureSet, ContainerError> {
    let list = [&paths.albedo, &paths.normal, &paths.roughness, &paths.metalness, &paths.ao];
    let images = list
        .iter()
        .map(|p| open_image(p))
        .collect::<Result<Vec<_>, _>>()?;
    let (w, h) = (images[0].width() as usize, images[0].height() as usize);
    for (img, path) in images.iter().zip(list) {
        let (iw, ih) = (img.width() as usize, img.height() as usize);
        if (iw, ih) != (w, h) {
            return Err(ContainerError::ImageSize {
                path: path.clone(),
                expected_w: w,
                expected_h: h,
                actual_w: iw,
                actual_h: ih,
            });
        }
    }
    crate::pyramid::validate_base_dims(w, h)?;

    let albedo = rgb_channels(&images[0]);
    let normal = rgb_channels(&images[1]);
    let rough = scalar_channel(&images[2]);
    let metal = scalar_channel(&images[3]);
    let ao = scalar_channel(&images[4]);
    let base = FeatureImage::from_fn(w, h, |x, y| {
        let i = y * w + x;
        let (a, n) = (albedo[i], normal[i]);
        [a[0], a[1], a[2], n[0], n[1], n[2], rough[i], metal[i], ao[i]]
    });
    Ok(TextureSet::from_base(base)?)
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write the five maps of `img` into `dir` using [`EXPORT_NAMES`].
pub fn export_feature_images(img: &FeatureImage, dir: &Path) -> Result<Vec<PathBuf>, ContainerError> {
    fs::create_dir_all(dir).map_err(|e| ContainerError::io(dir, e))?;
    let (w, h) = (img.width as u32, img.height as u32);
    let rgb = |c: usize| {
        RgbImage::from_fn(w, h, |x, y| {
            let t = img.texel(x as usize, y as usize);
            image::Rgb([to_u8(t[c]), to_u8(t[c + 1]), to_u8(t[c + 2])])
        })
    };
    let gray = |c: usize| GrayImage::from_fn(w, h, |x, y| image::Luma([to_u8(img.texel(x as usize, y as usize)[c])]));

    let paths = TexturePaths::in_dir(dir);
    let save = |result: image::ImageResult<()>, path: &Path| {
        result.map_err(|source| match source {
            image::ImageError::IoError(e) => ContainerError::io(path, e),
            source => ContainerError::Image {
                path: path.to_path_buf(),
                source,
            },
        })
    };
    save(rgb(0).save(&paths.albedo), &paths.albedo)?;
    save(rgb(3).save(&paths.normal), &paths.normal)?;
    save(gray(6).save(&paths.roughness), &paths.roughness)?;
    save(gray(7).save(&paths.metalness), &paths.metalness)?;
    save(gray(8).save(&paths.ao), &paths.ao)?;
    Ok(vec![paths.albedo, paths.normal, paths.roughness, paths.metalness, paths.ao])
}
