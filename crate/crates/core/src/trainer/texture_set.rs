use crate::pyramid::{bilinear_taps, mip_count, mip_dims, validate_base_dims, PyramidError};

pub const FEATURE_CHANNELS: usize = 9;

/// What each of the nine feature channels holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelRole {
    AlbedoR,
    AlbedoG,
    AlbedoB,
    NormalX,
    NormalY,
    NormalZ,
    Roughness,
    Metalness,
    AmbientOcclusion,
}

impl ChannelRole {
    pub const STANDARD: [ChannelRole; FEATURE_CHANNELS] = [
        ChannelRole::AlbedoR,
        ChannelRole::AlbedoG,
        ChannelRole::AlbedoB,
        ChannelRole::NormalX,
        ChannelRole::NormalY,
        ChannelRole::NormalZ,
        ChannelRole::Roughness,
        ChannelRole::Metalness,
        ChannelRole::AmbientOcclusion,
    ];

    pub fn tag(self) -> u8 {
        Self::STANDARD.iter().position(|r| *r == self).expect("listed") as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::STANDARD.get(usize::from(tag)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelRole::AlbedoR => "albedo_r",
            ChannelRole::AlbedoG => "albedo_g",
            ChannelRole::AlbedoB => "albedo_b",
            ChannelRole::NormalX => "normal_x",
            ChannelRole::NormalY => "normal_y",
            ChannelRole::NormalZ => "normal_z",
            ChannelRole::Roughness => "roughness",
            ChannelRole::Metalness => "metalness",
            ChannelRole::AmbientOcclusion => "ao",
        }
    }
}

/// A 9-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImage {
    pub width: usize,
    pub height: usize,
    pub texels: Vec<[f64; FEATURE_CHANNELS]>,
}

impl FeatureImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            texels: vec![[0.0; FEATURE_CHANNELS]; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; FEATURE_CHANNELS]) -> Self {
        let mut texels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                texels.push(f(x, y));
            }
        }
        Self { width, height, texels }
    }

    #[inline]
    pub fn texel(&self, x: usize, y: usize) -> [f64; FEATURE_CHANNELS] {
        self.texels[y * self.width + x]
    }

    /// 2x2 box downsample (edge texels repeat for odd sizes).
    pub fn downsample(&self) -> Self {
        let (w, h) = ((self.width / 2).max(1), (self.height / 2).max(1));
        Self::from_fn(w, h, |x, y| {
            let xs = [(2 * x).min(self.width - 1), (2 * x + 1).min(self.width - 1)];
            let ys = [(2 * y).min(self.height - 1), (2 * y + 1).min(self.height - 1)];
            let mut acc = [0.0; FEATURE_CHANNELS];
            for yy in ys {
                for xx in xs {
                    let t = self.texel(xx, yy);
                    for c in 0..FEATURE_CHANNELS {
                        acc[c] += t[c];
                    }
                }
            }
            acc.map(|v| v * 0.25)
        })
    }
}

/// Reference material with its box-filtered mip chain.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureSet {
    mips: Vec<FeatureImage>,
}

impl TextureSet {
    /// Build the mip chain from the base level. The chain stops where the
    /// latent textures stop: `floor(log2(min(W, H))) - 1` levels.
    pub fn from_base(base: FeatureImage) -> Result<Self, PyramidError> {
        validate_base_dims(base.width, base.height)?;
        let count = mip_count(base.width, base.height);
        let mut mips = vec![base];
        while mips.len() < count {
            let next = mips.last().expect("non-empty").downsample();
            debug_assert_eq!(
                (next.width, next.height),
                mip_dims(mips[0].width, mips[0].height, mips.len())
            );
            mips.push(next);
        }
        Ok(Self { mips })
    }

    pub fn width(&self) -> usize {
        self.mips[0].width
    }

    pub fn height(&self) -> usize {
        self.mips[0].height
    }

    pub fn mip_count(&self) -> usize {
        self.mips.len()
    }

    pub fn max_lod(&self) -> f64 {
        (self.mips.len() - 1) as f64
    }

    pub fn mip(&self, level: usize) -> &FeatureImage {
        &self.mips[level]
    }

    pub fn mips(&self) -> &[FeatureImage] {
        &self.mips
    }

    /// Trilinear reference lookup, same addressing as the latent sampler.
    pub fn reference_fetch(&self, uv: [f64; 2], lod: f64) -> [f64; FEATURE_CHANNELS] {
        let lod = lod.clamp(0.0, self.max_lod());
        let l0 = lod.floor();
        let frac = lod - l0;
        let l0 = l0 as usize;
        let a = self.bilinear(l0, uv);
        if frac == 0.0 {
            return a;
        }
        let b = self.bilinear(l0 + 1, uv);
        std::array::from_fn(|c| (1.0 - frac) * a[c] + frac * b[c])
    }

    fn bilinear(&self, level: usize, uv: [f64; 2]) -> [f64; FEATURE_CHANNELS] {
        let mip = &self.mips[level];
        let mut out = [0.0; FEATURE_CHANNELS];
        for (texel, weight) in bilinear_taps(mip.width, mip.height, uv, false) {
            let t = mip.texels[texel];
            for c in 0..FEATURE_CHANNELS {
                out[c] += weight * t[c];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mip_chain_shapes() {
        let ts = TextureSet::from_base(FeatureImage::new(256, 256)).unwrap();
        assert_eq!(ts.mip_count(), 7);
        assert_eq!((ts.mip(6).width, ts.mip(6).height), (4, 4));
        let ts = TextureSet::from_base(FeatureImage::new(64, 32)).unwrap();
        assert_eq!(ts.mip_count(), 4);
        assert_eq!((ts.mip(3).width, ts.mip(3).height), (8, 4));
        assert!(TextureSet::from_base(FeatureImage::new(40, 32)).is_err());
    }

    #[test]
    fn box_filter_averages() {
        let base = FeatureImage::from_fn(32, 32, |x, y| [(x + 32 * y) as f64; 9]);
        let ts = TextureSet::from_base(base).unwrap();
        // (0 + 1 + 32 + 33) / 4
        assert_eq!(ts.mip(1).texel(0, 0)[4], 16.5);
    }

    #[test]
    fn fetch_texel_center_and_constant() {
        let base = FeatureImage::from_fn(32, 32, |x, y| [x as f64 / 31.0, y as f64 / 31.0, 0.5, 0.1, 0.2, 0.3, 0.4, 0.6, 0.7]);
        let ts = TextureSet::from_base(base).unwrap();
        let uv = [(5.0 + 0.5) / 32.0, (9.0 + 0.5) / 32.0];
        assert_eq!(ts.reference_fetch(uv, 0.0), ts.mip(0).texel(5, 9));
        let uv = [(2.0 + 0.5) / 8.0, (1.0 + 0.5) / 8.0];
        assert_eq!(ts.reference_fetch(uv, 2.0), ts.mip(2).texel(2, 1));

        let c = TextureSet::from_base(FeatureImage::from_fn(32, 64, |_, _| [0.25; 9])).unwrap();
        for i in 0..50 {
            let uv = [(i as f64 * 0.37).fract(), (i as f64 * 0.61).fract()];
            let v = c.reference_fetch(uv, (i % 5) as f64 * 0.7);
            assert!(v.iter().all(|x| (x - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn fetch_half_lod_on_ramp() {
        // Horizontal ramp: mip0 texel x has value x; mip1 texel x averages
        // 2x and 2x+1, i.e. 2x + 0.5.
        let base = FeatureImage::from_fn(32, 32, |x, _| [x as f64; 9]);
        let ts = TextureSet::from_base(base).unwrap();
        // u at the center of mip1 texel 3 = mip0 boundary between texels 6 and 7
        let uv = [3.5 / 16.0, 0.5];
        let at0 = 6.5; // midway between mip0 texels 6 and 7
        let at1 = 6.5; // mip1 texel 3 = (6 + 7) / 2
        assert_eq!(ts.reference_fetch(uv, 0.5)[0], 0.5 * at0 + 0.5 * at1);
        let uv = [5.0 / 32.0, 0.5]; // mip0: 4.5, mip1: x = 2.5 - 0.5 = 2 -> 4.5
        assert_eq!(ts.reference_fetch(uv, 0.5)[0], 4.5);
        let uv = [6.0 / 32.0, 0.5]; // mip0: 5.5, mip1: x = 2.5 -> (4.5 + 6.5) / 2 = 5.5
        assert_eq!(ts.reference_fetch(uv, 0.25)[0], 5.5);

        // Quadratic ramp, where the two mips disagree. u = 4/32:
        // mip0 x = 3.5 -> (9 + 16) / 2 = 12.5
        // mip1 x = 1.5 -> texels (4 + 9) / 2 = 6.5 and (16 + 25) / 2 = 20.5 -> 13.5
        let base = FeatureImage::from_fn(32, 32, |x, _| [(x * x) as f64; 9]);
        let ts = TextureSet::from_base(base).unwrap();
        let uv = [4.0 / 32.0, 0.5];
        assert_eq!(ts.reference_fetch(uv, 0.0)[0], 12.5);
        assert_eq!(ts.reference_fetch(uv, 1.0)[0], 13.5);
        assert_eq!(ts.reference_fetch(uv, 0.5)[0], 13.0);
        assert_eq!(ts.reference_fetch(uv, 0.25)[0], 12.75);
    }
}
