//! BC1 (DXT1) blocks restricted to 4-color mode.
//!
//! A block stores two 5:6:5 endpoints and sixteen 2-bit indices. Decoded
//! texels are `(1 - a) * e0 + a * e1` with `a` one of `{0, 1/3, 2/3, 1}`.
//!
//! Byte layout (little-endian): bytes 0-1 hold `e0`, bytes 2-3 hold `e1`,
//! bytes 4-7 hold the index word, with texel `(x, y)` at bit `2 * (4y + x)`.
//!
//! The interpolation weight `k/3` is written to the index field as
//! `0 -> 0`, `1/3 -> 2`, `2/3 -> 3`, `1 -> 1`, which is the palette order a
//! standard BC1 decoder uses when `e0 > e1`.

use thiserror::Error;

use crate::pyramid::LatentImage;

pub const BLOCK_BYTES: usize = 8;
pub const BLOCK_DIM: usize = 4;
pub const BLOCK_TEXELS: usize = BLOCK_DIM * BLOCK_DIM;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Bc1Error {
    #[error("block uses 3-color mode (e0 = {e0:#06x} <= e1 = {e1:#06x}); only 4-color blocks are supported")]
    ThreeColorMode { e0: u16, e1: u16 },
    #[error("block payload has {actual} bytes, expected {expected}")]
    PayloadLength { expected: usize, actual: usize },
}

/// Expand a 5-bit channel to 8 bits by bit replication.
#[inline]
pub fn expand5(v: u8) -> u8 {
    let v = v & 0x1f;
    (v << 3) | (v >> 2)
}

/// Expand a 6-bit channel to 8 bits by bit replication.
#[inline]
pub fn expand6(v: u8) -> u8 {
    let v = v & 0x3f;
    (v << 2) | (v >> 4)
}

/// Expand a 5:6:5 triple to 8-bit RGB. Inputs are masked to their bit range.
pub fn expand_565(r5: u8, g6: u8, b5: u8) -> [u8; 3] {
    [expand5(r5), expand6(g6), expand5(b5)]
}

/// A 5:6:5 endpoint code.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Rgb565 {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Rgb565 {
    pub const BLACK: Rgb565 = Rgb565 { r: 0, g: 0, b: 0 };
    pub const WHITE: Rgb565 = Rgb565 { r: 31, g: 63, b: 31 };

    pub fn new(r: u8, g: u8, b: u8) -> Self {
        Self {
            r: r & 0x1f,
            g: g & 0x3f,
            b: b & 0x1f,
        }
    }

    pub fn pack(self) -> u16 {
        (u16::from(self.r) << 11) | (u16::from(self.g) << 5) | u16::from(self.b)
    }

    pub fn unpack(packed: u16) -> Self {
        Self {
            r: ((packed >> 11) & 0x1f) as u8,
            g: ((packed >> 5) & 0x3f) as u8,
            b: (packed & 0x1f) as u8,
        }
    }

    pub fn expand(self) -> [u8; 3] {
        expand_565(self.r, self.g, self.b)
    }
}

/// Interpolation weight `k/3` for `k` in `0..=3`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum AlphaLevel {
    #[default]
    Zero,
    OneThird,
    TwoThirds,
    One,
}

impl AlphaLevel {
    pub const ALL: [AlphaLevel; 4] = [
        AlphaLevel::Zero,
        AlphaLevel::OneThird,
        AlphaLevel::TwoThirds,
        AlphaLevel::One,
    ];

    /// Level from its numerator `k` (masked to two bits).
    pub fn from_steps(k: u8) -> Self {
        Self::ALL[usize::from(k & 3)]
    }

    pub fn steps(self) -> u8 {
        match self {
            AlphaLevel::Zero => 0,
            AlphaLevel::OneThird => 1,
            AlphaLevel::TwoThirds => 2,
            AlphaLevel::One => 3,
        }
    }

    pub fn value(self) -> f64 {
        f64::from(self.steps()) / 3.0
    }

    /// BC1 index stored for this level in a 4-color block.
    pub fn index(self) -> u8 {
        match self {
            AlphaLevel::Zero => 0,
            AlphaLevel::One => 1,
            AlphaLevel::OneThird => 2,
            AlphaLevel::TwoThirds => 3,
        }
    }

    pub fn from_index(index: u8) -> Self {
        match index & 3 {
            0 => AlphaLevel::Zero,
            1 => AlphaLevel::One,
            2 => AlphaLevel::OneThird,
            _ => AlphaLevel::TwoThirds,
        }
    }

    /// The same texel seen from the other endpoint (`k -> 3 - k`).
    pub fn mirrored(self) -> Self {
        Self::from_steps(3 - self.steps())
    }
}

/// Texel value for 8-bit endpoints `c0`, `c1` at `level`, normalized to [0, 1].
///
/// Computed as `((3 - k) * c0 + k * c1) / 765`; the trainable decode path
/// shares it.
#[inline]
pub fn interpolate(c0: [u8; 3], c1: [u8; 3], level: AlphaLevel) -> [f64; 3] {
    let k = u32::from(level.steps());
    let mut out = [0.0; 3];
    for c in 0..3 {
        let num = (3 - k) * u32::from(c0[c]) + k * u32::from(c1[c]);
        out[c] = f64::from(num) / 765.0;
    }
    out
}

/// One 8-byte BC1 block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Bc1Block {
    pub e0: u16,
    pub e1: u16,
    pub indices: u32,
}

impl Bc1Block {
    pub fn to_bytes(self) -> [u8; BLOCK_BYTES] {
        let mut out = [0u8; BLOCK_BYTES];
        out[0..2].copy_from_slice(&self.e0.to_le_bytes());
        out[2..4].copy_from_slice(&self.e1.to_le_bytes());
        out[4..8].copy_from_slice(&self.indices.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: [u8; BLOCK_BYTES]) -> Self {
        Self {
            e0: u16::from_le_bytes([bytes[0], bytes[1]]),
            e1: u16::from_le_bytes([bytes[2], bytes[3]]),
            indices: u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
        }
    }

    pub fn is_four_color(self) -> bool {
        self.e0 > self.e1
    }

    #[inline]
    pub fn index(self, x: usize, y: usize) -> u8 {
        ((self.indices >> (2 * (4 * y + x))) & 3) as u8
    }

    #[inline]
    pub fn set_index(&mut self, x: usize, y: usize, index: u8) {
        let shift = 2 * (4 * y + x);
        self.indices = (self.indices & !(3 << shift)) | (u32::from(index & 3) << shift);
    }

    /// Endpoints and per-texel levels, row-major.
    pub fn levels(self) -> Result<(Rgb565, Rgb565, [AlphaLevel; BLOCK_TEXELS]), Bc1Error> {
        if !self.is_four_color() {
            return Err(Bc1Error::ThreeColorMode {
                e0: self.e0,
                e1: self.e1,
            });
        }
        let mut levels = [AlphaLevel::Zero; BLOCK_TEXELS];
        for (i, level) in levels.iter_mut().enumerate() {
            *level = AlphaLevel::from_index(self.index(i % 4, i / 4));
        }
        Ok((Rgb565::unpack(self.e0), Rgb565::unpack(self.e1), levels))
    }
}

/// A decoded 4x4 block, row-major RGB in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodedBlock {
    pub texels: [[f64; 3]; BLOCK_TEXELS],
}

impl DecodedBlock {
    pub fn texel(&self, x: usize, y: usize) -> [f64; 3] {
        self.texels[4 * y + x]
    }
}

pub fn decode_block(block: Bc1Block) -> Result<DecodedBlock, Bc1Error> {
    let (e0, e1, levels) = block.levels()?;
    let (c0, c1) = (e0.expand(), e1.expand());
    let mut texels = [[0.0; 3]; BLOCK_TEXELS];
    for (texel, level) in texels.iter_mut().zip(levels) {
        *texel = interpolate(c0, c1, level);
    }
    Ok(DecodedBlock { texels })
}

/// Result of packing endpoints and levels into a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodedBlock {
    pub block: Bc1Block,
    /// Set when both endpoints packed to the same code and the block had to be
    /// rewritten to stay in 4-color mode.
    pub degenerate: bool,
}

/// Pack already-quantized endpoints and per-texel levels (row-major).
///
/// Endpoints are swapped, and levels mirrored, when `e0` packs below `e1`.
/// Equal endpoints decode to `e0` everywhere regardless of the levels; they are
/// stored as `e1 = e0 - 1` (one blue code down when blue is nonzero) with every
/// index selecting `e0`. The all-black code cannot go lower, so it is stored as
/// `e0 = 1, e1 = 0` with every index selecting `e1`. Both forms decode exactly
/// to the original texels.
pub fn encode_block(e0: Rgb565, e1: Rgb565, levels: &[AlphaLevel; BLOCK_TEXELS]) -> EncodedBlock {
    let (p0, p1) = (e0.pack(), e1.pack());
    if p0 == p1 {
        let block = if p0 == 0 {
            Bc1Block {
                e0: 1,
                e1: 0,
                indices: 0x5555_5555,
            }
        } else {
            Bc1Block {
                e0: p0,
                e1: p0 - 1,
                indices: 0,
            }
        };
        return EncodedBlock {
            block,
            degenerate: true,
        };
    }

    let swap = p0 < p1;
    let mut block = Bc1Block {
        e0: if swap { p1 } else { p0 },
        e1: if swap { p0 } else { p1 },
        indices: 0,
    };
    for (i, &level) in levels.iter().enumerate() {
        let level = if swap { level.mirrored() } else { level };
        block.set_index(i % 4, i / 4, level.index());
    }
    EncodedBlock {
        block,
        degenerate: false,
    }
}

/// A mip level stored as BC1 blocks; `width`/`height` may be smaller than the
/// block grid when the level is not a multiple of 4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bc1Image {
    pub width: usize,
    pub height: usize,
    pub blocks: Vec<Bc1Block>,
}

impl Bc1Image {
    pub fn blocks_x(&self) -> usize {
        self.width.div_ceil(BLOCK_DIM)
    }

    pub fn blocks_y(&self) -> usize {
        self.height.div_ceil(BLOCK_DIM)
    }

    pub fn byte_len(width: usize, height: usize) -> usize {
        width.div_ceil(BLOCK_DIM) * height.div_ceil(BLOCK_DIM) * BLOCK_BYTES
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.blocks.iter().flat_map(|b| b.to_bytes()).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self, Bc1Error> {
        let expected = Self::byte_len(width, height);
        if bytes.len() != expected {
            return Err(Bc1Error::PayloadLength {
                expected,
                actual: bytes.len(),
            });
        }
        let blocks = bytes
            .chunks_exact(BLOCK_BYTES)
            .map(|c| Bc1Block::from_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            width,
            height,
            blocks,
        })
    }

    pub fn decode(&self) -> Result<LatentImage, Bc1Error> {
        let bx = self.blocks_x();
        let mut image = LatentImage::new(self.width, self.height);
        for (b, block) in self.blocks.iter().enumerate() {
            let decoded = decode_block(*block)?;
            let (ox, oy) = ((b % bx) * BLOCK_DIM, (b / bx) * BLOCK_DIM);
            for ty in 0..BLOCK_DIM {
                for tx in 0..BLOCK_DIM {
                    let (x, y) = (ox + tx, oy + ty);
                    if x < self.width && y < self.height {
                        image.texels[y * self.width + x] = decoded.texel(tx, ty);
                    }
                }
            }
        }
        Ok(image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expand_examples() {
        assert_eq!(expand_565(31, 63, 31), [255, 255, 255]);
        assert_eq!(expand_565(0, 0, 0), [0, 0, 0]);
        // 16 = 0b10000 -> 0b10000_100 = 132; 32 = 0b100000 -> 0b100000_10 = 130
        assert_eq!(expand_565(16, 32, 16), [132, 130, 132]);
    }

    #[test]
    fn expand_masks_out_of_range_codes() {
        assert_eq!(expand_565(0xff, 0xff, 0xff), [255, 255, 255]);
        assert_eq!(expand_565(32, 64, 32), [0, 0, 0]);
    }

    #[test]
    fn level_index_mapping() {
        assert_eq!(AlphaLevel::Zero.index(), 0);
        assert_eq!(AlphaLevel::OneThird.index(), 2);
        assert_eq!(AlphaLevel::TwoThirds.index(), 3);
        assert_eq!(AlphaLevel::One.index(), 1);
        for level in AlphaLevel::ALL {
            assert_eq!(AlphaLevel::from_index(level.index()), level);
            assert_eq!(level.mirrored().mirrored(), level);
        }
    }

    #[test]
    fn adjacent_endpoints_all_zero_indices_select_e0() {
        let e1 = Rgb565::new(10, 20, 5).pack();
        let block = Bc1Block {
            e0: e1 + 1,
            e1,
            indices: 0,
        };
        let decoded = decode_block(block).unwrap();
        let c0 = Rgb565::unpack(e1 + 1).expand();
        let expected = [
            f64::from(c0[0]) / 255.0,
            f64::from(c0[1]) / 255.0,
            f64::from(c0[2]) / 255.0,
        ];
        for t in decoded.texels {
            assert_eq!(t, expected);
        }
    }

    #[test]
    fn white_black_index2_is_two_thirds_white() {
        let mut block = Bc1Block {
            e0: Rgb565::WHITE.pack(),
            e1: Rgb565::BLACK.pack(),
            indices: 0,
        };
        block.set_index(1, 2, 2);
        let decoded = decode_block(block).unwrap();
        assert_eq!(decoded.texel(1, 2), [2.0 / 3.0; 3]);
        assert_eq!(decoded.texel(0, 0), [1.0; 3]);
    }

    #[test]
    fn three_color_block_rejected() {
        let block = Bc1Block {
            e0: 5,
            e1: 5,
            indices: 0,
        };
        assert_eq!(
            decode_block(block),
            Err(Bc1Error::ThreeColorMode { e0: 5, e1: 5 })
        );
        let block = Bc1Block {
            e0: 4,
            e1: 9,
            indices: 0,
        };
        assert!(decode_block(block).is_err());
    }

    #[test]
    fn swapped_endpoints_remap_indices() {
        let lo = Rgb565::new(3, 10, 7);
        let hi = Rgb565::new(20, 40, 2);
        let levels: [AlphaLevel; 16] = std::array::from_fn(|i| AlphaLevel::from_steps(i as u8));
        let straight = encode_block(hi, lo, &levels);
        let swapped = encode_block(lo, hi, &levels.map(AlphaLevel::mirrored));
        assert!(!straight.degenerate && !swapped.degenerate);
        assert_eq!(straight.block, swapped.block);

        // e0 packs below e1: endpoints trade places and indices go 0<->1, 2<->3.
        let plain = encode_block(lo, hi, &levels).block;
        assert_eq!(plain.e0, hi.pack());
        assert_eq!(plain.e1, lo.pack());
        for i in 0..16 {
            let original = levels[i].index();
            assert_eq!(plain.index(i % 4, i / 4), original ^ 1);
        }
        let a = decode_block(plain).unwrap();
        for (i, t) in a.texels.iter().enumerate() {
            assert_eq!(*t, interpolate(lo.expand(), hi.expand(), levels[i]));
        }
    }

    #[test]
    fn degenerate_gray_block() {
        let gray = Rgb565::new(15, 31, 15);
        let levels: [AlphaLevel; 16] = std::array::from_fn(|i| AlphaLevel::from_steps(i as u8));
        let enc = encode_block(gray, gray, &levels);
        assert!(enc.degenerate);
        assert!(enc.block.is_four_color());
        assert_eq!(Rgb565::unpack(enc.block.e1), Rgb565::new(15, 31, 14));
        let decoded = decode_block(enc.block).unwrap();
        let expected = interpolate(gray.expand(), gray.expand(), AlphaLevel::Zero);
        for t in decoded.texels {
            assert_eq!(t, expected);
        }
    }

    #[test]
    fn degenerate_blue_zero_and_black() {
        let levels = [AlphaLevel::TwoThirds; 16];
        let c = Rgb565::new(4, 0, 0);
        let enc = encode_block(c, c, &levels);
        assert!(enc.degenerate);
        let decoded = decode_block(enc.block).unwrap();
        assert!(decoded
            .texels
            .iter()
            .all(|t| *t == interpolate(c.expand(), c.expand(), AlphaLevel::Zero)));

        let enc = encode_block(Rgb565::BLACK, Rgb565::BLACK, &levels);
        assert!(enc.degenerate);
        let decoded = decode_block(enc.block).unwrap();
        assert!(decoded.texels.iter().all(|t| *t == [0.0; 3]));
    }

    #[test]
    fn byte_layout() {
        let mut block = Bc1Block {
            e0: 0xf800,
            e1: 0x001f,
            indices: 0,
        };
        block.set_index(0, 0, 1);
        block.set_index(3, 3, 3);
        assert_eq!(
            block.to_bytes(),
            [0x00, 0xf8, 0x1f, 0x00, 0x01, 0x00, 0x00, 0xc0]
        );
        assert_eq!(Bc1Block::from_bytes(block.to_bytes()), block);
    }

    #[test]
    fn partial_image_decode_crops() {
        let block = Bc1Block {
            e0: Rgb565::WHITE.pack(),
            e1: 0,
            indices: 0,
        };
        let image = Bc1Image {
            width: 6,
            height: 2,
            blocks: vec![block; 2],
        };
        let decoded = image.decode().unwrap();
        assert_eq!(decoded.texels.len(), 12);
        assert!(decoded.texels.iter().all(|t| *t == [1.0; 3]));
        assert!(Bc1Image::from_bytes(6, 2, &image.to_bytes()[..15]).is_err());
        assert_eq!(Bc1Image::from_bytes(6, 2, &image.to_bytes()).unwrap(), image);
    }
}
