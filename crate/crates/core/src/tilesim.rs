//! CPU model of tiled neural material decoding.
//!
//! A screen of material ids is cut into 8x4 tiles. Tiles whose neural pixels
//! all use one decoder are decoded as one batch. Neural pixels of mixed tiles
//! are regrouped by decoder into batches of up to 32 and written back to
//! their screen positions afterwards.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::mlp::{MlpDecoder, INPUT_DIM, OUTPUT_DIM};
use crate::pyramid::{sample_latents, LatentPyramid};

pub const TILE_WIDTH: usize = 8;
pub const TILE_HEIGHT: usize = 4;
pub const TILE_PIXELS: usize = TILE_WIDTH * TILE_HEIGHT;

pub const SCREEN_MAGIC: &str = "NBTCSCREEN";
pub const SCREEN_VERSION: u32 = 1;

pub type Features = [f64; OUTPUT_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TileSimError {
    #[error("no asset loaded for material id {0}")]
    MissingAsset(u32),
    #[error("screen parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("screen has {actual} pixels, expected {expected}")]
    PixelCount { expected: usize, actual: usize },
    #[error("screen dimensions {width}x{height} are empty")]
    EmptyScreen { width: usize, height: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenPixel {
    pub material: Option<u32>,
    pub uv: [f64; 2],
    pub lod: f64,
}

impl ScreenPixel {
    pub const NONE: ScreenPixel = ScreenPixel {
        material: None,
        uv: [0.0, 0.0],
        lod: 0.0,
    };
}

/// Visibility-buffer style input. Storage is padded to whole tiles; padding
/// pixels carry no material.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialScreen {
    width: usize,
    height: usize,
    padded_width: usize,
    padded_height: usize,
    pixels: Vec<ScreenPixel>,
}

impl MaterialScreen {
    pub fn new(width: usize, height: usize) -> Result<Self, TileSimError> {
        if width == 0 || height == 0 {
            return Err(TileSimError::EmptyScreen { width, height });
        }
        let padded_width = width.div_ceil(TILE_WIDTH) * TILE_WIDTH;
        let padded_height = height.div_ceil(TILE_HEIGHT) * TILE_HEIGHT;
        Ok(Self {
            width,
            height,
            padded_width,
            padded_height,
            pixels: vec![ScreenPixel::NONE; padded_width * padded_height],
        })
    }

    /// Build from `width * height` row-major pixels.
    pub fn from_pixels(width: usize, height: usize, pixels: &[ScreenPixel]) -> Result<Self, TileSimError> {
        let mut screen = Self::new(width, height)?;
        if pixels.len() != width * height {
            return Err(TileSimError::PixelCount {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        for y in 0..height {
            for x in 0..width {
                screen.set(x, y, pixels[y * width + x]);
            }
        }
        Ok(screen)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn padded_width(&self) -> usize {
        self.padded_width
    }

    pub fn padded_height(&self) -> usize {
        self.padded_height
    }

    pub fn tiles_x(&self) -> usize {
        self.padded_width / TILE_WIDTH
    }

    pub fn tiles_y(&self) -> usize {
        self.padded_height / TILE_HEIGHT
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x() * self.tiles_y()
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> ScreenPixel {
        self.pixels[y * self.padded_width + x]
    }

    /// # Panics
    /// If `(x, y)` is outside the logical screen.
    pub fn set(&mut self, x: usize, y: usize, pixel: ScreenPixel) {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) outside screen");
        self.pixels[y * self.padded_width + x] = pixel;
    }

    /// Padded-buffer pixels, row-major.
    pub fn pixels(&self) -> &[ScreenPixel] {
        &self.pixels
    }

    /// Screen coordinates of pixel `i` (row-major within the tile) of `tile`.
    #[inline]
    pub fn tile_pixel_coords(&self, tile: usize, i: usize) -> (usize, usize) {
        let (tx, ty) = (tile % self.tiles_x(), tile / self.tiles_x());
        (tx * TILE_WIDTH + i % TILE_WIDTH, ty * TILE_HEIGHT + i / TILE_WIDTH)
    }

    pub fn neural_pixel_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.material.is_some()).count()
    }

    /// Distinct material ids on screen, ascending.
    pub fn materials(&self) -> BTreeSet<u32> {
        self.pixels.iter().filter_map(|p| p.material).collect()
    }

    /// Text form: a `NBTCSCREEN 1` line, a `width height` line, then one
    /// `id u v lod` line per pixel in row-major order (`-` for no material).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SCREEN_MAGIC} {SCREEN_VERSION}");
        let _ = writeln!(out, "{} {}", self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.pixel(x, y);
                match p.material {
                    Some(id) => {
                        let _ = writeln!(out, "{id} {} {} {}", p.uv[0], p.uv[1], p.lod);
                    }
                    None => out.push_str("-\n"),
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TileSimError> {
        let err = |line: usize, message: String| TileSimError::Parse { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (n, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(SCREEN_MAGIC) {
            return Err(err(n, format!("expected `{SCREEN_MAGIC} {SCREEN_VERSION}`")));
        }
        match parts.next().map(str::parse::<u32>) {
            Some(Ok(SCREEN_VERSION)) => {}
            _ => return Err(err(n, format!("unsupported version, expected {SCREEN_VERSION}"))),
        }

        let (n, dims) = lines.next().ok_or_else(|| err(n + 1, "missing dimensions".into()))?;
        let dims: Vec<usize> = dims
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| err(n, format!("bad dimensions: {e}")))?;
        let [width, height] = dims[..] else {
            return Err(err(n, "expected `width height`".into()));
        };

        let mut pixels = Vec::with_capacity(width.saturating_mul(height).min(1 << 24));
        for (n, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "-" {
                pixels.push(ScreenPixel::NONE);
                continue;
            }
            if fields.len() != 4 {
                return Err(err(n, format!("expected `id u v lod`, got {} fields", fields.len())));
            }
            let id = fields[0].parse::<u32>().map_err(|e| err(n, format!("bad id: {e}")))?;
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(n, format!("bad number `{s}`: {e}")));
            pixels.push(ScreenPixel {
                material: Some(id),
                uv: [num(fields[1])?, num(fields[2])?],
                lod: num(fields[3])?,
            });
        }
        Self::from_pixels(width, height, &pixels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TileClass {
    NoNeural,
    SingleNeural(u32),
    Mixed,
}

fn classify_tile(screen: &MaterialScreen, tile: usize) -> TileClass {
    let mut found = None;
    for i in 0..TILE_PIXELS {
        let (x, y) = screen.tile_pixel_coords(tile, i);
        if let Some(id) = screen.pixel(x, y).material {
            match found {
                None => found = Some(id),
                Some(k) if k != id => return TileClass::Mixed,
                Some(_) => {}
            }
        }
    }
    found.map_or(TileClass::NoNeural, TileClass::SingleNeural)
}

/// Per-tile classes in row-major tile order.
pub fn classify_a(screen: &MaterialScreen) -> Vec<TileClass> {
    (0..screen.tile_count())
        .into_par_iter()
        .map(|t| classify_tile(screen, t))
        .collect()
}

/// Where a repacked pixel came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PixelRecord {
    pub tile: usize,
    /// Row-major index inside the tile.
    pub index: usize,
    pub x: usize,
    pub y: usize,
}

/// Up to 32 pixels sharing one decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub material: u32,
    pub pixels: Vec<PixelRecord>,
}

/// Repack neural pixels of mixed tiles into per-material groups. Pixels are
/// ordered by (material, tile, index in tile); each material's run is cut
/// into groups of 32, the last possibly partial.
pub fn classify_b(screen: &MaterialScreen, classes: &[TileClass]) -> Vec<Group> {
    let mut records: Vec<(u32, PixelRecord)> = Vec::new();
    for (tile, class) in classes.iter().enumerate() {
        if *class != TileClass::Mixed {
            continue;
        }
        for index in 0..TILE_PIXELS {
            let (x, y) = screen.tile_pixel_coords(tile, index);
            if let Some(id) = screen.pixel(x, y).material {
                records.push((id, PixelRecord { tile, index, x, y }));
            }
        }
    }
    records.sort_by_key(|(id, r)| (*id, r.tile, r.index));

    let mut groups: Vec<Group> = Vec::new();
    for (id, record) in records {
        match groups.last_mut() {
            Some(g) if g.material == id && g.pixels.len() < TILE_PIXELS => g.pixels.push(record),
            _ => groups.push(Group {
                material: id,
                pixels: vec![record],
            }),
        }
    }
    groups
}

/// One decoder asset.
#[derive(Clone, Debug)]
pub struct Asset {
    pub pyramid: LatentPyramid,
    pub mlp: MlpDecoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSource {
    Tile(usize),
    Group(usize),
}

/// One `forward_batch` call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchRecord {
    pub source: BatchSource,
    pub material: u32,
    /// Lanes carrying real pixels; the rest of the 32 are padding.
    pub active: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScreenStats {
    pub width: usize,
    pub height: usize,
    pub tiles: usize,
    pub no_neural_tiles: usize,
    pub single_neural_tiles: usize,
    pub mixed_tiles: usize,
    pub neural_pixels: usize,
    pub decoded_pixels: usize,
    pub single_tile_pixels: usize,
    pub mixed_pixels: usize,
    pub groups: usize,
    pub full_groups: usize,
    pub decode_invocations: usize,
}

impl ScreenStats {
    /// Mean occupancy of SingleNeural tile batches.
    pub fn single_tile_fill(&self) -> f64 {
        fill(self.single_tile_pixels, self.single_neural_tiles)
    }

    /// Mean occupancy of repacked groups.
    pub fn group_fill(&self) -> f64 {
        fill(self.mixed_pixels, self.groups)
    }

    /// Occupancy mixed tiles would have had without repacking.
    pub fn unpacked_mixed_fill(&self) -> f64 {
        fill(self.mixed_pixels, self.mixed_tiles)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "width: {}", self.width);
        let _ = writeln!(out, "height: {}", self.height);
        let _ = writeln!(out, "tiles: {}", self.tiles);
        let _ = writeln!(out, "tiles_no_neural: {}", self.no_neural_tiles);
        let _ = writeln!(out, "tiles_single_neural: {}", self.single_neural_tiles);
        let _ = writeln!(out, "tiles_mixed: {}", self.mixed_tiles);
        let _ = writeln!(out, "neural_pixels: {}", self.neural_pixels);
        let _ = writeln!(out, "decoded_pixels: {}", self.decoded_pixels);
        let _ = writeln!(out, "mixed_pixels: {}", self.mixed_pixels);
        let _ = writeln!(out, "groups: {}", self.groups);
        let _ = writeln!(out, "groups_full: {}", self.full_groups);
        let _ = writeln!(out, "decode_invocations: {}", self.decode_invocations);
        let _ = writeln!(out, "single_tile_fill: {:.6}", self.single_tile_fill());
        let _ = writeln!(out, "group_fill: {:.6}", self.group_fill());
        let _ = writeln!(out, "mixed_fill_without_repack: {:.6}", self.unpacked_mixed_fill());
        out
    }
}

fn fill(pixels: usize, batches: usize) -> f64 {
    if batches == 0 {
        0.0
    } else {
        pixels as f64 / (batches * TILE_PIXELS) as f64
    }
}

/// Decoded G-buffer, padded like the screen. `None` where nothing was decoded.
#[derive(Clone, Debug)]
pub struct DecodedScreen {
    pub padded_width: usize,
    pub padded_height: usize,
    pub features: Vec<Option<Features>>,
    pub classes: Vec<TileClass>,
    pub groups: Vec<Group>,
    pub batches: Vec<BatchRecord>,
    pub stats: ScreenStats,
}

impl DecodedScreen {
    #[inline]
    pub fn feature(&self, x: usize, y: usize) -> Option<Features> {
        self.features[y * self.padded_width + x]
    }
}

fn latent_input(asset: &Asset, p: &ScreenPixel) -> [f64; INPUT_DIM] {
    sample_latents(&asset.pyramid, p.uv, p.lod)
}

/// Decode a full batch of 32 lanes; `None` lanes are zero padding whose
/// outputs are dropped.
fn decode_lanes(asset: &Asset, lanes: &[Option<ScreenPixel>]) -> Vec<Option<Features>> {
    let xs: Vec<[f64; INPUT_DIM]> = lanes
        .iter()
        .map(|l| l.as_ref().map_or([0.0; INPUT_DIM], |p| latent_input(asset, p)))
        .collect();
    let ys = asset.mlp.forward_batch(&xs);
    lanes.iter().zip(ys).map(|(l, y)| l.map(|_| y)).collect()
}

/// Unbatched decode of a single pixel.
pub fn decode_pixel(asset: &Asset, pixel: &ScreenPixel) -> Features {
    asset.mlp.forward(&latent_input(asset, pixel))
}

fn lookup(assets: &HashMap<u32, Asset>, id: u32) -> Result<&Asset, TileSimError> {
    assets.get(&id).ok_or(TileSimError::MissingAsset(id))
}

/// Classify, repack, batch-decode and splat back.
pub fn decode_screen(screen: &MaterialScreen, assets: &HashMap<u32, Asset>) -> Result<DecodedScreen, TileSimError> {
    for id in screen.materials() {
        lookup(assets, id)?;
    }
    let classes = classify_a(screen);
    let groups = classify_b(screen, &classes);

    let single_tiles: Vec<(usize, u32)> = classes
        .iter()
        .enumerate()
        .filter_map(|(t, c)| match c {
            TileClass::SingleNeural(id) => Some((t, *id)),
            _ => None,
        })
        .collect();

    let tile_results: Vec<(BatchRecord, Vec<Option<Features>>)> = single_tiles
        .par_iter()
        .map(|&(tile, id)| {
            let asset = &assets[&id];
            let lanes: Vec<Option<ScreenPixel>> = (0..TILE_PIXELS)
                .map(|i| {
                    let (x, y) = screen.tile_pixel_coords(tile, i);
                    Some(screen.pixel(x, y)).filter(|p| p.material.is_some())
                })
                .collect();
            let active = lanes.iter().filter(|l| l.is_some()).count();
            let record = BatchRecord {
                source: BatchSource::Tile(tile),
                material: id,
                active,
            };
            (record, decode_lanes(asset, &lanes))
        })
        .collect();

    let group_results: Vec<(BatchRecord, Vec<Option<Features>>)> = groups
        .par_iter()
        .enumerate()
        .map(|(g, group)| {
            let asset = &assets[&group.material];
            let mut lanes: Vec<Option<ScreenPixel>> =
                group.pixels.iter().map(|r| Some(screen.pixel(r.x, r.y))).collect();
            lanes.resize(TILE_PIXELS, None);
            let record = BatchRecord {
                source: BatchSource::Group(g),
                material: group.material,
                active: group.pixels.len(),
            };
            (record, decode_lanes(asset, &lanes))
        })
        .collect();

    let mut features = vec![None; screen.pixels().len()];
    let mut batches = Vec::with_capacity(tile_results.len() + group_results.len());
    let mut stats = ScreenStats {
        width: screen.width(),
        height: screen.height(),
        tiles: classes.len(),
        neural_pixels: screen.neural_pixel_count(),
        ..ScreenStats::default()
    };
    for c in &classes {
        match c {
            TileClass::NoNeural => stats.no_neural_tiles += 1,
            TileClass::SingleNeural(_) => stats.single_neural_tiles += 1,
            TileClass::Mixed => stats.mixed_tiles += 1,
        }
    }

    for (record, out) in tile_results {
        let BatchSource::Tile(tile) = record.source else { unreachable!() };
        for (i, f) in out.into_iter().enumerate() {
            if let Some(f) = f {
                let (x, y) = screen.tile_pixel_coords(tile, i);
                features[y * screen.padded_width() + x] = Some(f);
                stats.decoded_pixels += 1;
                stats.single_tile_pixels += 1;
            }
        }
        batches.push(record);
    }
    for (record, out) in group_results {
        let BatchSource::Group(g) = record.source else { unreachable!() };
        for (r, f) in groups[g].pixels.iter().zip(out) {
            features[r.y * screen.padded_width() + r.x] = f;
            stats.decoded_pixels += 1;
            stats.mixed_pixels += 1;
        }
        if record.active == TILE_PIXELS {
            stats.full_groups += 1;
        }
        batches.push(record);
    }
    stats.groups = groups.len();
    stats.decode_invocations = batches.len();

    Ok(DecodedScreen {
        padded_width: screen.padded_width(),
        padded_height: screen.padded_height(),
        features,
        classes,
        groups,
        batches,
        stats,
    })
}

/// Per-pixel reference decode over the padded buffer.
pub fn decode_screen_oracle(
    screen: &MaterialScreen,
    assets: &HashMap<u32, Asset>,
) -> Result<Vec<Option<Features>>, TileSimError> {
    screen
        .pixels()
        .iter()
        .map(|p| match p.material {
            None => Ok(None),
            Some(id) => Ok(Some(decode_pixel(lookup(assets, id)?, p))),
        })
        .collect()
}
