//! Cached Mosaic / MixUp, large scale jittering and the two-stage schedule.
//!
//! All randomness comes from explicit RNGs. [`sample_rng`] gives every
//! sample index its own stream, and batch processing first plans every draw
//! sequentially (cache traffic included) before rendering in parallel, so
//! the output does not depend on the number of worker threads.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::PAD_VALUE;
use crate::error::{check_len, Error, Result};
use crate::geometry::{AnyBox, BitMask, RBox};

/// Boxes whose visible area drops below this many pixels are removed.
pub const MIN_BOX_AREA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub boxes: Vec<AnyBox>,
    pub classes: Vec<usize>,
    /// Image-sized masks aligned with `boxes`.
    pub masks: Option<Vec<BitMask>>,
}

impl Sample {
    pub fn new(image: RgbImage, boxes: Vec<AnyBox>, classes: Vec<usize>) -> Result<Self> {
        check_len("sample classes", boxes.len(), classes.len())?;
        Ok(Self {
            image,
            boxes,
            classes,
            masks: None,
        })
    }

    pub fn with_masks(mut self, masks: Vec<BitMask>) -> Result<Self> {
        check_len("sample masks", self.boxes.len(), masks.len())?;
        let (w, h) = self.dims();
        if masks.iter().any(|m| m.width != w as usize || m.height != h as usize) {
            return Err(Error::InvalidInput("mask size differs from image size".into()));
        }
        self.masks = Some(masks);
        Ok(self)
    }

    pub fn dims(&self) -> (u32, u32) {
        self.image.dimensions()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Copy of the `w × h` window at `(x0, y0)`; area outside the image is
    /// padded. Boxes are clipped to the window and dropped below
    /// [`MIN_BOX_AREA`].
    pub fn crop_pad(&self, x0: i64, y0: i64, w: u32, h: u32) -> Sample {
        let mut image = RgbImage::from_pixel(w, h, Rgb([PAD_VALUE; 3]));
        let (sw, sh) = self.dims();
        for y in 0..h as i64 {
            let sy = y + y0;
            if sy < 0 || sy >= sh as i64 {
                continue;
            }
            for x in 0..w as i64 {
                let sx = x + x0;
                if sx >= 0 && sx < sw as i64 {
                    image.put_pixel(x as u32, y as u32, *self.image.get_pixel(sx as u32, sy as u32));
                }
            }
        }
        let mut out = Annotations::default();
        let (fx, fy) = (x0 as f64, y0 as f64);
        for (k, b) in self.boxes.iter().enumerate() {
            if let Some(nb) = clip_keep(&b.translate(-fx, -fy), 0.0, 0.0, w as f64, h as f64) {
                out.push(nb, self.classes[k], k);
            }
        }
        let masks = self.masks.as_ref().map(|ms| {
            out.sources
                .iter()
                .map(|&k| {
                    let mut m = BitMask::new(w as usize, h as usize);
                    blit_mask(&ms[k], &mut m, x0, y0, 0, 0, w as i64, h as i64);
                    m
                })
                .collect()
        });
        Sample {
            image,
            boxes: out.boxes,
            classes: out.classes,
            masks,
        }
    }

    /// Mirror around the vertical center line.
    pub fn hflip(&self) -> Sample {
        let (w, _) = self.dims();
        let image = image::imageops::flip_horizontal(&self.image);
        let wf = w as f64;
        let boxes = self
            .boxes
            .iter()
            .map(|b| match b {
                AnyBox::Axis(a) => AnyBox::Axis(crate::geometry::AABox::new(wf - a.x2, a.y1, wf - a.x1, a.y2)),
                AnyBox::Rotated(r) => AnyBox::Rotated(RBox::new(wf - r.cx, r.cy, r.w, r.h, -r.theta).normalized()),
            })
            .collect();
        let masks = self.masks.as_ref().map(|ms| {
            ms.iter()
                .map(|m| {
                    let mut f = BitMask::new(m.width, m.height);
                    for i in 0..m.height {
                        for j in 0..m.width {
                            f.set(i, j, m.get(i, m.width - 1 - j));
                        }
                    }
                    f
                })
                .collect()
        });
        Sample {
            image,
            boxes,
            classes: self.classes.clone(),
            masks,
        }
    }

    /// Uniformly rescaled copy; see [`resize_image`].
    pub fn rescale(&self, ratio: f64) -> Sample {
        if ratio == 1.0 {
            return self.clone();
        }
        let image = resize_image(&self.image, ratio);
        let (w, h) = image.dimensions();
        let mut out = Annotations::default();
        for (k, b) in self.boxes.iter().enumerate() {
            if let Some(nb) = clip_keep(&b.scale(ratio), 0.0, 0.0, w as f64, h as f64) {
                out.push(nb, self.classes[k], k);
            }
        }
        let masks = self
            .masks
            .as_ref()
            .map(|ms| out.sources.iter().map(|&k| resize_mask(&ms[k], ratio, w, h)).collect());
        Sample {
            image,
            boxes: out.boxes,
            classes: out.classes,
            masks,
        }
    }
}

#[derive(Default)]
struct Annotations {
    boxes: Vec<AnyBox>,
    classes: Vec<usize>,
    sources: Vec<usize>,
}

impl Annotations {
    fn push(&mut self, b: AnyBox, class: usize, source: usize) {
        self.boxes.push(b);
        self.classes.push(class);
        self.sources.push(source);
    }
}

fn clip_keep(b: &AnyBox, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<AnyBox> {
    b.clip_to_window(x0, y0, x1, y1)
        .filter(|(_, visible)| *visible >= MIN_BOX_AREA)
        .map(|(nb, _)| nb)
}

/// Copy `src` pixels at `(sx + i, sy + j)` into `dst` at `(dx + i, dy + j)`
/// for the `w × h` block, skipping out-of-range pixels on either side.
#[allow(clippy::too_many_arguments)]
fn blit_mask(src: &BitMask, dst: &mut BitMask, sx: i64, sy: i64, dx: i64, dy: i64, w: i64, h: i64) {
    for j in 0..h {
        let (ry, ty) = (sy + j, dy + j);
        if ry < 0 || ry >= src.height as i64 || ty < 0 || ty >= dst.height as i64 {
            continue;
        }
        for i in 0..w {
            let (rx, tx) = (sx + i, dx + i);
            if rx >= 0 && rx < src.width as i64 && tx >= 0 && tx < dst.width as i64 && src.get(ry as usize, rx as usize) {
                dst.set(ty as usize, tx as usize, true);
            }
        }
    }
}

/// Size of an image side after scaling, at least 1.
pub fn scaled_len(len: u32, ratio: f64) -> u32 {
    ((len as f64 * ratio).round() as u32).max(1)
}

/// Bilinear resize by a uniform ratio, sampling source position
/// `(x + 0.5) / ratio - 0.5` (edge-clamped) and rounding half up.
pub fn resize_image(src: &RgbImage, ratio: f64) -> RgbImage {
    let (w, h) = src.dimensions();
    if ratio == 1.0 {
        return src.clone();
    }
    let (nw, nh) = (scaled_len(w, ratio), scaled_len(h, ratio));
    let axis = |n: u32, len: u32| -> Vec<(u32, u32, f64)> {
        (0..n)
            .map(|d| {
                let s = ((d as f64 + 0.5) / ratio - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = s.floor() as u32;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(nw, w);
    let ys = axis(nh, h);
    let mut out = RgbImage::new(nw, nh);
    for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let p00 = src.get_pixel(x0, y0).0;
            let p01 = src.get_pixel(x1, y0).0;
            let p10 = src.get_pixel(x0, y1).0;
            let p11 = src.get_pixel(x1, y1).0;
            let mut px = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
                let bot = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                let v = top * (1.0 - fy) + bot * fy;
                px[c] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    out
}

/// Nearest-neighbour mask resize onto a `w × h` grid.
pub fn resize_mask(m: &BitMask, ratio: f64, w: u32, h: u32) -> BitMask {
    let mut out = BitMask::new(w as usize, h as usize);
    for i in 0..h as usize {
        let si = (((i as f64 + 0.5) / ratio).floor() as usize).min(m.height.saturating_sub(1));
        for j in 0..w as usize {
            let sj = (((j as f64 + 0.5) / ratio).floor() as usize).min(m.width.saturating_sub(1));
            if m.height > 0 && m.width > 0 && m.get(si, sj) {
                out.set(i, j, true);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CachePolicy {
    Fifo,
    Random,
}

impl std::str::FromStr for CachePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fifo" => Ok(CachePolicy::Fifo),
            "random" => Ok(CachePolicy::Random),
            _ => Err(Error::InvalidInput(format!("unknown cache policy '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub capacity: usize,
    pub policy: CachePolicy,
}

impl CacheConfig {
    pub const MOSAIC: CacheConfig = CacheConfig {
        capacity: 40,
        policy: CachePolicy::Random,
    };
    pub const MIXUP: CacheConfig = CacheConfig {
        capacity: 20,
        policy: CachePolicy::Random,
    };
    /// The reduced setting: short FIFO cache.
    pub const SMALL: CacheConfig = CacheConfig {
        capacity: 10,
        policy: CachePolicy::Fifo,
    };
}

/// Bounded buffer with FIFO or seeded random eviction.
#[derive(Debug, Clone)]
pub struct SampleCache<T = Sample> {
    capacity: usize,
    policy: CachePolicy,
    buffer: Vec<T>,
    rng: ChaCha8Rng,
    puts: u64,
    evictions: u64,
}

impl<T> SampleCache<T> {
    pub fn new(capacity: usize, policy: CachePolicy, seed: u64) -> Self {
        Self {
            capacity: capacity.max(1),
            policy,
            buffer: Vec::with_capacity(capacity.max(1) + 1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            puts: 0,
            evictions: 0,
        }
    }

    pub fn from_config(cfg: CacheConfig, seed: u64) -> Self {
        Self::new(cfg.capacity, cfg.policy, seed)
    }

    /// Append; when over capacity remove the oldest (FIFO) or a uniformly
    /// random entry, the new one included (Random). Returns the evicted item.
    pub fn put(&mut self, item: T) -> Option<T> {
        self.buffer.push(item);
        self.puts += 1;
        if self.buffer.len() <= self.capacity {
            return None;
        }
        let idx = match self.policy {
            CachePolicy::Fifo => 0,
            CachePolicy::Random => self.rng.random_range(0..self.buffer.len()),
        };
        self.evictions += 1;
        Some(self.buffer.remove(idx))
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.buffer.get(i)
    }

    pub fn items(&self) -> &[T] {
        &self.buffer
    }

    pub fn puts(&self) -> u64 {
        self.puts
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }
}

/// The RNG stream of sample `index` under a master seed.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

// ---------------------------------------------------------------------------
// Mosaic
// ---------------------------------------------------------------------------

/// Random choices of one mosaic: cache indices of the three extra tiles,
/// the canvas center and each tile's scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosaicDraw {
    pub indices: [usize; 3],
    pub center: (u32, u32),
    pub scales: [f64; 4],
}

pub fn draw_mosaic<R: Rng>(cache_len: usize, rng: &mut R, scale_range: (f64, f64), out_size: (u32, u32)) -> MosaicDraw {
    let cx = (uniform(rng, (0.5, 1.5)) * out_size.0 as f64) as u32;
    let cy = (uniform(rng, (0.5, 1.5)) * out_size.1 as f64) as u32;
    let mut indices = [0; 3];
    for i in &mut indices {
        *i = rng.random_range(0..cache_len.max(1));
    }
    let mut scales = [1.0; 4];
    for s in &mut scales {
        *s = uniform(rng, scale_range);
    }
    MosaicDraw {
        indices,
        center: (cx, cy),
        scales,
    }
}

/// Four tiles (top-left, top-right, bottom-left, bottom-right) around the
/// draw's center on a `2·out_size` canvas. Tile `i` is first fit to
/// `out_size` then scaled by `draw.scales[i]`; its annotations are clipped to
/// the region the tile occupies.
pub fn mosaic(tiles: [&Sample; 4], draw: &MosaicDraw, out_size: (u32, u32)) -> Sample {
    let (cw, ch) = (2 * out_size.0 as i64, 2 * out_size.1 as i64);
    let (cx, cy) = (draw.center.0 as i64, draw.center.1 as i64);
    let mut canvas = RgbImage::from_pixel(cw as u32, ch as u32, Rgb([PAD_VALUE; 3]));
    let with_masks = tiles.iter().all(|t| t.masks.is_some());
    let mut boxes = Vec::new();
    let mut classes = Vec::new();
    let mut masks = Vec::new();

    for (q, tile) in tiles.iter().enumerate() {
        let (w0, h0) = tile.dims();
        let base = (out_size.0 as f64 / w0 as f64).min(out_size.1 as f64 / h0 as f64);
        let ratio = base * draw.scales[q];
        let img = resize_image(&tile.image, ratio);
        let (w, h) = (img.width() as i64, img.height() as i64);
        // placed region on the canvas and its source rectangle in the tile
        let (x1, y1, x2, y2, sx, sy) = match q {
            0 => {
                let (x1, y1) = ((cx - w).max(0), (cy - h).max(0));
                (x1, y1, cx, cy, w - (cx - x1), h - (cy - y1))
            }
            1 => {
                let y1 = (cy - h).max(0);
                (cx, y1, (cx + w).min(cw), cy, 0, h - (cy - y1))
            }
            2 => {
                let x1 = (cx - w).max(0);
                (x1, cy, cx, (cy + h).min(ch), w - (cx - x1), 0)
            }
            _ => (cx, cy, (cx + w).min(cw), (cy + h).min(ch), 0, 0),
        };
        for y in 0..(y2 - y1) {
            for x in 0..(x2 - x1) {
                let p = *img.get_pixel((sx + x) as u32, (sy + y) as u32);
                canvas.put_pixel((x1 + x) as u32, (y1 + y) as u32, p);
            }
        }
        let (dx, dy) = ((x1 - sx) as f64, (y1 - sy) as f64);
        for (k, b) in tile.boxes.iter().enumerate() {
            let moved = b.scale(ratio).translate(dx, dy);
            if let Some(nb) = clip_keep(&moved, x1 as f64, y1 as f64, x2 as f64, y2 as f64) {
                boxes.push(nb);
                classes.push(tile.classes[k]);
                if with_masks {
                    let src = &tile.masks.as_ref().expect("checked")[k];
                    let resized = resize_mask(src, ratio, w as u32, h as u32);
                    let mut m = BitMask::new(cw as usize, ch as usize);
                    blit_mask(&resized, &mut m, sx, sy, x1, y1, x2 - x1, y2 - y1);
                    masks.push(m);
                }
            }
        }
    }
    Sample {
        image: canvas,
        boxes,
        classes,
        masks: with_masks.then_some(masks),
    }
}

/// Mosaic of `current` with three samples drawn from `cache`. Fewer than 3
/// cached samples returns `current` unchanged.
pub fn cached_mosaic<R: Rng>(
    current: &Sample,
    cache: &SampleCache<Sample>,
    rng: &mut R,
    scale_range: (f64, f64),
    out_size: (u32, u32),
) -> Sample {
    if cache.len() < 3 {
        return current.clone();
    }
    let draw = draw_mosaic(cache.len(), rng, scale_range, out_size);
    let [a, b, c] = draw.indices.map(|i| &cache.items()[i]);
    mosaic([current, a, b, c], &draw, out_size)
}

// ---------------------------------------------------------------------------
// MixUp
// ---------------------------------------------------------------------------

/// Placement of the second image: it is fit inside the first keeping its
/// aspect ratio, then offset into the leftover margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixUpDraw {
    pub offset: (u32, u32),
}

pub fn mixup_fit(a_dims: (u32, u32), b_dims: (u32, u32)) -> (f64, (u32, u32)) {
    let ratio = (a_dims.0 as f64 / b_dims.0 as f64).min(a_dims.1 as f64 / b_dims.1 as f64);
    let dims = if ratio == 1.0 {
        b_dims
    } else {
        (
            scaled_len(b_dims.0, ratio).min(a_dims.0),
            scaled_len(b_dims.1, ratio).min(a_dims.1),
        )
    };
    (ratio, dims)
}

pub fn draw_mixup<R: Rng>(a_dims: (u32, u32), b_dims: (u32, u32), rng: &mut R) -> MixUpDraw {
    let (_, (bw, bh)) = mixup_fit(a_dims, b_dims);
    let ox = rng.random_range(0..=a_dims.0 - bw);
    let oy = rng.random_range(0..=a_dims.1 - bh);
    MixUpDraw { offset: (ox, oy) }
}

/// Equal-weight blend `(a + b + 1) >> 1` with `b` fit into `a`'s frame and
/// padded. Annotations of both are kept, `a` first.
pub fn mixup(a: &Sample, b: &Sample, draw: &MixUpDraw) -> Sample {
    let (aw, ah) = a.dims();
    let (ratio, _) = mixup_fit(a.dims(), b.dims());
    let fitted = b.rescale(ratio);
    let (ox, oy) = draw.offset;
    let placed = fitted.crop_pad(-(ox as i64), -(oy as i64), aw, ah);
    let mut image = a.image.clone();
    for (pa, pb) in image.pixels_mut().zip(placed.image.pixels()) {
        for c in 0..3 {
            pa.0[c] = ((pa.0[c] as u16 + pb.0[c] as u16 + 1) >> 1) as u8;
        }
    }
    let mut boxes = a.boxes.clone();
    boxes.extend(placed.boxes);
    let mut classes = a.classes.clone();
    classes.extend(placed.classes);
    let masks = match (&a.masks, placed.masks) {
        (Some(ma), Some(mb)) => Some(ma.iter().cloned().chain(mb).collect()),
        _ => None,
    };
    Sample {
        image,
        boxes,
        classes,
        masks,
    }
}

pub fn cached_mixup<R: Rng>(a: &Sample, b: &Sample, rng: &mut R) -> Sample {
    let draw = draw_mixup(a.dims(), b.dims(), rng);
    mixup(a, b, &draw)
}

// ---------------------------------------------------------------------------
// Large scale jittering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsjDraw {
    pub scale: f64,
    /// Crop offset into the rescaled image (0 on axes that are padded).
    pub offset: (u32, u32),
}

pub const LSJ_SCALE_RANGE: (f64, f64) = (0.1, 2.0);

fn lsj_ratio(dims: (u32, u32), scale: f64, out_size: (u32, u32)) -> f64 {
    scale * (out_size.0 as f64 / dims.0 as f64).min(out_size.1 as f64 / dims.1 as f64)
}

pub fn draw_lsj<R: Rng>(dims: (u32, u32), rng: &mut R, scale_range: (f64, f64), out_size: (u32, u32)) -> LsjDraw {
    let scale = uniform(rng, scale_range);
    let ratio = lsj_ratio(dims, scale, out_size);
    let (nw, nh) = if ratio == 1.0 {
        dims
    } else {
        (scaled_len(dims.0, ratio), scaled_len(dims.1, ratio))
    };
    let ox = rng.random_range(0..=nw.saturating_sub(out_size.0));
    let oy = rng.random_range(0..=nh.saturating_sub(out_size.1));
    LsjDraw {
        scale,
        offset: (ox, oy),
    }
}

/// Rescale by `scale` times the fit-to-output ratio, then crop at the
/// offset or pad bottom/right to `out_size`.
pub fn lsj_with(sample: &Sample, draw: &LsjDraw, out_size: (u32, u32)) -> Sample {
    let ratio = lsj_ratio(sample.dims(), draw.scale, out_size);
    sample
        .rescale(ratio)
        .crop_pad(draw.offset.0 as i64, draw.offset.1 as i64, out_size.0, out_size.1)
}

pub fn lsj<R: Rng>(sample: &Sample, rng: &mut R, scale_range: (f64, f64), out_size: (u32, u32)) -> Sample {
    let draw = draw_lsj(sample.dims(), rng, scale_range, out_size);
    lsj_with(sample, &draw, out_size)
}

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineId {
    /// Cached Mosaic, then MixUp of two mosaic outputs.
    MosaicMixUp,
    /// Large scale jittering and horizontal flip.
    LsjFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugSchedule {
    pub total_epochs: u32,
    pub stage1_epochs: u32,
    pub stage1: PipelineId,
    pub stage2: PipelineId,
    pub scale_range: (f64, f64),
}

impl Default for AugSchedule {
    fn default() -> Self {
        Self {
            total_epochs: 300,
            stage1_epochs: 280,
            stage1: PipelineId::MosaicMixUp,
            stage2: PipelineId::LsjFlip,
            scale_range: (0.1, 2.0),
        }
    }
}

pub fn stage_pipeline(epoch: u32, schedule: &AugSchedule) -> PipelineId {
    if epoch < schedule.stage1_epochs {
        schedule.stage1
    } else {
        schedule.stage2
    }
}

// ---------------------------------------------------------------------------
// Batch processing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub seed: u64,
    pub out_size: (u32, u32),
    /// Mosaic tile scale range.
    pub scale_range: (f64, f64),
    pub lsj_range: (f64, f64),
    pub mosaic_cache: CacheConfig,
    pub mixup_cache: CacheConfig,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_size: (640, 640),
            scale_range: (0.1, 2.0),
            lsj_range: LSJ_SCALE_RANGE,
            mosaic_cache: CacheConfig::MOSAIC,
            mixup_cache: CacheConfig::MIXUP,
            flip_prob: 0.5,
        }
    }
}

/// Everything random about one output, fixed before rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pipeline", rename_all = "kebab-case")]
pub enum SamplePlan {
    MosaicMixUp {
        /// Input indices of the four tiles, `None` while the cache warms up.
        tiles: Option<[usize; 4]>,
        mosaic: Option<MosaicDraw>,
        crop: (i64, i64),
        /// Plan index of the mixed-in partner and its placement.
        mixup: Option<(usize, MixUpDraw)>,
    },
    LsjFlip {
        lsj: LsjDraw,
        flip: bool,
    },
}

/// Draw every random choice for a stream of samples in order. Caches hold
/// sample (or output) indices; each sample uses [`sample_rng`].
pub fn plan_stream(dims: &[(u32, u32)], pipeline: PipelineId, cfg: &AugmentConfig) -> Vec<SamplePlan> {
    let mut plans = Vec::with_capacity(dims.len());
    match pipeline {
        PipelineId::LsjFlip => {
            for (i, &d) in dims.iter().enumerate() {
                let mut rng = sample_rng(cfg.seed, i as u64);
                let lsj = draw_lsj(d, &mut rng, cfg.lsj_range, cfg.out_size);
                let flip = rng.random::<f64>() < cfg.flip_prob;
                plans.push(SamplePlan::LsjFlip { lsj, flip });
            }
        }
        PipelineId::MosaicMixUp => {
            // cache RNGs derive from the master seed on streams past any sample index
            let mut mosaic_cache: SampleCache<usize> =
                SampleCache::from_config(cfg.mosaic_cache, cfg.seed ^ 0x6d6f_7361_6963);
            let mut mixup_cache: SampleCache<usize> =
                SampleCache::from_config(cfg.mixup_cache, cfg.seed ^ 0x6d_6978_7570);
            for (i, &d) in dims.iter().enumerate() {
                let mut rng = sample_rng(cfg.seed, i as u64);
                mosaic_cache.put(i);
                let (tiles, mosaic, mdims) = if mosaic_cache.len() >= 3 {
                    let draw = draw_mosaic(mosaic_cache.len(), &mut rng, cfg.scale_range, cfg.out_size);
                    let [a, b, c] = draw.indices.map(|k| mosaic_cache.items()[k]);
                    (Some([i, a, b, c]), Some(draw), (2 * cfg.out_size.0, 2 * cfg.out_size.1))
                } else {
                    (None, None, d)
                };
                let crop = (
                    rng.random_range(0..=mdims.0.saturating_sub(cfg.out_size.0)) as i64,
                    rng.random_range(0..=mdims.1.saturating_sub(cfg.out_size.1)) as i64,
                );
                mixup_cache.put(i);
                let mixup = if mixup_cache.len() >= 2 {
                    // partner: any cached output other than this one
                    let others: Vec<usize> = mixup_cache.items().iter().copied().filter(|&k| k != i).collect();
                    let partner = others[rng.random_range(0..others.len())];
                    let draw = draw_mixup(cfg.out_size, cfg.out_size, &mut rng);
                    Some((partner, draw))
                } else {
                    None
                };
                plans.push(SamplePlan::MosaicMixUp {
                    tiles,
                    mosaic,
                    crop,
                    mixup,
                });
            }
        }
    }
    plans
}

/// Render planned outputs. Runs on the current rayon pool; the result is
/// independent of its size.
pub fn render_stream(samples: &[Sample], plans: &[SamplePlan], cfg: &AugmentConfig) -> Result<Vec<Sample>> {
    check_len("sample plans", samples.len(), plans.len())?;
    let (ow, oh) = cfg.out_size;
    let first: Vec<Sample> = plans
        .par_iter()
        .enumerate()
        .map(|(i, plan)| match plan {
            SamplePlan::LsjFlip { lsj, flip } => {
                let out = lsj_with(&samples[i], lsj, cfg.out_size);
                if *flip {
                    out.hflip()
                } else {
                    out
                }
            }
            SamplePlan::MosaicMixUp {
                tiles, mosaic: m, crop, ..
            } => {
                let base = match (tiles, m) {
                    (Some(t), Some(draw)) => mosaic(t.map(|k| &samples[k]), draw, cfg.out_size),
                    _ => samples[i].clone(),
                };
                base.crop_pad(crop.0, crop.1, ow, oh)
            }
        })
        .collect();
    Ok(plans
        .par_iter()
        .enumerate()
        .map(|(i, plan)| match plan {
            SamplePlan::MosaicMixUp {
                mixup: Some((partner, draw)),
                ..
            } => mixup(&first[i], &first[*partner], draw),
            _ => first[i].clone(),
        })
        .collect())
}

pub fn augment_stream(samples: &[Sample], pipeline: PipelineId, cfg: &AugmentConfig) -> Result<Vec<Sample>> {
    let dims: Vec<(u32, u32)> = samples.iter().map(Sample::dims).collect();
    let plans = plan_stream(&dims, pipeline, cfg);
    render_stream(samples, &plans, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AABox;

    fn solid(w: u32, h: u32, c: u8) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([c, c, c]))
    }

    fn sample(w: u32, h: u32, c: u8, boxes: Vec<AABox>) -> Sample {
        let n = boxes.len();
        Sample::new(solid(w, h, c), boxes.into_iter().map(AnyBox::from).collect(), vec![0; n]).unwrap()
    }

    #[test]
    fn fifo_eviction() {
        let mut c = SampleCache::new(2, CachePolicy::Fifo, 0);
        assert_eq!(c.put(1), None);
        assert_eq!(c.put(2), None);
        assert_eq!(c.put(3), Some(1));
        assert_eq!(c.items(), &[2, 3]);
        assert_eq!((c.puts(), c.evictions()), (3, 1));
    }

    #[test]
    fn random_eviction_reproducible() {
        let run = || {
            let mut c = SampleCache::new(2, CachePolicy::Random, 42);
            (0..20).filter_map(|i| c.put(i)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
        let mut big = SampleCache::new(100, CachePolicy::Random, 1);
        assert!((0..100).all(|i| big.put(i).is_none()));
    }

    #[test]
    fn solid_mosaic_at_center() {
        let t = sample(64, 64, 77, vec![AABox::new(8.0, 8.0, 24.0, 24.0)]);
        let draw = MosaicDraw {
            indices: [0, 0, 0],
            center: (64, 64),
            scales: [1.0; 4],
        };
        let m = mosaic([&t, &t, &t, &t], &draw, (64, 64));
        assert_eq!(m.dims(), (128, 128));
        assert!(m.image.pixels().all(|p| p.0 == [77; 3]));
        assert_eq!(m.len(), 4);
        let expect = [(8.0, 8.0), (72.0, 8.0), (8.0, 72.0), (72.0, 72.0)];
        for (b, (x, y)) in m.boxes.iter().zip(expect) {
            assert_eq!(*b, AnyBox::Axis(AABox::new(x, y, x + 16.0, y + 16.0)));
        }
    }

    #[test]
    fn mosaic_clips_to_tile() {
        // box straddling the right border of the top-left tile region
        let t = sample(64, 64, 10, vec![AABox::new(40.0, 10.0, 64.0, 30.0)]);
        let e = sample(64, 64, 20, vec![]);
        let draw = MosaicDraw {
            indices: [0, 0, 0],
            center: (50, 64),
            scales: [1.0; 4],
        };
        let m = mosaic([&t, &e, &e, &e], &draw, (64, 64));
        // tile placed at x ∈ [0, 50) showing tile columns [14, 64)
        assert_eq!(m.boxes, vec![AnyBox::Axis(AABox::new(26.0, 10.0, 50.0, 30.0))]);
    }

    #[test]
    fn cached_mosaic_passthrough_and_draws() {
        let s = sample(32, 32, 5, vec![AABox::new(1.0, 1.0, 9.0, 9.0)]);
        let mut cache = SampleCache::new(10, CachePolicy::Fifo, 0);
        cache.put(s.clone());
        let mut rng = sample_rng(1, 0);
        assert_eq!(cached_mosaic(&s, &cache, &mut rng, (0.5, 2.0), (32, 32)), s);
        cache.put(s.clone());
        cache.put(s.clone());
        let m = cached_mosaic(&s, &cache, &mut rng, (0.5, 2.0), (32, 32));
        assert_eq!(m.dims(), (64, 64));
        assert!(m.len() <= 4);
    }

    #[test]
    fn mixup_examples() {
        let a = sample(16, 8, 0, vec![AABox::new(0.0, 0.0, 4.0, 4.0)]);
        let same = mixup(&a, &a, &MixUpDraw { offset: (0, 0) });
        assert_eq!(same.image, a.image);
        assert_eq!(same.len(), 2);
        let w = sample(16, 8, 255, vec![AABox::new(2.0, 2.0, 6.0, 6.0)]);
        let mut rng = sample_rng(0, 0);
        let g = cached_mixup(&a, &w, &mut rng);
        assert!(g.image.pixels().all(|p| p.0 == [128; 3]));
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn mixup_fits_smaller_partner() {
        let a = sample(40, 20, 0, vec![]);
        let b = sample(10, 10, 200, vec![AABox::new(0.0, 0.0, 10.0, 10.0)]);
        let out = mixup(&a, &b, &MixUpDraw { offset: (5, 0) });
        assert_eq!(out.boxes, vec![AnyBox::Axis(AABox::new(5.0, 0.0, 25.0, 20.0))]);
        assert_eq!(out.image.get_pixel(10, 10).0, [100; 3]);
        // padding blends with gray
        assert_eq!(out.image.get_pixel(30, 10).0, [57; 3]);
    }

    #[test]
    fn lsj_examples() {
        let s = sample(32, 32, 9, vec![AABox::new(4.0, 4.0, 12.0, 20.0)]);
        let id = lsj_with(&s, &LsjDraw { scale: 1.0, offset: (0, 0) }, (32, 32));
        assert_eq!(id, s);
        let up = lsj_with(&s, &LsjDraw { scale: 2.0, offset: (4, 6) }, (32, 32));
        assert_eq!(up.boxes, vec![AnyBox::Axis(AABox::new(4.0, 2.0, 20.0, 32.0))]);
        let down = lsj_with(&s, &LsjDraw { scale: 0.1, offset: (0, 0) }, (32, 32));
        assert_eq!(down.dims(), (32, 32));
        assert_eq!(down.image.get_pixel(31, 31).0, [PAD_VALUE; 3]);
        let b = down.boxes[0].bounds();
        assert!((b.x1 - 0.4).abs() < 1e-12 && (b.y2 - 2.0).abs() < 1e-12);
        let tiny = sample(32, 32, 9, vec![AABox::new(4.0, 4.0, 12.0, 12.0)]);
        // 0.8 x 0.8 px falls under the minimum area
        assert!(lsj_with(&tiny, &LsjDraw { scale: 0.1, offset: (0, 0) }, (32, 32)).is_empty());
    }

    #[test]
    fn hflip_boxes() {
        let mut s = sample(20, 10, 1, vec![AABox::new(2.0, 1.0, 6.0, 5.0)]);
        s.boxes.push(AnyBox::Rotated(RBox::new(5.0, 5.0, 4.0, 2.0, 0.3)));
        s.classes.push(1);
        let f = s.hflip();
        assert_eq!(f.boxes[0], AnyBox::Axis(AABox::new(14.0, 1.0, 18.0, 5.0)));
        let r = f.boxes[1].as_rotated().unwrap();
        assert_eq!(r.cx, 15.0);
        assert!((r.theta + 0.3).abs() < 1e-12);
        let back = f.hflip();
        assert_eq!(back.image, s.image);
        let r2 = back.boxes[1].as_rotated().unwrap();
        assert!((r2.theta - 0.3).abs() < 1e-12 && r2.cx == 5.0);
    }

    #[test]
    fn schedule_boundaries() {
        let s = AugSchedule::default();
        assert_eq!(stage_pipeline(0, &s), PipelineId::MosaicMixUp);
        assert_eq!(stage_pipeline(279, &s), PipelineId::MosaicMixUp);
        assert_eq!(stage_pipeline(280, &s), PipelineId::LsjFlip);
        assert_eq!(stage_pipeline(299, &s), PipelineId::LsjFlip);
    }

    #[test]
    fn resize_rounds_half_up() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(0, 0, Rgb([0, 0, 0]));
        img.put_pixel(1, 0, Rgb([1, 1, 1]));
        // 2 -> 4 pixels: sample positions -0.25, 0.25, 0.75, 1.25
        let r = resize_image(&img, 2.0);
        let row: Vec<u8> = (0..4).map(|x| r.get_pixel(x, 0).0[0]).collect();
        assert_eq!(row, vec![0, 0, 1, 1]);
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(1, 0, Rgb([3, 3, 3]));
        let r = resize_image(&img, 0.5);
        // single pixel at source position 0.5: 1.5 rounds up to 2
        assert_eq!(r.get_pixel(0, 0).0, [2, 2, 2]);
    }

    #[test]
    fn masks_follow_boxes() {
        let mut m = BitMask::new(16, 16);
        for i in 2..6 {
            for j in 2..6 {
                m.set(i, j, true);
            }
        }
        let s = sample(16, 16, 0, vec![AABox::new(2.0, 2.0, 6.0, 6.0)]).with_masks(vec![m]).unwrap();
        let c = s.crop_pad(4, 0, 16, 16);
        let cm = &c.masks.as_ref().unwrap()[0];
        assert_eq!(cm.count(), 8);
        let up = s.rescale(2.0);
        assert_eq!(up.masks.as_ref().unwrap()[0].count(), 64);
        let f = s.hflip();
        assert!(f.masks.as_ref().unwrap()[0].get(2, 13));
    }

    #[test]
    fn stream_is_deterministic() {
        let samples: Vec<Sample> = (0..6)
            .map(|i| sample(24 + 4 * i, 20, (i * 30) as u8, vec![AABox::new(2.0, 2.0, 14.0, 12.0)]))
            .collect();
        let cfg = AugmentConfig {
            seed: 3,
            out_size: (32, 32),
            ..Default::default()
        };
        for p in [PipelineId::MosaicMixUp, PipelineId::LsjFlip] {
            let a = augment_stream(&samples, p, &cfg).unwrap();
            let b = augment_stream(&samples, p, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|s| s.dims() == (32, 32)));
        }
    }
}
