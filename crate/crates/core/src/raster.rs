//! Rendering stroke sequences into normalized grayscale rasters.
//!
//! Ink is 1 and background 0, the convention produced by mapping an 8-bit
//! channel `v` to `1 - v / 255`. Lines are 1-px Bresenham segments with no
//! anti-aliasing, so every raster is exactly `{0, 1}`-valued.

use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::Tensor;
use crate::math;
use crate::stroke::{AbsolutePoint, PenState, Stroke5Point, StrokeSequence};
use crate::{Error, Result};

pub const RASTER_SIZE: usize = 128;
/// Blank border kept around the fitted bounding box.
pub const MARGIN: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    size: usize,
    data: Vec<f32>,
}

impl RasterImage {
    pub fn blank(size: usize) -> Self {
        RasterImage { size, data: vec![0.0; size * size] }
    }

    pub fn from_values(size: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::invalid("raster data does not match its size"));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("raster values must lie in [0, 1]"));
        }
        Ok(RasterImage { size, data })
    }

    /// Normalize an interleaved 8-bit RGB image of `size × size` pixels.
    pub fn from_rgb8(size: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * size * size {
            return Err(Error::invalid("RGB buffer does not match its size"));
        }
        let data = rgb
            .chunks_exact(3)
            .map(|px| gray_level(px[0] as i32, px[1] as i32, px[2] as i32))
            .collect::<Result<Vec<_>>>()?;
        Ok(RasterImage { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.size + x]
    }

    fn plot(&mut self, x: i64, y: i64) {
        let s = self.size as i64;
        if (0..s).contains(&x) && (0..s).contains(&y) {
            self.data[(y * s + x) as usize] = 1.0;
        }
    }

    pub fn ink_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    /// `(x, y)` of every inked pixel in row-major order.
    pub fn lit_pixels(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, _)| (i % self.size, i / self.size))
            .collect()
    }

    /// `[1, channels, size, size]` tensor, the raster repeated per channel.
    pub fn to_tensor(&self, channels: usize) -> Tensor {
        let mut out = Vec::with_capacity(channels * self.data.len());
        for _ in 0..channels {
            out.extend_from_slice(&self.data);
        }
        Tensor::new(&[1, channels, self.size, self.size], out).expect("raster tensor shape")
    }
}

/// Per-channel `1 - v / 255`.
pub fn normalize_rgb(r: i32, g: i32, b: i32) -> Result<[f32; 3]> {
    let one = |v: i32| -> Result<f32> {
        if !(0..=255).contains(&v) {
            return Err(Error::invalid(alloc::format!("channel value {v} outside 0..=255")));
        }
        Ok((255 - v) as f32 / 255.0)
    };
    Ok([one(r)?, one(g)?, one(b)?])
}

/// Mean of the three normalized channels, computed exactly as
/// `(765 - r - g - b) / 765` so a gray pixel maps to the same value as
/// any one of its channels.
pub fn gray_level(r: i32, g: i32, b: i32) -> Result<f32> {
    normalize_rgb(r, g, b)?;
    Ok((765 - r - g - b) as f32 / 765.0)
}

/// Affine map from sketch coordinates to pixel centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Viewport {
    pub size: usize,
    center_x: f64,
    center_y: f64,
    scale: f64,
    bounds: [f64; 4],
}

impl Viewport {
    /// Fit the bounding box of `points` into the `size - 2·MARGIN` square
    /// centered in the raster, preserving aspect ratio.
    pub fn fit(points: &[(f64, f64)], size: usize) -> Self {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &(x, y) in points {
            b[0] = b[0].min(x);
            b[1] = b[1].min(y);
            b[2] = b[2].max(x);
            b[3] = b[3].max(y);
        }
        if points.is_empty() {
            b = [0.0; 4];
        }
        let extent = (b[2] - b[0]).max(b[3] - b[1]);
        let span = size.saturating_sub(2 * MARGIN + 1) as f64;
        let scale = if extent > 0.0 { span / extent } else { 0.0 };
        Viewport {
            size,
            center_x: (b[0] + b[2]) / 2.0,
            center_y: (b[1] + b[3]) / 2.0,
            scale,
            bounds: b,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.bounds[0] && y >= self.bounds[1] && x <= self.bounds[2] && y <= self.bounds[3]
    }

    pub fn map(&self, x: f64, y: f64) -> (i64, i64) {
        let mid = (self.size as f64 - 1.0) / 2.0;
        (
            math::round64((x - self.center_x) * self.scale + mid) as i64,
            math::round64((y - self.center_y) * self.scale + mid) as i64,
        )
    }
}

fn absolute_f64(points: &[Stroke5Point], offset_scale: f32) -> Vec<(f64, f64, PenState)> {
    let s = offset_scale as f64;
    let (mut x, mut y) = (0.0f64, 0.0f64);
    points
        .iter()
        .map(|p| {
            x += p.dx as f64 * s;
            y += p.dy as f64 * s;
            (x, y, p.pen)
        })
        .collect()
}

/// Integer Bresenham line including both endpoints.
pub fn bresenham(from: (i64, i64), to: (i64, i64), mut plot: impl FnMut(i64, i64)) {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        plot(x, y);
        if (x, y) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn draw(img: &mut RasterImage, abs: &[(f64, f64, PenState)], view: &Viewport) {
    let mut prev: Option<((i64, i64), PenState)> = None;
    for &(x, y, pen) in abs {
        let p = view.map(x, y);
        match prev {
            Some((q, PenState::Down)) => bresenham(q, p, |a, b| img.plot(a, b)),
            _ => img.plot(p.0, p.1),
        }
        prev = Some((p, pen));
    }
}

/// Render at the default 128 × 128 size.
pub fn render(sequence: &StrokeSequence, offset_scale: f32) -> RasterImage {
    render_sized(sequence, offset_scale, RASTER_SIZE)
}

/// Render with the viewport fitted to this sequence's own bounding box.
/// `offset_scale` undoes offset normalization.
pub fn render_sized(sequence: &StrokeSequence, offset_scale: f32, size: usize) -> RasterImage {
    let abs = absolute_f64(&sequence.points, offset_scale);
    let pts: Vec<(f64, f64)> = abs.iter().map(|&(x, y, _)| (x, y)).collect();
    let view = Viewport::fit(&pts, size);
    let mut img = RasterImage::blank(size);
    draw(&mut img, &abs, &view);
    img
}

/// Render through a fixed viewport, e.g. one fitted to a longer sequence.
pub fn render_in_viewport(sequence: &StrokeSequence, offset_scale: f32, view: &Viewport) -> RasterImage {
    let abs = absolute_f64(&sequence.points, offset_scale);
    let mut img = RasterImage::blank(view.size);
    draw(&mut img, &abs, view);
    img
}

/// Viewport fitted to `sequence`, for use with [`render_in_viewport`].
pub fn viewport_for(sequence: &StrokeSequence, offset_scale: f32, size: usize) -> Viewport {
    let pts: Vec<(f64, f64)> = absolute_f64(&sequence.points, offset_scale)
        .into_iter()
        .map(|(x, y, _)| (x, y))
        .collect();
    Viewport::fit(&pts, size)
}

/// Absolute points (denormalized) of a sequence, as used by the renderer.
pub fn absolute_points(sequence: &StrokeSequence, offset_scale: f32) -> Vec<AbsolutePoint> {
    absolute_f64(&sequence.points, offset_scale)
        .into_iter()
        .map(|(x, y, pen)| AbsolutePoint { x, y, pen })
        .collect()
}

/// Raster of a sketch that grows one point at a time.
///
/// A new point inside the current bounding box only adds its own segment;
/// growing the box re-renders everything, as does every 32nd point.
#[derive(Clone, Debug)]
pub struct IncrementalRaster {
    size: usize,
    offset_scale: f64,
    abs: Vec<(f64, f64, PenState)>,
    view: Viewport,
    image: RasterImage,
    since_full: usize,
}

impl IncrementalRaster {
    pub const FULL_REFRESH: usize = 32;

    pub fn new(size: usize, offset_scale: f32) -> Self {
        IncrementalRaster {
            size,
            offset_scale: offset_scale as f64,
            abs: Vec::new(),
            view: Viewport::fit(&[], size),
            image: RasterImage::blank(size),
            since_full: 0,
        }
    }

    pub fn image(&self) -> &RasterImage {
        &self.image
    }

    pub fn push(&mut self, point: Stroke5Point) {
        let (x0, y0) = self.abs.last().map_or((0.0, 0.0), |&(x, y, _)| (x, y));
        let x = x0 + point.dx as f64 * self.offset_scale;
        let y = y0 + point.dy as f64 * self.offset_scale;
        self.abs.push((x, y, point.pen));
        self.since_full += 1;
        if self.abs.len() == 1 || !self.view.contains(x, y) || self.since_full >= Self::FULL_REFRESH {
            let pts: Vec<(f64, f64)> = self.abs.iter().map(|&(x, y, _)| (x, y)).collect();
            self.view = Viewport::fit(&pts, self.size);
            self.image = RasterImage::blank(self.size);
            draw(&mut self.image, &self.abs, &self.view);
            self.since_full = 0;
            return;
        }
        let p = self.view.map(x, y);
        let n = self.abs.len();
        let (px, py, ppen) = self.abs[n - 2];
        if ppen == PenState::Down {
            let q = self.view.map(px, py);
            let img = &mut self.image;
            bresenham(q, p, |a, b| img.plot(a, b));
        } else {
            self.image.plot(p.0, p.1);
        }
    }
}
