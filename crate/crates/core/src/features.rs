//! Multimodal frame features.
//!
//! A frame is turned into two modality blocks, a low-resolution color
//! thumbnail and a grid of unsigned gradient-orientation histograms. Each
//! block is scaled to unit l2 norm on its own and the blocks are concatenated
//! (color first), so both modalities carry equal weight in the matching
//! problem.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An RGB image with channels in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("frame must be non-empty, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "frame {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().flatten().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::invalid(format!("channel value {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    /// Builds a frame from 8-bit RGB triples.
    pub fn from_rgb8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "expected {} bytes of RGB data, got {}",
                width * height * 3,
                data.len()
            )));
        }
        let pixels = data
            .chunks_exact(3)
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();
        Self::new(width, height, pixels)
    }

    /// Quantizes to 8-bit RGB. Frames whose channels are multiples of 1/255
    /// survive the round trip through [`Frame::from_rgb8`] bit-exactly.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8))
            .collect()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::Image("pixel buffer size mismatch".into()))?;
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?
            .to_rgb8();
        Self::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    fn luminance(&self) -> Vec<f64> {
        self.pixels.iter().map(|p| (p[0] + p[1] + p[2]) / 3.0).collect()
    }

    /// Multiplies every channel by `factor`, clamping to `[0, 1]`.
    pub fn scaled(&self, factor: f64) -> Self {
        let pixels = self
            .pixels
            .iter()
            .map(|p| p.map(|c| (c * factor).clamp(0.0, 1.0)))
            .collect();
        Self { width: self.width, height: self.height, pixels }
    }
}

/// Feature extraction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityConfig {
    /// Thumbnail size `(rows, cols)` of the color modality.
    pub color_downsample: (usize, usize),
    /// Orientation bins over `[0, pi)`.
    pub gradient_bins: usize,
    /// Cell grid `(rows, cols)` of the gradient modality.
    pub gradient_downsample: (usize, usize),
}

impl Default for ModalityConfig {
    /// Sized for the simulator's 32x32 frames.
    fn default() -> Self {
        Self { color_downsample: (8, 8), gradient_bins: 4, gradient_downsample: (4, 4) }
    }
}

impl ModalityConfig {
    /// Dimensions suited to 240x320 camera frames: a 24x32 color thumbnail
    /// and 9-bin histograms over 8x8-pixel cells.
    pub fn camera() -> Self {
        Self { color_downsample: (24, 32), gradient_bins: 9, gradient_downsample: (30, 40) }
    }

    pub fn validate(&self) -> Result<()> {
        let (cr, cc) = self.color_downsample;
        let (gr, gc) = self.gradient_downsample;
        if cr == 0 || cc == 0 || gr == 0 || gc == 0 {
            return Err(Error::invalid("downsample grid dimensions must be at least 1"));
        }
        if self.gradient_bins < 2 {
            return Err(Error::invalid("gradient_bins must be at least 2"));
        }
        Ok(())
    }

    pub fn color_len(&self) -> usize {
        self.color_downsample.0 * self.color_downsample.1 * 3
    }

    pub fn gradient_len(&self) -> usize {
        self.gradient_downsample.0 * self.gradient_downsample.1 * self.gradient_bins
    }

    /// Length `m` of every encoded feature vector.
    pub fn feature_len(&self) -> usize {
        self.color_len() + self.gradient_len()
    }
}

/// A concatenation of per-modality feature blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// End offset of each modality block; the last entry equals `values.len()`.
    pub modality_offsets: Vec<usize>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Iterates over the modality blocks in order.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        let starts = std::iter::once(0).chain(self.modality_offsets.iter().copied());
        starts
            .zip(self.modality_offsets.iter().copied())
            .map(move |(a, b)| &self.values[a..b])
    }
}

// Half-open span of source indices covered by output cell `i` of `n`.
#[inline]
fn span(i: usize, n: usize, len: usize) -> (usize, usize) {
    (i * len / n, (i + 1) * len / n)
}

/// Block-mean downsampling to `rows x cols`, three channels per cell.
pub fn downsample_color(frame: &Frame, rows: usize, cols: usize) -> Result<Vec<f64>> {
    if rows == 0 || cols == 0 || rows > frame.height || cols > frame.width {
        return Err(Error::invalid(format!(
            "cannot downsample a {}x{} frame to {rows}x{cols}",
            frame.height, frame.width
        )));
    }
    let mut out = Vec::with_capacity(rows * cols * 3);
    for r in 0..rows {
        let (y0, y1) = span(r, rows, frame.height);
        for c in 0..cols {
            let (x0, x1) = span(c, cols, frame.width);
            let mut acc = [0.0; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = frame.pixel(x, y);
                    acc[0] += p[0];
                    acc[1] += p[1];
                    acc[2] += p[2];
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            out.extend(acc.iter().map(|a| a / count));
        }
    }
    Ok(out)
}

/// Per-cell histograms of unsigned gradient orientation, weighted by
/// gradient magnitude.
///
/// Gradients are central differences of the luminance (RGB mean) with
/// replicated borders. Orientation is folded into `[0, pi)` and hard-binned,
/// so bin 0 collects horizontal gradients (vertical edges).
pub fn gradient_histogram(frame: &Frame, cfg: &ModalityConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (rows, cols) = cfg.gradient_downsample;
    if rows > frame.height || cols > frame.width {
        return Err(Error::invalid(format!(
            "gradient cell grid {rows}x{cols} exceeds frame {}x{}",
            frame.height, frame.width
        )));
    }
    let bins = cfg.gradient_bins;
    let (w, h) = (frame.width, frame.height);
    let lum = frame.luminance();
    let at = |x: usize, y: usize| lum[y * w + x];
    let bin_width = PI / bins as f64;

    let mut hist = vec![0.0; rows * cols * bins];
    for y in 0..h {
        let cell_r = y * rows / h;
        for x in 0..w {
            let gx = (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y)) / 2.0;
            let gy = (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1))) / 2.0;
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx);
            if angle < 0.0 {
                angle += PI;
            }
            if angle >= PI {
                angle -= PI;
            }
            let bin = ((angle / bin_width) as usize).min(bins - 1);
            let cell = cell_r * cols + x * cols / w;
            hist[cell * bins + bin] += mag;
        }
    }
    Ok(hist)
}

fn normalize_in_place(block: &mut [f64]) {
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        block.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Encodes a frame as `[color | gradient]`, each block at unit l2 norm
/// (all-zero blocks stay zero).
pub fn encode(frame: &Frame, cfg: &ModalityConfig) -> Result<FeatureVector> {
    cfg.validate()?;
    let (cr, cc) = cfg.color_downsample;
    let mut color = downsample_color(frame, cr, cc)?;
    let mut grad = gradient_histogram(frame, cfg)?;
    normalize_in_place(&mut color);
    normalize_in_place(&mut grad);
    let offsets = vec![color.len(), color.len() + grad.len()];
    color.extend_from_slice(&grad);
    Ok(FeatureVector { values: color, modality_offsets: offsets })
}
