//! Canny edge detection.
//!
//! The detector has four fixed stages, all in `f64`:
//!
//! 1. **Blur.** Separable Gaussian with weights `exp(-k²/2σ²)` for
//!    `k ∈ [-⌈3σ⌉, ⌈3σ⌉]`, horizontal pass first. At every pixel the weighted sum
//!    runs over in-bounds taps in increasing `k` and is divided by the sum of those
//!    taps' weights. `σ = 0` skips the stage.
//! 2. **Gradient.** 3×3 Sobel on interior pixels,
//!    `gx = (b[y-1][x+1] + 2b[y][x+1] + b[y+1][x+1]) - (b[y-1][x-1] + 2b[y][x-1] + b[y+1][x-1])`
//!    and `gy` likewise with rows `y+1` minus `y-1`; magnitude `√(gx² + gy²)`.
//!    Border pixels have zero magnitude.
//! 3. **Non-maximum suppression.** The gradient orientation is quantized to 0°,
//!    45°, 90° or 135° (bin edges at 22.5° + k·45°). With `ahead` the neighbor
//!    along the quantized direction and `behind` the opposite one, a pixel survives
//!    iff `m ≥ m_behind` and `m > m_ahead`. The asymmetric tie rule keeps exactly
//!    one pixel of a symmetric two-pixel ridge.
//! 4. **Hysteresis.** Survivors with `m > 0` and `m ≥ high` are strong; survivors
//!    with `m > 0` and `low ≤ m < high` are kept iff 8-connected to a strong pixel
//!    through kept pixels.
//!
//! Magnitudes use the unnormalized Sobel scale of an 8-bit image.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, ImageIoError};
use crate::render::GrayscaleImage;

pub const EDGE: u8 = 255;
pub const NON_EDGE: u8 = 0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EdgeError {
    #[error("invalid thresholds: need 0 <= low <= high <= 255, got low={low}, high={high}")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("invalid sigma {0}: must be finite and >= 0")]
    InvalidSigma(f64),
    #[error("image {width}x{height} is smaller than 3x3")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("edge map pixels must be 0 or 255")]
    NotBinary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyParams {
    pub low: f64,
    pub high: f64,
    pub sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { low: 100.0, high: 200.0, sigma: 1.0 }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<(), EdgeError> {
        let ok = |v: f64| v.is_finite() && (0.0..=255.0).contains(&v);
        if !(ok(self.low) && ok(self.high) && self.low <= self.high) {
            return Err(EdgeError::InvalidThresholds { low: self.low, high: self.high });
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(EdgeError::InvalidSigma(self.sigma));
        }
        Ok(())
    }
}

/// Binary edge image; 255 marks an edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl EdgeMap {
    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, EdgeError> {
        if pixels.len() != width as usize * height as usize || pixels.iter().any(|&p| p != EDGE && p != NON_EDGE) {
            return Err(EdgeError::NotBinary);
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn is_edge(&self, x: u32, y: u32) -> bool {
        self.pixels[y as usize * self.width as usize + x as usize] == EDGE
    }

    pub fn edge_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == EDGE).count()
    }

    pub fn to_png(&self) -> Result<Vec<u8>, ImageIoError> {
        imaging::encode_gray(self.width, self.height, &self.pixels)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, EdgeMapDecodeError> {
        let (w, h, px) = imaging::decode_gray(bytes)?;
        Ok(Self::from_raw(w, h, px)?)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageIoError> {
        imaging::write_file(path, &self.to_png()?)
    }

    pub fn load_png(path: &Path) -> Result<Self, EdgeMapDecodeError> {
        Self::from_png(&imaging::read_file(path)?)
    }
}

#[derive(Debug, Error)]
pub enum EdgeMapDecodeError {
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
}

/// Intermediate products, exposed for property checks.
#[derive(Debug, Clone)]
pub struct CannyStages {
    pub width: usize,
    pub height: usize,
    pub blurred: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// Magnitude after non-maximum suppression (0 where suppressed).
    pub thinned: Vec<f64>,
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    (-radius..=radius).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect()
}

fn blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return src.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let pass = |input: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (i, &wk) in kernel.iter().enumerate() {
                    let k = i as i64 - r;
                    let (sx, sy) = if horizontal { (x as i64 + k, y as i64) } else { (x as i64, y as i64 + k) };
                    if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                        continue;
                    }
                    acc += wk * input[sy as usize * w + sx as usize];
                    norm += wk;
                }
                out[y * w + x] = acc / norm;
            }
        }
        out
    };
    let horizontal = pass(src, true);
    pass(&horizontal, false)
}

fn sobel(b: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 1..h - 1 {
        let (up, mid, down) = ((y - 1) * w, y * w, (y + 1) * w);
        for x in 1..w - 1 {
            gx[mid + x] = (b[up + x + 1] + 2.0 * b[mid + x + 1] + b[down + x + 1])
                - (b[up + x - 1] + 2.0 * b[mid + x - 1] + b[down + x - 1]);
            gy[mid + x] = (b[down + x - 1] + 2.0 * b[down + x] + b[down + x + 1])
                - (b[up + x - 1] + 2.0 * b[up + x] + b[up + x + 1]);
        }
    }
    (gx, gy)
}

/// Offset `(dx, dy)` of the neighbor ahead along the quantized gradient direction.
fn direction_offset(gx: f64, gy: f64) -> (isize, isize) {
    // tan(22.5°) and tan(67.5°)
    const LOWER: f64 = 0.414_213_562_373_095_03;
    const UPPER: f64 = 2.414_213_562_373_095;
    let (ax, ay) = (gx.abs(), gy.abs());
    if ay <= LOWER * ax {
        (1, 0)
    } else if ay >= UPPER * ax {
        (0, 1)
    } else if (gx > 0.0) == (gy > 0.0) {
        (1, 1)
    } else {
        (-1, 1)
    }
}

fn suppress(mag: &[f64], gx: &[f64], gy: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let (dx, dy) = direction_offset(gx[i], gy[i]);
            let ahead = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
            let behind = (y as isize - dy) as usize * w + (x as isize - dx) as usize;
            if m >= mag[behind] && m > mag[ahead] {
                out[i] = m;
            }
        }
    }
    out
}

fn hysteresis(thinned: &[f64], w: usize, h: usize, low: f64, high: f64) -> Vec<u8> {
    let mut out = vec![NON_EDGE; w * h];
    let mut stack = Vec::new();
    for start in 0..w * h {
        let m = thinned[start];
        if !(m > 0.0 && m >= high) || out[start] == EDGE {
            continue;
        }
        out[start] = EDGE;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    let mj = thinned[j];
                    if out[j] == NON_EDGE && mj > 0.0 && mj >= low {
                        out[j] = EDGE;
                        stack.push(j);
                    }
                }
            }
        }
    }
    out
}

fn check_input(img: &GrayscaleImage, params: &CannyParams) -> Result<(), EdgeError> {
    params.validate()?;
    if img.width < 3 || img.height < 3 {
        return Err(EdgeError::ImageTooSmall { width: img.width, height: img.height });
    }
    Ok(())
}

/// Runs stages 1–3.
pub fn canny_stages(img: &GrayscaleImage, sigma: f64) -> Result<CannyStages, EdgeError> {
    check_input(img, &CannyParams { sigma, ..CannyParams::default() })?;
    let (w, h) = (img.width as usize, img.height as usize);
    let src: Vec<f64> = img.pixels.iter().map(|&p| f64::from(p)).collect();
    let blurred = blur(&src, w, h, sigma);
    let (gx, gy) = sobel(&blurred, w, h);
    let magnitude: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| (x * x + y * y).sqrt()).collect();
    let thinned = suppress(&magnitude, &gx, &gy, w, h);
    Ok(CannyStages { width: w, height: h, blurred, magnitude, thinned })
}

/// Full detector.
pub fn canny(img: &GrayscaleImage, params: &CannyParams) -> Result<EdgeMap, EdgeError> {
    check_input(img, params)?;
    let stages = canny_stages(img, params.sigma)?;
    let pixels = hysteresis(&stages.thinned, stages.width, stages.height, params.low, params.high);
    Ok(EdgeMap { width: img.width, height: img.height, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(w: u32, h: u32, at: u32) -> GrayscaleImage {
        let pixels = (0..h).flat_map(|_| (0..w).map(move |x| if x < at { 0 } else { 255 })).collect();
        GrayscaleImage::from_raw(w, h, pixels).unwrap()
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = GrayscaleImage::filled(32, 20, 77);
        assert_eq!(canny(&img, &CannyParams::default()).unwrap().edge_count(), 0);
    }

    #[test]
    fn vertical_step_gives_single_column() {
        let img = step(64, 64, 32);
        let params = CannyParams { low: 50.0, high: 100.0, sigma: 1.0 };
        let edges = canny(&img, &params).unwrap();
        for y in 1..63 {
            let cols: Vec<u32> = (0..64).filter(|&x| edges.is_edge(x, y)).collect();
            assert_eq!(cols.len(), 1, "row {y}: {cols:?}");
            assert!((31..=33).contains(&cols[0]), "row {y}: {cols:?}");
        }
        for x in 0..64 {
            assert!(!edges.is_edge(x, 0) && !edges.is_edge(x, 63));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let img = GrayscaleImage::filled(8, 8, 0);
        let bad = CannyParams { low: 120.0, high: 100.0, sigma: 1.0 };
        assert!(matches!(canny(&img, &bad), Err(EdgeError::InvalidThresholds { .. })));
        let bad = CannyParams { low: 10.0, high: 300.0, sigma: 1.0 };
        assert!(matches!(canny(&img, &bad), Err(EdgeError::InvalidThresholds { .. })));
        let bad = CannyParams { sigma: -1.0, ..CannyParams::default() };
        assert!(matches!(canny(&img, &bad), Err(EdgeError::InvalidSigma(_))));
        let tiny = GrayscaleImage::filled(2, 8, 0);
        assert!(matches!(canny(&tiny, &CannyParams::default()), Err(EdgeError::ImageTooSmall { .. })));
    }

    #[test]
    fn output_is_binary_and_png_round_trips() {
        let img = step(16, 9, 7);
        let edges = canny(&img, &CannyParams { low: 10.0, high: 20.0, sigma: 0.0 }).unwrap();
        assert!(edges.pixels().iter().all(|&p| p == EDGE || p == NON_EDGE));
        let back = EdgeMap::from_png(&edges.to_png().unwrap()).unwrap();
        assert_eq!(back, edges);
        assert!(EdgeMap::from_raw(2, 2, vec![0, 1, 0, 0]).is_err());
    }

    #[test]
    fn kernel_radius_is_three_sigma() {
        assert_eq!(gaussian_kernel(1.0).len(), 7);
        assert_eq!(gaussian_kernel(1.4).len(), 11);
        assert_eq!(gaussian_kernel(1.0)[3], 1.0);
    }
}
