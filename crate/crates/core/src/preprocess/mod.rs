//! Raw image to feature vector conversion.
//!
//! The pipeline is grayscale, then resampling to the working resolution,
//! then optional histogram equalization, then column-major vectorization.
//! Intensities stay on the 0-255 scale throughout.

mod io;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{decode_pgm, encode_pgm, load_image};

/// Working resolution of the feature vectors: `rows` by `cols` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Resolution {
    pub rows: usize,
    pub cols: usize,
}

impl Resolution {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("resolution {rows}x{cols} has a zero side")));
        }
        Ok(Self { rows, cols })
    }

    /// Feature dimension, `rows * cols`.
    pub fn tau(&self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::invalid(format!("resolution `{s}` is not of the form CxD")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("resolution `{s}` has a non-integer side")))
        };
        Resolution::new(parse(r)?, parse(c)?)
    }
}

/// A grid of intensities in `[0, 255]`, stored plane by plane, each plane
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRaster {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageRaster {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("raster {width}x{height} is empty")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "raster {width}x{height}x{channels} needs {} pixels, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 255]")));
        }
        Ok(Self { width, height, channels, pixels })
    }

    /// Single-channel raster from a list of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(width, height, 1, rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.pixels[channel * self.width * self.height + row * self.width + col]
    }

    fn plane(&self, channel: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.pixels[channel * n..(channel + 1) * n]
    }

    fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Column-major vector of a `rows x cols` grayscale raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
    resolution: Resolution,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, resolution: Resolution) -> Result<Self> {
        if values.len() != resolution.tau() {
            return Err(Error::invalid(format!(
                "feature vector of length {} does not match resolution {resolution}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::invalid(format!("feature value {v} outside [0, 255]")));
        }
        Ok(Self { values, resolution })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Rec.601 luma. Single-channel input passes through unchanged.
pub fn to_grayscale(img: &ImageRaster) -> Result<ImageRaster> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
            // Written relative to R so equal channels map to themselves exactly.
            let pixels = r
                .iter()
                .zip(g)
                .zip(b)
                .map(|((&r, &g), &b)| (r + 0.587 * (g - r) + 0.114 * (b - r)).clamp(0.0, 255.0))
                .collect();
            ImageRaster::new(img.width, img.height, 1, pixels)
        }
        n => Err(Error::invalid(format!("unsupported channel count {n}"))),
    }
}

/// Source taps and weights for every output sample along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            if scale > 2.0 {
                // Area average over the output pixel's footprint.
                let start = o as f64 * scale;
                let end = start + scale;
                let first = start.floor() as usize;
                let last = (end.ceil() as usize).min(src);
                let mut taps: Vec<(usize, f64)> = (first..last)
                    .filter_map(|i| {
                        let w = ((i + 1) as f64).min(end) - (i as f64).max(start);
                        (w > 0.0).then_some((i, w))
                    })
                    .collect();
                let total: f64 = taps.iter().map(|t| t.1).sum();
                taps.iter_mut().for_each(|t| t.1 /= total);
                taps
            } else {
                // Bilinear with pixel centres aligned.
                let x = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = x.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                let t = x - i0 as f64;
                if t == 0.0 || i0 == i1 {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - t), (i1, t)]
                }
            }
        })
        .collect()
}

/// Resamples to `target` (rows x cols). Bilinear for reductions up to 2x and
/// for enlargement, area averaging beyond 2x. Each axis is handled
/// separately.
pub fn downsample(img: &ImageRaster, target: Resolution) -> Result<ImageRaster> {
    let (w, h) = (img.width, img.height);
    let (tw, th) = (target.cols, target.rows);
    if tw == 0 || th == 0 {
        return Err(Error::invalid("zero target resolution"));
    }
    let (lo, hi) = img.min_max();
    let col_taps = axis_taps(w, tw);
    let row_taps = axis_taps(h, th);
    let mut out = Vec::with_capacity(tw * th * img.channels);
    for c in 0..img.channels {
        let plane = img.plane(c);
        let mut horiz = vec![0.0; tw * h];
        for r in 0..h {
            let row = &plane[r * w..(r + 1) * w];
            for (o, taps) in col_taps.iter().enumerate() {
                horiz[r * tw + o] = taps.iter().map(|&(i, wt)| row[i] * wt).sum();
            }
        }
        for taps in &row_taps {
            for x in 0..tw {
                let v: f64 = taps.iter().map(|&(i, wt)| horiz[i * tw + x] * wt).sum();
                // Weights are convex; clamping only removes rounding drift.
                out.push(v.clamp(lo, hi));
            }
        }
    }
    ImageRaster::new(tw, th, img.channels, out)
}

/// True when `target` enlarges `img` along either axis.
pub fn is_upsampling(img: &ImageRaster, target: Resolution) -> bool {
    target.cols > img.width || target.rows > img.height
}

/// Histogram equalization over integer levels with cdf-min normalization,
/// `h(v) = round(255 (cdf(v) - cdf_min) / (N - cdf_min))`. Images with a
/// single occupied level are returned unchanged.
pub fn equalize_histogram(img: &ImageRaster) -> Result<ImageRaster> {
    if img.channels != 1 {
        return Err(Error::invalid("histogram equalization needs a single channel"));
    }
    let levels: Vec<usize> = img.pixels.iter().map(|v| v.round().clamp(0.0, 255.0) as usize).collect();
    let mut hist = [0u64; 256];
    for &l in &levels {
        hist[l] += 1;
    }
    let mut cdf = [0u64; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let n = levels.len() as u64;
    let cdf_min = cdf[levels.iter().copied().min().unwrap_or(0)];
    if n == cdf_min {
        return Ok(img.clone());
    }
    let denom = n - cdf_min;
    let map: Vec<f64> = cdf
        .iter()
        .map(|&c| {
            let num = 255 * c.saturating_sub(cdf_min);
            // Integer round-half-up of num / denom.
            ((2 * num + denom) / (2 * denom)) as f64
        })
        .collect();
    let pixels = levels.iter().map(|&l| map[l]).collect();
    ImageRaster::new(img.width, img.height, 1, pixels)
}

/// Stacks the columns of a single-channel raster: `out[j * rows + i] = in[i][j]`.
pub fn vectorize(img: &ImageRaster, resolution: Resolution) -> Result<FeatureVector> {
    if img.channels != 1 {
        return Err(Error::invalid("vectorize needs a single-channel raster"));
    }
    if img.height != resolution.rows || img.width != resolution.cols {
        return Err(Error::invalid(format!(
            "raster is {}x{}, expected {resolution}",
            img.height, img.width
        )));
    }
    let mut values = Vec::with_capacity(resolution.tau());
    for j in 0..img.width {
        for i in 0..img.height {
            values.push(img.pixels[i * img.width + j]);
        }
    }
    FeatureVector::new(values, resolution)
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &FeatureVector) -> ImageRaster {
    let Resolution { rows, cols } = v.resolution;
    let mut pixels = vec![0.0; rows * cols];
    for j in 0..cols {
        for i in 0..rows {
            pixels[i * cols + j] = v.values[j * rows + i];
        }
    }
    ImageRaster { width: cols, height: rows, channels: 1, pixels }
}

/// The preprocessing choices applied to every image of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub resolution: Resolution,
    pub histeq: bool,
}

impl PreprocessConfig {
    /// Grayscale, resample, optionally equalize, vectorize.
    pub fn apply(&self, img: &ImageRaster) -> Result<FeatureVector> {
        let gray = to_grayscale(img)?;
        let small = downsample(&gray, self.resolution)?;
        let small = if self.histeq { equalize_histogram(&small)? } else { small };
        vectorize(&small, self.resolution)
    }
}
