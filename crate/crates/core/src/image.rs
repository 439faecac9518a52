//! Scalar images, label maps, and the two degradation operators used to
//! build test images (Gaussian blur and additive Gaussian noise).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Row-major floating point intensity field.
///
/// Intensities are nominally on a `[0, 255]` scale but are never clamped;
/// quantization only happens when a raster is written out.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "expected {} samples for a {width}x{height} image, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite intensity at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds an image without validating finiteness. Crate-internal filters
    /// only produce finite output from finite input.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Sample with half-sample symmetric extension outside the image.
    #[inline]
    pub fn get_reflect(&self, x: isize, y: isize) -> f64 {
        let xi = reflect_index(x, self.width);
        let yi = reflect_index(y, self.height);
        self.data[yi * self.width + xi]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Affine intensity transform `alpha * u + beta`.
    pub fn affine(&self, alpha: f64, beta: f64) -> GrayImage {
        self.map(|v| alpha * v + beta)
    }

    /// Pads by `pad` pixels on every side using symmetric reflection and
    /// returns the padded row-major buffer and its width.
    pub(crate) fn padded(&self, pad: usize) -> (Vec<f64>, usize) {
        let pw = self.width + 2 * pad;
        let ph = self.height + 2 * pad;
        let mut out = Vec::with_capacity(pw * ph);
        for py in 0..ph {
            let y = reflect_index(py as isize - pad as isize, self.height);
            let row = self.row(y);
            for px in 0..pw {
                let x = reflect_index(px as isize - pad as isize, self.width);
                out.push(row[x]);
            }
        }
        (out, pw)
    }
}

/// Half-sample symmetric index folding: `... c b a | a b c ... x y z | z y x ...`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

pub const GAS: u8 = 0;
pub const GRAIN: u8 = 1;
pub const FLUID: u8 = 2;
/// Sentinel for pixels that have not been given a class yet.
pub const UNASSIGNED: u8 = 255;

/// Human-readable name of a class index in the default three-phase setting.
pub fn class_name(label: u8) -> &'static str {
    match label {
        GAS => "gas",
        GRAIN => "grain",
        FLUID => "fluid",
        UNASSIGNED => "unassigned",
        _ => "other",
    }
}

/// Per-pixel class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "label buffer of length {} does not match {width}x{height}",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        assert!(width > 0 && height > 0, "label map dimensions must be positive");
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn has_unassigned(&self) -> bool {
        self.labels.contains(&UNASSIGNED)
    }
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with taps out to `ceil(4 sigma)` and symmetric
/// border reflection. `sigma == 0` returns the input unchanged.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    assert!(sigma >= 0.0 && sigma.is_finite(), "blur sigma must be >= 0");
    if sigma == 0.0 {
        return img.clone();
    }
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let (w, h) = img.dims();

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = img.row(y);
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[reflect_index(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, t) in taps.iter().enumerate() {
            let sy = reflect_index(y as isize + k as isize - r, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    GrayImage::from_raw(w, h, out)
}

/// Adds i.i.d. `N(0, sigma^2)` noise from a ChaCha stream seeded with `seed`.
///
/// The underlying standard-normal field depends only on the seed, so images
/// degraded with the same seed at different `sigma` share one noise pattern.
pub fn add_noise(img: &GrayImage, sigma: f64, seed: u64) -> GrayImage {
    assert!(sigma >= 0.0 && sigma.is_finite(), "noise sigma must be >= 0");
    if sigma == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sigma * z
        })
        .collect();
    GrayImage::from_raw(img.width(), img.height(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reflect_folds_symmetrically() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.0, f64::NAN]).is_err());
        assert!(LabelMap::new(2, 2, vec![0; 5]).is_err());
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let img = GrayImage::filled(17, 11, 42.5);
        let out = gaussian_blur(&img, 2.3);
        for v in out.data() {
            assert!((v - 42.5).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_with_zero_sigma_is_identity() {
        let img = GrayImage::from_fn(9, 7, |x, y| (x * 31 + y * 7) as f64 % 13.0);
        assert_eq!(gaussian_blur(&img, 0.0), img);
    }

    #[test]
    fn impulse_response_peak_matches_gaussian() {
        let mut img = GrayImage::filled(41, 41, 0.0);
        img.set(20, 20, 1.0);
        let out = gaussian_blur(&img, 1.0);
        let expected = 1.0 / (2.0 * std::f64::consts::PI);
        let got = out.get(20, 20);
        assert!((got - expected).abs() / expected < 0.02, "peak {got}");
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let img = GrayImage::filled(400, 250, 128.0);
        let a = add_noise(&img, 14.0, 9);
        let b = add_noise(&img, 14.0, 9);
        assert_eq!(a, b);
        let mean = a.mean();
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64;
        let sd = var.sqrt();
        assert!((13.5..=14.5).contains(&sd), "sample sd {sd}");
        assert_eq!(add_noise(&img, 0.0, 9), img);
    }

    proptest! {
        #[test]
        fn blur_conserves_mean(
            w in 3usize..24, h in 3usize..24, sigma in 0.3f64..3.0, seed in 0u64..1000
        ) {
            let img = add_noise(&GrayImage::filled(w, h, 100.0), 20.0, seed);
            let out = gaussian_blur(&img, sigma);
            let m0 = img.mean();
            prop_assert!((out.mean() - m0).abs() <= 1e-6 * m0.abs());
        }
    }
}
