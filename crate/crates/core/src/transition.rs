//! Transition-pixel identification.
//!
//! A transition pixel straddles two phases and has an intermediate intensity.
//! Three detectors are provided: disagreeing classes of the deconvolved
//! two-sided intensities (no threshold), a threshold on their difference, and
//! a threshold on the morphological gradient.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::deconv::DeconvField;
use crate::error::{Error, Result};
use crate::filters::morph_gradient;
use crate::image::GrayImage;
use crate::mixture::{classify_gaussian, NonGaussianMixture};

pub const DEFAULT_DIFFERENCE_TAU: f64 = 20.0;
pub const DEFAULT_GRADIENT_TAU: f64 = 30.0;
pub const DEFAULT_GRADIENT_RADIUS: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMask {
    pub width: usize,
    pub height: usize,
    pub flags: Vec<bool>,
}

impl TransitionMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            flags: vec![false; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.flags[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.flags.len() as f64
    }
}

/// Flags reliable pixels whose bright and dark sides fall in different classes.
pub fn by_classification(field: &DeconvField, m: &NonGaussianMixture) -> TransitionMask {
    let flags = (0..field.a.len())
        .map(|i| field.reliable[i] && classify_gaussian(m, field.a[i]) != classify_gaussian(m, field.b[i]))
        .collect();
    TransitionMask {
        width: field.width,
        height: field.height,
        flags,
    }
}

/// Flags reliable pixels with `|a - b| > tau`.
pub fn by_difference(field: &DeconvField, tau: f64) -> Result<TransitionMask> {
    check_tau(tau)?;
    let flags = (0..field.a.len())
        .map(|i| field.reliable[i] && (field.a[i] - field.b[i]).abs() > tau)
        .collect();
    Ok(TransitionMask {
        width: field.width,
        height: field.height,
        flags,
    })
}

/// Flags pixels whose morphological gradient exceeds `tau`.
pub fn by_gradient(img: &GrayImage, tau: f64, radius: usize) -> Result<TransitionMask> {
    check_tau(tau)?;
    let grad = morph_gradient(img, radius)?;
    Ok(TransitionMask {
        width: img.width(),
        height: img.height(),
        flags: grad.data().iter().map(|&g| g > tau).collect(),
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("threshold must be positive, got {tau}")))
    }
}

pub const HISTOGRAM_BINS: usize = 256;

/// Equal-width histogram over the observed range of a scalar field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.bin_width()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_lo,bin_hi,count` rows with a header.
    pub fn to_csv(&self) -> String {
        let w = self.bin_width();
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let lo = self.lo + k as f64 * w;
            writeln!(s, "{lo},{},{c}", lo + w).unwrap();
        }
        s
    }

    /// Local maxima of the 5-bin moving average of the counts, by bin index.
    pub fn modes(&self) -> Vec<usize> {
        let sm = self.smoothed();
        let n = sm.len();
        let mut modes = Vec::new();
        let mut k = 0;
        while k < n {
            // treat flat runs as one candidate
            let mut end = k;
            while end + 1 < n && sm[end + 1] == sm[k] {
                end += 1;
            }
            let left = k == 0 || sm[k - 1] < sm[k];
            let right = end + 1 == n || sm[end + 1] < sm[k];
            if left && right && sm[k] > 0.0 {
                modes.push((k + end) / 2);
            }
            k = end + 1;
        }
        modes
    }

    /// Threshold at the lowest smoothed count between the two largest modes.
    pub fn suggested_threshold(&self) -> Option<f64> {
        let sm = self.smoothed();
        let mut modes = self.modes();
        if modes.len() < 2 {
            return None;
        }
        modes.sort_by(|&a, &b| sm[b].total_cmp(&sm[a]).then(a.cmp(&b)));
        let (p, q) = (modes[0].min(modes[1]), modes[0].max(modes[1]));
        let valley = (p..=q).min_by(|&a, &b| sm[a].total_cmp(&sm[b]))?;
        Some(self.bin_center(valley))
    }

    fn smoothed(&self) -> Vec<f64> {
        let n = self.counts.len() as isize;
        (0..n)
            .map(|k| {
                let (a, b) = ((k - 2).max(0), (k + 2).min(n - 1));
                (a..=b).map(|j| self.counts[j as usize] as f64).sum::<f64>() / (b - a + 1) as f64
            })
            .collect()
    }
}

/// 256-bin histogram of `values` for choosing a threshold offline.
pub fn threshold_histogram(values: &[f64]) -> Histogram {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    if lo > hi {
        return Histogram { lo: 0.0, hi: 0.0, counts };
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    for &v in values.iter().filter(|v| v.is_finite()) {
        let k = if width > 0.0 {
            (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    Histogram { lo, hi, counts }
}
