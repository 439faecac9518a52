//! Gradient estimators and steerable quadrature filters.
//!
//! All filtering here is correlation (`out(p) = sum_q k(q) u(p + q)`) with
//! symmetric border reflection. Image `y` grows downward; an angle `theta`
//! denotes the direction `(cos theta, sin theta)` in `(x, y)` pixel axes.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Square correlation kernel of odd side `2 * radius + 1`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    radius: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(radius: usize, taps: Vec<f64>) -> Self {
        let side = 2 * radius + 1;
        assert_eq!(taps.len(), side * side, "kernel taps must fill the square");
        Self { radius, taps }
    }

    pub fn from_fn(radius: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let r = radius as isize;
        let mut taps = Vec::with_capacity((2 * radius + 1).pow(2));
        for dy in -r..=r {
            for dx in -r..=r {
                taps.push(f(dx as f64, dy as f64));
            }
        }
        Self { radius, taps }
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.radius
    }

    #[inline]
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    #[inline]
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let side = 2 * self.radius + 1;
        let r = self.radius as isize;
        self.taps[(dy + r) as usize * side + (dx + r) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn scaled(&self, s: f64) -> Kernel {
        Kernel::new(self.radius, self.taps.iter().map(|t| t * s).collect())
    }

    /// `sum_i w_i k_i` over kernels of equal radius.
    pub fn combine(kernels: &[&Kernel], weights: &[f64]) -> Kernel {
        let mut taps = vec![0.0; kernels[0].taps.len()];
        for (k, w) in kernels.iter().zip(weights) {
            for (t, v) in taps.iter_mut().zip(&k.taps) {
                *t += w * v;
            }
        }
        Kernel::new(kernels[0].radius, taps)
    }

    fn zero_mean(mut self) -> Kernel {
        let m = self.sum() / self.taps.len() as f64;
        for t in &mut self.taps {
            *t -= m;
        }
        self
    }
}

/// Correlates `img` with `kernel` using symmetric border reflection.
pub fn correlate(img: &GrayImage, kernel: &Kernel) -> GrayImage {
    let (w, h) = img.dims();
    let r = kernel.radius;
    let side = 2 * r + 1;
    let (padded, pw) = img.padded(r);
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (ky, krow) in kernel.taps.chunks_exact(side).enumerate() {
            let src = &padded[(y + ky) * pw..(y + ky) * pw + pw];
            for (kx, &k) in krow.iter().enumerate() {
                if k == 0.0 {
                    continue;
                }
                for (o, s) in row.iter_mut().zip(&src[kx..kx + w]) {
                    *o += k * s;
                }
            }
        }
    });
    GrayImage::from_raw(w, h, out)
}

/// Horizontal and vertical gradient components.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub horizontal: GrayImage,
    pub vertical: GrayImage,
}

pub fn sobel_horizontal_kernel() -> Kernel {
    Kernel::new(1, vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0])
}

pub fn sobel_vertical_kernel() -> Kernel {
    Kernel::new(1, vec![-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0])
}

/// Standard (unnormalized) Sobel pair.
pub fn sobel(img: &GrayImage) -> Gradient {
    Gradient {
        horizontal: correlate(img, &sobel_horizontal_kernel()),
        vertical: correlate(img, &sobel_vertical_kernel()),
    }
}

/// Derivative along `(cos theta, sin theta)` steered from the Sobel pair.
pub fn directional_derivative(grad: &Gradient, theta: f64) -> GrayImage {
    let (c, s) = (theta.cos(), theta.sin());
    let data = grad
        .horizontal
        .data()
        .iter()
        .zip(grad.vertical.data())
        .map(|(gx, gy)| c * gx + s * gy)
        .collect();
    GrayImage::from_raw(grad.horizontal.width(), grad.horizontal.height(), data)
}

/// Per-pixel `max - min` over the `(2r+1)^2` square neighbourhood.
pub fn morph_gradient(img: &GrayImage, radius: usize) -> Result<GrayImage> {
    if radius < 1 {
        return Err(Error::InvalidParameter("morphological gradient radius must be >= 1".into()));
    }
    let (w, h) = img.dims();
    let (padded, pw) = img.padded(radius);
    let ph = h + 2 * radius;
    let side = 2 * radius + 1;
    // row pass over every padded row, then column pass
    let mut rmax = vec![0.0; w * ph];
    let mut rmin = vec![0.0; w * ph];
    for y in 0..ph {
        let src = &padded[y * pw..(y + 1) * pw];
        for x in 0..w {
            let win = &src[x..x + side];
            let (lo, hi) = win
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            rmax[y * w + x] = hi;
            rmin[y * w + x] = lo;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut hi = f64::NEG_INFINITY;
            let mut lo = f64::INFINITY;
            for k in 0..side {
                hi = hi.max(rmax[(y + k) * w + x]);
                lo = lo.min(rmin[(y + k) * w + x]);
            }
            out[y * w + x] = hi - lo;
        }
    }
    Ok(GrayImage::from_raw(w, h, out))
}

/// Angles of the three second-derivative basis filters.
pub const G_BASIS_ANGLES: [f64; 3] = [0.0, PI / 3.0, 2.0 * PI / 3.0];
/// Angles of the four Hilbert-pair basis filters.
pub const H_BASIS_ANGLES: [f64; 4] = [0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0];

/// Second derivative of a Gaussian along the direction `theta`, unnormalized.
pub fn g2(sigma: f64, theta: f64, x: f64, y: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * sigma;
    let (xs, ys) = (x / s, y / s);
    let t = xs * theta.cos() + ys * theta.sin();
    (2.0 * t * t - 1.0) * (-(xs * xs + ys * ys)).exp()
}

/// Cubic-times-Gaussian approximation of the Hilbert transform of [`g2`],
/// signed so that a step rising along `theta` gives a positive response on
/// the edge.
pub fn h2(sigma: f64, theta: f64, x: f64, y: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * sigma;
    let (xs, ys) = (x / s, y / s);
    let t = xs * theta.cos() + ys * theta.sin();
    (2.254 * t - t * t * t) * (-(xs * xs + ys * ys)).exp()
}

/// Steerable G2/H2 quadrature pair sampled on a square grid.
///
/// The even filters are made exactly zero-mean on the grid. Both families are
/// scaled so their 0-degree kernels have unit L1 norm.
#[derive(Clone, Debug)]
pub struct QuadraturePair {
    sigma: f64,
    radius: usize,
    g_scale: f64,
    h_scale: f64,
    g_basis: [Kernel; 3],
    h_basis: [Kernel; 4],
}

pub const DEFAULT_KERNEL_SIGMA: f64 = 1.6;

impl Default for QuadraturePair {
    fn default() -> Self {
        Self::new(DEFAULT_KERNEL_SIGMA)
    }
}

impl QuadraturePair {
    /// Kernel support is `ceil(4.5 sigma)` pixels on each side.
    pub fn new(sigma: f64) -> Self {
        Self::with_radius(sigma, (4.5 * sigma).ceil() as usize)
    }

    pub fn with_radius(sigma: f64, radius: usize) -> Self {
        assert!(sigma > 0.0, "kernel sigma must be positive");
        assert!(radius >= 1, "kernel radius must be >= 1");
        let g0 = Kernel::from_fn(radius, |x, y| g2(sigma, 0.0, x, y)).zero_mean();
        let h0 = Kernel::from_fn(radius, |x, y| h2(sigma, 0.0, x, y));
        let g_scale = 1.0 / g0.taps.iter().map(|t| t.abs()).sum::<f64>();
        let h_scale = 1.0 / h0.taps.iter().map(|t| t.abs()).sum::<f64>();
        let g_basis = G_BASIS_ANGLES.map(|a| Self::sample_g(sigma, radius, a, g_scale));
        let h_basis = H_BASIS_ANGLES.map(|a| Self::sample_h(sigma, radius, a, h_scale));
        Self {
            sigma,
            radius,
            g_scale,
            h_scale,
            g_basis,
            h_basis,
        }
    }

    fn sample_g(sigma: f64, radius: usize, theta: f64, scale: f64) -> Kernel {
        Kernel::from_fn(radius, |x, y| g2(sigma, theta, x, y))
            .zero_mean()
            .scaled(scale)
    }

    fn sample_h(sigma: f64, radius: usize, theta: f64, scale: f64) -> Kernel {
        Kernel::from_fn(radius, |x, y| h2(sigma, theta, x, y)).scaled(scale)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn g_basis(&self) -> &[Kernel; 3] {
        &self.g_basis
    }

    pub fn h_basis(&self) -> &[Kernel; 4] {
        &self.h_basis
    }

    /// Interpolation weights `k_i(theta) = (1 + 2 cos 2(theta - theta_i)) / 3`.
    pub fn g_weights(theta: f64) -> [f64; 3] {
        G_BASIS_ANGLES.map(|a| (1.0 + 2.0 * (2.0 * (theta - a)).cos()) / 3.0)
    }

    /// Interpolation weights `k_i(theta) = (cos(theta - theta_i) + cos 3(theta - theta_i)) / 2`.
    pub fn h_weights(theta: f64) -> [f64; 4] {
        H_BASIS_ANGLES.map(|a| 0.5 * ((theta - a).cos() + (3.0 * (theta - a)).cos()))
    }

    pub fn steered_g(&self, theta: f64) -> Kernel {
        let b: Vec<&Kernel> = self.g_basis.iter().collect();
        Kernel::combine(&b, &Self::g_weights(theta))
    }

    pub fn steered_h(&self, theta: f64) -> Kernel {
        let b: Vec<&Kernel> = self.h_basis.iter().collect();
        Kernel::combine(&b, &Self::h_weights(theta))
    }

    /// Even kernel sampled directly at `theta`, bypassing the basis.
    pub fn direct_g(&self, theta: f64) -> Kernel {
        Self::sample_g(self.sigma, self.radius, theta, self.g_scale)
    }

    /// Odd kernel sampled directly at `theta`, bypassing the basis.
    pub fn direct_h(&self, theta: f64) -> Kernel {
        Self::sample_h(self.sigma, self.radius, theta, self.h_scale)
    }
}

/// Responses of an image to the seven basis filters.
#[derive(Clone, Debug)]
pub struct QuadratureResponses {
    width: usize,
    height: usize,
    /// `max - min` of the filtered image.
    dynamic_range: f64,
    g: [Vec<f64>; 3],
    h: [Vec<f64>; 4],
}

impl QuadratureResponses {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn dynamic_range(&self) -> f64 {
        self.dynamic_range
    }

    #[inline]
    pub fn steer_g(&self, i: usize, theta: f64) -> f64 {
        let k = QuadraturePair::g_weights(theta);
        k[0] * self.g[0][i] + k[1] * self.g[1][i] + k[2] * self.g[2][i]
    }

    #[inline]
    pub fn steer_h(&self, i: usize, theta: f64) -> f64 {
        let k = QuadraturePair::h_weights(theta);
        k[0] * self.h[0][i] + k[1] * self.h[1][i] + k[2] * self.h[2][i] + k[3] * self.h[3][i]
    }

    /// Oriented energy `G_theta^2 + H_theta^2` at pixel index `i`.
    #[inline]
    pub fn energy(&self, i: usize, theta: f64) -> f64 {
        let g = self.steer_g(i, theta);
        let h = self.steer_h(i, theta);
        g * g + h * h
    }

    pub fn steered_g_image(&self, theta: f64) -> GrayImage {
        let data = (0..self.width * self.height).map(|i| self.steer_g(i, theta)).collect();
        GrayImage::from_raw(self.width, self.height, data)
    }

    pub fn steered_h_image(&self, theta: f64) -> GrayImage {
        let data = (0..self.width * self.height).map(|i| self.steer_h(i, theta)).collect();
        GrayImage::from_raw(self.width, self.height, data)
    }
}

pub fn quadrature_responses(img: &GrayImage, q: &QuadraturePair) -> QuadratureResponses {
    let (lo, hi) = img.min_max();
    QuadratureResponses {
        width: img.width(),
        height: img.height(),
        dynamic_range: hi - lo,
        g: [0, 1, 2].map(|k| correlate(img, &q.g_basis[k]).into_data()),
        h: [0, 1, 2, 3].map(|k| correlate(img, &q.h_basis[k]).into_data()),
    }
}

/// Number of uniformly spaced angles in `[0, pi)` at which energy is sampled.
pub const ENERGY_SAMPLES: usize = 8;
/// Energy floor relative to the squared dynamic range of the image.
pub const DEFAULT_ENERGY_THRESHOLD: f64 = 1e-3;

/// Dominant orientation and its energy coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrientationField {
    pub width: usize,
    pub height: usize,
    /// Dominant orientation in `(-pi/2, pi/2]`; `0` where unreliable.
    pub theta: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
    /// `false` where `c1` is below the energy floor.
    pub reliable: Vec<bool>,
    /// Absolute energy floor that was applied.
    pub energy_floor: f64,
}

pub fn orientation_energy(resp: &QuadratureResponses) -> OrientationField {
    orientation_energy_with(resp, DEFAULT_ENERGY_THRESHOLD)
}

/// Samples the oriented energy at [`ENERGY_SAMPLES`] angles and projects it
/// onto `{1, cos 2theta, sin 2theta}` to get `c1..c3`. Pixels with `c1` at or
/// below `rel_threshold * dynamic_range^2` are marked unreliable and get
/// `theta = 0`.
///
/// Elsewhere `theta` starts at `atan2(c3, c2) / 2` and is refined to the
/// maximum of the full energy curve. The steered energy only contains
/// harmonics 0..=3 of `2 theta`, so the same eight samples reconstruct it
/// exactly; the refinement only moves `theta` where the curve is not
/// symmetric about its peak (corners, padded borders).
pub fn orientation_energy_with(resp: &QuadratureResponses, rel_threshold: f64) -> OrientationField {
    let n = resp.width * resp.height;
    let floor = rel_threshold * resp.dynamic_range * resp.dynamic_range;
    let samples: Vec<([f64; 3], [f64; 4])> = (0..ENERGY_SAMPLES)
        .map(|m| {
            let a = m as f64 * PI / ENERGY_SAMPLES as f64;
            (QuadraturePair::g_weights(a), QuadraturePair::h_weights(a))
        })
        .collect();
    // trig[m][k] = (cos, sin) of 2 (k + 1) theta_m
    let trig: Vec<[(f64, f64); 3]> = (0..ENERGY_SAMPLES)
        .map(|m| {
            let a = m as f64 * PI / ENERGY_SAMPLES as f64;
            [1.0, 2.0, 3.0].map(|k| ((2.0 * k * a).cos(), (2.0 * k * a).sin()))
        })
        .collect();
    let mut field = OrientationField {
        width: resp.width,
        height: resp.height,
        theta: vec![0.0; n],
        c1: vec![0.0; n],
        c2: vec![0.0; n],
        c3: vec![0.0; n],
        reliable: vec![false; n],
        energy_floor: floor,
    };
    let m = ENERGY_SAMPLES as f64;
    for i in 0..n {
        let mut c0 = 0.0;
        let mut ck = [(0.0, 0.0); 3];
        for ((kg, kh), t) in samples.iter().zip(&trig) {
            let g = kg[0] * resp.g[0][i] + kg[1] * resp.g[1][i] + kg[2] * resp.g[2][i];
            let h = kh[0] * resp.h[0][i]
                + kh[1] * resp.h[1][i]
                + kh[2] * resp.h[2][i]
                + kh[3] * resp.h[3][i];
            let e = g * g + h * h;
            c0 += e;
            for k in 0..3 {
                ck[k].0 += e * t[k].0;
                ck[k].1 += e * t[k].1;
            }
        }
        let c1 = c0 / m;
        let coef = ck.map(|(a, b)| (2.0 * a / m, 2.0 * b / m));
        field.c1[i] = c1;
        field.c2[i] = coef[0].0;
        field.c3[i] = coef[0].1;
        if c1 > floor && resp.dynamic_range > 0.0 {
            field.reliable[i] = true;
            field.theta[i] = energy_peak(&coef, 0.5 * coef[0].1.atan2(coef[0].0));
        }
    }
    field
}

/// Global maximum over `theta` of `sum_k a_k cos 2k theta + b_k sin 2k theta`
/// (k = 1..=3), in `(-pi/2, pi/2]`.
fn energy_peak(coef: &[(f64, f64); 3], start: f64) -> f64 {
    let value = |t: f64| -> f64 {
        coef.iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let w = 2.0 * (k + 1) as f64 * t;
                a * w.cos() + b * w.sin()
            })
            .sum()
    };
    const GRID: usize = 48;
    let mut best = start;
    let mut best_v = value(start);
    for j in 0..GRID {
        let t = j as f64 * PI / GRID as f64 - PI / 2.0;
        let v = value(t);
        if v > best_v {
            best = t;
            best_v = v;
        }
    }
    // Newton on the derivative, accepting only uphill steps
    let mut t = best;
    for _ in 0..20 {
        let (mut d1, mut d2) = (0.0, 0.0);
        for (k, (a, b)) in coef.iter().enumerate() {
            let f = 2.0 * (k + 1) as f64;
            let (s, c) = (f * t).sin_cos();
            d1 += f * (b * c - a * s);
            d2 -= f * f * (a * c + b * s);
        }
        if d2 >= 0.0 {
            break;
        }
        let next = t - d1 / d2;
        let v = value(next);
        if v < best_v {
            break;
        }
        let step = (next - t).abs();
        t = next;
        best_v = v;
        if step < 1e-13 {
            break;
        }
    }
    let mut out = (t + PI / 2.0).rem_euclid(PI) - PI / 2.0;
    if out <= -PI / 2.0 {
        out += PI;
    }
    out
}

/// Local phase `atan2(G_theta*, H_theta*)` at the dominant orientation.
pub fn phase(resp: &QuadratureResponses, field: &OrientationField) -> Vec<f64> {
    (0..resp.width * resp.height)
        .map(|i| {
            let t = field.theta[i];
            resp.steer_g(i, t).atan2(resp.steer_h(i, t))
        })
        .collect()
}
