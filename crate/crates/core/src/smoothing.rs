//! Edge-preserving smoothers: windowed non-local means and Perona-Malik
//! anisotropic diffusion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, GrayImage};

/// Smallest filtering strength used when the noise estimate is ~0.
const MIN_H: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlmParams {
    /// Filtering strength, intensity units.
    pub h: f64,
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Standard deviation of the Gaussian weighting inside a patch, pixels.
    pub patch_sigma: f64,
}

impl Default for NlmParams {
    fn default() -> Self {
        Self {
            h: 10.0,
            patch_radius: 2,
            search_radius: 10,
            patch_sigma: 1.0,
        }
    }
}

impl NlmParams {
    /// Defaults with `h = 0.8 * noise_sigma`.
    pub fn for_noise(noise_sigma: f64) -> Self {
        Self {
            h: (0.8 * noise_sigma).max(MIN_H),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParameter(format!("nlm h must be > 0, got {}", self.h)));
        }
        if self.patch_radius < 1 {
            return Err(Error::InvalidParameter("nlm patch radius must be >= 1".into()));
        }
        if self.search_radius < self.patch_radius {
            return Err(Error::InvalidParameter(
                "nlm search radius must be >= patch radius".into(),
            ));
        }
        if !(self.patch_sigma > 0.0) {
            return Err(Error::InvalidParameter("nlm patch sigma must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdfParams {
    pub iterations: usize,
    /// Explicit time step; stable for `dt <= 0.25`.
    pub dt: f64,
    /// Gradient scale of the diffusivity, intensity units per pixel.
    pub kappa: f64,
    /// Gaussian pre-smoothing applied before measuring the gradient.
    pub sigma: f64,
}

impl Default for AdfParams {
    fn default() -> Self {
        Self {
            iterations: 20,
            dt: 0.2,
            kappa: 15.0,
            sigma: 0.5,
        }
    }
}

impl AdfParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidParameter("adf needs at least one iteration".into()));
        }
        if !(self.dt > 0.0 && self.dt <= 0.25) {
            return Err(Error::InvalidParameter(format!(
                "adf time step must lie in (0, 0.25], got {}",
                self.dt
            )));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::InvalidParameter("adf kappa must be > 0".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidParameter("adf sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Robust estimate of additive white noise standard deviation from the
/// absolute response to a Laplacian-difference mask (Immerkaer, 1996).
pub fn estimate_noise_sigma(img: &GrayImage) -> f64 {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let v = |dx: isize, dy: isize| img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
            let r = v(-1, -1) - 2.0 * v(0, -1) + v(1, -1) - 2.0 * v(-1, 0) + 4.0 * v(0, 0)
                - 2.0 * v(1, 0)
                + v(-1, 1)
                - 2.0 * v(0, 1)
                + v(1, 1);
            sum += r.abs();
        }
    }
    (std::f64::consts::PI / 2.0).sqrt() * sum / (6.0 * (w - 2) as f64 * (h - 2) as f64)
}

const NLM_BAND: usize = 8;

/// Windowed non-local means.
///
/// Every pixel becomes the weighted mean of the pixels in its search window,
/// weighted by `exp(-d^2 / h^2)` where `d^2` is the Gaussian-weighted mean
/// squared difference between the two patches. The pixel itself is included
/// with weight one.
pub fn nlm(img: &GrayImage, p: &NlmParams) -> Result<GrayImage> {
    p.validate()?;
    let (w, h) = img.dims();
    let pr = p.patch_radius;
    let sr = p.search_radius as isize;
    if w < 2 * pr + 1 || h < 2 * pr + 1 {
        return Err(Error::InvalidParameter(format!(
            "image {w}x{h} is smaller than one {0}x{0} patch",
            2 * pr + 1
        )));
    }

    let g1: Vec<f64> = {
        let t: Vec<f64> = (-(pr as isize)..=pr as isize)
            .map(|k| (-((k * k) as f64) / (2.0 * p.patch_sigma * p.patch_sigma)).exp())
            .collect();
        let s: f64 = t.iter().sum();
        t.into_iter().map(|v| v / s).collect()
    };
    let pad = p.search_radius + pr;
    let (padded, pw) = img.padded(pad);
    let inv_h2 = 1.0 / (p.h * p.h);

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(NLM_BAND * w)
        .enumerate()
        .for_each(|(band, chunk)| {
            let y0 = band * NLM_BAND;
            let rows = chunk.len() / w;
            // diff^2 over the band plus a patch margin, then separable weighting
            let dw = w + 2 * pr;
            let dh = rows + 2 * pr;
            let mut diff = vec![0.0; dw * dh];
            let mut horiz = vec![0.0; w * dh];
            let mut acc = vec![0.0; w * rows];
            let mut norm = vec![0.0; w * rows];
            for oy in -sr..=sr {
                for ox in -sr..=sr {
                    for j in 0..dh {
                        // padded coords of (x - pr, y0 + j - pr) relative to the image
                        let py = y0 + j + p.search_radius;
                        let qy = (py as isize + oy) as usize;
                        let a = &padded[py * pw + p.search_radius..][..dw];
                        let b = &padded[qy * pw + (p.search_radius as isize + ox) as usize..][..dw];
                        let d = &mut diff[j * dw..(j + 1) * dw];
                        for ((d, &a), &b) in d.iter_mut().zip(a).zip(b) {
                            let t = a - b;
                            *d = t * t;
                        }
                    }
                    for j in 0..dh {
                        let src = &diff[j * dw..(j + 1) * dw];
                        let dst = &mut horiz[j * w..(j + 1) * w];
                        for (x, d) in dst.iter_mut().enumerate() {
                            let mut s = 0.0;
                            for (k, g) in g1.iter().enumerate() {
                                s += g * src[x + k];
                            }
                            *d = s;
                        }
                    }
                    for r in 0..rows {
                        let py = y0 + r + pad;
                        let qy = (py as isize + oy) as usize;
                        let q = &padded[qy * pw + (pad as isize + ox) as usize..][..w];
                        let acc_row = &mut acc[r * w..(r + 1) * w];
                        let norm_row = &mut norm[r * w..(r + 1) * w];
                        for x in 0..w {
                            let mut d2 = 0.0;
                            for (k, g) in g1.iter().enumerate() {
                                d2 += g * horiz[(r + k) * w + x];
                            }
                            let wt = (-d2 * inv_h2).exp();
                            acc_row[x] += wt * q[x];
                            norm_row[x] += wt;
                        }
                    }
                }
            }
            for ((o, a), n) in chunk.iter_mut().zip(&acc).zip(&norm) {
                *o = a / n;
            }
        });
    Ok(GrayImage::from_raw(w, h, out))
}

/// Perona-Malik diffusion with Gaussian-regularized gradient (Catte et al.).
///
/// Explicit scheme on the 4-neighbour stencil. Each edge `p -> q` carries the
/// flux `dt * g(d^2) * (u_q - u_p)` where `d` is the difference of the
/// pre-smoothed image across that edge, so total intensity is conserved and
/// the image border is zero-flux. Diffusivity `g(s) = 1 / (1 + s / kappa^2)`.
pub fn adf(img: &GrayImage, p: &AdfParams) -> Result<GrayImage> {
    p.validate()?;
    let (w, h) = img.dims();
    let mut u = img.data().to_vec();
    let inv_k2 = 1.0 / (p.kappa * p.kappa);
    let g = |d: f64| 1.0 / (1.0 + d * d * inv_k2);
    for _ in 0..p.iterations {
        let current = GrayImage::from_raw(w, h, u.clone());
        let smooth = gaussian_blur(&current, p.sigma);
        let s = smooth.data();
        let prev = current.into_data();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let j = i + 1;
                    let f = p.dt * g(s[j] - s[i]) * (prev[j] - prev[i]);
                    u[i] += f;
                    u[j] -= f;
                }
                if y + 1 < h {
                    let j = i + w;
                    let f = p.dt * g(s[j] - s[i]) * (prev[j] - prev[i]);
                    u[i] += f;
                    u[j] -= f;
                }
            }
        }
    }
    Ok(GrayImage::from_raw(w, h, u))
}
