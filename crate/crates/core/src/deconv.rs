//! Local deconvolution of blurred two-phase edges.
//!
//! Near a straight edge between plateaus `a` (bright side) and `b` (dark
//! side), the smoothed value `u`, the even response `g` and the odd response
//! `h` at the dominant orientation are all linear in `(a, b)`:
//!
//! ```text
//! [u]   [w_ua(r) w_ub(r)] [a]
//! [g] = [w_ga(r) w_gb(r)] [b] + noise
//! [h]   [w_ha(r) w_hb(r)]
//! ```
//!
//! The weights depend on the distance to the edge, which is indexed here by
//! the measured local phase `r`. They are tabulated once by filtering a
//! synthetic blurred step, and each pixel is then solved by generalized least
//! squares with the noise covariance of the three measurements.
//!
//! Polarity: the odd response is sign-flipped so that it is non-negative,
//! which makes `a` the brighter side and keeps `r` in `[-pi/2, pi/2]`.

use nalgebra::{Cholesky, Matrix2, Matrix3, Matrix3x2, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    orientation_energy_with, quadrature_responses, QuadraturePair, DEFAULT_ENERGY_THRESHOLD,
};
use crate::image::GrayImage;
use crate::mixture::std_normal_cdf;

pub const DEFAULT_CALIBRATION_SIGMA: f64 = 2.0;
/// Noise realizations used to estimate the measurement covariance.
pub const NOISE_REALIZATIONS: usize = 10_000;
/// Added to the covariance diagonal when it is (near) singular.
pub const COVARIANCE_FLOOR: f64 = 1e-6;
/// Pixels whose whitened design matrix is worse conditioned than this are
/// left unsolved.
pub const MAX_CONDITION: f64 = 1e6;
/// Half-width, in pixels, of the 1-D profile used for calibration.
pub const CALIBRATION_WINDOW: f64 = 64.0;
const OFFSET_STEP: f64 = 0.02;
const NOISE_SEED: u64 = 0x05ee_dca1;

/// Forward-model weights at one phase value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub r: f64,
    /// Signed distance from the edge toward the bright side, in pixels.
    pub offset: f64,
    pub ua: f64,
    pub ga: f64,
    pub ha: f64,
}

/// Weights `w_ua .. w_hb` at one phase value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub ua: f64,
    pub ub: f64,
    pub ga: f64,
    pub gb: f64,
    pub ha: f64,
    pub hb: f64,
}

impl Weights {
    pub fn matrix(&self) -> Matrix3x2<f64> {
        Matrix3x2::new(self.ua, self.ub, self.ga, self.gb, self.ha, self.hb)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvCalibration {
    pub sigma_cal: f64,
    pub kernel_sigma: f64,
    pub kernel_radius: usize,
    pub noise_sigma: f64,
    /// Rows sorted by strictly increasing `r`.
    pub table: Vec<WeightRow>,
    /// Covariance of `(u, g, h)` noise, row-major.
    pub covariance: [[f64; 3]; 3],
    /// Whether [`COVARIANCE_FLOOR`] was added to the diagonal.
    pub covariance_floored: bool,
}

impl DeconvCalibration {
    /// Phase interval covered by the table.
    pub fn r_range(&self) -> (f64, f64) {
        (self.table[0].r, self.table[self.table.len() - 1].r)
    }

    /// Linearly interpolated weights, clamped to the table ends.
    pub fn weights(&self, r: f64) -> Weights {
        let t = &self.table;
        let row = if r <= t[0].r {
            t[0]
        } else if r >= t[t.len() - 1].r {
            t[t.len() - 1]
        } else {
            let k = t.partition_point(|w| w.r <= r);
            let (lo, hi) = (t[k - 1], t[k]);
            let f = (r - lo.r) / (hi.r - lo.r);
            let lerp = |x: f64, y: f64| x + f * (y - x);
            WeightRow {
                r,
                offset: lerp(lo.offset, hi.offset),
                ua: lerp(lo.ua, hi.ua),
                ga: lerp(lo.ga, hi.ga),
                ha: lerp(lo.ha, hi.ha),
            }
        };
        Weights {
            ua: row.ua,
            ub: 1.0 - row.ua,
            ga: row.ga,
            gb: -row.ga,
            ha: row.ha,
            hb: -row.ha,
        }
    }

    pub fn covariance_matrix(&self) -> Matrix3<f64> {
        let c = &self.covariance;
        Matrix3::new(c[0][0], c[0][1], c[0][2], c[1][0], c[1][1], c[1][2], c[2][0], c[2][1], c[2][2])
    }

    /// Precomputes the whitening transform.
    pub fn solver(&self) -> Result<Solver> {
        Solver::new(self.covariance_matrix())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cal: DeconvCalibration =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("calibration file: {e}")))?;
        if cal.table.len() < 2 || cal.table.windows(2).any(|w| w[1].r <= w[0].r) {
            return Err(Error::Format("calibration table must have increasing phases".into()));
        }
        Ok(cal)
    }
}

/// Column sums of a kernel: its response to an image constant along `y`.
fn column_profile(k: &crate::filters::Kernel) -> Vec<f64> {
    let side = 2 * k.radius() + 1;
    (0..side)
        .map(|x| (0..side).map(|y| k.taps()[y * side + x]).sum())
        .collect()
}

/// Tabulates the forward-model weights against phase and estimates the
/// measurement noise covariance for white noise of standard deviation
/// `noise_sigma`.
pub fn calibrate(sigma_cal: f64, q: &QuadraturePair, noise_sigma: f64) -> Result<DeconvCalibration> {
    if !(sigma_cal > 0.0) || !sigma_cal.is_finite() {
        return Err(Error::InvalidParameter(format!("calibration sigma must be positive, got {sigma_cal}")));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let radius = q.radius();
    let reach = 5.0 * sigma_cal + radius as f64;
    if reach > CALIBRATION_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "calibration sigma {sigma_cal} too large: the step does not reach its plateaus within {CALIBRATION_WINDOW} px"
        )));
    }
    let gcol = column_profile(&q.g_basis()[0]);
    let hcol = column_profile(&q.h_basis()[0]);
    let r_i = radius as isize;
    let steps = (reach / OFFSET_STEP).ceil() as isize;
    let rows: Vec<WeightRow> = (-steps..=steps)
        .map(|s| {
            let d = s as f64 * OFFSET_STEP;
            let mut g = 0.0;
            let mut h = 0.0;
            for k in -r_i..=r_i {
                let v = std_normal_cdf((d + k as f64) / sigma_cal);
                g += gcol[(k + r_i) as usize] * v;
                h += hcol[(k + r_i) as usize] * v;
            }
            WeightRow {
                r: g.atan2(h),
                offset: d,
                ua: std_normal_cdf(d / sigma_cal),
                ga: g,
                ha: h,
            }
        })
        .collect();
    let table = monotone_core(&rows)?;
    let (covariance, covariance_floored) = noise_covariance(q, noise_sigma);
    Ok(DeconvCalibration {
        sigma_cal,
        kernel_sigma: q.sigma(),
        kernel_radius: radius,
        noise_sigma,
        table,
        covariance,
        covariance_floored,
    })
}

/// The stretch of rows around offset zero where the odd response is positive
/// and phase is strictly monotone, sorted by increasing phase.
fn monotone_core(rows: &[WeightRow]) -> Result<Vec<WeightRow>> {
    let mid = rows.len() / 2;
    if rows[mid].ha <= 0.0 {
        return Err(Error::Numeric("odd filter response vanishes on the calibration edge".into()));
    }
    let dir = (rows[mid + 1].r - rows[mid].r).signum();
    let ok = |a: &WeightRow, b: &WeightRow| b.ha > 0.0 && (b.r - a.r) * dir > 0.0;
    let mut hi = mid;
    while hi + 1 < rows.len() && ok(&rows[hi], &rows[hi + 1]) {
        hi += 1;
    }
    let mut lo = mid;
    while lo > 0 && ok(&rows[lo - 1], &rows[lo]) {
        lo -= 1;
    }
    let mut table = rows[lo..=hi].to_vec();
    if dir < 0.0 {
        table.reverse();
    }
    Ok(table)
}

fn noise_covariance(q: &QuadraturePair, sigma: f64) -> ([[f64; 3]; 3], bool) {
    let g = q.g_basis()[0].taps();
    let h = q.h_basis()[0].taps();
    let center = g.len() / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(NOISE_SEED);
    let mut patch = vec![0.0; g.len()];
    let mut samples = Vec::with_capacity(NOISE_REALIZATIONS);
    for _ in 0..NOISE_REALIZATIONS {
        for p in patch.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p = sigma * z;
        }
        let eg: f64 = g.iter().zip(&patch).map(|(k, v)| k * v).sum();
        let eh: f64 = h.iter().zip(&patch).map(|(k, v)| k * v).sum();
        samples.push([patch[center], eg, eh]);
    }
    let n = samples.len() as f64;
    let mut mean = [0.0; 3];
    for s in &samples {
        for d in 0..3 {
            mean[d] += s[d] / n;
        }
    }
    let mut c = [[0.0; 3]; 3];
    for s in &samples {
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    let m = Matrix3::from_fn(|i, j| c[i][j]);
    let min_eig = SymmetricEigen::new(m).eigenvalues.min();
    if min_eig < COVARIANCE_FLOOR {
        for (d, row) in c.iter_mut().enumerate() {
            row[d] += COVARIANCE_FLOOR;
        }
        (c, true)
    } else {
        (c, false)
    }
}

/// Generalized least squares with a fixed covariance.
#[derive(Clone, Debug)]
pub struct Solver {
    whiten: Matrix3<f64>,
}

impl Solver {
    pub fn new(covariance: Matrix3<f64>) -> Result<Self> {
        let chol = Cholesky::new(covariance)
            .ok_or_else(|| Error::Numeric("noise covariance is not positive definite".into()))?;
        let whiten = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::Numeric("noise covariance is singular".into()))?;
        Ok(Self { whiten })
    }

    /// Minimizes `(y - W x)^T Sigma^-1 (y - W x)`. `None` when the whitened
    /// design matrix has condition number above [`MAX_CONDITION`].
    pub fn solve(&self, w: &Matrix3x2<f64>, y: &Vector3<f64>) -> Option<(f64, f64)> {
        let wt = self.whiten * w;
        let yt = self.whiten * y;
        let normal: Matrix2<f64> = wt.transpose() * wt;
        let eig = SymmetricEigen::new(normal).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 0.0) || (hi / lo).sqrt() > MAX_CONDITION {
            return None;
        }
        let x = normal.try_inverse()? * (wt.transpose() * yt);
        Some((x[0], x[1]))
    }
}

/// Solves one pixel from its measurements and phase.
///
/// Returns `(a, b, reliable)`; ill-conditioned pixels give `a = b = u`.
pub fn solve_pixel(u: f64, g: f64, h: f64, r: f64, cal: &DeconvCalibration, solver: &Solver) -> (f64, f64, bool) {
    let w = cal.weights(r).matrix();
    match solver.solve(&w, &Vector3::new(u, g, h)) {
        Some((a, b)) if a.is_finite() && b.is_finite() => (a, b, true),
        _ => (u, u, false),
    }
}

/// Per-pixel two-sided intensity estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvField {
    pub width: usize,
    pub height: usize,
    /// Bright-side intensity.
    pub a: Vec<f64>,
    /// Dark-side intensity.
    pub b: Vec<f64>,
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    pub reliable: Vec<bool>,
}

impl DeconvField {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn a_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.a.clone())
    }

    pub fn b_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.b.clone())
    }

    /// `|a - b|` per pixel.
    pub fn contrast(&self) -> GrayImage {
        let d = self.a.iter().zip(&self.b).map(|(a, b)| (a - b).abs()).collect();
        GrayImage::from_raw(self.width, self.height, d)
    }
}

pub fn deconvolve(img: &GrayImage, q: &QuadraturePair, cal: &DeconvCalibration) -> Result<DeconvField> {
    deconvolve_with(img, q, cal, DEFAULT_ENERGY_THRESHOLD)
}

/// Orientation, phase and per-pixel solve. Pixels whose orientation energy is
/// below `energy_threshold` (relative to the squared dynamic range) are
/// treated as interior: `a = b = u`, unreliable.
pub fn deconvolve_with(
    img: &GrayImage,
    q: &QuadraturePair,
    cal: &DeconvCalibration,
    energy_threshold: f64,
) -> Result<DeconvField> {
    if q.radius() != cal.kernel_radius || q.sigma() != cal.kernel_sigma {
        return Err(Error::InvalidParameter(format!(
            "calibration was made for kernel sigma {} radius {}, got sigma {} radius {}",
            cal.kernel_sigma,
            cal.kernel_radius,
            q.sigma(),
            q.radius()
        )));
    }
    let solver = cal.solver()?;
    let resp = quadrature_responses(img, q);
    let field = orientation_energy_with(&resp, energy_threshold);
    let (w, h) = img.dims();
    let n = w * h;
    let data = img.data();
    let solved: Vec<(f64, f64, f64, bool)> = (0..n)
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| {
            let t = field.theta[i];
            let g = resp.steer_g(i, t);
            let hh = resp.steer_h(i, t).abs();
            let r = g.atan2(hh);
            if !field.reliable[i] {
                return (data[i], data[i], r, false);
            }
            let (a, b, ok) = solve_pixel(data[i], g, hh, r, cal, &solver);
            (a, b, r, ok)
        })
        .collect();
    let mut out = DeconvField {
        width: w,
        height: h,
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        r: Vec::with_capacity(n),
        theta: field.theta,
        reliable: Vec::with_capacity(n),
    };
    for (a, b, r, ok) in solved {
        out.a.push(a);
        out.b.push(b);
        out.r.push(r);
        out.reliable.push(ok);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_monotone_and_partitions_mass() {
        let cal = calibrate(2.0, &QuadraturePair::default(), 5.0).unwrap();
        assert!(cal.table.windows(2).all(|w| w[1].r > w[0].r));
        let (lo, hi) = cal.r_range();
        assert!(lo < 0.0 && hi > 0.0);
        for k in 0..200 {
            let r = lo + (hi - lo) * k as f64 / 199.0;
            let w = cal.weights(r);
            assert!((w.ua + w.ub - 1.0).abs() < 1e-3);
        }
        // on the edge the blur splits evenly
        let w0 = cal.weights(cal.table.iter().find(|w| w.offset.abs() < 1e-9).unwrap().r);
        assert!((w0.ua - 0.5).abs() < 1e-2);
    }

    #[test]
    fn far_end_of_table_is_plateau() {
        let cal = calibrate(2.0, &QuadraturePair::default(), 5.0).unwrap();
        let far = cal.table.iter().max_by(|a, b| a.offset.total_cmp(&b.offset)).unwrap();
        let w = cal.weights(far.r);
        assert!(w.ua > 0.99 && w.ub < 0.01);
        let peak = cal.table.iter().fold(0.0f64, |m, w| m.max(w.ha.abs()));
        assert!(w.ga.abs() < 0.2 * peak && w.ha.abs() < 0.2 * peak);
    }

    #[test]
    fn calibration_rejects_bad_sigma() {
        let q = QuadraturePair::default();
        assert!(calibrate(0.0, &q, 1.0).is_err());
        assert!(calibrate(20.0, &q, 1.0).is_err());
        assert!(calibrate(2.0, &q, -1.0).is_err());
    }

    #[test]
    fn noiseless_covariance_is_floored() {
        let cal = calibrate(2.0, &QuadraturePair::default(), 0.0).unwrap();
        assert!(cal.covariance_floored);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { COVARIANCE_FLOOR } else { 0.0 };
                assert_eq!(cal.covariance[i][j], expect);
            }
        }
        assert!(cal.solver().is_ok());
    }

    #[test]
    fn covariance_matches_kernel_energy() {
        let q = QuadraturePair::default();
        let cal = calibrate(2.0, &q, 10.0).unwrap();
        assert!(!cal.covariance_floored);
        let g2: f64 = q.g_basis()[0].taps().iter().map(|k| k * k).sum();
        let h2: f64 = q.h_basis()[0].taps().iter().map(|k| k * k).sum();
        assert!((cal.covariance[0][0] / 100.0 - 1.0).abs() < 0.05);
        assert!((cal.covariance[1][1] / (100.0 * g2) - 1.0).abs() < 0.05);
        assert!((cal.covariance[2][2] / (100.0 * h2) - 1.0).abs() < 0.05);
        assert_eq!(cal.covariance[0][1], cal.covariance[1][0]);
    }

    #[test]
    fn ill_conditioned_design_is_rejected() {
        let solver = Solver::new(Matrix3::identity()).unwrap();
        let w = Matrix3x2::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(solver.solve(&w, &Vector3::new(1.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn calibration_json_round_trip() {
        let cal = calibrate(1.5, &QuadraturePair::default(), 3.0).unwrap();
        let back = DeconvCalibration::from_json(&cal.to_json()).unwrap();
        assert_eq!(back, cal);
        assert!(DeconvCalibration::from_json("{}").is_err());
    }

    #[test]
    fn constant_image_gives_flat_field() {
        let q = QuadraturePair::default();
        let cal = calibrate(2.0, &q, 5.0).unwrap();
        let field = deconvolve(&GrayImage::filled(24, 20, 77.0), &q, &cal).unwrap();
        assert!(field.a.iter().chain(&field.b).all(|&v| v == 77.0));
        assert!(field.reliable.iter().all(|r| !r));
    }

    #[test]
    fn kernel_mismatch_is_an_error() {
        let cal = calibrate(2.0, &QuadraturePair::new(1.6), 5.0).unwrap();
        assert!(deconvolve(&GrayImage::filled(24, 20, 1.0), &QuadraturePair::new(1.2), &cal).is_err());
    }
}
