//! Two-grain phantom with a fluid bridge: the synthetic benchmark image.
//!
//! Ground truth is sampled at pixel centers before any degradation, so the
//! label map depends on geometry only. The degraded image is the crisp class
//! image blurred with [`gaussian_blur`] and corrupted with [`add_noise`].

use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::image::{add_noise, gaussian_blur, GrayImage, LabelMap, FLUID, GAS, GRAIN};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Circle {
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Fluid bridge bounded by the hyperbola `|dy| <= half_waist * sqrt(1 + (dx / flare)^2)`
/// and clipped to `|dx| <= half_length`, with `dx`, `dy` measured from
/// `(cx, cy)` along the image axes. Grain pixels take precedence over fluid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bridge {
    pub cx: f64,
    pub cy: f64,
    pub half_waist: f64,
    pub flare: f64,
    pub half_length: f64,
}

impl Bridge {
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        if dx.abs() > self.half_length {
            return false;
        }
        let t = dx / self.flare;
        dy.abs() <= self.half_waist * (1.0 + t * t).sqrt()
    }
}

/// Blur and noise of the reference benchmark setting.
pub const NOMINAL_BLUR: f64 = 2.0;
pub const NOMINAL_NOISE: f64 = 14.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub grains: Vec<Circle>,
    pub bridge: Option<Bridge>,
    pub mean_gas: f64,
    pub mean_grain: f64,
    pub mean_fluid: f64,
    /// Gaussian blur standard deviation, pixels.
    pub blur: f64,
    /// Additive noise standard deviation, intensity units.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::two_grains(320, 160)
    }
}

impl PhantomSpec {
    /// Default geometry for a `width x height` frame: two grains of radius
    /// `0.3 * min(width, height)` separated by a gap of a quarter radius along
    /// the horizontal axis, joined by a bridge whose neck half-height is half a
    /// radius.
    pub fn two_grains(width: usize, height: usize) -> Self {
        let radius = 0.3 * width.min(height) as f64;
        let gap = 0.25 * radius;
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let offset = radius + gap / 2.0;
        Self {
            width,
            height,
            grains: vec![
                Circle {
                    cx: cx - offset,
                    cy,
                    radius,
                },
                Circle {
                    cx: cx + offset,
                    cy,
                    radius,
                },
            ],
            bridge: Some(Bridge {
                cx,
                cy,
                half_waist: 0.5 * radius,
                flare: 0.5 * radius,
                half_length: gap / 2.0 + 0.5 * radius,
            }),
            mean_gas: 50.0,
            mean_grain: 130.0,
            mean_fluid: 190.0,
            blur: 0.0,
            noise: 0.0,
            seed: 0,
        }
    }

    pub fn class_means(&self) -> [f64; 3] {
        [self.mean_gas, self.mean_grain, self.mean_fluid]
    }

    pub fn with_degradation(&self, blur: f64, noise: f64, seed: u64) -> Self {
        Self {
            blur,
            noise,
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("phantom size must be positive".into()));
        }
        let m = self.class_means();
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("class means must be finite".into()));
        }
        if m[0] == m[1] || m[1] == m[2] || m[0] == m[2] {
            return Err(Error::InvalidParameter(
                "class means must be pairwise distinct".into(),
            ));
        }
        if !(self.blur >= 0.0 && self.blur.is_finite()) {
            return Err(Error::InvalidParameter(format!("blur must be >= 0, got {}", self.blur)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        for g in &self.grains {
            if !(g.radius > 0.0) {
                return Err(Error::InvalidParameter("grain radius must be positive".into()));
            }
        }
        if let Some(b) = &self.bridge {
            if !(b.half_waist > 0.0 && b.flare > 0.0 && b.half_length > 0.0) {
                return Err(Error::InvalidParameter(
                    "bridge parameters must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Noise-free label map sampled at pixel centers.
    pub fn truth(&self) -> LabelMap {
        let mut labels = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let (px, py) = (x as f64, y as f64);
                let label = if self.grains.iter().any(|g| g.contains(px, py)) {
                    GRAIN
                } else if self.bridge.is_some_and(|b| b.contains(px, py)) {
                    FLUID
                } else {
                    GAS
                };
                labels.push(label);
            }
        }
        LabelMap::new(self.width, self.height, labels).expect("dimensions are consistent")
    }

    pub fn from_kv(mut cfg: KvConfig) -> Result<Self> {
        let width = cfg.take::<usize>("width")?.unwrap_or(320);
        let height = cfg.take::<usize>("height")?.unwrap_or(160);
        let mut spec = Self::two_grains(width, height);

        let grain_keys = cfg.keys_with_prefix("grain.");
        if !grain_keys.is_empty() {
            spec.grains.clear();
            for key in grain_keys {
                let v = cfg.take_list(&key)?.unwrap_or_default();
                if v.len() != 3 {
                    return Err(Error::Config(format!("`{key}` needs `cx cy radius`")));
                }
                spec.grains.push(Circle {
                    cx: v[0],
                    cy: v[1],
                    radius: v[2],
                });
            }
        }
        if let Some(raw) = cfg.take::<String>("bridge")? {
            spec.bridge = if raw.trim() == "none" {
                None
            } else {
                let v = crate::config::parse_list(&raw)
                    .map_err(|e| Error::Config(format!("key `bridge`: {e}")))?;
                if v.len() != 5 {
                    return Err(Error::Config(
                        "`bridge` needs `cx cy half_waist flare half_length` or `none`".into(),
                    ));
                }
                Some(Bridge {
                    cx: v[0],
                    cy: v[1],
                    half_waist: v[2],
                    flare: v[3],
                    half_length: v[4],
                })
            };
        }
        if let Some(v) = cfg.take("mean.gas")? {
            spec.mean_gas = v;
        }
        if let Some(v) = cfg.take("mean.grain")? {
            spec.mean_grain = v;
        }
        if let Some(v) = cfg.take("mean.fluid")? {
            spec.mean_fluid = v;
        }
        if let Some(v) = cfg.take("blur")? {
            spec.blur = v;
        }
        if let Some(v) = cfg.take("noise")? {
            spec.noise = v;
        }
        if let Some(v) = cfg.take("seed")? {
            spec.seed = v;
        }
        cfg.finish()?;
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut cfg = KvConfig::default();
        cfg.set("width", self.width);
        cfg.set("height", self.height);
        for (i, g) in self.grains.iter().enumerate() {
            cfg.set(format!("grain.{i}"), format!("{} {} {}", g.cx, g.cy, g.radius));
        }
        match &self.bridge {
            Some(b) => cfg.set(
                "bridge",
                format!(
                    "{} {} {} {} {}",
                    b.cx, b.cy, b.half_waist, b.flare, b.half_length
                ),
            ),
            None => cfg.set("bridge", "none"),
        }
        cfg.set("mean.gas", self.mean_gas);
        cfg.set("mean.grain", self.mean_grain);
        cfg.set("mean.fluid", self.mean_fluid);
        cfg.set("blur", self.blur);
        cfg.set("noise", self.noise);
        cfg.set("seed", self.seed);
        cfg
    }
}

/// Renders the phantom: returns the degraded image and its ground truth.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(GrayImage, LabelMap)> {
    spec.validate()?;
    let truth = spec.truth();
    for (label, name) in [(GAS, "gas"), (GRAIN, "grain"), (FLUID, "fluid")] {
        if truth.count(label) == 0 {
            return Err(Error::EmptyClass(name));
        }
    }
    let means = spec.class_means();
    let crisp = GrayImage::new(
        spec.width,
        spec.height,
        truth.labels().iter().map(|&l| means[l as usize]).collect(),
    )?;
    let blurred = gaussian_blur(&crisp, spec.blur);
    let image = add_noise(&blurred, spec.noise, spec.seed);
    Ok((image, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undegraded_phantom_is_piecewise_constant() {
        let spec = PhantomSpec::default();
        let (img, truth) = generate_phantom(&spec).unwrap();
        let means = spec.class_means();
        for (v, &l) in img.data().iter().zip(truth.labels()) {
            assert_eq!(*v, means[l as usize]);
        }
    }

    #[test]
    fn every_class_covers_at_least_one_percent() {
        let truth = PhantomSpec::default().truth();
        let n = truth.labels().len() as f64;
        for l in [GAS, GRAIN, FLUID] {
            let frac = truth.count(l) as f64 / n;
            assert!(frac >= 0.01, "class {l} covers {frac}");
        }
    }

    #[test]
    fn truth_ignores_degradation() {
        let base = PhantomSpec::default();
        let (_, a) = generate_phantom(&base.with_degradation(0.0, 0.0, 1)).unwrap();
        let (_, b) = generate_phantom(&base.with_degradation(3.0, 13.0, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn per_class_noise_variance() {
        let spec = PhantomSpec::default().with_degradation(0.0, 5.0, 11);
        let (img, truth) = generate_phantom(&spec).unwrap();
        for l in [GAS, GRAIN, FLUID] {
            let vals: Vec<f64> = img
                .data()
                .iter()
                .zip(truth.labels())
                .filter(|(_, &t)| t == l)
                .map(|(v, _)| *v)
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            // Only the large classes carry >= 1e4 samples; the fluid bridge is
            // checked against the wider band its sample size supports.
            let tol = if vals.len() >= 10_000 { 0.10 } else { 0.20 };
            assert!((var - 25.0).abs() <= tol * 25.0, "class {l}: var {var} over {}", vals.len());
        }
    }

    #[test]
    fn empty_class_is_named() {
        let spec = PhantomSpec {
            bridge: None,
            ..PhantomSpec::default()
        };
        match generate_phantom(&spec) {
            Err(Error::EmptyClass(name)) => assert_eq!(name, "fluid"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kv_round_trip() {
        let spec = PhantomSpec::default().with_degradation(3.0, 13.0, 5);
        let back = PhantomSpec::from_kv(spec.to_kv()).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn duplicate_means_rejected() {
        let spec = PhantomSpec {
            mean_fluid: 130.0,
            ..PhantomSpec::default()
        };
        assert!(generate_phantom(&spec).is_err());
    }
}
