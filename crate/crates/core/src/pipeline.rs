//! The four-step segmentation workflow.
//!
//! 1. edge-preserving smoothing,
//! 2. transition-pixel identification,
//! 3. Gaussian-mixture segmentation of the remaining single-class pixels,
//! 4. nearest-region labeling of the transition pixels.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::deconv::{calibrate, deconvolve_with, DeconvCalibration, DEFAULT_CALIBRATION_SIGMA};
use crate::distance::squared_edt;
use crate::error::{Error, Result, Stage};
use crate::filters::{QuadraturePair, DEFAULT_ENERGY_THRESHOLD, DEFAULT_KERNEL_SIGMA};
use crate::image::{GrayImage, LabelMap, UNASSIGNED};
use crate::mixture::{fit_gmm, fit_ngmm, EmSettings, FitReport, GaussianMixture, NonGaussianMixture};
use crate::smoothing::{adf, estimate_noise_sigma, nlm, AdfParams, NlmParams};
use crate::transition::{
    by_classification, by_difference, by_gradient, TransitionMask, DEFAULT_DIFFERENCE_TAU,
    DEFAULT_GRADIENT_RADIUS, DEFAULT_GRADIENT_TAU,
};

/// Components of the single-class mixture lighter than this abort the run.
pub const MIN_CLASS_WEIGHT: f64 = 1e-4;
const GMM_MAX_ITERATIONS: usize = 500;
const GMM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Smoother {
    /// Non-local means; `params: None` derives `h` from the estimated noise level.
    Nlm { params: Option<NlmParams> },
    Adf { params: AdfParams },
    None,
}

impl Default for Smoother {
    fn default() -> Self {
        Smoother::Nlm { params: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    #[default]
    Classification,
    Difference { tau: f64 },
    Gradient { tau: f64, radius: usize },
}

impl Method {
    pub fn difference() -> Self {
        Method::Difference {
            tau: DEFAULT_DIFFERENCE_TAU,
        }
    }

    pub fn gradient() -> Self {
        Method::Gradient {
            tau: DEFAULT_GRADIENT_TAU,
            radius: DEFAULT_GRADIENT_RADIUS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Classification => "classification",
            Method::Difference { .. } => "difference",
            Method::Gradient { .. } => "gradient",
        }
    }
}

/// How transition pixels pick their class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Labeling {
    /// Class of the spatially nearest single-class pixel.
    #[default]
    Spatial,
    /// Class whose fitted mean is closest in intensity.
    Intensity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub smoother: Smoother,
    pub method: Method,
    pub classes: usize,
    /// Settings for the non-Gaussian mixture of the classification method.
    /// Its seed is replaced by [`PipelineConfig::seed`].
    pub em: EmSettings,
    pub kernel_sigma: f64,
    pub calibration_sigma: f64,
    pub energy_threshold: f64,
    pub labeling: Labeling,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            smoother: Smoother::default(),
            method: Method::default(),
            classes: 3,
            em: EmSettings::default(),
            kernel_sigma: DEFAULT_KERNEL_SIGMA,
            calibration_sigma: DEFAULT_CALIBRATION_SIGMA,
            energy_threshold: DEFAULT_ENERGY_THRESHOLD,
            labeling: Labeling::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 254 {
            return Err(Error::InvalidParameter(format!("class count must be in 2..=254, got {}", self.classes)));
        }
        match &self.smoother {
            Smoother::Nlm { params: Some(p) } => p.validate()?,
            Smoother::Adf { params } => params.validate()?,
            _ => {}
        }
        match self.method {
            Method::Classification => {}
            Method::Difference { tau } | Method::Gradient { tau, .. } if !(tau > 0.0 && tau.is_finite()) => {
                return Err(Error::InvalidParameter(format!("threshold must be positive, got {tau}")));
            }
            Method::Gradient { radius: 0, .. } => {
                return Err(Error::InvalidParameter("gradient radius must be >= 1".into()));
            }
            _ => {}
        }
        self.em.validate()?;
        for (name, v) in [
            ("kernel sigma", self.kernel_sigma),
            ("calibration sigma", self.calibration_sigma),
            ("energy threshold", self.energy_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn em_settings(&self) -> EmSettings {
        EmSettings {
            seed: self.seed,
            ..self.em.clone()
        }
    }
}

/// Wall-clock seconds per stage. Not part of the reproducible output.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub smoothing: f64,
    pub transition: f64,
    pub single_class: f64,
    pub labeling: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub smoother: Smoother,
    pub method: Method,
    /// Noise level estimated on the input image.
    pub noise_sigma: f64,
    /// Fitted non-Gaussian mixture (classification method only).
    pub transition_mixture: Option<FitReport<NonGaussianMixture>>,
    pub transition_pixels: usize,
    pub single_class_mixture: GaussianMixture,
    pub single_class_iterations: usize,
    pub class_pixels: Vec<usize>,
    pub area_fractions: Vec<f64>,
    pub warnings: Vec<String>,
    /// Kept out of the serialized report so reports are reproducible.
    #[serde(skip)]
    pub timings: Timings,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Copy with all timings zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> RunReport {
        RunReport {
            timings: Timings::default(),
            ..self.clone()
        }
    }
}

/// Smoothed image and the noise level estimated on the input.
pub struct Smoothed {
    pub image: GrayImage,
    pub noise_sigma: f64,
    /// The smoother with any automatic parameters filled in.
    pub smoother: Smoother,
    pub seconds: f64,
}

/// Step 1.
pub fn smooth(img: &GrayImage, smoother: &Smoother) -> Result<Smoothed> {
    let start = Instant::now();
    let noise_sigma = estimate_noise_sigma(img);
    let (image, resolved) = match smoother {
        Smoother::Nlm { params } => {
            let p = params.unwrap_or_else(|| NlmParams::for_noise(noise_sigma));
            (nlm(img, &p)?, Smoother::Nlm { params: Some(p) })
        }
        Smoother::Adf { params } => (adf(img, params)?, smoother.clone()),
        Smoother::None => (img.clone(), Smoother::None),
    };
    Ok(Smoothed {
        image,
        noise_sigma,
        smoother: resolved,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Step 2. `noise_sigma` sets the calibrated measurement covariance.
pub fn identify_transitions(
    smoothed: &GrayImage,
    noise_sigma: f64,
    cfg: &PipelineConfig,
) -> Result<(TransitionMask, Option<FitReport<NonGaussianMixture>>)> {
    identify_transitions_with(smoothed, noise_sigma, cfg, None)
}

/// Step 2 with an optional precomputed calibration, which then takes
/// precedence over `cfg.kernel_sigma`, `cfg.calibration_sigma` and
/// `noise_sigma`.
pub fn identify_transitions_with(
    smoothed: &GrayImage,
    noise_sigma: f64,
    cfg: &PipelineConfig,
    calibration: Option<&DeconvCalibration>,
) -> Result<(TransitionMask, Option<FitReport<NonGaussianMixture>>)> {
    let deconvolved = || -> Result<_> {
        match calibration {
            Some(cal) => {
                let q = QuadraturePair::new(cal.kernel_sigma);
                deconvolve_with(smoothed, &q, cal, cfg.energy_threshold)
            }
            None => {
                let q = QuadraturePair::new(cfg.kernel_sigma);
                let cal = calibrate(cfg.calibration_sigma, &q, noise_sigma)?;
                deconvolve_with(smoothed, &q, &cal, cfg.energy_threshold)
            }
        }
    };
    match cfg.method {
        Method::Classification => {
            let fit = fit_ngmm(smoothed.data(), cfg.classes, &cfg.em_settings())?;
            let field = deconvolved()?;
            Ok((by_classification(&field, &fit.model), Some(fit)))
        }
        Method::Difference { tau } => Ok((by_difference(&deconvolved()?, tau)?, None)),
        Method::Gradient { tau, radius } => Ok((by_gradient(smoothed, tau, radius)?, None)),
    }
}

/// Step 3: fits an `n`-class Gaussian mixture (exact EM) to the pixels outside
/// `mask` and classifies them. Masked pixels are left [`UNASSIGNED`].
pub fn segment_single_class(
    img: &GrayImage,
    mask: &TransitionMask,
    n: usize,
    seed: u64,
) -> Result<(LabelMap, FitReport<GaussianMixture>)> {
    check_dims(img.dims(), mask.dims())?;
    let samples: Vec<f64> = img
        .data()
        .iter()
        .zip(&mask.flags)
        .filter(|(_, m)| !**m)
        .map(|(v, _)| *v)
        .collect();
    let fit = fit_gmm(&samples, n, GMM_MAX_ITERATIONS, GMM_TOLERANCE, seed)?;
    if let Some(k) = fit.model.weights.iter().position(|&w| w < MIN_CLASS_WEIGHT) {
        return Err(Error::Numeric(format!(
            "class {k} collapsed (weight {:.2e}); try fewer classes",
            fit.model.weights[k]
        )));
    }
    let labels = img
        .data()
        .iter()
        .zip(&mask.flags)
        .map(|(&v, &m)| if m { UNASSIGNED } else { fit.model.classify(v) as u8 })
        .collect();
    Ok((LabelMap::new(img.width(), img.height(), labels)?, fit))
}

/// Step 4: every masked pixel takes the class of the nearest single-class
/// pixel (exact Euclidean distance, ties to the lower class index).
///
/// Returns warnings for classes absent from `partial`.
pub fn label_transitions(partial: &LabelMap, mask: &TransitionMask, n: usize) -> Result<(LabelMap, Vec<String>)> {
    check_dims(partial.dims(), mask.dims())?;
    let (w, h) = partial.dims();
    let mut warnings = Vec::new();
    let mut best = vec![f64::INFINITY; w * h];
    let mut out = partial.clone();
    for class in 0..n as u8 {
        let seed: Vec<bool> = partial.labels().iter().map(|&l| l == class).collect();
        if !seed.iter().any(|s| *s) {
            warnings.push(format!("class {class} has no single-class pixels; not used for transition labeling"));
            continue;
        }
        let d = squared_edt(w, h, &seed);
        for i in 0..w * h {
            if mask.flags[i] && d[i] < best[i] {
                best[i] = d[i];
                out.labels_mut()[i] = class;
            }
        }
    }
    if out.has_unassigned() {
        return Err(Error::Numeric("no single-class pixels to label transitions from".into()));
    }
    Ok((out, warnings))
}

/// Alternative step 4: masked pixels take the class with the nearest mean.
pub fn label_transitions_by_intensity(
    partial: &LabelMap,
    mask: &TransitionMask,
    img: &GrayImage,
    mixture: &GaussianMixture,
) -> Result<LabelMap> {
    check_dims(partial.dims(), mask.dims())?;
    check_dims(partial.dims(), img.dims())?;
    let mut out = partial.clone();
    for (i, &v) in img.data().iter().enumerate() {
        if mask.flags[i] {
            let mut best = 0;
            for k in 1..mixture.len() {
                if (v - mixture.means[k]).abs() < (v - mixture.means[best]).abs() {
                    best = k;
                }
            }
            out.labels_mut()[i] = best as u8;
        }
    }
    Ok(out)
}

fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Runs all four steps.
pub fn run(img: &GrayImage, cfg: &PipelineConfig) -> Result<(LabelMap, RunReport)> {
    run_with_calibration(img, cfg, None).map(|s| (s.labels, s.report))
}

/// Everything a run produces.
pub struct Segmentation {
    pub labels: LabelMap,
    pub mask: TransitionMask,
    pub report: RunReport,
}

/// [`run`] with an optional precomputed deconvolution calibration.
pub fn run_with_calibration(
    img: &GrayImage,
    cfg: &PipelineConfig,
    calibration: Option<&DeconvCalibration>,
) -> Result<Segmentation> {
    cfg.validate()?;
    let smoothed = smooth(img, &cfg.smoother).map_err(Error::at(Stage::Smoothing))?;
    segment_smoothed_with(&smoothed, cfg, calibration)
}

/// Steps 2 to 4 on an already smoothed image. `cfg.smoother` is ignored.
pub fn segment_smoothed(smoothed: &Smoothed, cfg: &PipelineConfig) -> Result<(LabelMap, RunReport)> {
    segment_smoothed_with(smoothed, cfg, None).map(|s| (s.labels, s.report))
}

pub fn segment_smoothed_with(
    smoothed: &Smoothed,
    cfg: &PipelineConfig,
    calibration: Option<&DeconvCalibration>,
) -> Result<Segmentation> {
    cfg.validate()?;
    let img = &smoothed.image;
    let mut timings = Timings {
        smoothing: smoothed.seconds,
        ..Timings::default()
    };

    let t = Instant::now();
    let (mask, ngmm) =
        identify_transitions_with(img, smoothed.noise_sigma, cfg, calibration).map_err(Error::at(Stage::Transition))?;
    timings.transition = t.elapsed().as_secs_f64();
    let mut warnings: Vec<String> = ngmm.iter().flat_map(|f| f.warnings.clone()).collect();
    if mask.fraction() > 0.5 {
        warnings.push(format!(
            "{:.0}% of pixels flagged as transitions; the threshold is probably too low",
            100.0 * mask.fraction()
        ));
    }

    let t = Instant::now();
    let (partial, gmm) =
        segment_single_class(img, &mask, cfg.classes, cfg.seed).map_err(Error::at(Stage::SingleClass))?;
    timings.single_class = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let labels = match cfg.labeling {
        Labeling::Spatial => {
            let (labels, w) = label_transitions(&partial, &mask, cfg.classes)
                .map_err(Error::at(Stage::TransitionLabeling))?;
            warnings.extend(w);
            labels
        }
        Labeling::Intensity => label_transitions_by_intensity(&partial, &mask, img, &gmm.model)
            .map_err(Error::at(Stage::TransitionLabeling))?,
    };
    timings.labeling = t.elapsed().as_secs_f64();
    timings.total = timings.smoothing + timings.transition + timings.single_class + timings.labeling;

    let class_pixels: Vec<usize> = (0..cfg.classes).map(|k| labels.count(k as u8)).collect();
    let total = labels.labels().len() as f64;
    let report = RunReport {
        smoother: smoothed.smoother.clone(),
        method: cfg.method,
        noise_sigma: smoothed.noise_sigma,
        transition_mixture: ngmm,
        transition_pixels: mask.count(),
        single_class_iterations: gmm.iterations,
        single_class_mixture: gmm.model,
        area_fractions: class_pixels.iter().map(|&c| c as f64 / total).collect(),
        class_pixels,
        warnings,
        timings,
    };
    Ok(Segmentation { labels, mask, report })
}
