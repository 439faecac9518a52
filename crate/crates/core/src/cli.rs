//! Command-line front end: `synth`, `segment`, `sweep`, `hist`, `calibrate`.
//!
//! Every command reads an optional `key = value` config file; flags given on
//! the command line override it. All inputs are read and all settings are
//! validated before the output directory is touched, and every output
//! directory gets a `manifest.json` listing what was written.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 I/O or malformed input,
//! 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::KvConfig;
use crate::deconv::{calibrate, deconvolve_with, DeconvCalibration};
use crate::error::{Error, Result};
use crate::eval::{sweep, SweepSpec};
use crate::filters::{morph_gradient, QuadraturePair};
use crate::image::GrayImage;
use crate::io::{is_raster_path, read_raster, write_label_overlay, write_labels, write_mask, write_pgm, BitDepth};
use crate::mixture::{EStep, EmSettings};
use crate::phantom::{generate_phantom, PhantomSpec, NOMINAL_BLUR, NOMINAL_NOISE};
use crate::pipeline::{run_with_calibration, smooth, Labeling, Method, PipelineConfig, Smoother};
use crate::smoothing::{estimate_noise_sigma, AdfParams, NlmParams};
use crate::transition::{threshold_histogram, DEFAULT_DIFFERENCE_TAU, DEFAULT_GRADIENT_RADIUS, DEFAULT_GRADIENT_TAU};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "phaseseg", version, about = "Multiphase segmentation of grayscale scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a degraded two-grain phantom and its ground truth.
    Synth(SynthArgs),
    /// Segment a raster, or every raster in a directory.
    Segment(SegmentArgs),
    /// Score all methods over a blur x noise grid of phantoms.
    Sweep(SweepArgs),
    /// Histograms of |a - b| and the morphological gradient for picking thresholds.
    Hist(HistArgs),
    /// Tabulate deconvolution weights and noise covariance.
    Calibrate(CalibrateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Phantom config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Gaussian blur sigma, pixels [default: 2].
    #[arg(long)]
    blur: Option<f64>,
    /// Additive noise sigma, intensity units [default: 14].
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    /// Input raster (.pgm/.png) or a directory of them.
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Pipeline config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Calibration file written by `calibrate`.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// classification | difference | gradient
    #[arg(long)]
    method: Option<String>,
    /// Threshold of the difference or gradient method.
    #[arg(long)]
    tau: Option<f64>,
    /// Structuring-element radius of the gradient method.
    #[arg(long)]
    radius: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(short, long)]
    out: PathBuf,
    /// Sweep config file; phantom keys take a `phantom.` prefix.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Comma-separated blur sigmas.
    #[arg(long)]
    blurs: Option<String>,
    /// Comma-separated noise sigmas.
    #[arg(long)]
    noises: Option<String>,
    /// Comma-separated subset of gradient,difference,classification.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    difference_tau: Option<f64>,
    #[arg(long)]
    gradient_tau: Option<f64>,
    #[arg(long)]
    gradient_radius: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
struct HistArgs {
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Structuring-element radius for the gradient histogram.
    #[arg(long)]
    radius: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Noise sigma for the covariance; estimated from --image when absent.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Raster whose noise level sets the covariance.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    kernel_sigma: Option<f64>,
    #[arg(long)]
    calibration_sigma: Option<f64>,
}

/// Settings shared by every command that runs the pipeline.
#[derive(Args, Debug)]
struct PipelineFlags {
    /// nlm | adf | none
    #[arg(long)]
    smoother: Option<String>,
    #[arg(long)]
    nlm_h: Option<f64>,
    #[arg(long)]
    nlm_patch_radius: Option<usize>,
    #[arg(long)]
    nlm_search_radius: Option<usize>,
    #[arg(long)]
    nlm_patch_sigma: Option<f64>,
    #[arg(long)]
    adf_iterations: Option<usize>,
    #[arg(long)]
    adf_dt: Option<f64>,
    #[arg(long)]
    adf_kappa: Option<f64>,
    #[arg(long)]
    adf_sigma: Option<f64>,
    /// Number of phases.
    #[arg(long)]
    classes: Option<usize>,
    /// Gibbs sweeps per E-step of the non-Gaussian mixture.
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// gibbs | exact
    #[arg(long)]
    estep: Option<String>,
    #[arg(long)]
    kernel_sigma: Option<f64>,
    #[arg(long)]
    calibration_sigma: Option<f64>,
    #[arg(long)]
    energy_threshold: Option<f64>,
    /// spatial | intensity
    #[arg(long)]
    labeling: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl PipelineFlags {
    fn apply(&self, kv: &mut KvConfig) {
        set(kv, "smoother", &self.smoother);
        set(kv, "nlm.h", &self.nlm_h);
        set(kv, "nlm.patch_radius", &self.nlm_patch_radius);
        set(kv, "nlm.search_radius", &self.nlm_search_radius);
        set(kv, "nlm.patch_sigma", &self.nlm_patch_sigma);
        set(kv, "adf.iterations", &self.adf_iterations);
        set(kv, "adf.dt", &self.adf_dt);
        set(kv, "adf.kappa", &self.adf_kappa);
        set(kv, "adf.sigma", &self.adf_sigma);
        set(kv, "classes", &self.classes);
        set(kv, "em.sweeps", &self.sweeps);
        set(kv, "em.max_iterations", &self.max_iterations);
        set(kv, "em.tolerance", &self.tolerance);
        set(kv, "em.estep", &self.estep);
        set(kv, "kernel_sigma", &self.kernel_sigma);
        set(kv, "calibration_sigma", &self.calibration_sigma);
        set(kv, "energy_threshold", &self.energy_threshold);
        set(kv, "labeling", &self.labeling);
        set(kv, "seed", &self.seed);
    }
}

fn set<T: std::fmt::Display>(kv: &mut KvConfig, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.set(key, v);
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<KvConfig> {
    match path {
        None => Ok(KvConfig::default()),
        Some(p) => KvConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
            other => other,
        }),
    }
}

/// Consumes the pipeline keys of `kv`, except `method`, `tau` and `radius`.
pub fn pipeline_from_kv(kv: &mut KvConfig) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();

    let smoother = kv.take::<String>("smoother")?.unwrap_or_else(|| "nlm".into());
    let nlm_keys = !kv.keys_with_prefix("nlm.").is_empty();
    let adf_keys = !kv.keys_with_prefix("adf.").is_empty();
    cfg.smoother = match smoother.as_str() {
        "nlm" => {
            let mut p = NlmParams::default();
            let h = kv.take::<f64>("nlm.h")?;
            if let Some(v) = kv.take("nlm.patch_radius")? {
                p.patch_radius = v;
            }
            if let Some(v) = kv.take("nlm.search_radius")? {
                p.search_radius = v;
            }
            if let Some(v) = kv.take("nlm.patch_sigma")? {
                p.patch_sigma = v;
            }
            match h {
                Some(h) => Smoother::Nlm {
                    params: Some(NlmParams { h, ..p }),
                },
                // h follows the estimated noise; other fields must stay default
                None if p == NlmParams::default() => Smoother::Nlm { params: None },
                None => {
                    return Err(Error::Config("`nlm.h` is required when other nlm settings are given".into()));
                }
            }
        }
        "adf" => {
            let mut p = AdfParams::default();
            if let Some(v) = kv.take("adf.iterations")? {
                p.iterations = v;
            }
            if let Some(v) = kv.take("adf.dt")? {
                p.dt = v;
            }
            if let Some(v) = kv.take("adf.kappa")? {
                p.kappa = v;
            }
            if let Some(v) = kv.take("adf.sigma")? {
                p.sigma = v;
            }
            Smoother::Adf { params: p }
        }
        "none" => Smoother::None,
        other => return Err(Error::Config(format!("unknown smoother `{other}`"))),
    };
    if (nlm_keys && smoother != "nlm") || (adf_keys && smoother != "adf") {
        return Err(Error::Config(format!("settings for another smoother given with smoother = {smoother}")));
    }

    if let Some(v) = kv.take("classes")? {
        cfg.classes = v;
    }
    let mut em = EmSettings::default();
    if let Some(v) = kv.take("em.sweeps")? {
        em.sweeps = v;
    }
    if let Some(v) = kv.take("em.max_iterations")? {
        em.max_iterations = v;
    }
    if let Some(v) = kv.take("em.tolerance")? {
        em.tolerance = v;
    }
    if let Some(v) = kv.take::<String>("em.estep")? {
        em.estep = match v.as_str() {
            "gibbs" => EStep::Gibbs,
            "exact" => EStep::Exact,
            other => return Err(Error::Config(format!("unknown E-step `{other}`"))),
        };
    }
    cfg.em = em;
    if let Some(v) = kv.take("kernel_sigma")? {
        cfg.kernel_sigma = v;
    }
    if let Some(v) = kv.take("calibration_sigma")? {
        cfg.calibration_sigma = v;
    }
    if let Some(v) = kv.take("energy_threshold")? {
        cfg.energy_threshold = v;
    }
    if let Some(v) = kv.take::<String>("labeling")? {
        cfg.labeling = match v.as_str() {
            "spatial" => Labeling::Spatial,
            "intensity" => Labeling::Intensity,
            other => return Err(Error::Config(format!("unknown labeling `{other}`"))),
        };
    }
    if let Some(v) = kv.take("seed")? {
        cfg.seed = v;
    }
    Ok(cfg)
}

/// Consumes `method`, `tau` and `radius`.
pub fn method_from_kv(kv: &mut KvConfig) -> Result<Method> {
    let name = kv.take::<String>("method")?.unwrap_or_else(|| "classification".into());
    let tau = kv.take::<f64>("tau")?;
    let radius = kv.take::<usize>("radius")?;
    match name.as_str() {
        "classification" if tau.is_some() || radius.is_some() => {
            Err(Error::Config("the classification method takes no `tau` or `radius`".into()))
        }
        "classification" => Ok(Method::Classification),
        "difference" if radius.is_some() => Err(Error::Config("the difference method takes no `radius`".into())),
        "difference" => Ok(Method::Difference {
            tau: tau.unwrap_or(DEFAULT_DIFFERENCE_TAU),
        }),
        "gradient" => Ok(Method::Gradient {
            tau: tau.unwrap_or(DEFAULT_GRADIENT_TAU),
            radius: radius.unwrap_or(DEFAULT_GRADIENT_RADIUS),
        }),
        other => Err(Error::Config(format!("unknown method `{other}`"))),
    }
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) | Error::InvalidParameter(_) | Error::EmptyClass(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Format(_) => EXIT_IO,
        Error::Numeric(_) | Error::DimensionMismatch { .. } => EXIT_NUMERIC,
        Error::Stage { .. } => unreachable!("root is never a stage wrapper"),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (name, result) = match &cli.command {
        Command::Synth(a) => ("synth", synth_cmd(a)),
        Command::Segment(a) => ("segment", segment_cmd(a)),
        Command::Sweep(a) => ("sweep", sweep_cmd(a)),
        Command::Hist(a) => ("hist", hist_cmd(a)),
        Command::Calibrate(a) => ("calibrate", calibrate_cmd(a)),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("phaseseg {name}: {e}");
            exit_code(&e)
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    /// Effective settings after flag overrides.
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

/// Collects written files and finishes with `manifest.json`.
struct OutDir {
    root: PathBuf,
    outputs: Vec<String>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.root.join(name)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(p, text)?;
        Ok(())
    }

    fn finish(mut self, command: &str, config: serde_json::Value, inputs: &[PathBuf]) -> Result<()> {
        self.outputs.sort();
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: self.outputs.clone(),
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("settings serialize")
}

fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let mut kv = load_config(&a.config)?;
    set(&mut kv, "width", &a.width);
    set(&mut kv, "height", &a.height);
    set(&mut kv, "blur", &a.blur);
    set(&mut kv, "noise", &a.noise);
    set(&mut kv, "seed", &a.seed);
    if !kv.contains("blur") {
        kv.set("blur", NOMINAL_BLUR);
    }
    if !kv.contains("noise") {
        kv.set("noise", NOMINAL_NOISE);
    }
    let spec = PhantomSpec::from_kv(kv)?;
    let (img, truth) = generate_phantom(&spec)?;

    let mut out = OutDir::create(&a.out)?;
    write_pgm(&img, &out.path("image.pgm"), BitDepth::Eight)?;
    write_labels(&truth, &out.path("truth.pgm"))?;
    write_label_overlay(&truth, &out.path("truth_overlay.png"))?;
    out.write("phantom.cfg", &spec.to_kv().to_text())?;
    out.finish("synth", to_value(&spec), &[])
}

fn read_calibration(path: &Option<PathBuf>) -> Result<Option<DeconvCalibration>> {
    match path {
        None => Ok(None),
        Some(p) => Ok(Some(DeconvCalibration::from_json(&fs::read_to_string(p)?)?)),
    }
}

/// Raster files of a directory in name order, or the single given file.
fn collect_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.is_file() && is_raster_path(p));
        files.sort();
        if files.is_empty() {
            return Err(Error::Format(format!("{} contains no .pgm or .png files", input.display())));
        }
        Ok(files)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

#[derive(Serialize)]
struct SegmentSettings {
    pipeline: PipelineConfig,
    calibration: Option<String>,
}

fn segment_cmd(a: &SegmentArgs) -> Result<()> {
    let mut kv = load_config(&a.config)?;
    set(&mut kv, "method", &a.method);
    set(&mut kv, "tau", &a.tau);
    set(&mut kv, "radius", &a.radius);
    a.pipeline.apply(&mut kv);
    let method = method_from_kv(&mut kv)?;
    let cfg = pipeline_from_kv(&mut kv)?.with_method(method);
    kv.finish()?;
    cfg.validate()?;
    let cal = read_calibration(&a.calibration)?;

    let files = collect_inputs(&a.input)?;
    let images: Vec<GrayImage> = files.iter().map(|p| read_raster(p)).collect::<Result<_>>()?;
    let stems: Vec<String> = files.iter().map(|p| stem(p)).collect();
    for (i, s) in stems.iter().enumerate() {
        if stems[..i].contains(s) {
            return Err(Error::Config(format!("two inputs share the name `{s}`")));
        }
    }

    let results: Vec<_> = images
        .par_iter()
        .map(|img| run_with_calibration(img, &cfg, cal.as_ref()))
        .collect::<Result<_>>()?;

    let mut out = OutDir::create(&a.out)?;
    for (s, seg) in stems.iter().zip(&results) {
        write_labels(&seg.labels, &out.path(&format!("{s}_labels.pgm")))?;
        write_label_overlay(&seg.labels, &out.path(&format!("{s}_overlay.png")))?;
        let (w, h) = seg.mask.dims();
        write_mask(w, h, &seg.mask.flags, &out.path(&format!("{s}_transitions.pgm")))?;
        out.write(&format!("{s}_report.json"), &seg.report.to_json())?;
        let t = &seg.report.timings;
        eprintln!(
            "{s}: {} transition pixels, area fractions {:?}, {:.2} s",
            seg.report.transition_pixels, seg.report.area_fractions, t.total
        );
    }
    let settings = SegmentSettings {
        pipeline: cfg,
        calibration: a.calibration.as_ref().map(|p| p.display().to_string()),
    };
    out.finish("segment", to_value(&settings), &files)
}

fn parse_methods(raw: &str, difference_tau: f64, gradient_tau: f64, gradient_radius: usize) -> Result<Vec<Method>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s {
            "classification" => Ok(Method::Classification),
            "difference" => Ok(Method::Difference { tau: difference_tau }),
            "gradient" => Ok(Method::Gradient {
                tau: gradient_tau,
                radius: gradient_radius,
            }),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        })
        .collect()
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let mut kv = load_config(&a.config)?;
    set(&mut kv, "blurs", &a.blurs);
    set(&mut kv, "noises", &a.noises);
    set(&mut kv, "methods", &a.methods);
    set(&mut kv, "repetitions", &a.repetitions);
    set(&mut kv, "difference.tau", &a.difference_tau);
    set(&mut kv, "gradient.tau", &a.gradient_tau);
    set(&mut kv, "gradient.radius", &a.gradient_radius);
    a.pipeline.apply(&mut kv);

    let mut phantom = KvConfig::default();
    for key in kv.keys_with_prefix("phantom.") {
        let v: String = kv.take(&key)?.expect("key listed");
        phantom.set(&key["phantom.".len()..], v);
    }
    let base = PhantomSpec::from_kv(phantom)?;

    let mut spec = SweepSpec {
        base,
        ..SweepSpec::default()
    };
    if let Some(v) = kv.take_list("blurs")? {
        spec.blurs = v;
    }
    if let Some(v) = kv.take_list("noises")? {
        spec.noises = v;
    }
    if let Some(v) = kv.take("repetitions")? {
        spec.repetitions = v;
    }
    let dt = kv.take("difference.tau")?.unwrap_or(DEFAULT_DIFFERENCE_TAU);
    let gt = kv.take("gradient.tau")?.unwrap_or(DEFAULT_GRADIENT_TAU);
    let gr = kv.take("gradient.radius")?.unwrap_or(DEFAULT_GRADIENT_RADIUS);
    let methods = kv
        .take::<String>("methods")?
        .unwrap_or_else(|| "gradient,difference,classification".into());
    spec.methods = parse_methods(&methods, dt, gt, gr)?;
    spec.pipeline = pipeline_from_kv(&mut kv)?;
    spec.seed = spec.pipeline.seed;
    kv.finish()?;

    let report = sweep(&spec)?;
    let mut out = OutDir::create(&a.out)?;
    out.write("sweep.csv", &report.to_csv())?;
    out.write("summary.json", &report.summary_json())?;
    out.write("timings.csv", &report.timings_csv())?;
    for c in &report.cells {
        eprintln!(
            "blur {:>4} noise {:>5} {:<14} ME {:.4} +- {:.4}  {:.2} s",
            c.blur, c.noise, c.method, c.me_mean, c.me_std, c.seconds_mean
        );
    }
    out.finish("sweep", to_value(&spec), &[])
}

#[derive(Serialize)]
struct Thresholds {
    difference: Option<f64>,
    gradient: Option<f64>,
    reliable_pixels: usize,
}

fn hist_cmd(a: &HistArgs) -> Result<()> {
    let mut kv = load_config(&a.config)?;
    set(&mut kv, "radius", &a.radius);
    a.pipeline.apply(&mut kv);
    let radius = kv.take("radius")?.unwrap_or(DEFAULT_GRADIENT_RADIUS);
    let cfg = pipeline_from_kv(&mut kv)?;
    kv.finish()?;
    cfg.validate()?;
    let cal = read_calibration(&a.calibration)?;
    let img = read_raster(&a.input)?;

    let smoothed = smooth(&img, &cfg.smoother)?;
    let (q, cal) = match cal {
        Some(c) => (QuadraturePair::new(c.kernel_sigma), c),
        None => {
            let q = QuadraturePair::new(cfg.kernel_sigma);
            let c = calibrate(cfg.calibration_sigma, &q, smoothed.noise_sigma)?;
            (q, c)
        }
    };
    let field = deconvolve_with(&smoothed.image, &q, &cal, cfg.energy_threshold)?;
    let diffs: Vec<f64> = (0..field.a.len())
        .filter(|&i| field.reliable[i])
        .map(|i| (field.a[i] - field.b[i]).abs())
        .collect();
    let grad = morph_gradient(&smoothed.image, radius)?;
    let hd = threshold_histogram(&diffs);
    let hg = threshold_histogram(grad.data());
    let th = Thresholds {
        difference: hd.suggested_threshold(),
        gradient: hg.suggested_threshold(),
        reliable_pixels: diffs.len(),
    };

    let mut out = OutDir::create(&a.out)?;
    out.write("hist_difference.csv", &hd.to_csv())?;
    out.write("hist_gradient.csv", &hg.to_csv())?;
    out.write("thresholds.json", &serde_json::to_string_pretty(&th).expect("serializes"))?;
    eprintln!("suggested tau: difference {:?}, gradient {:?}", th.difference, th.gradient);
    out.finish("hist", to_value(&cfg), std::slice::from_ref(&a.input))
}

fn calibrate_cmd(a: &CalibrateArgs) -> Result<()> {
    let mut kv = load_config(&a.config)?;
    set(&mut kv, "noise_sigma", &a.noise_sigma);
    set(&mut kv, "kernel_sigma", &a.kernel_sigma);
    set(&mut kv, "calibration_sigma", &a.calibration_sigma);
    let defaults = PipelineConfig::default();
    let kernel_sigma = kv.take("kernel_sigma")?.unwrap_or(defaults.kernel_sigma);
    let calibration_sigma = kv.take("calibration_sigma")?.unwrap_or(defaults.calibration_sigma);
    let noise: Option<f64> = kv.take("noise_sigma")?;
    kv.finish()?;
    let noise = match (noise, &a.image) {
        (Some(_), Some(_)) => return Err(Error::Config("give either a noise sigma or an image, not both".into())),
        (Some(n), None) => n,
        (None, Some(p)) => estimate_noise_sigma(&read_raster(p)?),
        (None, None) => return Err(Error::Config("calibrate needs --noise-sigma or --image".into())),
    };
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {noise}")));
    }
    if !(kernel_sigma > 0.0 && kernel_sigma.is_finite()) {
        return Err(Error::Config(format!("kernel sigma must be positive, got {kernel_sigma}")));
    }
    let cal = calibrate(calibration_sigma, &QuadraturePair::new(kernel_sigma), noise)?;

    let mut out = OutDir::create(&a.out)?;
    out.write("calibration.json", &cal.to_json())?;
    let config = serde_json::json!({
        "kernel_sigma": kernel_sigma,
        "calibration_sigma": calibration_sigma,
        "noise_sigma": noise,
    });
    let inputs: Vec<PathBuf> = a.image.iter().cloned().collect();
    out.finish("calibrate", config, &inputs)
}
