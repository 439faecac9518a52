//! Segmentation metrics and the blur/noise benchmark sweep.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::squared_edt;
use crate::error::{Error, Result};
use crate::image::LabelMap;
use crate::phantom::{generate_phantom, PhantomSpec};
use crate::pipeline::{segment_smoothed, smooth, Method, PipelineConfig};

/// Fraction of pixels whose labels differ.
pub fn misclassification_error(truth: &LabelMap, pred: &LabelMap) -> Result<f64> {
    if truth.dims() != pred.dims() {
        return Err(Error::DimensionMismatch {
            expected: truth.dims(),
            actual: pred.dims(),
        });
    }
    let wrong = truth.labels().iter().zip(pred.labels()).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / truth.labels().len() as f64)
}

/// Pixel share of each class `0..n`.
pub fn area_fractions(m: &LabelMap, n: usize) -> Vec<f64> {
    let total = m.labels().len() as f64;
    let mut counts = vec![0usize; n];
    for &l in m.labels() {
        if (l as usize) < n {
            counts[l as usize] += 1;
        }
    }
    counts.iter().map(|&c| c as f64 / total).collect()
}

/// Euclidean distance from each pixel to the nearest pixel of another class
/// (`1` next to a boundary, infinite in a single-class image).
pub fn distance_to_boundary(truth: &LabelMap) -> Vec<f64> {
    let (w, h) = truth.dims();
    let labels = truth.labels();
    let mut present: Vec<u8> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    let mut out = vec![f64::INFINITY; w * h];
    for &c in &present {
        let other: Vec<bool> = labels.iter().map(|&l| l != c).collect();
        let d = squared_edt(w, h, &other);
        for i in 0..w * h {
            if labels[i] == c {
                out[i] = d[i].sqrt();
            }
        }
    }
    out
}

/// Share of `band` pixels that are flagged.
pub fn recall(flags: &[bool], band: &[bool]) -> f64 {
    let total = band.iter().filter(|b| **b).count();
    let hit = flags.iter().zip(band).filter(|(f, b)| **f && **b).count();
    hit as f64 / total.max(1) as f64
}

/// One `(blur, noise, method, repetition)` result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub blur: f64,
    pub noise: f64,
    pub method: String,
    pub repetition: usize,
    pub seed: u64,
    pub me: Option<f64>,
    /// Predicted minus true area fraction, per class.
    pub area_diff: Vec<f64>,
    /// Smoothing plus the method's own stages. Not serialized.
    #[serde(skip)]
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub blur: f64,
    pub noise: f64,
    pub method: String,
    pub runs: usize,
    pub failures: usize,
    pub me_mean: f64,
    pub me_std: f64,
    pub area_diff_mean: Vec<f64>,
    pub area_diff_std: Vec<f64>,
    #[serde(skip)]
    pub seconds_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<CellSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: PhantomSpec,
    pub blurs: Vec<f64>,
    pub noises: Vec<f64>,
    pub methods: Vec<Method>,
    pub repetitions: usize,
    pub seed: u64,
    /// Pipeline settings shared by every run; method and seed are overridden.
    pub pipeline: PipelineConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            base: PhantomSpec::default(),
            blurs: vec![1.0, 2.0, 3.0],
            noises: vec![10.0, 14.0, 18.0],
            methods: vec![Method::gradient(), Method::difference(), Method::Classification],
            repetitions: 5,
            seed: 0,
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Seed of repetition `rep`. Independent of blur and noise, so all cells of
/// one repetition share the same noise field up to scale.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (rep as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Segments a degraded phantom for every blur, noise, method and repetition.
///
/// Smoothing is shared by the methods of one `(blur, noise, repetition)`
/// job. A failing run is recorded in its row and the sweep continues.
pub fn sweep(spec: &SweepSpec) -> Result<SweepReport> {
    if spec.blurs.is_empty() || spec.noises.is_empty() || spec.methods.is_empty() || spec.repetitions == 0 {
        return Err(Error::InvalidParameter("sweep needs non-empty blur, noise and method lists and >= 1 repetition".into()));
    }
    spec.pipeline.validate()?;
    for &m in &spec.methods {
        spec.pipeline.clone().with_method(m).validate()?;
    }
    let mut jobs = Vec::new();
    for &blur in &spec.blurs {
        for &noise in &spec.noises {
            for rep in 0..spec.repetitions {
                jobs.push((blur, noise, rep));
            }
        }
    }
    let per_job: Vec<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|&(blur, noise, rep)| run_job(spec, blur, noise, rep))
        .collect();
    // order rows by blur, noise, method, repetition
    let mut rows = Vec::with_capacity(per_job.len() * spec.methods.len());
    let reps = spec.repetitions;
    for cell in per_job.chunks(reps) {
        for m in 0..spec.methods.len() {
            rows.extend(cell.iter().map(|job| job[m].clone()));
        }
    }
    let cells = rows.chunks(reps).map(summarize).collect();
    Ok(SweepReport { rows, cells })
}

fn run_job(spec: &SweepSpec, blur: f64, noise: f64, rep: usize) -> Vec<SweepRow> {
    let seed = repetition_seed(spec.seed, rep);
    let row = |method: &Method| SweepRow {
        blur,
        noise,
        method: method.name().to_string(),
        repetition: rep,
        seed,
        me: None,
        area_diff: Vec::new(),
        seconds: 0.0,
        error: None,
    };
    let fail = |e: Error| -> Vec<SweepRow> {
        spec.methods
            .iter()
            .map(|m| SweepRow {
                error: Some(e.to_string()),
                ..row(m)
            })
            .collect()
    };
    let (img, truth) = match generate_phantom(&spec.base.with_degradation(blur, noise, seed)) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let smoothed = match smooth(&img, &spec.pipeline.smoother) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let n = spec.pipeline.classes;
    let truth_frac = area_fractions(&truth, n);
    spec.methods
        .iter()
        .map(|m| {
            let cfg = PipelineConfig {
                method: *m,
                seed,
                ..spec.pipeline.clone()
            };
            let start = Instant::now();
            let result = segment_smoothed(&smoothed, &cfg);
            let seconds = smoothed.seconds + start.elapsed().as_secs_f64();
            match result.and_then(|(labels, _)| Ok((misclassification_error(&truth, &labels)?, labels))) {
                Ok((me, labels)) => SweepRow {
                    me: Some(me),
                    area_diff: area_fractions(&labels, n)
                        .iter()
                        .zip(&truth_frac)
                        .map(|(p, t)| p - t)
                        .collect(),
                    seconds,
                    ..row(m)
                },
                Err(e) => SweepRow {
                    seconds,
                    error: Some(e.to_string()),
                    ..row(m)
                },
            }
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn summarize(rows: &[SweepRow]) -> CellSummary {
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.me.is_some()).collect();
    let me: Vec<f64> = ok.iter().map(|r| r.me.unwrap()).collect();
    let (me_mean, me_std) = mean_std(&me);
    let classes = ok.first().map_or(0, |r| r.area_diff.len());
    let (area_diff_mean, area_diff_std) = (0..classes)
        .map(|k| mean_std(&ok.iter().map(|r| r.area_diff[k]).collect::<Vec<_>>()))
        .unzip();
    let secs: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    CellSummary {
        blur: rows[0].blur,
        noise: rows[0].noise,
        method: rows[0].method.clone(),
        runs: rows.len(),
        failures: rows.len() - ok.len(),
        me_mean,
        me_std,
        area_diff_mean,
        area_diff_std,
        seconds_mean: mean_std(&secs).0,
    }
}

impl SweepReport {
    pub fn cell(&self, blur: f64, noise: f64, method: &str) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.blur == blur && c.noise == noise && c.method == method)
    }

    /// One line per row.
    pub fn to_csv(&self) -> String {
        let classes = self.rows.iter().map(|r| r.area_diff.len()).max().unwrap_or(0);
        let mut s = String::from("blur,noise,method,repetition,seed,me");
        for k in 0..classes {
            write!(s, ",area_diff_{k}").unwrap();
        }
        s.push_str(",error\n");
        for r in &self.rows {
            write!(s, "{},{},{},{},{},", r.blur, r.noise, r.method, r.repetition, r.seed).unwrap();
            if let Some(me) = r.me {
                write!(s, "{me}").unwrap();
            }
            for k in 0..classes {
                s.push(',');
                if let Some(d) = r.area_diff.get(k) {
                    write!(s, "{d}").unwrap();
                }
            }
            let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
            writeln!(s, ",\"{err}\"").unwrap();
        }
        s
    }

    /// Wall-clock seconds per row, kept apart from the reproducible CSV.
    pub fn timings_csv(&self) -> String {
        let mut s = String::from("blur,noise,method,repetition,seconds\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.blur, r.noise, r.method, r.repetition, r.seconds).unwrap();
        }
        s
    }

    /// Per-cell mean and standard deviation.
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.cells).expect("summary serializes")
    }

    /// Rows and cells without wall-clock fields, for reproducibility checks.
    pub fn without_timings(&self) -> SweepReport {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|row| row.seconds = 0.0);
        r.cells.iter_mut().for_each(|c| c.seconds_mean = 0.0);
        r
    }
}
