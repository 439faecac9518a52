//! Intensity mixture models.
//!
//! A [`GaussianMixture`] models pure phases. A [`NonGaussianMixture`] adds one
//! transition component per pair of phases: the intensity of a pixel that
//! straddles phases `i` and `j` is `u = y mu_i + (1 - y) mu_j + eps` with
//! `y ~ U[0, 1]` and `eps ~ N(0, sigma_ij^2)`, whose density is
//!
//! ```text
//! psi_ij(u) = [Phi((u - mu_i) / sigma_ij) - Phi((u - mu_j) / sigma_ij)] / (mu_j - mu_i)
//! ```
//!
//! Both are fitted by EM. The E-step of [`fit_ngmm`] is either exact or a
//! Monte-Carlo estimate from repeated categorical draws of the latent class.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Lower bound on every variance.
pub const VARIANCE_FLOOR: f64 = 1e-4;
/// Components whose weight falls below this stop being updated.
pub const FREEZE_WEIGHT: f64 = 1e-6;
/// Samples above this count are fitted on a seeded uniform subsample.
pub const MAX_FIT_SAMPLES: usize = 200_000;
const KMEANS_MAX_ITERS: usize = 100;
const CHUNK: usize = 4096;

/// Standard normal CDF.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `Phi(hi) - Phi(lo)` for `hi >= lo`, without cancellation in either tail.
#[inline]
fn cdf_diff(hi: f64, lo: f64) -> f64 {
    if lo > 0.0 {
        0.5 * (erfc(lo / SQRT_2) - erfc(hi / SQRT_2))
    } else {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    }
}

#[inline]
pub fn normal_pdf(u: f64, mean: f64, variance: f64) -> f64 {
    let d = u - mean;
    (-0.5 * d * d / variance).exp() / (2.0 * PI * variance).sqrt()
}

#[inline]
fn ln_normal_pdf(u: f64, mean: f64, variance: f64) -> f64 {
    let d = u - mean;
    -0.5 * d * d / variance - 0.5 * (2.0 * PI * variance).ln()
}

/// Density of a uniform mix of `mu_i` and `mu_j` blurred by `N(0, sigma^2)`.
/// Symmetric in `(mu_i, mu_j)`.
pub fn transition_density(u: f64, mu_i: f64, mu_j: f64, sigma: f64) -> Result<f64> {
    if mu_i == mu_j {
        return Err(Error::InvalidParameter(format!(
            "transition component needs distinct means, got {mu_i} twice"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("transition sigma must be positive, got {sigma}")));
    }
    Ok(psi(u, mu_i, mu_j, sigma))
}

#[inline]
fn psi(u: f64, mu_i: f64, mu_j: f64, sigma: f64) -> f64 {
    let (lo, hi) = if mu_i < mu_j { (mu_i, mu_j) } else { (mu_j, mu_i) };
    cdf_diff((u - lo) / sigma, (u - hi) / sigma) / (hi - lo)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn density(&self, u: f64) -> f64 {
        (0..self.len())
            .map(|k| self.weights[k] * normal_pdf(u, self.means[k], self.variances[k]))
            .sum()
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&u| self.density(u).max(f64::MIN_POSITIVE).ln()).sum()
    }

    /// Index of the component maximizing `w_k phi_k(u)`; ties go to the lower index.
    pub fn classify(&self, u: f64) -> usize {
        argmax_gaussian(&self.means, &self.variances, &self.weights, u)
    }

    /// Reorders components by ascending mean.
    pub fn sort_by_mean(&mut self) {
        let order = ascending_order(&self.means);
        self.means = order.iter().map(|&k| self.means[k]).collect();
        self.variances = order.iter().map(|&k| self.variances[k]).collect();
        self.weights = order.iter().map(|&k| self.weights[k]).collect();
    }
}

fn ascending_order(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    order
}

fn argmax_gaussian(means: &[f64], variances: &[f64], weights: &[f64], u: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for k in 0..means.len() {
        let score = if weights[k] > 0.0 {
            weights[k].ln() + ln_normal_pdf(u, means[k], variances[k])
        } else {
            f64::NEG_INFINITY
        };
        if score > best_score {
            best = k;
            best_score = score;
        }
    }
    best
}

/// A transition component between Gaussian components `i < j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub i: usize,
    pub j: usize,
    pub variance: f64,
    pub weight: f64,
}

/// Gaussian components plus one transition component per pair.
///
/// Weights of `base` and of the transitions together sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonGaussianMixture {
    pub base: GaussianMixture,
    pub transitions: Vec<Transition>,
}

impl NonGaussianMixture {
    /// Mixture with every transition weight zero.
    pub fn from_gaussian(base: GaussianMixture, transition_variance: f64) -> Self {
        let n = base.len();
        let mut transitions = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                transitions.push(Transition {
                    i,
                    j,
                    variance: transition_variance,
                    weight: 0.0,
                });
            }
        }
        Self { base, transitions }
    }

    pub fn classes(&self) -> usize {
        self.base.len()
    }

    /// Total number of components, Gaussian and transition.
    pub fn components(&self) -> usize {
        self.base.len() + self.transitions.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.base.weights.iter().sum::<f64>() + self.transitions.iter().map(|t| t.weight).sum::<f64>()
    }

    /// Density of component `k`: Gaussians first, then transitions in order.
    #[inline]
    pub fn component_density(&self, k: usize, u: f64) -> f64 {
        let n = self.base.len();
        if k < n {
            normal_pdf(u, self.base.means[k], self.base.variances[k])
        } else {
            let t = &self.transitions[k - n];
            psi(u, self.base.means[t.i], self.base.means[t.j], t.variance.sqrt())
        }
    }

    #[inline]
    pub fn component_weight(&self, k: usize) -> f64 {
        let n = self.base.len();
        if k < n {
            self.base.weights[k]
        } else {
            self.transitions[k - n].weight
        }
    }

    pub fn density(&self, u: f64) -> f64 {
        (0..self.components())
            .map(|k| self.component_weight(k) * self.component_density(k, u))
            .sum()
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        let per_chunk: Vec<f64> = samples
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(|&u| self.density(u).max(f64::MIN_POSITIVE).ln()).sum())
            .collect();
        per_chunk.iter().sum()
    }

    /// Exact posterior probabilities of every component at `u`.
    pub fn responsibilities(&self, u: f64) -> Vec<f64> {
        let mut r: Vec<f64> = (0..self.components())
            .map(|k| self.component_weight(k) * self.component_density(k, u))
            .collect();
        normalize(&mut r);
        r
    }

    fn validate(&self) -> Result<()> {
        let n = self.base.len();
        if n < 2 || self.transitions.len() != n * (n - 1) / 2 {
            return Err(Error::InvalidParameter("mixture needs >= 2 classes and one transition per pair".into()));
        }
        for t in &self.transitions {
            if t.i >= t.j || t.j >= n || !(t.variance > 0.0) {
                return Err(Error::InvalidParameter(format!("bad transition component {t:?}")));
            }
            if self.base.means[t.i] == self.base.means[t.j] {
                return Err(Error::InvalidParameter("transition component needs distinct means".into()));
            }
        }
        Ok(())
    }
}

/// Class index maximizing `w_k phi_k(u)` over the Gaussian components only.
pub fn classify_gaussian(m: &NonGaussianMixture, u: f64) -> usize {
    m.base.classify(u)
}

fn normalize(r: &mut [f64]) {
    let s: f64 = r.iter().sum();
    if s > 0.0 && s.is_finite() {
        for v in r.iter_mut() {
            *v /= s;
        }
    } else {
        // far outside every component: fall back to uniform
        let n = r.len() as f64;
        r.iter_mut().for_each(|v| *v = 1.0 / n);
    }
}

/// Seeded uniform subsample of at most `max` values, in original order.
pub fn subsample(samples: &[f64], max: usize, seed: u64) -> Vec<f64> {
    if samples.len() <= max {
        return samples.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, samples.len(), max).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| samples[i]).collect()
}

/// One-dimensional K-Means with quantile-seeded centers.
///
/// Inputs larger than [`MAX_FIT_SAMPLES`] are subsampled with `seed`.
pub fn kmeans_init(samples: &[f64], n: usize, seed: u64) -> Result<GaussianMixture> {
    let mut starts = kmeans_all(samples, n, seed)?;
    let best = (0..starts.len())
        .min_by(|&a, &b| starts[a].0.total_cmp(&starts[b].0).then(a.cmp(&b)))
        .expect("at least one seeding");
    Ok(starts.swap_remove(best).1)
}

fn kmeans_all(samples: &[f64], n: usize, seed: u64) -> Result<Vec<(f64, GaussianMixture)>> {
    if n == 0 {
        return Err(Error::InvalidParameter("class count must be >= 1".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample".into()));
    }
    let data = subsample(samples, MAX_FIT_SAMPLES, seed);
    let mut sorted = data.clone();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < n {
        return Err(Error::InvalidParameter(format!(
            "need at least {n} distinct values, found {}",
            distinct.len()
        )));
    }
    Ok(kmeans_starts(&data, &sorted, &distinct, n))
}

/// K-Means from several seedings; returns `(sse, mixture)` per seeding.
///
/// Lloyd's iterations only move centers locally, so a small mode can be
/// missed when quantile seeds all sit in one large mode. Range-spaced and
/// farthest-point seeds cover that case.
fn kmeans_starts(data: &[f64], sorted: &[f64], distinct: &[f64], n: usize) -> Vec<(f64, GaussianMixture)> {
    let len = sorted.len();
    let quantile = |p: f64| sorted[((p * len as f64) as usize).min(len - 1)];
    let by_quantile: Vec<f64> = (0..n).map(|k| quantile((k as f64 + 0.5) / n as f64)).collect();
    let (lo, hi) = (quantile(0.005), quantile(0.995));
    let by_range: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / n as f64).collect();
    let by_distance = farthest_point_seeds(distinct, n, quantile(0.5));
    [by_quantile, by_range, by_distance]
        .into_iter()
        .map(|seeds| {
            let (centers, assign) = lloyd(data, seeds);
            let mut sse = 0.0;
            let mut var = vec![0.0; n];
            let mut counts = vec![0usize; n];
            for (&a, &u) in assign.iter().zip(data) {
                let d2 = (u - centers[a]).powi(2);
                sse += d2;
                var[a] += d2;
                counts[a] += 1;
            }
            let mut gm = GaussianMixture {
                means: centers,
                variances: (0..n)
                    .map(|k| (var[k] / counts[k].max(1) as f64).max(VARIANCE_FLOOR))
                    .collect(),
                weights: counts.iter().map(|&c| c as f64 / data.len() as f64).collect(),
            };
            gm.sort_by_mean();
            (sse, gm)
        })
        .collect()
}

fn lloyd(data: &[f64], mut centers: Vec<f64>) -> (Vec<f64>, Vec<usize>) {
    let n = centers.len();
    let mut assign = vec![usize::MAX; data.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (a, &u) in assign.iter_mut().zip(data) {
            let k = nearest(&centers, u);
            if *a != k {
                *a = k;
                changed = true;
            }
        }
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for (&a, &u) in assign.iter().zip(data) {
            sums[a] += u;
            counts[a] += 1;
        }
        let mut reseeded = false;
        for k in 0..n {
            if counts[k] == 0 {
                // move the worst-fitted sample into the empty cluster
                let far = (0..data.len())
                    .filter(|&s| counts[assign[s]] > 1 && data[s] != centers[assign[s]])
                    .max_by(|&a, &b| {
                        let da = (data[a] - centers[assign[a]]).abs();
                        let db = (data[b] - centers[assign[b]]).abs();
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .or_else(|| (0..data.len()).find(|&s| counts[assign[s]] > 1))
                    .expect("enough distinct samples");
                counts[assign[far]] -= 1;
                sums[assign[far]] -= data[far];
                assign[far] = k;
                counts[k] = 1;
                sums[k] = data[far];
                reseeded = true;
            }
        }
        for k in 0..n {
            centers[k] = sums[k] / counts[k] as f64;
        }
        if !changed && !reseeded {
            break;
        }
    }
    (centers, assign)
}

/// Greedy seeds: start at `first`, then repeatedly the value farthest from
/// every seed so far.
fn farthest_point_seeds(distinct: &[f64], n: usize, first: f64) -> Vec<f64> {
    let mut seeds = vec![first];
    while seeds.len() < n {
        let far = distinct
            .iter()
            .copied()
            .max_by(|a, b| {
                let da = seeds.iter().map(|s| (a - s).abs()).fold(f64::INFINITY, f64::min);
                let db = seeds.iter().map(|s| (b - s).abs()).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db)
            })
            .expect("non-empty");
        seeds.push(far);
    }
    seeds
}

fn nearest(centers: &[f64], u: f64) -> usize {
    let mut best = 0;
    for k in 1..centers.len() {
        if (u - centers[k]).abs() < (u - centers[best]).abs() {
            best = k;
        }
    }
    best
}

/// How responsibilities are computed in the E-step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EStep {
    /// Average of `sweeps` categorical draws of the latent component.
    #[default]
    Gibbs,
    /// Analytic posterior probabilities.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmSettings {
    pub sweeps: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub estep: EStep,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            sweeps: 20,
            max_iterations: 100,
            tolerance: 1e-6,
            seed: 0,
            estep: EStep::Gibbs,
        }
    }
}

impl EmSettings {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps < 1 {
            return Err(Error::InvalidParameter("gibbs sweeps must be >= 1".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidParameter("max EM iterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("EM tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Result of an EM fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport<M> {
    pub model: M,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    /// Log-likelihood after every iteration.
    pub trace: Vec<f64>,
    pub warnings: Vec<String>,
}

impl<M: Serialize> FitReport<M> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit report serializes")
    }
}

fn rng_for(seed: u64, iteration: usize, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 32) | chunk as u64);
    rng
}

/// Monte-Carlo responsibilities: the fraction of `sweeps` independent draws
/// from the posterior over components that land on each component.
pub fn gibbs_responsibilities(m: &NonGaussianMixture, u: f64, sweeps: usize, rng: &mut impl Rng) -> Vec<f64> {
    let p = m.responsibilities(u);
    let mut counts = vec![0.0; p.len()];
    for _ in 0..sweeps {
        counts[draw(&p, rng)] += 1.0;
    }
    counts.iter_mut().for_each(|c| *c /= sweeps as f64);
    counts
}

#[inline]
fn draw(p: &[f64], rng: &mut impl Rng) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if x < acc {
            return k;
        }
    }
    // rounding left x above the running sum: take the last non-empty component
    p.iter().rposition(|&pk| pk > 0.0).unwrap_or(0)
}

/// Sufficient statistics `(sum r, sum r u, sum r u^2)` per component.
fn e_step(m: &NonGaussianMixture, samples: &[f64], s: &EmSettings, iteration: usize) -> Vec<[f64; 3]> {
    let k = m.components();
    let partial: Vec<Vec<[f64; 3]>> = samples
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = vec![[0.0; 3]; k];
            let mut rng = rng_for(s.seed, iteration, c);
            for &u in chunk {
                let r = match s.estep {
                    EStep::Exact => m.responsibilities(u),
                    EStep::Gibbs => gibbs_responsibilities(m, u, s.sweeps, &mut rng),
                };
                for (a, rk) in acc.iter_mut().zip(&r) {
                    a[0] += rk;
                    a[1] += rk * u;
                    a[2] += rk * u * u;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![[0.0; 3]; k];
    for p in &partial {
        for (t, a) in total.iter_mut().zip(p) {
            for d in 0..3 {
                t[d] += a[d];
            }
        }
    }
    total
}

fn m_step(m: &mut NonGaussianMixture, stats: &[[f64; 3]], n_samples: usize, frozen: &mut [bool], warnings: &mut Vec<String>) {
    let nc = m.classes();
    let n = n_samples as f64;
    for (k, st) in stats.iter().enumerate() {
        if !frozen[k] && st[0] / n < FREEZE_WEIGHT {
            frozen[k] = true;
            if k < nc {
                m.base.weights[k] = st[0] / n;
            } else {
                m.transitions[k - nc].weight = st[0] / n;
            }
            warnings.push(format!(
                "component {} weight fell below {FREEZE_WEIGHT:e}; frozen",
                component_name(m, k)
            ));
        }
    }
    let frozen_mass: f64 = (0..stats.len()).filter(|&k| frozen[k]).map(|k| m.component_weight(k)).sum();
    let live_mass: f64 = (0..stats.len()).filter(|&k| !frozen[k]).map(|k| stats[k][0]).sum();
    let scale = if live_mass > 0.0 { (1.0 - frozen_mass) / live_mass } else { 0.0 };
    for k in 0..nc {
        if frozen[k] {
            continue;
        }
        let [r, ru, ruu] = stats[k];
        let mean = ru / r;
        m.base.means[k] = mean;
        m.base.variances[k] = (ruu / r - mean * mean).max(VARIANCE_FLOOR);
        m.base.weights[k] = r * scale;
    }
    for (t_idx, t) in m.transitions.iter_mut().enumerate() {
        let k = nc + t_idx;
        if frozen[k] {
            continue;
        }
        let [r, ru, ruu] = stats[k];
        let mean = ru / r;
        let var = ruu / r - mean * mean;
        let delta = m.base.means[t.j] - m.base.means[t.i];
        t.variance = (var - delta * delta / 12.0).max(VARIANCE_FLOOR);
        t.weight = r * scale;
    }
}

fn component_name(m: &NonGaussianMixture, k: usize) -> String {
    let n = m.classes();
    if k < n {
        format!("class {k}")
    } else {
        let t = &m.transitions[k - n];
        format!("transition {}-{}", t.i, t.j)
    }
}

/// Initial transition weight per pair.
pub const INITIAL_TRANSITION_WEIGHT: f64 = 0.02;

/// Fits a non-Gaussian mixture with `n` classes by EM.
///
/// Starts from [`kmeans_init`] with every transition weight at 0.02 and
/// `sigma_ij` the mean of `sigma_i` and `sigma_j`. Gaussian components get
/// closed-form updates; transition variances are moment-matched as
/// `var_ij - (mu_j - mu_i)^2 / 12`, since a uniform mix over an interval of
/// width `Delta` contributes `Delta^2 / 12` of variance.
pub fn fit_ngmm(samples: &[f64], n: usize, s: &EmSettings) -> Result<FitReport<NonGaussianMixture>> {
    s.validate()?;
    if n < 2 {
        return Err(Error::InvalidParameter("non-Gaussian mixture needs >= 2 classes".into()));
    }
    if samples.len() < 100 {
        return Err(Error::InvalidParameter(format!("need >= 100 samples, got {}", samples.len())));
    }
    let data = subsample(samples, MAX_FIT_SAMPLES, s.seed);
    let init = kmeans_init(&data, n, s.seed)?;
    let pairs = n * (n - 1) / 2;
    let share = 1.0 - INITIAL_TRANSITION_WEIGHT * pairs as f64;
    let mut m = NonGaussianMixture {
        base: GaussianMixture {
            weights: init.weights.iter().map(|w| w * share).collect(),
            ..init.clone()
        },
        transitions: Vec::with_capacity(pairs),
    };
    for i in 0..n {
        for j in i + 1..n {
            let sd = 0.5 * (init.variances[i].sqrt() + init.variances[j].sqrt());
            m.transitions.push(Transition {
                i,
                j,
                variance: sd * sd,
                weight: INITIAL_TRANSITION_WEIGHT,
            });
        }
    }
    m.validate()?;
    run_em(m, &data, s)
}

/// Continues EM from a given mixture.
pub fn refine_ngmm(m: NonGaussianMixture, samples: &[f64], s: &EmSettings) -> Result<FitReport<NonGaussianMixture>> {
    s.validate()?;
    m.validate()?;
    let data = subsample(samples, MAX_FIT_SAMPLES, s.seed);
    run_em(m, &data, s)
}

fn run_em(mut m: NonGaussianMixture, data: &[f64], s: &EmSettings) -> Result<FitReport<NonGaussianMixture>> {
    let mut frozen = vec![false; m.components()];
    let mut warnings = Vec::new();
    let mut trace = Vec::with_capacity(s.max_iterations);
    let mut converged = false;
    let mut prev = m.log_likelihood(data);
    let mut iterations = 0;
    while iterations < s.max_iterations {
        let stats = e_step(&m, data, s, iterations);
        m_step(&mut m, &stats, data.len(), &mut frozen, &mut warnings);
        iterations += 1;
        let ll = m.log_likelihood(data);
        if !ll.is_finite() {
            return Err(Error::Numeric("log-likelihood became non-finite".into()));
        }
        trace.push(ll);
        let rel = (ll - prev).abs() / ll.abs().max(f64::MIN_POSITIVE);
        prev = ll;
        if rel < s.tolerance {
            converged = true;
            break;
        }
    }
    sort_ngmm(&mut m);
    Ok(FitReport {
        log_likelihood: prev,
        model: m,
        iterations,
        converged,
        trace,
        warnings,
    })
}

/// Reorders classes by ascending mean and remaps transition pairs.
fn sort_ngmm(m: &mut NonGaussianMixture) {
    let order = ascending_order(&m.base.means);
    let mut new_index = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    m.base.sort_by_mean();
    for t in &mut m.transitions {
        let (a, b) = (new_index[t.i], new_index[t.j]);
        t.i = a.min(b);
        t.j = a.max(b);
    }
    m.transitions.sort_by_key(|t| (t.i, t.j));
}

/// Iterations every K-Means start gets before the best one is continued.
const SHORT_RUN: usize = 10;

/// Exact EM for a plain Gaussian mixture.
///
/// Every distinct K-Means start (see [`kmeans_init`]) gets a short EM run and
/// the one with the highest log-likelihood is continued to convergence. The
/// start with the lowest K-Means cost is not always the best one: a large
/// class split in two can beat a small well-separated class on squared error
/// but not on likelihood.
pub fn fit_gmm(samples: &[f64], n: usize, max_iterations: usize, tolerance: f64, seed: u64) -> Result<FitReport<GaussianMixture>> {
    let data = subsample(samples, MAX_FIT_SAMPLES, seed);
    let mut starts: Vec<GaussianMixture> = Vec::new();
    for (_, gm) in kmeans_all(&data, n, seed)? {
        if !starts.contains(&gm) {
            starts.push(gm);
        }
    }
    let short = max_iterations.min(SHORT_RUN);
    let mut best: Option<FitReport<GaussianMixture>> = None;
    for gm in starts {
        let fit = gmm_em(gm, &data, short, tolerance);
        if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
            best = Some(fit);
        }
    }
    let mut fit = best.expect("at least one start");
    if !fit.converged && max_iterations > short {
        let rest = gmm_em(fit.model.clone(), &data, max_iterations - short, tolerance);
        fit.trace.extend(rest.trace);
        fit = FitReport {
            iterations: fit.iterations + rest.iterations,
            trace: fit.trace,
            ..rest
        };
    }
    Ok(fit)
}

/// Sufficient statistics `(r, r u, r u^2)` per component and the
/// log-likelihood of `gm`, in one log-sum-exp pass.
fn gmm_e_step(gm: &GaussianMixture, data: &[f64]) -> (Vec<[f64; 3]>, f64) {
    let n = gm.len();
    let consts: Vec<(f64, f64, f64)> = (0..n)
        .map(|k| {
            let c = if gm.weights[k] > 0.0 {
                gm.weights[k].ln() - 0.5 * (2.0 * PI * gm.variances[k]).ln()
            } else {
                f64::NEG_INFINITY
            };
            (c, gm.means[k], 0.5 / gm.variances[k])
        })
        .collect();
    let partial: Vec<(Vec<[f64; 3]>, f64)> = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![[0.0; 3]; n];
            let mut ll = 0.0;
            let mut l = vec![0.0; n];
            for &u in chunk {
                let mut top = f64::NEG_INFINITY;
                for (lk, &(c, m, h)) in l.iter_mut().zip(&consts) {
                    *lk = c - (u - m) * (u - m) * h;
                    top = top.max(*lk);
                }
                let mut sum = 0.0;
                for lk in l.iter_mut() {
                    *lk = (*lk - top).exp();
                    sum += *lk;
                }
                ll += top + sum.ln();
                for (a, lk) in acc.iter_mut().zip(&l) {
                    let r = lk / sum;
                    a[0] += r;
                    a[1] += r * u;
                    a[2] += r * u * u;
                }
            }
            (acc, ll)
        })
        .collect();
    let mut st = vec![[0.0; 3]; n];
    let mut ll = 0.0;
    for (p, l) in &partial {
        ll += l;
        for k in 0..n {
            for d in 0..3 {
                st[k][d] += p[k][d];
            }
        }
    }
    (st, ll)
}

/// The log-likelihood after each M-step comes out of the following E-step.
fn gmm_em(mut gm: GaussianMixture, data: &[f64], max_iterations: usize, tolerance: f64) -> FitReport<GaussianMixture> {
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let (mut st, mut prev) = gmm_e_step(&gm, data);
    while iterations < max_iterations {
        for (k, &[r, ru, ruu]) in st.iter().enumerate() {
            gm.weights[k] = r / data.len() as f64;
            if r > 0.0 {
                gm.means[k] = ru / r;
                gm.variances[k] = (ruu / r - gm.means[k] * gm.means[k]).max(VARIANCE_FLOOR);
            }
        }
        iterations += 1;
        let (next, ll) = gmm_e_step(&gm, data);
        trace.push(ll);
        let rel = (ll - prev).abs() / ll.abs().max(f64::MIN_POSITIVE);
        st = next;
        prev = ll;
        if rel < tolerance {
            converged = true;
            break;
        }
    }
    gm.sort_by_mean();
    FitReport {
        model: gm,
        iterations,
        converged,
        log_likelihood: prev,
        trace,
        warnings: Vec::new(),
    }
}

/// Draws `count` samples from a non-Gaussian mixture.
pub fn sample_ngmm(m: &NonGaussianMixture, count: usize, seed: u64) -> Vec<f64> {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..m.components()).map(|k| m.component_weight(k)).collect();
    let total: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|v| v / total).collect();
    let nc = m.classes();
    (0..count)
        .map(|_| {
            let k = draw(&p, &mut rng);
            if k < nc {
                let d = Normal::new(m.base.means[k], m.base.variances[k].sqrt()).unwrap();
                d.sample(&mut rng)
            } else {
                let t = &m.transitions[k - nc];
                let y: f64 = rng.random();
                let d = Normal::new(0.0, t.variance.sqrt()).unwrap();
                y * m.base.means[t.i] + (1.0 - y) * m.base.means[t.j] + d.sample(&mut rng)
            }
        })
        .collect()
}
