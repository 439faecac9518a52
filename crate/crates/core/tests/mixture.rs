use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use phaseseg::mixture::{
    classify_gaussian, fit_ngmm, kmeans_init, refine_ngmm, sample_ngmm, EStep, EmSettings, GaussianMixture, NonGaussianMixture,
    Transition,
};

fn gaussian_draws(means: &[f64], sd: f64, per_class: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(means.len() * per_class);
    for &m in means {
        let d = Normal::new(m, sd).unwrap();
        out.extend((0..per_class).map(|_| d.sample(&mut rng)));
    }
    out
}

fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|k| {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            w * f(a + k as f64 * h)
        })
        .sum::<f64>()
        * h
}

#[test]
fn pure_gaussian_data_leaves_transitions_empty() {
    let data = gaussian_draws(&[50.0, 130.0, 190.0], 8.0, 10_000, 1);
    let fit = fit_ngmm(&data, 3, &EmSettings::default()).unwrap();
    for t in &fit.model.transitions {
        assert!(t.weight < 0.01, "w_{}{} = {}", t.i, t.j, t.weight);
    }
    for (k, truth) in [50.0, 130.0, 190.0].iter().enumerate() {
        assert!((fit.model.base.means[k] - truth).abs() < 1.0);
    }
}

#[test]
fn log_likelihood_rises_up_to_gibbs_noise() {
    let planted = NonGaussianMixture {
        base: GaussianMixture {
            means: vec![50.0, 130.0, 190.0],
            variances: vec![64.0; 3],
            weights: vec![0.3; 3],
        },
        transitions: [(0, 1), (0, 2), (1, 2)]
            .map(|(i, j)| Transition {
                i,
                j,
                variance: 16.0,
                weight: 0.1 / 3.0,
            })
            .to_vec(),
    };
    let data = sample_ngmm(&planted, 20_000, 3);
    let one_step = |m: &NonGaussianMixture, seed: u64| {
        let s = EmSettings {
            seed,
            max_iterations: 1,
            ..EmSettings::default()
        };
        refine_ngmm(m.clone(), &data, &s).unwrap()
    };

    let mut m = planted.clone();
    m.base.means = vec![60.0, 120.0, 175.0];
    m.base.variances = vec![200.0; 3];
    for t in 0..15 {
        let before = m.log_likelihood(&data);
        // standard error of one step's outcome, over independent Gibbs streams
        let outcomes: Vec<f64> = (0..16).map(|k| one_step(&m, 1_000 + k).log_likelihood).collect();
        let mean = outcomes.iter().sum::<f64>() / 16.0;
        let se = (outcomes.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 15.0).sqrt();
        let next = one_step(&m, t).model;
        let drop = before - next.log_likelihood(&data);
        assert!(drop <= 3.0 * se, "iteration {t}: decrease {drop} vs standard error {se}");
        m = next;
    }
}

#[test]
fn exact_e_step_is_strictly_monotone() {
    let data = gaussian_draws(&[40.0, 100.0], 10.0, 5_000, 9);
    let s = EmSettings {
        estep: EStep::Exact,
        max_iterations: 60,
        tolerance: 1e-14,
        ..EmSettings::default()
    };
    let fit = fit_ngmm(&data, 2, &s).unwrap();
    for w in fit.trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn moment_matching_identity() {
    let (mu_i, mu_j, sigma) = (70.0f64, 130.0f64, 15.0f64);
    let delta = mu_j - mu_i;
    let estimate = |u: &[f64]| {
        let n = u.len() as f64;
        let m = u.iter().sum::<f64>() / n;
        let var = u.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
        var - delta * delta / 12.0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let eps = Normal::new(0.0, sigma).unwrap();
    let direct: Vec<f64> = (0..10_000)
        .map(|_| {
            let y: f64 = rng.random();
            mu_i + y * delta + eps.sample(&mut rng)
        })
        .collect();

    let only_transition = NonGaussianMixture {
        base: GaussianMixture {
            means: vec![mu_i, mu_j],
            variances: vec![1.0, 1.0],
            weights: vec![0.0, 0.0],
        },
        transitions: vec![Transition {
            i: 0,
            j: 1,
            variance: sigma * sigma,
            weight: 1.0,
        }],
    };
    let sampled = sample_ngmm(&only_transition, 10_000, 13);

    for u in [&direct, &sampled] {
        let rel = (estimate(u) - sigma * sigma).abs() / (sigma * sigma);
        assert!(rel < 0.10, "relative error {rel}");
    }
}

#[test]
fn fitted_density_is_a_density() {
    let data = gaussian_draws(&[60.0, 120.0, 200.0], 9.0, 4_000, 4);
    let m = fit_ngmm(&data, 3, &EmSettings::default()).unwrap().model;
    let (lo, hi) = (-100.0, 400.0);
    assert!((trapezoid(|u| m.density(u), lo, hi, 200_000) - 1.0).abs() < 1e-4);
    for k in 0..10_000 {
        let u = lo + (hi - lo) * k as f64 / 9_999.0;
        assert!(m.density(u) >= 0.0);
    }
}

#[test]
fn zero_transition_weights_reduce_to_the_gaussian_mixture() {
    let base = GaussianMixture {
        means: vec![30.0, 90.0, 170.0],
        variances: vec![25.0, 100.0, 49.0],
        weights: vec![0.5, 0.2, 0.3],
    };
    let m = NonGaussianMixture::from_gaussian(base.clone(), 30.0);
    for k in 0..2_000 {
        let u = -20.0 + k as f64 * 0.12;
        assert!((m.density(u) - base.density(u)).abs() <= 1e-15);
    }
}

#[test]
fn classification_flips_at_the_density_crossing() {
    let base = GaussianMixture {
        means: vec![50.0, 130.0],
        variances: vec![100.0, 400.0],
        weights: vec![0.7, 0.3],
    };
    let m = NonGaussianMixture::from_gaussian(base.clone(), 10.0);
    assert_eq!(classify_gaussian(&m, 50.0), 0);
    assert_eq!(classify_gaussian(&m, 130.0), 1);

    // bisection on the log ratio of weighted densities
    let score = |u: f64, k: usize| {
        let d = u - base.means[k];
        base.weights[k].ln() - 0.5 * base.variances[k].ln() - 0.5 * d * d / base.variances[k]
    };
    let (mut lo, mut hi) = (50.0, 130.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid, 0) > score(mid, 1) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eps = 1e-6;
    assert_eq!(classify_gaussian(&m, lo - eps), 0);
    assert_eq!(classify_gaussian(&m, hi + eps), 1);

    let mut scaled = m.clone();
    scaled.base.weights.iter_mut().for_each(|w| *w *= 37.0);
    for k in 0..500 {
        let u = k as f64 * 0.4;
        assert_eq!(classify_gaussian(&m, u), classify_gaussian(&scaled, u));
    }
}

#[test]
fn kmeans_finds_two_blobs() {
    let data = gaussian_draws(&[50.0, 190.0], 5.0, 5_000, 6);
    let km = kmeans_init(&data, 2, 0).unwrap();
    assert!((km.means[0] - 50.0).abs() < 1.0 && (km.means[1] - 190.0).abs() < 1.0, "{:?}", km.means);
    assert_eq!(km, kmeans_init(&data, 2, 0).unwrap());
}

#[test]
fn fits_repeat_exactly_for_a_seed() {
    let data = gaussian_draws(&[50.0, 130.0, 190.0], 10.0, 3_000, 2);
    let s = EmSettings {
        seed: 42,
        max_iterations: 15,
        ..EmSettings::default()
    };
    assert_eq!(fit_ngmm(&data, 3, &s).unwrap(), fit_ngmm(&data, 3, &s).unwrap());
}
