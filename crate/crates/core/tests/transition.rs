use proptest::prelude::*;

use phaseseg::deconv::{calibrate, deconvolve, DeconvField};
use phaseseg::eval::{distance_to_boundary, recall};
use phaseseg::filters::QuadraturePair;
use phaseseg::image::{add_noise, GrayImage};
use phaseseg::mixture::{GaussianMixture, NonGaussianMixture};
use phaseseg::phantom::{generate_phantom, PhantomSpec};
use phaseseg::pipeline::{identify_transitions, smooth, Method, PipelineConfig, Smoother};
use phaseseg::transition::{by_classification, by_difference, by_gradient, TransitionMask};

fn band(dist: &[f64], keep: impl Fn(f64) -> bool) -> Vec<bool> {
    dist.iter().map(|&d| keep(d)).collect()
}

/// Recall within 1 px of a boundary and false-positive share beyond 4 px.
fn geometry(mask: &TransitionMask, dist: &[f64]) -> (f64, f64) {
    (
        recall(&mask.flags, &band(dist, |d| d <= 1.0)),
        recall(&mask.flags, &band(dist, |d| d > 4.0)),
    )
}

fn phantom_mask(noise: f64, method: Method) -> (TransitionMask, Vec<f64>) {
    let spec = PhantomSpec::default().with_degradation(2.0, noise, 21);
    let (img, truth) = generate_phantom(&spec).unwrap();
    let cfg = PipelineConfig::default().with_method(method);
    let smoothed = smooth(&img, &cfg.smoother).unwrap();
    let (mask, _) = identify_transitions(&smoothed.image, smoothed.noise_sigma, &cfg).unwrap();
    (mask, distance_to_boundary(&truth))
}

// Exactly noiseless input collapses two class variances onto the 1e-4 floor,
// which then decides the Gaussian argmax far from every mean. Half a grey
// level of noise, about 8-bit quantization, is enough to avoid that.
#[test]
fn classification_hugs_nearly_noiseless_boundaries() {
    let (mask, dist) = phantom_mask(0.5, Method::Classification);
    let (near, far) = geometry(&mask, &dist);
    assert!(near >= 0.90, "recall within 1 px {near}");
    assert!(far < 0.02, "flagged beyond 4 px {far}");
}

#[test]
fn difference_recall_on_noisy_phantom() {
    let (mask, dist) = phantom_mask(14.0, Method::difference());
    let (near, _) = geometry(&mask, &dist);
    assert!(near >= 0.85, "recall within 1 px {near}");
}

#[test]
fn gradient_recall_on_noisy_phantom() {
    let (mask, dist) = phantom_mask(14.0, Method::gradient());
    let (near, _) = geometry(&mask, &dist);
    assert!(near >= 0.85, "recall within 1 px {near}");
}

fn three_class_mixture(weights: [f64; 3]) -> NonGaussianMixture {
    let base = GaussianMixture {
        means: vec![50.0, 130.0, 190.0],
        variances: vec![64.0; 3],
        weights: weights.to_vec(),
    };
    NonGaussianMixture::from_gaussian(base, 4.0)
}

fn field_of(a: Vec<f64>, b: Vec<f64>) -> DeconvField {
    let n = a.len();
    DeconvField {
        width: n,
        height: 1,
        r: vec![0.0; n],
        theta: vec![0.0; n],
        reliable: vec![true; n],
        a,
        b,
    }
}

#[test]
fn constant_image_flags_nothing() {
    let img = GrayImage::filled(40, 30, 120.0);
    let q = QuadraturePair::default();
    let field = deconvolve(&img, &q, &calibrate(2.0, &q, 0.0).unwrap()).unwrap();
    let m = three_class_mixture([0.3, 0.4, 0.3]);
    assert_eq!(by_classification(&field, &m).count(), 0);
    assert_eq!(by_difference(&field, 1e-9).unwrap().count(), 0);
    assert_eq!(by_gradient(&img, 1e-9, 1).unwrap().count(), 0);
}

#[test]
fn distinct_sides_are_a_transition() {
    let m = three_class_mixture([0.3, 0.4, 0.3]);
    let field = field_of(vec![130.0, 52.0, 190.0], vec![50.0, 48.0, 131.0]);
    assert_eq!(by_classification(&field, &m).flags, vec![true, false, true]);
}

#[test]
fn tiny_difference_threshold_flags_almost_every_reliable_pixel() {
    let img = add_noise(&GrayImage::filled(48, 48, 100.0), 10.0, 5);
    let q = QuadraturePair::default();
    let field = deconvolve(&img, &q, &calibrate(2.0, &q, 10.0).unwrap()).unwrap();
    let reliable = field.reliable.iter().filter(|r| **r).count();
    let flagged = by_difference(&field, 1e-9).unwrap().count();
    assert!(reliable > 1000);
    assert!(flagged as f64 >= 0.99 * reliable as f64, "{flagged} of {reliable}");
}

#[test]
fn smoother_choice_does_not_change_mask_dims() {
    let spec = PhantomSpec::default().with_degradation(2.0, 14.0, 2);
    let (img, _) = generate_phantom(&spec).unwrap();
    let cfg = PipelineConfig {
        smoother: Smoother::None,
        ..PipelineConfig::default().with_method(Method::gradient())
    };
    let (mask, fit) = identify_transitions(&img, 14.0, &cfg).unwrap();
    assert_eq!(mask.dims(), img.dims());
    assert!(fit.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn raising_tau_never_adds_pixels(seed in 0u64..1000, t1 in 1.0f64..60.0, dt in 0.0f64..40.0) {
        let img = add_noise(&GrayImage::from_fn(32, 24, |x, _| if x < 16 { 60.0 } else { 140.0 }), 12.0, seed);
        let q = QuadraturePair::default();
        let field = deconvolve(&img, &q, &calibrate(2.0, &q, 12.0).unwrap()).unwrap();
        let t2 = t1 + dt;
        let pairs = [
            (by_difference(&field, t1).unwrap(), by_difference(&field, t2).unwrap()),
            (by_gradient(&img, t1, 1).unwrap(), by_gradient(&img, t2, 1).unwrap()),
        ];
        for (lo, hi) in pairs {
            prop_assert!(hi.flags.iter().zip(&lo.flags).all(|(h, l)| !*h || *l));
        }
    }

    #[test]
    fn classification_ignores_uniform_weight_scale(
        a in proptest::collection::vec(0.0f64..255.0, 64),
        b in proptest::collection::vec(0.0f64..255.0, 64),
        scale in 1e-3f64..1e3,
    ) {
        let m = three_class_mixture([0.2, 0.5, 0.3]);
        let scaled = three_class_mixture([0.2 * scale, 0.5 * scale, 0.3 * scale]);
        let field = field_of(a, b);
        prop_assert_eq!(by_classification(&field, &m), by_classification(&field, &scaled));
    }
}
