use std::f64::consts::PI;

use proptest::prelude::*;
use statrs::function::erf::erfc;

use phaseseg::filters::{correlate, orientation_energy, phase, quadrature_responses, QuadraturePair};
use phaseseg::image::GrayImage;
use phaseseg::phantom::{generate_phantom, PhantomSpec};

fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / 2f64.sqrt())
}

/// Step through `(cx, cy)` with unit normal at angle `theta`, blurred by `blur`.
fn step(size: usize, cx: f64, cy: f64, theta: f64, blur: f64) -> GrayImage {
    let (s, c) = theta.sin_cos();
    GrayImage::from_fn(size, size, |x, y| {
        let d = (x as f64 - cx) * c + (y as f64 - cy) * s;
        40.0 + 160.0 * phi(d / blur)
    })
}

/// Smallest difference of two orientations modulo pi.
fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

#[test]
fn step_at_thirty_degrees() {
    let theta = 30f64.to_radians();
    let img = step(65, 32.0, 32.0, theta, 1.5);
    let resp = quadrature_responses(&img, &QuadraturePair::default());
    let field = orientation_energy(&resp);
    let (s, c) = theta.sin_cos();
    let mut checked = 0;
    for y in 12..53 {
        for x in 12..53 {
            let d = (x as f64 - 32.0) * c + (y as f64 - 32.0) * s;
            if d.abs() > 0.5 {
                continue;
            }
            let i = y * 65 + x;
            assert!(field.reliable[i]);
            let err = angle_gap(field.theta[i], theta).to_degrees();
            assert!(err < 2.0, "({x},{y}): off by {err} deg");
            checked += 1;
        }
    }
    assert!(checked > 30);
}

#[test]
fn phase_along_the_normal() {
    let img = step(65, 32.0, 32.0, 0.0, 1.5);
    let resp = quadrature_responses(&img, &QuadraturePair::default());
    let field = orientation_energy(&resp);
    let r = phase(&resp, &field);
    let row = |x: usize| r[32 * 65 + x];

    assert!(row(32).abs() < 1e-9, "edge phase {}", row(32));
    for x in 30..34 {
        assert!(row(x + 1) < row(x), "not monotone at x = {x}");
    }
    for k in 1..=4 {
        let (left, right) = (row(32 - k) - row(32), row(32 + k) - row(32));
        assert!(left > 0.0 && right < 0.0);
        assert!((left + right).abs() < 1e-9, "offset {k}: {left} vs {right}");
    }
}

#[test]
fn quarter_turn_shifts_orientation_by_a_right_angle() {
    // curved edges so the field varies from pixel to pixel
    let n = 57;
    let c = (n as f64 - 1.0) / 2.0;
    let img = GrayImage::from_fn(n, n, |x, y| {
        let (dx, dy) = (x as f64 - c - 5.0, y as f64 - c + 3.0);
        let r = (dx * dx + 0.6 * dy * dy).sqrt();
        60.0 + 120.0 * phi((14.0 - r) / 1.5)
    });
    // (x, y) -> (n - 1 - y, x) is a 90 degree rotation of the pixel grid
    let rot = GrayImage::from_fn(n, n, |x, y| img.get(y, n - 1 - x));
    let q = QuadraturePair::default();
    let a = orientation_energy(&quadrature_responses(&img, &q));
    let b = orientation_energy(&quadrature_responses(&rot, &q));
    let mut checked = 0;
    for y in 10..n - 10 {
        for x in 10..n - 10 {
            let i = y * n + x;
            let j = x * n + (n - 1 - y);
            if !a.reliable[i] || !b.reliable[j] {
                continue;
            }
            let err = angle_gap(b.theta[j], a.theta[i] + PI / 2.0).to_degrees();
            assert!(err < 2.0, "({x},{y}): {err} deg");
            checked += 1;
        }
    }
    assert!(checked > 200);
}

#[test]
fn steered_responses_match_rotated_kernels_on_the_phantom() {
    let spec = PhantomSpec::default().with_degradation(2.0, 14.0, 1);
    let (img, _) = generate_phantom(&spec).unwrap();
    let q = QuadraturePair::default();
    let resp = quadrature_responses(&img, &q);
    let range = |v: &GrayImage| {
        let (lo, hi) = v.min_max();
        hi - lo
    };
    let mut angles = vec![0.7];
    angles.extend((0..16).map(|k| (0.05 + k as f64 * 0.37) % PI));
    for theta in angles {
        let pairs = [
            (resp.steered_g_image(theta), correlate(&img, &q.direct_g(theta))),
            (resp.steered_h_image(theta), correlate(&img, &q.direct_h(theta))),
        ];
        for (steered, direct) in pairs {
            let err = steered
                .data()
                .iter()
                .zip(direct.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-3 * range(&direct), "theta {theta}: {err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn straight_steps_rotate_rigidly(theta in 0.0f64..PI, delta in -1.5f64..1.5) {
        let q = QuadraturePair::default();
        let mean_theta = |t: f64| {
            let img = step(49, 24.0, 24.0, t, 1.5);
            let f = orientation_energy(&quadrature_responses(&img, &q));
            // average of 2 theta as a unit vector, central edge pixels only
            let (mut s, mut c) = (0.0, 0.0);
            let (ts, tc) = t.sin_cos();
            for y in 16..33 {
                for x in 16..33 {
                    if ((x as f64 - 24.0) * tc + (y as f64 - 24.0) * ts).abs() > 1.0 {
                        continue;
                    }
                    let i = y * 49 + x;
                    s += (2.0 * f.theta[i]).sin();
                    c += (2.0 * f.theta[i]).cos();
                }
            }
            0.5 * s.atan2(c)
        };
        let shift = mean_theta(theta + delta) - mean_theta(theta);
        prop_assert!(angle_gap(shift, delta).to_degrees() < 2.0);
    }

    #[test]
    fn energy_is_nonnegative(seed in 0u64..1000, theta in 0.0f64..PI) {
        let img = phaseseg::image::add_noise(&GrayImage::filled(20, 20, 100.0), 30.0, seed);
        let resp = quadrature_responses(&img, &QuadraturePair::default());
        for i in 0..400 {
            prop_assert!(resp.energy(i, theta) >= 0.0);
        }
    }
}
