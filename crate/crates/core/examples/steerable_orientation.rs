//! Steer the G2/H2 quadrature pair to the dominant orientation of a blurred
//! disk and report orientation error and local phase across its rim.

use std::f64::consts::PI;

use phaseseg::filters::{orientation_energy, phase, quadrature_responses, QuadraturePair, DEFAULT_KERNEL_SIGMA};
use phaseseg::image::{gaussian_blur, GrayImage};

fn main() {
    let (w, h, r) = (96usize, 96usize, 30.0);
    let (cx, cy) = (47.5, 47.5);
    let disk = GrayImage::from_fn(w, h, |x, y| {
        if (x as f64 - cx).hypot(y as f64 - cy) < r { 200.0 } else { 40.0 }
    });
    let img = gaussian_blur(&disk, 1.5);

    let q = QuadraturePair::new(DEFAULT_KERNEL_SIGMA);
    println!("kernel sigma {} radius {}", q.sigma(), q.radius());
    let resp = quadrature_responses(&img, &q);
    let field = orientation_energy(&resp);
    let r_phase = phase(&resp, &field);

    // the dominant orientation on the rim is the radial direction
    let mut worst: f64 = 0.0;
    let mut rim = 0;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if (dx.hypot(dy) - r).abs() > 1.0 {
                continue;
            }
            let i = y * w + x;
            assert!(field.reliable[i]);
            let mut d = (field.theta[i] - dy.atan2(dx)).rem_euclid(PI);
            d = d.min(PI - d);
            worst = worst.max(d);
            rim += 1;
        }
    }
    println!("{rim} rim pixels, worst orientation error {:.3} deg", worst.to_degrees());
    let reliable = field.reliable.iter().filter(|r| **r).count();
    println!("{reliable} of {} pixels carry reliable orientation", w * h);

    println!("phase along the row through the centre:");
    let y = h / 2;
    for x in (cx as usize + 24)..(cx as usize + 37) {
        let i = y * w + x;
        println!("  x={x:3}  I={:6.1}  r={:+.3}", img.get(x, y), r_phase[i]);
    }
}
