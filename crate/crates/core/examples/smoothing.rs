//! Compare non-local means and anisotropic diffusion on a noisy phantom:
//! residual noise inside each phase and the width of the grain edge.

use phaseseg::image::{GrayImage, LabelMap};
use phaseseg::phantom::{generate_phantom, PhantomSpec};
use phaseseg::smoothing::{adf, estimate_noise_sigma, nlm, AdfParams, NlmParams};

/// Standard deviation of `img` over pixels of `label` at least 4 px inside.
fn interior_std(img: &GrayImage, truth: &LabelMap, label: u8) -> f64 {
    let (w, h) = img.dims();
    let mut v = Vec::new();
    for y in 4..h - 4 {
        for x in 4..w - 4 {
            let inside = (-4isize..=4).all(|d| {
                truth.get((x as isize + d) as usize, y) == label && truth.get(x, (y as isize + d) as usize) == label
            });
            if inside {
                v.push(img.get(x, y));
            }
        }
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Pixels along the central row where the profile is between 20% and 80%
/// of the way from gas to grain, left edge of the left grain.
fn edge_width(img: &GrayImage, spec: &PhantomSpec) -> usize {
    let y = img.height() / 2;
    let g = &spec.grains[0];
    let x_edge = (g.cx - g.radius).round() as usize;
    let (lo, hi) = (spec.mean_gas, spec.mean_grain);
    (x_edge - 10..x_edge + 10)
        .filter(|&x| {
            let t = (img.get(x, y) - lo) / (hi - lo);
            (0.2..=0.8).contains(&t)
        })
        .count()
}

fn main() -> phaseseg::Result<()> {
    let spec = PhantomSpec::default().with_degradation(2.0, 14.0, 1);
    let (img, truth) = generate_phantom(&spec)?;
    let sigma = estimate_noise_sigma(&img);
    println!("estimated noise sigma {sigma:.2} (true 14)");

    let smoothed = [
        ("input", img.clone()),
        ("nlm", nlm(&img, &NlmParams::for_noise(sigma))?),
        ("adf", adf(&img, &AdfParams::default())?),
    ];
    println!("{:<6} {:>9} {:>9} {:>11}", "", "gas std", "grain std", "edge width");
    for (name, s) in &smoothed {
        println!(
            "{name:<6} {:9.2} {:9.2} {:11}",
            interior_std(s, &truth, 0),
            interior_std(s, &truth, 1),
            edge_width(s, &spec)
        );
    }
    Ok(())
}
