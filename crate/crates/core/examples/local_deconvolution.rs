//! Calibrate the local deconvolution on a synthetic step, then recover the
//! intensities on both sides of a blurred, noisy edge.

use phaseseg::deconv::{calibrate, deconvolve};
use phaseseg::filters::{QuadraturePair, DEFAULT_KERNEL_SIGMA};
use phaseseg::image::{add_noise, gaussian_blur, GrayImage};

fn main() -> phaseseg::Result<()> {
    let q = QuadraturePair::new(DEFAULT_KERNEL_SIGMA);
    let noise = 3.0;
    let cal = calibrate(2.0, &q, noise)?;
    let (r_lo, r_hi) = cal.r_range();
    println!("{} table rows, phase range [{r_lo:.3}, {r_hi:.3}]", cal.table.len());
    println!("noise covariance diagonal {:.3?}", [0, 1, 2].map(|k| cal.covariance[k][k]));

    // step from 60 to 180 at 30 degrees
    let (t_sin, t_cos) = 30f64.to_radians().sin_cos();
    let step = GrayImage::from_fn(80, 80, |x, y| {
        let d = (x as f64 - 39.5) * t_cos + (y as f64 - 39.5) * t_sin;
        if d > 0.0 { 180.0 } else { 60.0 }
    });
    let img = add_noise(&gaussian_blur(&step, 2.0), noise, 5);
    let field = deconvolve(&img, &q, &cal)?;

    // probe along the row through the centre; distance is measured along the normal
    let y = 40;
    println!("{:>6} {:>7} {:>7} {:>7} {:>7}", "dist", "I", "a", "b", "r");
    for x in 34..=46 {
        let i = y * 80 + x;
        let d = (x as f64 - 39.5) * t_cos + (y as f64 - 39.5) * t_sin;
        if field.reliable[i] {
            println!("{d:6.2} {:7.1} {:7.1} {:7.1} {:+7.3}", img.get(x, y), field.a[i], field.b[i], field.r[i]);
        } else {
            println!("{d:6.2} {:7.1}  unreliable", img.get(x, y));
        }
    }
    Ok(())
}
