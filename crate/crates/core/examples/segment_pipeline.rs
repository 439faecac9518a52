//! Full segmentation of a phantom with each method, scored against truth.
//! Pass a raster path to segment your own image instead.
//!
//!     cargo run --release --example segment_pipeline [-- image.pgm]

use phaseseg::eval::{area_fractions, misclassification_error};
use phaseseg::image::class_name;
use phaseseg::io::read_raster;
use phaseseg::phantom::{generate_phantom, PhantomSpec};
use phaseseg::pipeline::{run, Method, PipelineConfig};

fn main() -> phaseseg::Result<()> {
    if let Some(path) = std::env::args().nth(1) {
        let img = read_raster(path.as_ref())?;
        let (labels, report) = run(&img, &PipelineConfig::default())?;
        for (k, f) in area_fractions(&labels, 3).iter().enumerate() {
            println!("{:<6} {:6.2}%", class_name(k as u8), 100.0 * f);
        }
        println!("{}", report.to_json());
        return Ok(());
    }

    let spec = PhantomSpec::default().with_degradation(2.0, 14.0, 42);
    let (img, truth) = generate_phantom(&spec)?;
    let truth_frac = area_fractions(&truth, 3);
    for method in [Method::gradient(), Method::difference(), Method::Classification] {
        let cfg = PipelineConfig::default().with_method(method);
        let (labels, report) = run(&img, &cfg)?;
        let me = misclassification_error(&truth, &labels)?;
        let diffs: Vec<f64> = area_fractions(&labels, 3)
            .iter()
            .zip(&truth_frac)
            .map(|(p, t)| p - t)
            .collect();
        println!(
            "{:<15} ME {:.4}  area diff {:+.4?}  {} transition px  {:.2} s",
            method.name(),
            me,
            diffs,
            report.transition_pixels,
            report.timings.total
        );
        for w in &report.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
