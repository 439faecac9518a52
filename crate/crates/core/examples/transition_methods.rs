//! Run the three transition detectors on one smoothed phantom and score each
//! mask against the true partial-volume band.

use phaseseg::eval::{distance_to_boundary, recall};
use phaseseg::phantom::{generate_phantom, PhantomSpec};
use phaseseg::pipeline::{identify_transitions, smooth, Method, PipelineConfig, Smoother};

fn main() -> phaseseg::Result<()> {
    let spec = PhantomSpec::default().with_degradation(2.0, 14.0, 3);
    let (img, truth) = generate_phantom(&spec)?;
    let smoothed = smooth(&img, &Smoother::default())?;

    let dist = distance_to_boundary(&truth);
    let band: Vec<bool> = dist.iter().map(|&d| d <= 1.0).collect();
    let far: Vec<bool> = dist.iter().map(|&d| d > 4.0).collect();
    let far_total = far.iter().filter(|f| **f).count() as f64;

    println!("{:<15} {:>8} {:>10} {:>12}", "method", "flagged", "recall", "false >4px");
    for method in [Method::Classification, Method::difference(), Method::gradient()] {
        let cfg = PipelineConfig::default().with_method(method);
        let (mask, fit) = identify_transitions(&smoothed.image, smoothed.noise_sigma, &cfg)?;
        let false_far = mask.flags.iter().zip(&far).filter(|(m, f)| **m && **f).count() as f64;
        println!(
            "{:<15} {:8} {:9.1}% {:11.2}%",
            method.name(),
            mask.count(),
            100.0 * recall(&mask.flags, &band),
            100.0 * false_far / far_total
        );
        if let Some(fit) = fit {
            println!("  fitted class means {:.1?}", fit.model.base.means);
        }
    }
    Ok(())
}
