//! Render the two-grain phantom at a few degradations and write each one,
//! plus its ground truth, as PGM files.
//!
//!     cargo run --example synth_phantom -- out/phantoms

use std::path::PathBuf;

use phaseseg::eval::area_fractions;
use phaseseg::image::class_name;
use phaseseg::io::{write_labels, write_pgm, BitDepth};
use phaseseg::phantom::{generate_phantom, PhantomSpec};

fn main() -> phaseseg::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/phantoms".into()));
    std::fs::create_dir_all(&dir)?;

    let base = PhantomSpec::default();
    let truth = base.truth();
    for (k, f) in area_fractions(&truth, 3).iter().enumerate() {
        println!("{:<6} {:6.2}%", class_name(k as u8), 100.0 * f);
    }
    write_labels(&truth, &dir.join("truth.pgm"))?;

    for (blur, noise) in [(1.0, 10.0), (2.0, 14.0), (3.0, 18.0)] {
        let (img, _) = generate_phantom(&base.with_degradation(blur, noise, 7))?;
        let (lo, hi) = img.min_max();
        let name = format!("phantom_b{blur}_n{noise}.pgm");
        println!("{name}: mean {:.1}, range [{lo:.1}, {hi:.1}]", img.mean());
        write_pgm(&img, &dir.join(name), BitDepth::Eight)?;
    }
    Ok(())
}
