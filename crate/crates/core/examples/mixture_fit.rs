//! Draw samples from a three-class mixture with transition components and fit
//! it back with the Gibbs-sampled EM, then compare with a plain GMM.

use phaseseg::mixture::{
    fit_gmm, fit_ngmm, sample_ngmm, EmSettings, GaussianMixture, NonGaussianMixture, Transition,
};

fn main() -> phaseseg::Result<()> {
    let w_t = 0.1 / 3.0;
    let planted = NonGaussianMixture {
        base: GaussianMixture {
            means: vec![50.0, 130.0, 190.0],
            variances: vec![64.0; 3],
            weights: vec![0.3; 3],
        },
        transitions: [(0, 1), (0, 2), (1, 2)]
            .map(|(i, j)| Transition { i, j, variance: 16.0, weight: w_t })
            .to_vec(),
    };
    let samples = sample_ngmm(&planted, 50_000, 11);

    let fit = fit_ngmm(&samples, 3, &EmSettings::default())?;
    println!("non-Gaussian mixture: {} iterations, converged {}", fit.iterations, fit.converged);
    let m = &fit.model;
    for k in 0..3 {
        println!(
            "  class {k}: mean {:7.2} sd {:5.2} weight {:.3}",
            m.base.means[k],
            m.base.variances[k].sqrt(),
            m.base.weights[k]
        );
    }
    for t in &m.transitions {
        println!("  {}-{}: weight {:.3} sd {:.2}", t.i, t.j, t.weight, t.variance.sqrt());
    }

    let gmm = fit_gmm(&samples, 3, 500, 1e-9, 11)?;
    println!("plain GMM (transitions absorbed into the classes):");
    for k in 0..3 {
        println!(
            "  class {k}: mean {:7.2} sd {:5.2} weight {:.3}",
            gmm.model.means[k],
            gmm.model.variances[k].sqrt(),
            gmm.model.weights[k]
        );
    }
    println!(
        "log-likelihood per sample: ngmm {:.4}, gmm {:.4}",
        fit.log_likelihood / samples.len() as f64,
        gmm.log_likelihood / samples.len() as f64
    );
    Ok(())
}
