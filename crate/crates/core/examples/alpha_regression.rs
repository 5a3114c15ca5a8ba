//! Fit the learning-rate function to noisy synthetic samples and compare the
//! result with the parameters that generated them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rvgomea::distribution::{learning_rate, Alphas};
use rvgomea::rates::{eval_fit, fit_alphas, RateSample, RateTarget};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = Alphas::AMS;
    let noise = Normal::new(0.0, 0.01)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut samples = Vec::new();
    for pop in (20..=400).step_by(60) {
        for kappa in [5, 10, 20, 40, 70, 100] {
            let selection = (0.35 * pop as f64) as usize;
            let eta = (learning_rate(truth, selection, kappa) + noise.sample(&mut rng)).clamp(0.0, 1.0);
            samples.push(RateSample {
                problem: "synthetic".into(),
                kappa,
                population_size: pop,
                selection_size: selection,
                eta_cov: 0.0,
                eta_ams: eta,
                cost: Some(0.0),
                discarded: false,
            });
        }
    }
    let fit = fit_alphas(&samples, RateTarget::Ams)?;
    print!("{}", fit.to_text());
    println!("generating parameters: {:?}", truth);
    println!(
        "eta at |S|=70, kappa=10: fitted {:.4}, true {:.4}",
        eval_fit(&fit, 70, 10),
        learning_rate(truth, 70, 10)
    );
    Ok(())
}
