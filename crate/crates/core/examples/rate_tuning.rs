//! Tune fixed learning rates for one small cell, then filter the samples the
//! way the regression expects.

use rvgomea::rates::{filter_samples, tune_rates, write_samples, ReferenceCache, TuneOptions, FILTER_PROBLEM};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let options = TuneOptions {
        replicates: 5,
        reference_replicates: 5,
        outer_restarts: 2,
        outer_budget: 32.0,
        ..TuneOptions::default()
    };
    let cache = ReferenceCache::new();
    let mut samples = Vec::new();
    for problem in [FILTER_PROBLEM, "sphere"] {
        let s = tune_rates(problem, 5, 20, &options, &cache)?;
        println!(
            "{problem}: reference budget {:.1}, eta_cov {:.3}, eta_ams {:.3}, cost {:?}, discarded {}",
            cache.get(problem, 5).unwrap_or(f64::NAN),
            s.eta_cov,
            s.eta_ams,
            s.cost,
            s.discarded
        );
        samples.push(s);
    }
    let kept = filter_samples(&samples);
    println!("{} of {} samples survive filtering", kept.len(), samples.len());
    write_samples(std::io::stdout(), &kept)?;
    Ok(())
}
