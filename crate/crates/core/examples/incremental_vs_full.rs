//! Compare incremental (iRV-GOMEA) against per-generation re-estimation
//! (RV-GOMEA) on sums of rotated ellipsoids, each at its guideline population.

use rvgomea::harness::{compare_ratio, run_experiment, ExperimentSpec, SeedPolicy};
use rvgomea::linkage::StaticLinkage;
use rvgomea::optimizer::{LinkageSpec, Variant};
use rvgomea::problems::ProblemParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = |variant| ExperimentSpec {
        params: ProblemParams::with_kappa(5),
        ells: vec![20, 40],
        replicates: 10,
        seeds: SeedPolicy::Base(7),
        ..ExperimentSpec::new("soreb", 20, variant, LinkageSpec::Static(StaticLinkage::MarginalProduct(5)))
    };
    let irv = run_experiment(&spec(Variant::IrvGomea))?;
    let rv = run_experiment(&spec(Variant::RvGomea))?;
    for a in irv.aggregates.iter().chain(&rv.aggregates) {
        println!(
            "{:>3} ell={:<3} pop={:<3} success={:.2} corrected cost={:?}",
            a.variant, a.ell, a.pop, a.success_rate, a.corrected_cost
        );
    }
    for r in compare_ratio(&irv.aggregates, &rv.aggregates) {
        println!("ell={}: irv/rv = {:?}", r.ell, r.ratio);
    }
    Ok(())
}
