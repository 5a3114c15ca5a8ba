//! Find the population size with the lowest corrected cost.

use rvgomea::harness::{bisect_population, cell_cost, ExperimentSpec};
use rvgomea::linkage::StaticLinkage;
use rvgomea::optimizer::{LinkageSpec, Variant};
use rvgomea::problems::ProblemParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ExperimentSpec {
        params: ProblemParams::with_kappa(5),
        replicates: 10,
        ..ExperimentSpec::new("soreb", 20, Variant::IrvGomea, LinkageSpec::Static(StaticLinkage::MarginalProduct(5)))
    };
    let outcome = bisect_population(128, |n| cell_cost(&spec, 20, Variant::IrvGomea, n).expect("valid cell"));
    for (n, c) in &outcome.probes {
        println!("pop {n:4}: {c:?}");
    }
    println!("best population {:?} at corrected cost {:?}", outcome.population, outcome.cost);
    Ok(())
}
