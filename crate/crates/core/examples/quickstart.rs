//! Solve a sum of rotated ellipsoids with iRV-GOMEA at its guideline
//! population size, printing progress every few generations.

use rvgomea::linkage::StaticLinkage;
use rvgomea::optimizer::{population_guideline, run_with_observer, LinkageSpec, OptimizerConfig, Variant};
use rvgomea::problems::{make_problem, ProblemParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = make_problem("soreb", 20, &ProblemParams::with_kappa(5))?;
    let pop = population_guideline(Variant::IrvGomea, 5);
    let config = OptimizerConfig::new(Variant::IrvGomea, pop, LinkageSpec::Static(StaticLinkage::MarginalProduct(5)))
        .with_seed(42)
        .with_budget(1e6);

    let result = run_with_observer(&config, &problem, |s| {
        if s.generation % 25 == 0 {
            println!(
                "gen {:4}  evals {:9.1}  best {:.3e}  c_mult in [{:.2}, {:.2}]",
                s.generation, s.spent, s.best_fitness, s.c_mult_min, s.c_mult_max
            );
        }
    })?;
    println!(
        "{:?} after {} generations, {:.1} evaluations, best {:.3e}",
        result.termination, result.generations, result.evaluations_spent, result.best_fitness
    );
    Ok(())
}
