//! Optimize an overlapping problem without structural knowledge: linkage is
//! learned online from fitness-based dependency tests.

use rvgomea::optimizer::{population_guideline, RunState, LinkageSpec, OptimizerConfig, Variant};
use rvgomea::problems::{make_problem, ProblemParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = make_problem("reb5smalloverlap", 19, &ProblemParams::default())?;
    let config = OptimizerConfig::new(Variant::IrvGomea, population_guideline(Variant::IrvGomea, 5), LinkageSpec::FitnessBased)
        .with_seed(3)
        .with_budget(1e7);
    let mut state = RunState::initialize(config, &problem)?;
    while !state.is_terminated() {
        let _ = state.generation();
        if state.generation_count() % 50 == 1 {
            let vig = state.vig().expect("online mode keeps a graph");
            println!(
                "gen {:4}: {} edges learned, {} linkage sets, best {:.3e}",
                state.generation_count(),
                vig.edge_count(),
                state.linkage().len(),
                state.best().fitness
            );
        }
    }
    println!("{:?} after {:.1} evaluations", state.termination(), state.ledger().spent());
    Ok(())
}
