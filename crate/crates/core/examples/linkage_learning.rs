//! Learn the variable interaction graph of an overlapping problem with
//! pairwise dependency tests, then seed conditional linkage sets from its
//! cliques.

use rvgomea::linkage::{build_vig, clique_seeding, dependency_test, Dsm, DEFAULT_D_MIN, DEFAULT_PERTURBATION};
use rvgomea::problems::{make_problem, EvaluationLedger, ProblemParams, Solution};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = make_problem("reb5smalloverlap", 19, &ProblemParams::default())?;
    let mut ledger = EvaluationLedger::unbounded();
    let x: Vec<f64> = (0..problem.ell()).map(|i| -110.0 + (i % 7) as f64).collect();
    let reference = Solution::evaluate(&problem, x, &mut ledger)?;

    let mut dsm = Dsm::new(problem.ell());
    for (i, j) in dsm.untested_pairs() {
        let d = dependency_test(&problem, &reference, i, j, DEFAULT_PERTURBATION, &mut ledger)?;
        dsm.set(i, j, d);
    }
    let vig = build_vig(&dsm, DEFAULT_D_MIN);
    let truth = problem.true_vig();
    println!(
        "{} pairs tested for {:.1} evaluations; learned {} edges, true graph has {}; identical: {}",
        dsm.tested_count(),
        ledger.spent(),
        vig.edge_count(),
        truth.edge_count(),
        vig.edges() == truth.edges()
    );

    let model = clique_seeding(&vig);
    for e in &model.elements {
        println!("sample {:?} given {:?}", e.sampled(), e.conditioned_on());
    }
    Ok(())
}
