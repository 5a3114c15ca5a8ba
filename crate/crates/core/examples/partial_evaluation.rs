//! Gray-box evaluation: changing a few variables only recomputes the
//! subfunctions that read them, and the ledger is charged the matching
//! fraction of a full evaluation.

use rvgomea::problems::{make_problem, EvaluationLedger, ProblemParams, Solution};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = make_problem("reb5smalloverlap", 19, &ProblemParams::default())?;
    let mut ledger = EvaluationLedger::unbounded().with_log();

    let x: Vec<f64> = (0..problem.ell()).map(|i| i as f64 * 0.1 - 1.0).collect();
    let mut s = Solution::evaluate(&problem, x, &mut ledger)?;
    println!("full evaluation: f = {:.6}, spent {}", s.fitness, ledger.spent());

    for changed in [vec![0], vec![4], vec![4, 5, 6, 7, 8]] {
        for &v in &changed {
            s.x[v] += 0.5;
        }
        let before = ledger.spent();
        s.fitness = problem.evaluate_partial(&s.x, &changed, &mut s.cache, &mut ledger)?;
        println!(
            "changed {:?}: touched subfunctions {:?}, charged {:.4}, f = {:.6} (direct {:.6})",
            changed,
            problem.touched_subfunctions(&changed),
            ledger.spent() - before,
            s.fitness,
            problem.evaluate_direct(&s.x),
        );
    }
    println!("charges: {:?}", ledger.log().unwrap_or_default());
    Ok(())
}
