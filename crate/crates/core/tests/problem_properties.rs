mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvgomea::problems::{make_problem, EvaluationLedger, ProblemParams, Solution};

use common::{families_between, is_non_overlapping, rel_close};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Random single- and multi-variable changes keep the cached fitness in
    /// step with evaluating from scratch.
    #[test]
    fn cached_fitness_tracks_direct_evaluation(seed in any::<u64>(), steps in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for problem in families_between(10, 40) {
            let ell = problem.ell();
            let mut ledger = EvaluationLedger::unbounded();
            let (lo, hi) = problem.init_range();
            let x: Vec<f64> = (0..ell).map(|_| rng.random_range(lo..hi)).collect();
            let mut s = Solution::evaluate(&problem, x, &mut ledger).unwrap();
            for _ in 0..steps {
                let width = if rng.random_bool(0.5) { 1 } else { rng.random_range(1..=ell) };
                let mut changed: Vec<usize> = (0..width).map(|_| rng.random_range(0..ell)).collect();
                changed.sort_unstable();
                changed.dedup();
                for &v in &changed {
                    s.x[v] = rng.random_range(lo..hi) * rng.random_range(0.0..1.5);
                }
                s.fitness = problem.evaluate_partial(&s.x, &changed, &mut s.cache, &mut ledger).unwrap();
                let direct = problem.evaluate_direct(&s.x);
                let scale: f64 = (0..problem.subfunctions().len()).map(|i| problem.subvalue(i, &s.x).abs()).sum();
                prop_assert!(
                    rel_close(s.fitness, direct, scale, 1e-9),
                    "{}: cached {} vs direct {}", problem.name(), s.fitness, direct
                );
            }
        }
    }

    /// Touching every subfunction once on a non-overlapping problem costs
    /// exactly one evaluation, in any order.
    #[test]
    fn sweeps_over_disjoint_subfunctions_cost_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for problem in families_between(10, 40).into_iter().filter(is_non_overlapping) {
            let mut order: Vec<usize> = (0..problem.subfunctions().len()).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let mut ledger = EvaluationLedger::unbounded();
            let x = vec![0.5; problem.ell()];
            let mut s = Solution::evaluate(&problem, x, &mut ledger).unwrap();
            let before = ledger.spent();
            for sf in order {
                let changed = problem.subfunctions()[sf].index_set.clone();
                problem.evaluate_partial(&s.x, &changed, &mut s.cache, &mut ledger).unwrap();
            }
            prop_assert!((ledger.spent() - before - 1.0).abs() <= 1e-12, "{}", problem.name());
        }
    }

    /// Without rotation the rotated ellipsoid is the axis-aligned one.
    #[test]
    fn unrotated_ellipsoid_is_axis_aligned(xs in prop::collection::vec(-100.0f64..100.0, 2..30)) {
        let ell = xs.len();
        let params = ProblemParams { angle_deg: Some(0.0), ..ProblemParams::default() };
        let p = make_problem("rotated-ellipsoid", ell, &params).unwrap();
        let expected: f64 = xs
            .iter()
            .enumerate()
            .map(|(i, v)| 10f64.powf(6.0 * i as f64 / (ell - 1) as f64) * v * v)
            .sum();
        let got = p.evaluate_direct(&xs);
        prop_assert!((got - expected).abs() <= 1e-10 * expected.abs().max(1e-300), "{got} vs {expected}");
    }
}

#[test]
fn true_vig_is_pairwise_co_membership() {
    for problem in families_between(10, 40) {
        let mut brute = BTreeSet::new();
        for u in 0..problem.ell() {
            for v in u + 1..problem.ell() {
                if problem
                    .subfunctions()
                    .iter()
                    .any(|sf| sf.index_set.contains(&u) && sf.index_set.contains(&v))
                {
                    brute.insert((u, v));
                }
            }
        }
        let got: BTreeSet<(usize, usize)> = problem.true_vig().edges().into_iter().collect();
        assert_eq!(got, brute, "{}", problem.name());
    }
}

#[test]
fn soreb_has_disjoint_width_five_blocks() {
    let p = make_problem("soreb", 20, &ProblemParams::with_kappa(5)).unwrap();
    let sets: Vec<Vec<usize>> = p.subfunctions().iter().map(|s| s.index_set.clone()).collect();
    assert_eq!(sets, (0..4usize).map(|b| (5 * b..5 * b + 5).collect::<Vec<usize>>()).collect::<Vec<_>>());
}
