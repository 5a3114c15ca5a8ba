use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvgomea::distribution::LearningRates;
use rvgomea::linkage::StaticLinkage;
use rvgomea::optimizer::{
    population_guideline, run, LinkageSpec, OptimizerConfig, RateSchedule, RunResult, RunState, Termination, Variant,
};
use rvgomea::problems::{make_problem, ProblemInstance, ProblemParams};

fn problem(name: &str, ell: usize) -> ProblemInstance {
    let params = if name == "soreb" { ProblemParams::with_kappa(5) } else { ProblemParams::default() };
    make_problem(name, ell, &params).unwrap()
}

/// (problem, dimension, linkage) combinations that exercise unconditional,
/// conditional (with repair) and online linkage.
fn setups() -> Vec<(&'static str, usize, LinkageSpec)> {
    vec![
        ("sphere", 6, LinkageSpec::Static(StaticLinkage::Univariate)),
        ("soreb", 10, LinkageSpec::Static(StaticLinkage::MarginalProduct(5))),
        ("rosenbrock", 6, LinkageSpec::Static(StaticLinkage::ConditionalTrueVig)),
        ("reb5smalloverlap", 9, LinkageSpec::FitnessBased),
    ]
}

fn fingerprint(s: &RunState) -> Vec<(Vec<u64>, Vec<u64>, u64)> {
    s.population()
        .iter()
        .map(|p| {
            (
                p.x.iter().map(|v| v.to_bits()).collect(),
                p.cache.values().iter().map(|v| v.to_bits()).collect(),
                p.fitness.to_bits(),
            )
        })
        .collect()
}

fn same_run(a: &RunResult, b: &RunResult) -> bool {
    a.success == b.success
        && a.evaluations_spent.to_bits() == b.evaluations_spent.to_bits()
        && a.generations == b.generations
        && a.best_fitness.to_bits() == b.best_fitness.to_bits()
        && a.best_solution == b.best_solution
        && a.fallback_events == b.fallback_events
        && a.termination == b.termination
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solutions_never_get_worse(seed in any::<u64>(), variant in prop_oneof![Just(Variant::RvGomea), Just(Variant::IrvGomea)]) {
        for (name, ell, linkage) in setups() {
            let p = problem(name, ell);
            let config = OptimizerConfig::new(variant, 12, linkage).with_seed(seed).with_budget(2e4);
            let mut state = RunState::initialize(config, &p).unwrap();
            let mut best = state.best().fitness;
            for _ in 0..30 {
                if state.is_terminated() {
                    break;
                }
                let before: Vec<f64> = state.population().iter().map(|s| s.fitness).collect();
                let _ = state.generation();
                for (old, new) in before.iter().zip(state.population()) {
                    prop_assert!(new.fitness <= *old, "{name}: {} > {}", new.fitness, old);
                }
                prop_assert!(state.best().fitness <= best);
                best = state.best().fitness;
            }
        }
    }

    /// A rejected step leaves coordinates, cached subvalues and fitness
    /// bit-identical.
    #[test]
    fn rejected_steps_restore_exactly(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, ell, linkage) in setups() {
            let p = problem(name, ell);
            let config = OptimizerConfig::new(Variant::IrvGomea, 12, linkage).with_seed(seed).with_budget(1e6);
            let mut state = RunState::initialize(config, &p).unwrap();
            let _ = state.generation();
            if state.is_terminated() {
                continue;
            }
            for _ in 0..40 {
                let k = rng.random_range(0..state.population().len());
                let before = fingerprint(&state);
                let accepted = if state.linkage().is_conditional() && rng.random_bool(0.3) {
                    state.repair_step(k).unwrap()
                } else {
                    let e = rng.random_range(0..state.models().len());
                    state.gom_step(e, k).unwrap()
                };
                if !accepted {
                    prop_assert_eq!(&before, &fingerprint(&state));
                } else {
                    prop_assert!(state.population()[k].fitness <= f64::from_bits(before[k].2));
                }
            }
        }
    }

    /// The spent total equals the sum of every charge the problem module
    /// made, replayed in order.
    #[test]
    fn ledger_matches_charge_log(seed in any::<u64>()) {
        for (name, ell, linkage) in setups() {
            let p = problem(name, ell);
            let mut config = OptimizerConfig::new(Variant::IrvGomea, 12, linkage).with_seed(seed).with_budget(5e3);
            config.record_charges = true;
            let mut state = RunState::initialize(config, &p).unwrap();
            while !state.is_terminated() {
                let _ = state.generation();
            }
            let log = state.ledger().log().unwrap();
            let replay = log.iter().fold(0.0, |acc, c| acc + c);
            prop_assert_eq!(replay.to_bits(), state.ledger().spent().to_bits());
            prop_assert!(log.iter().all(|&c| c.is_finite() && c >= 0.0));
            prop_assert!(state.ledger().spent() <= 5e3);
        }
    }

    #[test]
    fn runs_are_determined_by_seed(seed in any::<u64>()) {
        for (name, ell, linkage) in setups() {
            let p = problem(name, ell);
            let config = OptimizerConfig::new(Variant::IrvGomea, 12, linkage).with_seed(seed).with_budget(3e3);
            let a = run(&config, &p).unwrap();
            let b = run(&config, &p).unwrap();
            prop_assert!(same_run(&a, &b), "{name}: {a:?} vs {b:?}");
        }
    }

    /// With both rates forced to 1 and the classic decrease factor, the
    /// incremental variant walks exactly the re-estimation path.
    #[test]
    fn unit_rates_reproduce_full_reestimation(seed in any::<u64>()) {
        let p = problem("soreb", 10);
        let linkage = LinkageSpec::Static(StaticLinkage::MarginalProduct(5));
        let rv = OptimizerConfig::new(Variant::RvGomea, 20, linkage).with_seed(seed).with_budget(3e4);
        let mut irv = OptimizerConfig::new(Variant::IrvGomea, 20, linkage).with_seed(seed).with_budget(3e4);
        irv.rates = RateSchedule::Fixed(LearningRates::new(1.0, 1.0));
        irv.multiplier_decrease = 0.9;
        let mut a = RunState::initialize(rv, &p).unwrap();
        let mut b = RunState::initialize(irv, &p).unwrap();
        while !a.is_terminated() {
            let ra = a.generation();
            let rb = b.generation();
            prop_assert_eq!(ra, rb);
            for (ma, mb) in a.models().iter().zip(b.models()) {
                prop_assert_eq!(ma.c_mult, mb.c_mult);
                for (x, y) in ma.cov.iter().zip(mb.cov.iter()).chain(ma.mean.iter().zip(mb.mean.iter())).chain(ma.ams_shift.iter().zip(mb.ams_shift.iter())) {
                    prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{x} vs {y}");
                }
            }
            prop_assert_eq!(fingerprint(&a), fingerprint(&b));
        }
        prop_assert!(b.is_terminated());
    }
}

#[test]
fn variants_share_initialization_and_diverge_after_fitting() {
    let p = problem("soreb", 10);
    let linkage = LinkageSpec::Static(StaticLinkage::MarginalProduct(5));
    let mut a = RunState::initialize(OptimizerConfig::new(Variant::RvGomea, 20, linkage).with_seed(4), &p).unwrap();
    let mut b = RunState::initialize(OptimizerConfig::new(Variant::IrvGomea, 20, linkage).with_seed(4), &p).unwrap();
    assert_eq!(fingerprint(&a), fingerprint(&b));
    for _ in 0..3 {
        a.generation().unwrap();
        b.generation().unwrap();
    }
    assert_ne!(fingerprint(&a), fingerprint(&b));
}

#[test]
fn tiny_population_initializes_in_range() {
    let p = problem("sphere", 1);
    let s = RunState::initialize(OptimizerConfig::new(Variant::IrvGomea, 2, LinkageSpec::Static(StaticLinkage::Univariate)), &p).unwrap();
    assert_eq!(s.population().len(), 2);
    assert_eq!(s.ledger().spent(), 2.0);
    let (lo, hi) = p.init_range();
    assert!(s.population().iter().all(|x| (lo..=hi).contains(&x.x[0])));
}

#[test]
fn static_full_is_one_model() {
    let p = problem("rotated-ellipsoid", 7);
    let s = RunState::initialize(OptimizerConfig::new(Variant::IrvGomea, 20, LinkageSpec::Static(StaticLinkage::Full)), &p).unwrap();
    assert_eq!(s.models().len(), 1);
    assert_eq!(s.models()[0].involved(), &[0, 1, 2, 3, 4, 5, 6]);
}

#[test]
fn online_mode_starts_univariate_and_untested() {
    let p = problem("reb5smalloverlap", 9);
    let s = RunState::initialize(OptimizerConfig::new(Variant::IrvGomea, 20, LinkageSpec::FitnessBased), &p).unwrap();
    assert_eq!(s.dsm().unwrap().tested_count(), 0);
    assert_eq!(s.linkage().len(), 9);
    assert!(s.linkage().elements.iter().all(|e| e.sampled().len() == 1 && !e.is_conditional()));
}

#[test]
fn forced_acceptance_keeps_every_sample() {
    let p = problem("sphere", 5);
    let mut config = OptimizerConfig::new(Variant::IrvGomea, 10, LinkageSpec::Static(StaticLinkage::Univariate)).with_seed(1);
    config.forced_accept_prob = 1.0;
    let mut s = RunState::initialize(config, &p).unwrap();
    s.generation().unwrap();
    for k in 0..10 {
        for e in 0..5 {
            assert!(s.gom_step(e, k).unwrap());
        }
    }
}

#[test]
fn degenerate_model_at_own_values_is_accepted_unchanged() {
    let p = problem("soreb", 10);
    let mut s = RunState::initialize(
        OptimizerConfig::new(Variant::IrvGomea, 10, LinkageSpec::Static(StaticLinkage::MarginalProduct(5))).with_seed(2),
        &p,
    )
    .unwrap();
    s.generation().unwrap();
    let k = 3;
    let x: Vec<f64> = s.population()[k].x[..5].to_vec();
    let f = s.population()[k].fitness;
    let m = &mut s.models_mut()[0];
    m.mean = DVector::from_vec(x.clone());
    m.cov = DMatrix::zeros(5, 5);
    m.refresh_factor();
    assert!(s.gom_step(0, k).unwrap());
    assert_eq!(s.population()[k].fitness, f);
    assert_eq!(&s.population()[k].x[..5], x.as_slice());
}

#[test]
fn repair_with_point_models_moves_to_the_means() {
    let p = problem("rosenbrock", 4);
    let mut config =
        OptimizerConfig::new(Variant::IrvGomea, 10, LinkageSpec::Static(StaticLinkage::ConditionalTrueVig)).with_seed(8);
    config.vtr = Some(-1.0);
    let mut s = RunState::initialize(config, &p).unwrap();
    s.generation().unwrap();
    // every model collapses onto the all-ones optimum
    for m in s.models_mut() {
        let n = m.involved().len();
        m.mean = DVector::from_element(n, 1.0);
        m.cov = DMatrix::zeros(n, n);
        m.ams_shift.fill(0.0);
        m.refresh_factor();
    }
    let k = 0;
    assert!(s.repair_step(k).unwrap());
    assert_eq!(s.population()[k].x, vec![1.0; 4]);
    assert_eq!(s.population()[k].fitness, 0.0);
}

#[test]
fn one_dimensional_sphere_is_solved() {
    let p = problem("sphere", 1);
    let config = OptimizerConfig::new(Variant::IrvGomea, 20, LinkageSpec::Static(StaticLinkage::Univariate)).with_budget(1e5);
    assert!(run(&config, &p).unwrap().success);
}

#[test]
fn zero_budget_does_nothing() {
    let p = problem("sphere", 3);
    let r = run(&OptimizerConfig::new(Variant::RvGomea, 20, LinkageSpec::Static(StaticLinkage::Univariate)).with_budget(0.0), &p).unwrap();
    assert!(!r.success);
    assert_eq!((r.evaluations_spent, r.generations), (0.0, 0));
}

#[test]
fn trivial_target_is_met_by_initialization() {
    let p = problem("sphere", 3);
    let mut config = OptimizerConfig::new(Variant::IrvGomea, 20, LinkageSpec::Static(StaticLinkage::Univariate));
    config.vtr = Some(1e300);
    let r = run(&config, &p).unwrap();
    assert!(r.success);
    assert_eq!(r.generations, 0);
    assert_eq!(r.termination, Some(Termination::VtrReached));
}

#[test]
fn guideline_examples() {
    assert_eq!(population_guideline(Variant::IrvGomea, 10), 40);
    assert_eq!(population_guideline(Variant::RvGomea, 4), 41);
    assert_eq!(population_guideline(Variant::IrvGomea, 1), 13);
}
