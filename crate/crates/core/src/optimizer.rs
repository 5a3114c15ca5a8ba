//! The RV-GOMEA / iRV-GOMEA generation loop.
//!
//! A generation selects the best `floor(tau * |P|)` solutions, refreshes the
//! linkage model (online mode), refits every linkage set's Gaussian, runs
//! gene-pool optimal mixing over all sets and solutions, optionally applies
//! the conditional repair sweep, and finally adapts the distribution
//! multipliers.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::distribution::{
    self, Alphas, ImprovementStats, LearningRates, SamplingModel, UpdateMode, AMS_DELTA,
    ASYMMETRIC_MULTIPLIER_DECREASE, CLASSIC_MULTIPLIER_DECREASE,
};
use crate::linkage::{
    self, Dsm, FosElement, LinkageError, LinkageModel, StaticLinkage, Vig, DEFAULT_D_MIN, DEFAULT_PERTURBATION,
};
use crate::problems::{EvaluationLedger, ProblemInstance, Solution};

/// Default truncation selection fraction.
pub const DEFAULT_TAU: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Variant {
    #[serde(rename = "rv")]
    RvGomea,
    #[serde(rename = "irv")]
    IrvGomea,
}

impl Variant {
    pub fn default_multiplier_decrease(self) -> f64 {
        match self {
            Variant::RvGomea => CLASSIC_MULTIPLIER_DECREASE,
            Variant::IrvGomea => ASYMMETRIC_MULTIPLIER_DECREASE,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::RvGomea => "rv",
            Variant::IrvGomea => "irv",
        })
    }
}

impl FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rv" | "rv-gomea" => Ok(Variant::RvGomea),
            "irv" | "irv-gomea" => Ok(Variant::IrvGomea),
            other => Err(ConfigError::Parse(format!("unknown variant `{other}`"))),
        }
    }
}

/// Where the linkage model comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkageSpec {
    Static(StaticLinkage),
    /// Online fitness-based dependency tests with clique seeding.
    FitnessBased,
}

impl fmt::Display for LinkageSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkageSpec::Static(StaticLinkage::Univariate) => f.write_str("univariate"),
            LinkageSpec::Static(StaticLinkage::MarginalProduct(k)) => write!(f, "blocks:{k}"),
            LinkageSpec::Static(StaticLinkage::Full) => f.write_str("full"),
            LinkageSpec::Static(StaticLinkage::SubfunctionBlocks) => f.write_str("subfunctions"),
            LinkageSpec::Static(StaticLinkage::ConditionalTrueVig) => f.write_str("true-vig"),
            LinkageSpec::FitnessBased => f.write_str("fitness-based"),
        }
    }
}

impl FromStr for LinkageSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "univariate" => LinkageSpec::Static(StaticLinkage::Univariate),
            "full" => LinkageSpec::Static(StaticLinkage::Full),
            "subfunctions" => LinkageSpec::Static(StaticLinkage::SubfunctionBlocks),
            "true-vig" => LinkageSpec::Static(StaticLinkage::ConditionalTrueVig),
            "fitness-based" => LinkageSpec::FitnessBased,
            other => match other.strip_prefix("blocks:") {
                Some(k) => LinkageSpec::Static(StaticLinkage::MarginalProduct(
                    k.parse().map_err(|_| ConfigError::Parse(format!("bad block size in `{other}`")))?,
                )),
                None => return Err(ConfigError::Parse(format!("unknown linkage `{other}`"))),
            },
        })
    }
}

/// How incremental learning rates are chosen for each linkage set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateSchedule {
    /// Evaluate the learning-rate function with these parameters for every
    /// linkage set's selection size and variable count.
    Regressed { cov: Alphas, ams: Alphas },
    /// Same rates for every linkage set.
    Fixed(LearningRates),
}

impl Default for RateSchedule {
    fn default() -> Self {
        RateSchedule::Regressed {
            cov: Alphas::COVARIANCE,
            ams: Alphas::AMS,
        }
    }
}

/// Granularity at which the anticipated mean shift is learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmsGranularity {
    /// One shift per linkage set, blended at that set's own learning rate.
    #[default]
    PerLinkageSet,
    /// One shift over all variables, blended at the rate for `ell`
    /// variables; each linkage set uses its slice.
    Global,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("population size must be at least 2 (got {0})")]
    PopulationTooSmall(usize),
    #[error("selection fraction {tau} is outside (0, 1] (population {population})")]
    InvalidSelectionFraction { tau: f64, population: usize },
    #[error("forced acceptance probability {0} is outside [0, 1]")]
    ForcedAcceptance(f64),
    #[error("budget {budget} cannot cover the initial population of {population}")]
    BudgetTooSmall { budget: f64, population: usize },
    #[error(transparent)]
    Linkage(#[from] LinkageError),
    #[error("{0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub population_size: usize,
    pub tau: f64,
    pub variant: Variant,
    pub linkage: LinkageSpec,
    pub forced_accept_prob: f64,
    pub multiplier_decrease: f64,
    /// Defaults to `25 + ell`.
    pub nis_max: Option<usize>,
    /// Overrides the problem's value to reach.
    pub vtr: Option<f64>,
    pub budget: f64,
    pub seed: u64,
    pub rates: RateSchedule,
    /// Dependency tests per generation in online mode; defaults to `ell`.
    pub dsm_pair_budget: Option<usize>,
    pub d_min: f64,
    pub perturbation: f64,
    /// Run the conditional repair sweep whenever the model is conditional.
    pub repair: bool,
    pub ams_granularity: AmsGranularity,
    /// Keep every individual ledger charge (see [`RunState::ledger`]).
    pub record_charges: bool,
}

impl OptimizerConfig {
    pub fn new(variant: Variant, population_size: usize, linkage: LinkageSpec) -> Self {
        Self {
            population_size,
            tau: DEFAULT_TAU,
            variant,
            linkage,
            forced_accept_prob: 0.0,
            multiplier_decrease: variant.default_multiplier_decrease(),
            nis_max: None,
            vtr: None,
            budget: 1e8,
            seed: 0,
            rates: RateSchedule::default(),
            dsm_pair_budget: None,
            d_min: DEFAULT_D_MIN,
            perturbation: DEFAULT_PERTURBATION,
            repair: true,
            ams_granularity: AmsGranularity::PerLinkageSet,
            record_charges: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = budget;
        self
    }

    /// `floor(tau * |P|)`, but never below one solution.
    pub fn selection_size(&self) -> usize {
        ((self.tau * self.population_size as f64).floor() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.population_size < 2 {
            return Err(ConfigError::PopulationTooSmall(self.population_size));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(ConfigError::InvalidSelectionFraction {
                tau: self.tau,
                population: self.population_size,
            });
        }
        if !(0.0..=1.0).contains(&self.forced_accept_prob) {
            return Err(ConfigError::ForcedAcceptance(self.forced_accept_prob));
        }
        Ok(())
    }
}

/// Population-size guideline for a linkage set of `kappa` variables.
pub fn population_guideline(variant: Variant, kappa: usize) -> usize {
    match variant {
        Variant::IrvGomea => 10 + 3 * kappa,
        Variant::RvGomea => (17.0 + 3.0 * (kappa as f64).powf(1.5)).round() as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    VtrReached,
    BudgetExhausted,
    FitnessVarianceCollapsed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub success: bool,
    pub evaluations_spent: f64,
    pub generations: usize,
    pub best_fitness: f64,
    /// Decision vector of the best solution seen (empty when no evaluation ran).
    pub best_solution: Vec<f64>,
    pub fallback_events: usize,
    pub termination: Option<Termination>,
    pub wall_time: Duration,
}

/// Per-generation telemetry record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub spent: f64,
    pub c_mult_min: f64,
    pub c_mult_max: f64,
    pub fallback_events: usize,
    pub linkage_sets: usize,
}

/// Everything a run carries between generations.
#[derive(Debug, Clone)]
pub struct RunState<'p> {
    problem: &'p ProblemInstance,
    config: OptimizerConfig,
    vtr: f64,
    nis_max: usize,
    population: Vec<Solution>,
    linkage: LinkageModel,
    models: Vec<SamplingModel>,
    fitted: bool,
    element_touched: Vec<Vec<usize>>,
    previous_selection_mean: Option<Vec<f64>>,
    dsm: Option<Dsm>,
    vig: Option<Vig>,
    nis: usize,
    generation: usize,
    ledger: EvaluationLedger,
    best: Solution,
    rng: ChaCha8Rng,
    aux_rng: ChaCha8Rng,
    fallback_events: usize,
    termination: Option<Termination>,
    improved_in_pass: Vec<Vec<bool>>,
    best_improved: bool,
    pending_transfer: Option<Vec<SamplingModel>>,
    global_ams_shift: Option<Vec<f64>>,
}

impl<'p> RunState<'p> {
    /// Samples and evaluates the initial population and builds the initial
    /// linkage model.
    pub fn initialize(config: OptimizerConfig, problem: &'p ProblemInstance) -> Result<Self, ConfigError> {
        config.validate()?;
        let n = config.population_size;
        if config.budget < n as f64 {
            return Err(ConfigError::BudgetTooSmall {
                budget: config.budget,
                population: n,
            });
        }
        let ell = problem.ell();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let aux_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5DEE_CE66_D1CE_4E5B);
        let mut ledger = EvaluationLedger::new(config.budget);
        if config.record_charges {
            ledger = ledger.with_log();
        }

        let mut population = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..ell)
                .map(|i| {
                    let (lo, hi) = problem.init_interval(i);
                    lo + (hi - lo) * rng.random::<f64>()
                })
                .collect();
            population.push(Solution::evaluate(problem, x, &mut ledger).expect("budget checked above"));
        }

        let (linkage, dsm, vig) = match config.linkage {
            LinkageSpec::Static(kind) => (linkage::static_model(kind, problem)?, None, None),
            LinkageSpec::FitnessBased => {
                let vig = Vig::empty(ell);
                (linkage::clique_seeding(&vig), Some(Dsm::new(ell)), Some(vig))
            }
        };
        let models = linkage.elements.iter().cloned().map(SamplingModel::unfitted).collect();
        let element_touched = linkage
            .elements
            .iter()
            .map(|e| problem.touched_subfunctions(e.sampled()))
            .collect();
        let best = population
            .iter()
            .min_by(|a, b| a.fitness.total_cmp(&b.fitness))
            .expect("population is not empty")
            .clone();
        let vtr = config.vtr.unwrap_or(problem.vtr());
        let nis_max = config.nis_max.unwrap_or(25 + ell);
        let mut state = Self {
            problem,
            vtr,
            nis_max,
            population,
            linkage,
            models,
            fitted: false,
            element_touched,
            previous_selection_mean: None,
            dsm,
            vig,
            nis: 0,
            generation: 0,
            ledger,
            best,
            rng,
            aux_rng,
            fallback_events: 0,
            termination: None,
            improved_in_pass: Vec::new(),
            best_improved: false,
            pending_transfer: None,
            global_ams_shift: None,
            config,
        };
        if state.reached(state.best.fitness) {
            state.termination = Some(Termination::VtrReached);
        } else if state.fitness_variance_collapsed() {
            state.termination = Some(Termination::FitnessVarianceCollapsed);
        }
        Ok(state)
    }

    pub fn problem(&self) -> &ProblemInstance {
        self.problem
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn population(&self) -> &[Solution] {
        &self.population
    }

    pub fn linkage(&self) -> &LinkageModel {
        &self.linkage
    }

    pub fn models(&self) -> &[SamplingModel] {
        &self.models
    }

    /// Direct access to the sampling models, e.g. to pin a model for testing.
    pub fn models_mut(&mut self) -> &mut [SamplingModel] {
        &mut self.models
    }

    pub fn dsm(&self) -> Option<&Dsm> {
        self.dsm.as_ref()
    }

    pub fn vig(&self) -> Option<&Vig> {
        self.vig.as_ref()
    }

    pub fn nis(&self) -> usize {
        self.nis
    }

    pub fn generation_count(&self) -> usize {
        self.generation
    }

    pub fn ledger(&self) -> &EvaluationLedger {
        &self.ledger
    }

    pub fn best(&self) -> &Solution {
        &self.best
    }

    pub fn fallback_events(&self) -> usize {
        self.fallback_events
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    pub fn is_terminated(&self) -> bool {
        self.termination.is_some()
    }

    fn reached(&self, f: f64) -> bool {
        f <= self.vtr
    }

    fn fitness_variance_collapsed(&self) -> bool {
        let n = self.population.len() as f64;
        let mean = self.population.iter().map(|s| s.fitness).sum::<f64>() / n;
        let var = self
            .population
            .iter()
            .map(|s| (s.fitness - mean) * (s.fitness - mean))
            .sum::<f64>()
            / n;
        var <= 0.0
    }

    /// Indices of the `floor(tau |P|)` best solutions, best first.
    pub fn selection_indices(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.population.len()).collect();
        order.sort_by(|&a, &b| {
            self.population[a]
                .fitness
                .total_cmp(&self.population[b].fitness)
                .then(a.cmp(&b))
        });
        order.truncate(self.config.selection_size());
        order
    }

    fn note_accepted(&mut self, k: usize) -> Result<(), Termination> {
        let f = self.population[k].fitness;
        if f < self.best.fitness {
            self.best = self.population[k].clone();
            self.best_improved = true;
        }
        if self.reached(f) {
            self.termination = Some(Termination::VtrReached);
            return Err(Termination::VtrReached);
        }
        Ok(())
    }

    fn budget_stop(&mut self) -> Termination {
        self.termination = Some(Termination::BudgetExhausted);
        Termination::BudgetExhausted
    }

    /// Writes `values` into the sampled variables of linkage set `element` of
    /// solution `k`, partially evaluates, and keeps the change iff the fitness
    /// did not get worse (or, when `gom`, by forced acceptance). A rejected
    /// change is undone exactly. Only GOM changes feed the AVS statistics.
    fn try_partial_change(&mut self, element: usize, k: usize, mut values: Vec<f64>, gom: bool) -> Result<bool, Termination> {
        let sampled = self.models[element].element().sampled();
        if let Some(bounds) = self.problem.bounds() {
            for (v, &i) in values.iter_mut().zip(sampled) {
                *v = v.clamp(bounds[i].0, bounds[i].1);
            }
        }
        let touched = &self.element_touched[element];
        let sol = &mut self.population[k];
        let old_values: Vec<f64> = sampled.iter().map(|&i| sol.x[i]).collect();
        let old_subvalues: Vec<f64> = touched.iter().map(|&t| sol.cache.value(t)).collect();
        let old_fitness = sol.fitness;
        for (&i, &v) in sampled.iter().zip(&values) {
            sol.x[i] = v;
        }
        let new_fitness = match self.problem.evaluate_touched(&sol.x, touched, &mut sol.cache, &mut self.ledger) {
            Ok(f) => f,
            Err(_) => {
                // nothing was charged or cached; only the coordinates moved
                for (&i, &v) in sampled.iter().zip(&old_values) {
                    sol.x[i] = v;
                }
                return Err(self.budget_stop());
            }
        };
        let forced =
            gom && self.config.forced_accept_prob > 0.0 && self.rng.random::<f64>() < self.config.forced_accept_prob;
        if new_fitness <= old_fitness || forced {
            sol.fitness = new_fitness;
            if gom && new_fitness < old_fitness {
                if let Some(flags) = self.improved_in_pass.get_mut(element) {
                    flags[k] = true;
                }
            }
            self.note_accepted(k)?;
            Ok(true)
        } else {
            for (&i, &v) in sampled.iter().zip(&old_values) {
                sol.x[i] = v;
            }
            for (&t, &v) in touched.iter().zip(&old_subvalues) {
                sol.cache.set(t, v);
            }
            Ok(false)
        }
    }

    /// Multipliers change at the end of a generation; steps taken between
    /// generations refactor on demand.
    fn ensure_factor(&mut self, element: usize) {
        if self.models[element].is_stale() {
            self.models[element].refresh_factor();
        }
    }

    /// Resamples linkage set `element` in solution `k` (conditioned on the
    /// solution's own values of the conditioning variables) and keeps the
    /// change only when the fitness did not get worse, or by forced
    /// acceptance. Returns whether the change was kept.
    pub fn gom_step(&mut self, element: usize, k: usize) -> Result<bool, Termination> {
        self.ensure_factor(element);
        let model = &self.models[element];
        let conditioning: Option<Vec<f64>> = model
            .element()
            .is_conditional()
            .then(|| model.element().conditioned_on().iter().map(|&v| self.population[k].x[v]).collect());
        let values: Vec<f64> = model.sample(conditioning.as_deref(), &mut self.rng).iter().copied().collect();
        self.try_partial_change(element, k, values, true)
    }

    /// Shifts the sampled variables of linkage set `element` in solution `k`
    /// along the anticipated mean shift; kept only when not worse.
    pub fn ams_step(&mut self, element: usize, k: usize) -> Result<bool, Termination> {
        self.ensure_factor(element);
        let model = &self.models[element];
        let mut values: Vec<f64> = model.element().sampled().iter().map(|&i| self.population[k].x[i]).collect();
        distribution::apply_ams(&mut values, model, AMS_DELTA);
        self.try_partial_change(element, k, values, false)
    }

    /// Resamples every linkage set of solution `k` in one sweep, each set
    /// conditioned on the current (possibly just resampled) values, followed
    /// by a single acceptance test charged at the accumulated partial cost.
    pub fn repair_step(&mut self, k: usize) -> Result<bool, Termination> {
        for e in 0..self.models.len() {
            self.ensure_factor(e);
        }
        let backup = self.population[k].clone();
        let mut changed = vec![false; self.problem.ell()];
        for model in &self.models {
            let x = &self.population[k].x;
            let conditioning: Option<Vec<f64>> = model
                .element()
                .is_conditional()
                .then(|| model.element().conditioned_on().iter().map(|&v| x[v]).collect());
            let values = model.sample(conditioning.as_deref(), &mut self.rng);
            let x = &mut self.population[k].x;
            for (&i, &v) in model.element().sampled().iter().zip(values.iter()) {
                x[i] = match self.problem.bounds() {
                    Some(b) => v.clamp(b[i].0, b[i].1),
                    None => v,
                };
                changed[i] = true;
            }
        }
        let changed: Vec<usize> = (0..changed.len()).filter(|&i| changed[i]).collect();
        let touched = self.problem.touched_subfunctions(&changed);
        let sol = &mut self.population[k];
        let new_fitness = match self.problem.evaluate_touched(&sol.x, &touched, &mut sol.cache, &mut self.ledger) {
            Ok(f) => f,
            Err(_) => {
                self.population[k] = backup;
                return Err(self.budget_stop());
            }
        };
        let forced = self.config.forced_accept_prob > 0.0 && self.rng.random::<f64>() < self.config.forced_accept_prob;
        if new_fitness <= backup.fitness || forced {
            sol.fitness = new_fitness;
            self.note_accepted(k)?;
            Ok(true)
        } else {
            self.population[k] = backup;
            Ok(false)
        }
    }

    /// AVS statistics for linkage set `e` after its variation pass. A
    /// solution counts as an improvement when this pass strictly decreased its
    /// fitness and it is now better than `reference`, the best fitness at the
    /// start of the generation. The SDR is taken from the average offset of
    /// those solutions to the (conditional) model mean.
    fn element_improvement(&self, e: usize, reference: f64) -> ImprovementStats {
        let model = &self.models[e];
        let mut offset = vec![0.0; model.sampled_len()];
        let mut count = 0usize;
        let flags = &self.improved_in_pass[e];
        for (sol, _) in self.population.iter().zip(flags).filter(|(s, &f)| f && s.fitness < reference) {
            let conditioning: Option<Vec<f64>> = model
                .element()
                .is_conditional()
                .then(|| model.element().conditioned_on().iter().map(|&v| sol.x[v]).collect());
            let mean = model.conditional_mean(conditioning.as_deref());
            for (acc, (&v, m)) in offset.iter_mut().zip(model.element().sampled().iter().zip(mean.iter())) {
                *acc += sol.x[v] - m;
            }
            count += 1;
        }
        if count == 0 {
            return ImprovementStats { improved: false, sdr: 0.0 };
        }
        offset.iter_mut().for_each(|v| *v /= count as f64);
        ImprovementStats {
            improved: true,
            sdr: model.standard_deviation_ratio(&offset),
        }
    }

    fn rates_for(&self, model: &SamplingModel) -> (LearningRates, UpdateMode) {
        match self.config.variant {
            Variant::RvGomea => (LearningRates::full(), UpdateMode::FullReestimate),
            Variant::IrvGomea => {
                let rates = match self.config.rates {
                    RateSchedule::Fixed(r) => r,
                    RateSchedule::Regressed { cov, ams } => {
                        LearningRates::regressed(cov, ams, self.config.selection_size(), model.involved().len())
                    }
                };
                (rates, UpdateMode::Incremental)
            }
        }
    }

    /// Global AMS bookkeeping: blends the full-length shift and returns it,
    /// or `None` in per-linkage-set mode.
    fn global_ams_update(&mut self, selection_mean: &[f64]) -> Option<Vec<f64>> {
        if self.config.ams_granularity != AmsGranularity::Global {
            return None;
        }
        let target: Vec<f64> = match &self.previous_selection_mean {
            Some(prev) => selection_mean.iter().zip(prev).map(|(a, b)| a - b).collect(),
            None => vec![0.0; selection_mean.len()],
        };
        let eta = match (self.config.variant, self.config.rates) {
            (Variant::RvGomea, _) => 1.0,
            (Variant::IrvGomea, RateSchedule::Fixed(r)) => r.eta_ams,
            (Variant::IrvGomea, RateSchedule::Regressed { ams, .. }) => {
                distribution::learning_rate(ams, self.config.selection_size(), self.problem.ell())
            }
        };
        let next = match &self.global_ams_shift {
            Some(prev) => distribution::incremental_update(prev, &target, eta),
            None => target,
        };
        self.global_ams_shift = Some(next.clone());
        Some(next)
    }

    /// Online mode: spend this generation's dependency tests and rebuild the
    /// clique-seeded model around the current best solution.
    fn refresh_online_linkage(&mut self) -> Result<(), Termination> {
        let Some(dsm) = self.dsm.as_mut() else {
            return Ok(());
        };
        if dsm.fully_tested() {
            return Ok(());
        }
        let budget = self.config.dsm_pair_budget.unwrap_or(self.problem.ell());
        let reference = self.best.clone();
        let result = linkage::update_dsm_incremental(
            dsm,
            self.problem,
            &reference,
            budget,
            self.config.perturbation,
            &mut self.ledger,
            &mut self.aux_rng,
        );
        if result.is_err() {
            return Err(self.budget_stop());
        }
        let vig = linkage::build_vig(dsm, self.config.d_min);
        let model = linkage::clique_seeding(&vig);
        self.vig = Some(vig);
        if model.elements != self.linkage.elements {
            let mut next = Vec::with_capacity(model.elements.len());
            for e in &model.elements {
                let m = match self.models.iter().find(|m| m.element() == e) {
                    Some(existing) => existing.clone(),
                    None => self.new_model(e.clone()),
                };
                next.push(m);
            }
            // previous models stay available for covariance transfer below
            self.element_touched = model
                .elements
                .iter()
                .map(|e| self.problem.touched_subfunctions(e.sampled()))
                .collect();
            self.linkage = model;
            let previous = std::mem::replace(&mut self.models, next);
            self.pending_transfer = Some(previous);
        }
        Ok(())
    }

    fn new_model(&self, element: FosElement) -> SamplingModel {
        let mut m = SamplingModel::unfitted(element);
        if let Some(prev) = &self.previous_selection_mean {
            let sampled: Vec<f64> = m.element().sampled().iter().map(|&v| prev[v]).collect();
            m.previous_mean = Some(nalgebra::DVector::from_vec(sampled));
        }
        m
    }

    /// Runs one generation. Does nothing once the run has terminated.
    pub fn generation(&mut self) -> Result<(), Termination> {
        if let Some(t) = self.termination {
            return Err(t);
        }
        self.best_improved = false;

        let selection_idx = self.selection_indices();
        let selection_mean: Vec<f64> = {
            let s = selection_idx.len() as f64;
            (0..self.problem.ell())
                .map(|v| selection_idx.iter().map(|&i| self.population[i].x[v]).sum::<f64>() / s)
                .collect()
        };

        self.pending_transfer = None;
        self.refresh_online_linkage()?;

        // model update
        let selection_owned: Vec<Vec<f64>> = selection_idx.iter().map(|&i| self.population[i].x.clone()).collect();
        let selection: Vec<&[f64]> = selection_owned.iter().map(Vec::as_slice).collect();
        let previous: Vec<SamplingModel> = if !self.fitted {
            Vec::new()
        } else {
            match self.pending_transfer.take() {
                Some(prev) => prev,
                None => self.models.clone(),
            }
        };
        for e in 0..self.models.len() {
            let (rates, mode) = self.rates_for(&self.models[e]);
            let seed = match mode {
                UpdateMode::Incremental => {
                    distribution::transfer_covariance(&previous, self.models[e].element(), &selection, &mut self.aux_rng)
                }
                UpdateMode::FullReestimate => nalgebra::DMatrix::zeros(0, 0),
            };
            if distribution::update_model(&mut self.models[e], &selection, &seed, rates, mode) {
                self.fallback_events += 1;
            }
        }
        self.fitted = true;

        if let Some(global) = self.global_ams_update(&selection_mean) {
            for m in &mut self.models {
                m.ams_shift = nalgebra::DVector::from_iterator(m.sampled_len(), m.element().sampled().iter().map(|&v| global[v]));
            }
        }

        // gene-pool optimal mixing
        let n = self.population.len();
        let reference = self.population[selection_idx[0]].fitness;
        self.improved_in_pass = vec![vec![false; n]; self.models.len()];
        let mut order: Vec<usize> = (0..self.models.len()).collect();
        order.shuffle(&mut self.rng);
        let mut stats = vec![ImprovementStats { improved: false, sdr: 0.0 }; self.models.len()];
        for &e in &order {
            for k in 0..n {
                self.gom_step(e, k)?;
            }
            stats[e] = self.element_improvement(e, reference);
        }

        if self.config.repair && self.linkage.is_conditional() {
            for k in 0..n {
                self.repair_step(k)?;
            }
        }

        // anticipated mean shift; there is no shift before a previous mean exists
        if self.generation > 0 {
            let ams_n = distribution::ams_count(self.config.tau, n);
            let mut candidates: Vec<usize> = (0..n).collect();
            for &e in &order {
                let (chosen, _) = candidates.partial_shuffle(&mut self.rng, ams_n);
                let chosen = chosen.to_vec();
                for k in chosen {
                    self.ams_step(e, k)?;
                }
            }
        }

        // no-improvement stretch and multiplier adaptation
        if self.best_improved {
            self.nis = 0;
        } else {
            self.nis += 1;
        }
        for (e, stats) in stats.into_iter().enumerate() {
            distribution::update_multiplier(
                &mut self.models[e],
                stats,
                self.nis,
                self.nis_max,
                self.config.multiplier_decrease,
            );
        }

        self.previous_selection_mean = Some(selection_mean);
        self.generation += 1;
        if self.fitness_variance_collapsed() {
            self.termination = Some(Termination::FitnessVarianceCollapsed);
            return Err(Termination::FitnessVarianceCollapsed);
        }
        Ok(())
    }

    pub fn stats(&self) -> GenerationStats {
        let (lo, hi) = self
            .models
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m.c_mult), hi.max(m.c_mult)));
        GenerationStats {
            generation: self.generation,
            best_fitness: self.best.fitness,
            spent: self.ledger.spent(),
            c_mult_min: lo,
            c_mult_max: hi,
            fallback_events: self.fallback_events,
            linkage_sets: self.models.len(),
        }
    }

    fn result(&self, started: Instant) -> RunResult {
        RunResult {
            success: self.termination == Some(Termination::VtrReached),
            evaluations_spent: self.ledger.spent(),
            generations: self.generation,
            best_fitness: self.best.fitness,
            best_solution: self.best.x.clone(),
            fallback_events: self.fallback_events,
            termination: self.termination,
            wall_time: started.elapsed(),
        }
    }
}

/// Runs until the value to reach is hit, the budget runs out, or the
/// population fitness collapses to a single value.
pub fn run(config: &OptimizerConfig, problem: &ProblemInstance) -> Result<RunResult, ConfigError> {
    run_with_observer(config, problem, |_| {})
}

/// Like [`run`], calling `observer` after initialization and after every
/// generation.
pub fn run_with_observer<F>(config: &OptimizerConfig, problem: &ProblemInstance, mut observer: F) -> Result<RunResult, ConfigError>
where
    F: FnMut(&GenerationStats),
{
    let started = Instant::now();
    config.validate()?;
    if config.budget < config.population_size as f64 {
        return Ok(RunResult {
            success: false,
            evaluations_spent: 0.0,
            generations: 0,
            best_fitness: f64::INFINITY,
            best_solution: Vec::new(),
            fallback_events: 0,
            termination: Some(Termination::BudgetExhausted),
            wall_time: started.elapsed(),
        });
    }
    let mut state = RunState::initialize(config.clone(), problem)?;
    observer(&state.stats());
    while !state.is_terminated() {
        let _ = state.generation();
        observer(&state.stats());
    }
    Ok(state.result(started))
}

/// Settings for [`minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOptions {
    /// Independent restarts; the best result over all of them is returned.
    pub restarts: usize,
    /// Evaluation budget of each restart.
    pub budget_per_restart: f64,
    /// A restart stops early once its best value is at or below this.
    pub target: f64,
    pub seed: u64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            budget_per_restart: 1e4,
            target: f64::NEG_INFINITY,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: f64,
}

/// Minimizes an opaque function over a box with iRV-GOMEA using a single
/// full-covariance linkage set and the guideline population. Samples that
/// leave the box are clipped onto its faces.
pub fn minimize<F>(bounds: Vec<(f64, f64)>, f: F, options: &MinimizeOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    assert!(!bounds.is_empty(), "minimize needs at least one variable");
    assert!(bounds.iter().all(|(lo, hi)| lo <= hi), "empty box");
    let dim = bounds.len();
    let problem = ProblemInstance::black_box("minimize", bounds, options.target, f);
    let population = population_guideline(Variant::IrvGomea, dim);
    let mut best = Minimum {
        x: Vec::new(),
        value: f64::INFINITY,
        evaluations: 0.0,
    };
    for restart in 0..options.restarts.max(1) {
        let seed = options.seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let config = OptimizerConfig::new(Variant::IrvGomea, population, LinkageSpec::Static(StaticLinkage::Full))
            .with_seed(seed)
            .with_budget(options.budget_per_restart);
        let result = run(&config, &problem).expect("full-linkage configuration is always valid");
        best.evaluations += result.evaluations_spent;
        if result.best_fitness < best.value || best.x.is_empty() {
            best.x = result.best_solution;
            best.value = result.best_fitness;
        }
    }
    best
}
