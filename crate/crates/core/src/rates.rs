//! Learning-rate meta-tuning and regression.
//!
//! For every benchmark, linkage-set size `kappa` and population size, the two
//! fixed learning rates `(eta_cov, eta_ams)` of iRV-GOMEA are tuned by an
//! outer minimization of the mean evaluations-to-target. The resulting
//! samples are filtered (a `(kappa, |P|)` cell only counts when the rotated
//! ellipsoid was solved there) and the parametric rate function
//! `1 - exp(a0 |S|^a1 / kappa^a2)` is fitted to them by least squares.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{learning_rate, Alphas, LearningRates};
use crate::harness::replicate_seed;
use crate::linkage::StaticLinkage;
use crate::optimizer::{
    self, minimize, population_guideline, LinkageSpec, MinimizeOptions, OptimizerConfig, RateSchedule, Variant,
    DEFAULT_TAU,
};
use crate::problems::{make_problem, ProblemError, ProblemInstance, ProblemParams};

/// Problem whose failure at a `(kappa, |P|)` cell invalidates the whole cell.
pub const FILTER_PROBLEM: &str = "rotated-ellipsoid";

/// Initialization range used while tuning.
pub const TUNING_INIT_RANGE: (f64, f64) = (-10.0, 5.0);

/// Search box of the regression: `a0` in [-10, 10], `a1` and `a2` in [0, 5].
pub const ALPHA_BOX: [(f64, f64); 3] = [(-10.0, 10.0), (0.0, 5.0), (0.0, 5.0)];

#[derive(Debug, Error)]
pub enum RatesError {
    #[error("alpha regression needs at least 3 usable samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("sample file: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed fit file: {0}")]
    Parse(String),
}

/// One tuned learning-rate pair for a `(problem, kappa, |P|)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub problem: String,
    pub kappa: usize,
    #[serde(rename = "pop")]
    pub population_size: usize,
    #[serde(rename = "selection")]
    pub selection_size: usize,
    pub eta_cov: f64,
    pub eta_ams: f64,
    /// Mean evaluations to reach the target; `None` for discarded samples.
    pub cost: Option<f64>,
    pub discarded: bool,
}

impl RateSample {
    /// A sample with no usable rates, e.g. because the budget was overrun.
    pub fn discarded(problem: &str, kappa: usize, population_size: usize) -> Self {
        Self {
            problem: problem.to_string(),
            kappa,
            population_size,
            selection_size: selection_size(population_size),
            eta_cov: 0.0,
            eta_ams: 0.0,
            cost: None,
            discarded: true,
        }
    }

    pub fn eta(&self, target: RateTarget) -> f64 {
        match target {
            RateTarget::Cov => self.eta_cov,
            RateTarget::Ams => self.eta_ams,
        }
    }
}

fn selection_size(population_size: usize) -> usize {
    (DEFAULT_TAU * population_size as f64).floor() as usize
}

/// Which learning rate a regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateTarget {
    Cov,
    Ams,
}

impl fmt::Display for RateTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateTarget::Cov => "cov",
            RateTarget::Ams => "ams",
        })
    }
}

impl FromStr for RateTarget {
    type Err = RatesError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cov" | "covariance" => Ok(RateTarget::Cov),
            "ams" => Ok(RateTarget::Ams),
            other => Err(RatesError::Parse(format!("unknown rate target `{other}`"))),
        }
    }
}

/// Knobs of the tuning pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneOptions {
    /// Inner iRV-GOMEA runs averaged per probed rate pair.
    pub replicates: usize,
    /// Runs of the full-covariance RV-GOMEA used to set the inner budget.
    pub reference_replicates: usize,
    /// Budget of each reference run.
    pub reference_budget: f64,
    /// Overrides the measured inner budget when set.
    pub inner_budget: Option<f64>,
    /// Restarts of the outer two-dimensional search.
    pub outer_restarts: usize,
    /// Outer evaluations (probed rate pairs) per restart.
    pub outer_budget: f64,
    pub seed: u64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            replicates: 10,
            reference_replicates: 10,
            reference_budget: 1e7,
            inner_budget: None,
            outer_restarts: 5,
            outer_budget: 48.0,
            seed: 0,
        }
    }
}

/// Reference budgets keyed by `(problem, kappa)`, shared between cells so
/// each is measured once.
#[derive(Debug, Default)]
pub struct ReferenceCache {
    budgets: Mutex<BTreeMap<(String, usize), f64>>,
}

impl ReferenceCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, problem: &str, kappa: usize) -> Option<f64> {
        self.budgets.lock().unwrap().get(&(problem.to_string(), kappa)).copied()
    }

    pub fn insert(&self, problem: &str, kappa: usize, budget: f64) {
        self.budgets.lock().unwrap().insert((problem.to_string(), kappa), budget);
    }
}

/// The `kappa`-dimensional tuning instance of `problem`.
pub fn tuning_problem(problem: &str, kappa: usize) -> Result<ProblemInstance, ProblemError> {
    let params = ProblemParams {
        kappa: Some(kappa),
        init_range: Some(TUNING_INIT_RANGE),
        ..ProblemParams::default()
    };
    make_problem(problem, kappa, &params)
}

fn mean_cost<F>(replicates: usize, seed: u64, budget: f64, run_one: F) -> (f64, usize)
where
    F: Fn(u64) -> optimizer::RunResult + Sync,
{
    let outcomes: Vec<(f64, bool)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let result = run_one(replicate_seed(seed, r as u64));
            if result.success {
                (result.evaluations_spent, true)
            } else {
                (budget, false)
            }
        })
        .collect();
    let total: f64 = outcomes.iter().map(|o| o.0).sum();
    let successes = outcomes.iter().filter(|o| o.1).count();
    (total / replicates.max(1) as f64, successes)
}

/// Twice the mean evaluations full-covariance RV-GOMEA needs at its guideline
/// population on the tuning instance. Failed reference runs count at the
/// reference budget.
pub fn reference_budget(problem: &str, kappa: usize, options: &TuneOptions, cache: &ReferenceCache) -> Result<f64, ProblemError> {
    if let Some(b) = cache.get(problem, kappa) {
        return Ok(b);
    }
    let instance = tuning_problem(problem, kappa)?;
    let pop = population_guideline(Variant::RvGomea, kappa);
    let base = OptimizerConfig::new(Variant::RvGomea, pop, LinkageSpec::Static(StaticLinkage::Full))
        .with_budget(options.reference_budget);
    let (mean, _) = mean_cost(options.reference_replicates.max(1), options.seed ^ 0xA5A5_5A5A, options.reference_budget, |seed| {
        optimizer::run(&base.clone().with_seed(seed), &instance).expect("reference configuration is valid")
    });
    let budget = 2.0 * mean;
    cache.insert(problem, kappa, budget);
    Ok(budget)
}

/// Tunes `(eta_cov, eta_ams)` for one cell. Returns a discarded sample when
/// the best probed pair does not reach the target in every replicate within
/// the inner budget.
pub fn tune_rates(
    problem: &str,
    kappa: usize,
    population_size: usize,
    options: &TuneOptions,
    cache: &ReferenceCache,
) -> Result<RateSample, ProblemError> {
    let instance = Arc::new(tuning_problem(problem, kappa)?);
    let budget = match options.inner_budget {
        Some(b) => b,
        None => reference_budget(problem, kappa, options, cache)?,
    };
    let s = selection_size(population_size);
    if budget < population_size as f64 || s == 0 {
        return Ok(RateSample::discarded(problem, kappa, population_size));
    }
    let replicates = options.replicates.max(1);
    let seed = options.seed;
    let base = OptimizerConfig::new(Variant::IrvGomea, population_size, LinkageSpec::Static(StaticLinkage::Full))
        .with_budget(budget);

    let inner = {
        let instance = Arc::clone(&instance);
        let base = base.clone();
        move |eta: &[f64]| -> (f64, usize) {
            let mut config = base.clone();
            config.rates = RateSchedule::Fixed(LearningRates::new(eta[0].clamp(0.0, 1.0), eta[1].clamp(0.0, 1.0)));
            mean_cost(replicates, seed, budget, |rs| {
                optimizer::run(&config.clone().with_seed(rs), &instance).expect("tuning configuration is valid")
            })
        }
    };
    let objective = {
        let inner = inner.clone();
        move |eta: &[f64]| inner(eta).0
    };
    let found = minimize(
        vec![(0.0, 1.0), (0.0, 1.0)],
        objective,
        &MinimizeOptions {
            restarts: options.outer_restarts,
            budget_per_restart: options.outer_budget,
            target: f64::NEG_INFINITY,
            seed: seed ^ 0x7E57_0000_0000_0001,
        },
    );
    if found.x.len() != 2 {
        return Ok(RateSample::discarded(problem, kappa, population_size));
    }
    let (cost, successes) = inner(&found.x);
    if successes < replicates {
        return Ok(RateSample::discarded(problem, kappa, population_size));
    }
    Ok(RateSample {
        problem: problem.to_string(),
        kappa,
        population_size,
        selection_size: s,
        eta_cov: found.x[0],
        eta_ams: found.x[1],
        cost: Some(cost),
        discarded: false,
    })
}

/// Tunes every `(problem, kappa, |P|)` combination; output is sorted by
/// problem, then kappa, then population size.
pub fn tune_grid(
    problems: &[&str],
    kappas: &[usize],
    populations: &[usize],
    options: &TuneOptions,
) -> Result<Vec<RateSample>, ProblemError> {
    let cache = ReferenceCache::new();
    let mut out = Vec::new();
    for &p in problems {
        for &k in kappas {
            for &n in populations {
                out.push(tune_rates(p, k, n, options, &cache)?);
            }
        }
    }
    out.sort_by(|a, b| {
        (a.problem.as_str(), a.kappa, a.population_size).cmp(&(b.problem.as_str(), b.kappa, b.population_size))
    });
    Ok(out)
}

/// Removes discarded samples, and every sample of a `(kappa, |P|)` cell in
/// which the rotated ellipsoid was not solved.
pub fn filter_samples(samples: &[RateSample]) -> Vec<RateSample> {
    let valid: BTreeSet<(usize, usize)> = samples
        .iter()
        .filter(|s| s.problem == FILTER_PROBLEM && !s.discarded)
        .map(|s| (s.kappa, s.population_size))
        .collect();
    samples
        .iter()
        .filter(|s| !s.discarded && valid.contains(&(s.kappa, s.population_size)))
        .cloned()
        .collect()
}

/// Regression result for one learning-rate target.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaFit {
    pub alphas: Alphas,
    /// Sum of squared residuals over the samples used.
    pub loss: f64,
    pub sample_count: usize,
    /// All samples share one `(|S|, kappa)` point, so the parameters are not
    /// identifiable; any fit through the mean rate is as good.
    pub degenerate: bool,
}

impl AlphaFit {
    /// Key-value text form, one field per line.
    pub fn to_text(&self) -> String {
        format!(
            "a0 = {:.17e}\na1 = {:.17e}\na2 = {:.17e}\nloss = {:.17e}\nsamples = {}\ndegenerate = {}\n",
            self.alphas.a0, self.alphas.a1, self.alphas.a2, self.loss, self.sample_count, self.degenerate
        )
    }

    pub fn from_text(text: &str) -> Result<Self, RatesError> {
        let mut fields = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| RatesError::Parse(format!("expected `key = value`, got `{line}`")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |k: &str| -> Result<f64, RatesError> {
            fields
                .get(k)
                .ok_or_else(|| RatesError::Parse(format!("missing `{k}`")))?
                .parse::<f64>()
                .map_err(|e| RatesError::Parse(format!("`{k}`: {e}")))
        };
        Ok(Self {
            alphas: Alphas::new(num("a0")?, num("a1")?, num("a2")?),
            loss: num("loss")?,
            sample_count: num("samples")? as usize,
            degenerate: fields.get("degenerate").map(|v| v == "true").unwrap_or(false),
        })
    }
}

/// Sum of squared differences between the samples' rates and the rate
/// function with parameters `alphas`.
pub fn alpha_loss(samples: &[RateSample], target: RateTarget, alphas: Alphas) -> f64 {
    samples
        .iter()
        .map(|s| {
            let r = s.eta(target) - learning_rate(alphas, s.selection_size, s.kappa);
            r * r
        })
        .sum()
}

/// Settings of the regression search.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub restarts: usize,
    pub budget_per_restart: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            budget_per_restart: 3e4,
            seed: 0,
        }
    }
}

/// Least-squares fit of the rate function to the non-discarded samples.
pub fn fit_alphas(samples: &[RateSample], target: RateTarget) -> Result<AlphaFit, RatesError> {
    fit_alphas_with(samples, target, &FitOptions::default(), |_, _| {})
}

/// [`fit_alphas`] with explicit search settings; `probe` sees every
/// parameter vector the search evaluates together with its loss.
pub fn fit_alphas_with<P>(samples: &[RateSample], target: RateTarget, options: &FitOptions, probe: P) -> Result<AlphaFit, RatesError>
where
    P: Fn(&[f64], f64) + Send + Sync + 'static,
{
    let usable: Vec<RateSample> = samples.iter().filter(|s| !s.discarded).cloned().collect();
    if usable.len() < 3 {
        return Err(RatesError::TooFewSamples(usable.len()));
    }
    let points: BTreeSet<(usize, usize)> = usable.iter().map(|s| (s.selection_size, s.kappa)).collect();
    let degenerate = points.len() == 1;
    let data = Arc::new(usable);
    let objective = {
        let data = Arc::clone(&data);
        move |a: &[f64]| {
            let loss = alpha_loss(&data, target, Alphas::new(a[0], a[1], a[2]));
            probe(a, loss);
            loss
        }
    };
    let found = minimize(
        ALPHA_BOX.to_vec(),
        objective,
        &MinimizeOptions {
            restarts: options.restarts,
            budget_per_restart: options.budget_per_restart,
            target: 0.0,
            seed: options.seed,
        },
    );
    let alphas = Alphas::new(found.x[0], found.x[1], found.x[2]);
    Ok(AlphaFit {
        alphas,
        loss: alpha_loss(&data, target, alphas),
        sample_count: data.len(),
        degenerate,
    })
}

/// Rate predicted by a fit.
pub fn eval_fit(fit: &AlphaFit, selection_size: usize, kappa: usize) -> f64 {
    learning_rate(fit.alphas, selection_size, kappa)
}

pub fn write_samples<W: Write>(writer: W, samples: &[RateSample]) -> Result<(), RatesError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(s)?;
    }
    if samples.is_empty() {
        w.write_record(["problem", "kappa", "pop", "selection", "eta_cov", "eta_ams", "cost", "discarded"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(reader: R) -> Result<Vec<RateSample>, RatesError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
