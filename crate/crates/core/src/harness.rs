//! Experiment orchestration: replicate sweeps, aggregation, population
//! bisection and pairwise comparisons, with CSV / JSON-lines persistence.
//!
//! Every run owns its generator and ledger, so replicates are executed in
//! parallel; results are always emitted in sorted cell order, which makes the
//! output files byte-identical for identical specs and seeds.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linkage::StaticLinkage;
use crate::optimizer::{
    population_guideline, run_with_observer, ConfigError, GenerationStats, LinkageSpec, OptimizerConfig, Variant,
};
use crate::problems::{make_problem, ProblemError, ProblemInstance, ProblemParams};

/// Increment of the splitmix64 sequence.
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Final mixing function of splitmix64.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `r` derived from `base`: the `(r + 1)`-th output of a
/// splitmix64 generator started at `base`, i.e.
/// `mix(base + (r + 1) * 0x9E3779B97F4A7C15)` in wrapping 64-bit arithmetic.
pub fn replicate_seed(base: u64, r: u64) -> u64 {
    splitmix64(base.wrapping_add(r.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// How the population size of a cell is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopulationPolicy {
    Fixed(usize),
    /// The variant's guideline for the largest linkage set.
    Guideline,
    /// Population bisection starting from the given size.
    Bisect { start: usize },
}

/// Replicate seeds: an explicit list, or a base expanded with
/// [`replicate_seed`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeedPolicy {
    Base(u64),
    Explicit(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub problem: String,
    pub params: ProblemParams,
    pub ells: Vec<usize>,
    pub variants: Vec<Variant>,
    pub linkage: LinkageSpec,
    pub population: PopulationPolicy,
    pub replicates: usize,
    pub seeds: SeedPolicy,
    pub budget: f64,
    pub vtr: Option<f64>,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Record per-generation statistics for every run.
    pub telemetry: bool,
}

impl ExperimentSpec {
    pub fn new(problem: &str, ell: usize, variant: Variant, linkage: LinkageSpec) -> Self {
        Self {
            problem: problem.to_string(),
            params: ProblemParams::default(),
            ells: vec![ell],
            variants: vec![variant],
            linkage,
            population: PopulationPolicy::Guideline,
            replicates: 1,
            seeds: SeedPolicy::Base(0),
            budget: 1e8,
            vtr: None,
            workers: None,
            telemetry: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.replicates == 0 {
            return Err(HarnessError::Invalid("replicates must be at least 1".into()));
        }
        if let SeedPolicy::Explicit(s) = &self.seeds {
            if s.len() != self.replicates {
                return Err(HarnessError::Invalid(format!(
                    "{} explicit seeds for {} replicates",
                    s.len(),
                    self.replicates
                )));
            }
        }
        if self.ells.is_empty() || self.variants.is_empty() {
            return Err(HarnessError::Invalid("no cells: empty dimension or variant list".into()));
        }
        if let PopulationPolicy::Bisect { start } = self.population {
            if start < BISECT_FLOOR {
                return Err(HarnessError::Invalid(format!("bisection start must be at least {BISECT_FLOOR}")));
            }
        }
        if self.budget.is_nan() || self.budget < 0.0 {
            return Err(HarnessError::Invalid("budget must be non-negative".into()));
        }
        Ok(())
    }

    pub fn seed(&self, replicate: usize) -> u64 {
        match &self.seeds {
            SeedPolicy::Base(b) => replicate_seed(*b, replicate as u64),
            SeedPolicy::Explicit(s) => s[replicate],
        }
    }

    fn instance(&self, ell: usize) -> Result<ProblemInstance, ProblemError> {
        let mut params = self.params.clone();
        if self.vtr.is_some() {
            params.vtr = self.vtr;
        }
        make_problem(&self.problem, ell, &params)
    }
}

/// Size of the largest linkage set a linkage origin produces on `problem`,
/// used to evaluate population guidelines.
pub fn guideline_kappa(linkage: LinkageSpec, problem: &ProblemInstance) -> usize {
    let widest = || problem.subfunctions().iter().map(|s| s.index_set.len()).max().unwrap_or(1);
    match linkage {
        LinkageSpec::Static(StaticLinkage::Univariate) => 1,
        LinkageSpec::Static(StaticLinkage::MarginalProduct(k)) => k.min(problem.ell()),
        LinkageSpec::Static(StaticLinkage::Full) => problem.ell(),
        LinkageSpec::Static(StaticLinkage::SubfunctionBlocks)
        | LinkageSpec::Static(StaticLinkage::ConditionalTrueVig)
        | LinkageSpec::FitnessBased => widest(),
    }
}

/// One line of the per-run log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub problem: String,
    pub ell: usize,
    pub variant: Variant,
    pub linkage: String,
    pub pop: usize,
    pub replicate: usize,
    pub seed: u64,
    pub generations: usize,
    pub spent: f64,
    pub success: bool,
    pub fallback_events: usize,
    pub best_fitness: f64,
}

/// Per-generation statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetryRecord {
    pub problem: String,
    pub ell: usize,
    pub variant: Variant,
    pub pop: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub stats: GenerationStats,
}

/// Aggregate of one `(problem, ell, variant, population)` cell. Costs are
/// taken over successful runs only.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub problem: String,
    pub ell: usize,
    pub variant: Variant,
    pub linkage: String,
    pub pop: usize,
    pub replicates: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_cost: Option<f64>,
    pub median_cost: Option<f64>,
    /// Mean cost divided by the success rate; absent when nothing succeeded.
    pub corrected_cost: Option<f64>,
}

impl AggregateResult {
    pub fn failed(&self) -> bool {
        self.successes == 0
    }

    /// Aggregates the runs of one cell.
    pub fn from_runs(records: &[RunRecord]) -> Self {
        let first = records.first().expect("a cell has at least one run");
        let mut costs: Vec<f64> = records.iter().filter(|r| r.success).map(|r| r.spent).collect();
        costs.sort_by(f64::total_cmp);
        let n = records.len();
        let successes = costs.len();
        let success_rate = successes as f64 / n as f64;
        let mean_cost = (successes > 0).then(|| costs.iter().sum::<f64>() / successes as f64);
        let median_cost = (successes > 0).then(|| {
            if successes % 2 == 1 {
                costs[successes / 2]
            } else {
                0.5 * (costs[successes / 2 - 1] + costs[successes / 2])
            }
        });
        Self {
            problem: first.problem.clone(),
            ell: first.ell,
            variant: first.variant,
            linkage: first.linkage.clone(),
            pop: first.pop,
            replicates: n,
            successes,
            success_rate,
            mean_cost,
            median_cost,
            corrected_cost: mean_cost.map(|m| m / success_rate),
        }
    }
}

#[derive(Serialize)]
struct AggregateRow<'a> {
    problem: &'a str,
    ell: usize,
    variant: Variant,
    linkage: &'a str,
    pop: usize,
    replicates: usize,
    success_rate: f64,
    mean_cost: Option<f64>,
    median_cost: Option<f64>,
    corrected_cost: Option<f64>,
}

/// Everything an experiment produced, in sorted cell order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub aggregates: Vec<AggregateResult>,
    pub runs: Vec<RunRecord>,
    pub telemetry: Vec<TelemetryRecord>,
}

impl ExperimentReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), HarnessError> {
        write_aggregates(writer, &self.aggregates)
    }

    pub fn write_runs<W: Write>(&self, writer: W) -> Result<(), HarnessError> {
        write_json_lines(writer, &self.runs)
    }

    pub fn write_telemetry<W: Write>(&self, writer: W) -> Result<(), HarnessError> {
        write_json_lines(writer, &self.telemetry)
    }
}

pub const RESULTS_HEADER: [&str; 10] = [
    "problem",
    "ell",
    "variant",
    "linkage",
    "pop",
    "replicates",
    "success_rate",
    "mean_cost",
    "median_cost",
    "corrected_cost",
];

/// Writes aggregate rows; costs of failed cells are left empty.
pub fn write_aggregates<W: Write>(writer: W, rows: &[AggregateResult]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(RESULTS_HEADER)?;
    for a in rows {
        w.serialize(AggregateRow {
            problem: &a.problem,
            ell: a.ell,
            variant: a.variant,
            linkage: &a.linkage,
            pop: a.pop,
            replicates: a.replicates,
            success_rate: a.success_rate,
            mean_cost: a.mean_cost,
            median_cost: a.median_cost,
            corrected_cost: a.corrected_cost,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json_lines<W: Write, T: Serialize>(mut writer: W, items: &[T]) -> Result<(), HarnessError> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

fn with_workers<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| HarnessError::Invalid(format!("worker pool: {e}")))?;
            Ok(pool.install(job))
        }
        None => Ok(job()),
    }
}

/// Runs all replicates of one cell at a fixed population size.
fn run_cell(
    spec: &ExperimentSpec,
    problem: &ProblemInstance,
    variant: Variant,
    pop: usize,
) -> Result<(Vec<RunRecord>, Vec<TelemetryRecord>), HarnessError> {
    let base = OptimizerConfig::new(variant, pop, spec.linkage).with_budget(spec.budget);
    base.validate()?;
    let linkage = spec.linkage.to_string();
    let outcomes: Vec<Result<(RunRecord, Vec<TelemetryRecord>), ConfigError>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = spec.seed(r);
            let config = base.clone().with_seed(seed);
            let mut telemetry = Vec::new();
            let result = run_with_observer(&config, problem, |stats| {
                if spec.telemetry {
                    telemetry.push(TelemetryRecord {
                        problem: spec.problem.clone(),
                        ell: problem.ell(),
                        variant,
                        pop,
                        seed,
                        stats: stats.clone(),
                    });
                }
            })?;
            Ok((
                RunRecord {
                    problem: spec.problem.clone(),
                    ell: problem.ell(),
                    variant,
                    linkage: linkage.clone(),
                    pop,
                    replicate: r,
                    seed,
                    generations: result.generations,
                    spent: result.evaluations_spent,
                    success: result.success,
                    fallback_events: result.fallback_events,
                    best_fitness: result.best_fitness,
                },
                telemetry,
            ))
        })
        .collect();
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut telemetry = Vec::new();
    for o in outcomes {
        let (record, t) = o?;
        runs.push(record);
        telemetry.extend(t);
    }
    Ok((runs, telemetry))
}

/// Executes every cell of `spec` and aggregates it. Cells are ordered by
/// dimension, then variant.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, HarnessError> {
    spec.validate()?;
    with_workers(spec.workers, || run_experiment_inner(spec))?
}

fn run_experiment_inner(spec: &ExperimentSpec) -> Result<ExperimentReport, HarnessError> {
    let mut ells = spec.ells.clone();
    ells.sort_unstable();
    ells.dedup();
    let mut variants = spec.variants.clone();
    variants.sort();
    variants.dedup();

    let mut report = ExperimentReport::default();
    for &ell in &ells {
        let problem = spec.instance(ell)?;
        for &variant in &variants {
            let (runs, telemetry) = match spec.population {
                PopulationPolicy::Fixed(n) => run_cell(spec, &problem, variant, n)?,
                PopulationPolicy::Guideline => {
                    let n = population_guideline(variant, guideline_kappa(spec.linkage, &problem));
                    run_cell(spec, &problem, variant, n)?
                }
                PopulationPolicy::Bisect { start } => {
                    let mut cells: BTreeMap<usize, (Vec<RunRecord>, Vec<TelemetryRecord>)> = BTreeMap::new();
                    let mut failure = None;
                    let outcome = bisect_population(start, |n| {
                        if failure.is_some() {
                            return None;
                        }
                        match run_cell(spec, &problem, variant, n) {
                            Ok(cell) => {
                                let cost = AggregateResult::from_runs(&cell.0).corrected_cost;
                                cells.insert(n, cell);
                                cost
                            }
                            Err(e) => {
                                failure = Some(e);
                                None
                            }
                        }
                    });
                    if let Some(e) = failure {
                        return Err(e);
                    }
                    let chosen = outcome.population.unwrap_or(start);
                    cells.remove(&chosen).expect("chosen population was probed")
                }
            };
            report.aggregates.push(AggregateResult::from_runs(&runs));
            report.runs.extend(runs);
            report.telemetry.extend(telemetry);
        }
    }
    Ok(report)
}

/// Smallest population size bisection will probe.
pub const BISECT_FLOOR: usize = 4;

/// Result of a population bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct BisectOutcome {
    /// Best population size, or `None` when every probe failed.
    pub population: Option<usize>,
    pub cost: Option<f64>,
    /// Every probed size with its cost, in probing order.
    pub probes: Vec<(usize, Option<f64>)>,
}

/// Searches a population size minimizing `cost` (a missing cost means the
/// runs failed). The size is halved from `start` as long as the cost keeps
/// dropping; a binary search then runs between the last two sizes tried.
/// Every size is evaluated at most once, and ties go to the smaller size.
pub fn bisect_population<F>(start: usize, mut cost: F) -> BisectOutcome
where
    F: FnMut(usize) -> Option<f64>,
{
    let start = start.max(BISECT_FLOOR);
    let mut memo: BTreeMap<usize, Option<f64>> = BTreeMap::new();
    let mut probes = Vec::new();
    let mut eval = |n: usize, probes: &mut Vec<(usize, Option<f64>)>| -> f64 {
        let c = *memo.entry(n).or_insert_with(|| {
            let c = cost(n);
            probes.push((n, c));
            c
        });
        c.unwrap_or(f64::INFINITY)
    };

    let mut current = start;
    let mut current_cost = eval(current, &mut probes);
    let mut lower = None;
    while current > BISECT_FLOOR {
        let next = (current / 2).max(BISECT_FLOOR);
        let c = eval(next, &mut probes);
        if c < current_cost {
            current = next;
            current_cost = c;
        } else {
            lower = Some(next);
            break;
        }
    }

    if let Some(mut lo) = lower {
        let mut hi = current;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if eval(mid, &mut probes) <= eval(mid + 1, &mut probes) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
    }

    let best = probes
        .iter()
        .filter_map(|&(n, c)| c.map(|c| (n, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    BisectOutcome {
        population: best.map(|b| b.0),
        cost: best.map(|b| b.1),
        probes,
    }
}

/// Corrected cost of a cell at population `n`, for use as a bisection oracle.
pub fn cell_cost(spec: &ExperimentSpec, ell: usize, variant: Variant, n: usize) -> Result<Option<f64>, HarnessError> {
    let problem = spec.instance(ell)?;
    let (runs, _) = with_workers(spec.workers, || run_cell(spec, &problem, variant, n))??;
    Ok(AggregateResult::from_runs(&runs).corrected_cost)
}

/// One row of a comparison between two experiments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub problem: String,
    pub ell: usize,
    pub pop_a: Option<usize>,
    pub pop_b: Option<usize>,
    pub cost_a: Option<f64>,
    pub cost_b: Option<f64>,
    /// `cost_a / cost_b`; below 1 means `a` was cheaper.
    pub ratio: Option<f64>,
    pub note: String,
}

/// Pairs cells of `a` and `b` by `(problem, ell)` and divides their corrected
/// costs. Cells missing on either side or failed entirely get an empty ratio
/// and an explanatory note.
pub fn compare_ratio(a: &[AggregateResult], b: &[AggregateResult]) -> Vec<RatioRow> {
    let key = |r: &AggregateResult| (r.problem.clone(), r.ell);
    let left: BTreeMap<_, _> = a.iter().map(|r| (key(r), r)).collect();
    let right: BTreeMap<_, _> = b.iter().map(|r| (key(r), r)).collect();
    let mut keys: Vec<_> = left.keys().chain(right.keys()).cloned().collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let (ra, rb) = (left.get(&k), right.get(&k));
            let cost_a = ra.and_then(|r| r.corrected_cost);
            let cost_b = rb.and_then(|r| r.corrected_cost);
            let note = match (ra, rb) {
                (None, _) => "missing in a",
                (_, None) => "missing in b",
                (Some(x), Some(y)) if x.failed() && y.failed() => "both failed",
                (Some(x), _) if x.failed() => "a failed",
                (_, Some(y)) if y.failed() => "b failed",
                _ => "",
            };
            RatioRow {
                problem: k.0,
                ell: k.1,
                pop_a: ra.map(|r| r.pop),
                pop_b: rb.map(|r| r.pop),
                cost_a,
                cost_b,
                ratio: match (cost_a, cost_b) {
                    (Some(x), Some(y)) => Some(x / y),
                    _ => None,
                },
                note: note.to_string(),
            }
        })
        .collect()
}

pub fn write_ratios<W: Write>(writer: W, rows: &[RatioRow]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["problem", "ell", "pop_a", "pop_b", "cost_a", "cost_b", "ratio", "note"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
