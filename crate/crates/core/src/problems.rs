//! Benchmark objectives written as sums of subfunctions.
//!
//! Every problem is a list of [`SubfunctionSpec`]s over index sets of the
//! solution vector. Full evaluations compute every subfunction; partial
//! evaluations recompute only the subfunctions that touch a changed variable
//! and are charged against an [`EvaluationLedger`] in fractions of a full
//! evaluation.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linkage::Vig;

/// Fitness target used by every quadratic-type benchmark.
pub const DEFAULT_VTR: f64 = 1e-10;
/// Fitness target for the (unbounded) ridge problems.
pub const RIDGE_VTR: f64 = -1e10;
/// Initialization range shared by the benchmark experiments.
pub const DEFAULT_INIT_RANGE: (f64, f64) = (-115.0, -100.0);

/// Every name accepted by [`make_problem`].
pub const PROBLEM_NAMES: &[&str] = &[
    "sphere",
    "rotated-ellipsoid",
    "cigar",
    "tablet",
    "cigar-tablet",
    "two-axes",
    "different-powers",
    "rosenbrock",
    "parabolic-ridge",
    "sharp-ridge",
    "soreb",
    "reb2weak",
    "reb2strong",
    "reb2alternating",
    "reb5nooverlap",
    "reb5smalloverlap",
    "reb5largeoverlap",
    "reb5alternating",
    "reb5disjointpairs",
    "reb10nooverlap",
    "reb10smalloverlap",
    "reb10largeoverlap",
    "reb10alternating",
    "osoreb",
    "rebgrid",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("dimension {ell} is incompatible with `{name}`: {reason}")]
    IncompatibleDimension {
        name: String,
        ell: usize,
        reason: String,
    },
    #[error("block size must be positive")]
    NonPositiveBlockSize,
    #[error("invalid cost denominator `{0}` (expected total-indices or subfunction-count)")]
    UnknownCostDenominator(String),
}

/// Raised when a charge would push the ledger past its budget. This is the
/// normal way a run learns that it has to stop.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("evaluation budget exhausted ({spent} of {budget} spent)")]
pub struct BudgetExhausted {
    pub spent: f64,
    pub budget: f64,
}

/// How the fractional cost of a partial evaluation is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostDenominator {
    /// Divide by the total number of indices over all subfunctions, so that a
    /// sweep over a non-overlapping problem costs exactly one evaluation.
    #[default]
    TotalIndices,
    /// Divide by the number of subfunctions.
    SubfunctionCount,
}

impl FromStr for CostDenominator {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "total-indices" => Ok(Self::TotalIndices),
            "subfunction-count" => Ok(Self::SubfunctionCount),
            other => Err(ProblemError::UnknownCostDenominator(other.to_string())),
        }
    }
}

impl fmt::Display for CostDenominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TotalIndices => f.write_str("total-indices"),
            Self::SubfunctionCount => f.write_str("subfunction-count"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtrDirection {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubfunctionKind {
    /// `weight * |x|^exponent` on a single variable.
    PowerSum { weight: f64, exponent: f64 },
    /// Ellipsoid with condition exponent `c` evaluated on a rotated block.
    RotatedEllipsoid,
    /// `-x_first + 100 * g(rest)` where `g` is the squared norm (parabolic)
    /// or the norm (sharp) of the remaining variables.
    Ridge { sharp: bool },
    /// `100 (x_a^2 - x_b)^2 + (x_a - 1)^2`.
    RosenbrockPair,
    /// Rotated ellipsoid over a grid vertex and its neighbors.
    GridNeighborhood,
    /// Opaque objective, used internally for meta-optimization.
    BlackBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubfunctionSpec {
    pub index_set: Vec<usize>,
    pub kind: SubfunctionKind,
    pub condition_exponent: f64,
    pub rotation_angle_deg: f64,
}

impl SubfunctionSpec {
    fn single(index: usize, kind: SubfunctionKind) -> Self {
        Self {
            index_set: vec![index],
            kind,
            condition_exponent: 0.0,
            rotation_angle_deg: 0.0,
        }
    }

    fn block(index_set: Vec<usize>, kind: SubfunctionKind, c: f64, theta: f64) -> Self {
        Self {
            index_set,
            kind,
            condition_exponent: c,
            rotation_angle_deg: theta,
        }
    }
}

/// Problem-specific construction parameters. Unset fields take the family
/// defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemParams {
    /// Block size for `soreb`.
    pub kappa: Option<usize>,
    /// Condition exponent override for `rotated-ellipsoid` and `soreb`.
    pub condition: Option<f64>,
    /// Rotation angle override (degrees) for `rotated-ellipsoid` and `soreb`.
    pub angle_deg: Option<f64>,
    /// Start offset of the second REB term of `osoreb`. The original
    /// definition leaves it unspecified; 0 is the default.
    pub offset: usize,
    pub init_range: Option<(f64, f64)>,
    pub vtr: Option<f64>,
    pub cost_denominator: CostDenominator,
}

impl ProblemParams {
    pub fn with_kappa(kappa: usize) -> Self {
        Self {
            kappa: Some(kappa),
            ..Self::default()
        }
    }
}

type BlackBoxFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug)]
struct RotatedBlock {
    rotation: DMatrix<f64>,
    weights: Vec<f64>,
}

/// A fully materialized decomposable objective. Immutable after construction
/// and cheap to clone.
#[derive(Clone)]
pub struct ProblemInstance {
    name: String,
    ell: usize,
    subfunctions: Vec<SubfunctionSpec>,
    vtr: f64,
    vtr_direction: VtrDirection,
    init_range: (f64, f64),
    bounds: Option<Vec<(f64, f64)>>,
    cost_denominator: CostDenominator,
    rotation_cache: Vec<Option<Arc<RotatedBlock>>>,
    subfunctions_of: Vec<Vec<usize>>,
    sub_cost: Vec<f64>,
    black_box: Option<BlackBoxFn>,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("name", &self.name)
            .field("ell", &self.ell)
            .field("subfunctions", &self.subfunctions.len())
            .field("vtr", &self.vtr)
            .field("init_range", &self.init_range)
            .field("cost_denominator", &self.cost_denominator)
            .finish()
    }
}

/// Orthogonal matrix obtained by composing Givens rotations of `angle_deg`
/// over all index pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn givens_rotation(dim: usize, angle_deg: f64) -> DMatrix<f64> {
    let mut r = DMatrix::<f64>::identity(dim, dim);
    if angle_deg == 0.0 {
        return r;
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    for i in 0..dim {
        for j in (i + 1)..dim {
            // r <- G_ij * r
            for col in 0..dim {
                let a = r[(i, col)];
                let b = r[(j, col)];
                r[(i, col)] = c * a - s * b;
                r[(j, col)] = s * a + c * b;
            }
        }
    }
    r
}

/// `10^(c * i / (k - 1))` for `i` in `0..k`; a single weight of 1 when `k == 1`.
pub fn ellipsoid_weights(k: usize, c: f64) -> Vec<f64> {
    if k <= 1 {
        return vec![1.0; k];
    }
    (0..k)
        .map(|i| 10f64.powf(c * i as f64 / (k - 1) as f64))
        .collect()
}

impl ProblemInstance {
    fn assemble(
        name: &str,
        ell: usize,
        subfunctions: Vec<SubfunctionSpec>,
        vtr: f64,
        params: &ProblemParams,
    ) -> Self {
        let mut shared: HashMap<(usize, u64, u64), Arc<RotatedBlock>> = HashMap::new();
        let rotation_cache = subfunctions
            .iter()
            .map(|sf| match sf.kind {
                SubfunctionKind::RotatedEllipsoid | SubfunctionKind::GridNeighborhood => {
                    let k = sf.index_set.len();
                    let key = (
                        k,
                        sf.condition_exponent.to_bits(),
                        sf.rotation_angle_deg.to_bits(),
                    );
                    let block = shared.entry(key).or_insert_with(|| {
                        Arc::new(RotatedBlock {
                            rotation: givens_rotation(k, sf.rotation_angle_deg),
                            weights: ellipsoid_weights(k, sf.condition_exponent),
                        })
                    });
                    Some(Arc::clone(block))
                }
                _ => None,
            })
            .collect();

        let mut subfunctions_of = vec![Vec::new(); ell];
        for (i, sf) in subfunctions.iter().enumerate() {
            for &v in &sf.index_set {
                subfunctions_of[v].push(i);
            }
        }
        let denominator = match params.cost_denominator {
            CostDenominator::TotalIndices => {
                subfunctions.iter().map(|s| s.index_set.len()).sum::<usize>() as f64
            }
            CostDenominator::SubfunctionCount => subfunctions.len() as f64,
        };
        let sub_cost = subfunctions
            .iter()
            .map(|s| s.index_set.len() as f64 / denominator)
            .collect();

        Self {
            name: name.to_string(),
            ell,
            subfunctions,
            vtr: params.vtr.unwrap_or(vtr),
            vtr_direction: VtrDirection::AtMost,
            init_range: params.init_range.unwrap_or(DEFAULT_INIT_RANGE),
            bounds: None,
            cost_denominator: params.cost_denominator,
            rotation_cache,
            subfunctions_of,
            sub_cost,
            black_box: None,
        }
    }

    /// Wraps an opaque objective over a box as a single-subfunction problem.
    /// Sampled solutions are clipped to `bounds` by the optimizer.
    pub(crate) fn black_box<F>(name: &str, bounds: Vec<(f64, f64)>, vtr: f64, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let ell = bounds.len();
        let sf = SubfunctionSpec::block((0..ell).collect(), SubfunctionKind::BlackBox, 0.0, 0.0);
        let params = ProblemParams {
            vtr: Some(vtr),
            ..ProblemParams::default()
        };
        let mut p = Self::assemble(name, ell, vec![sf], vtr, &params);
        p.init_range = (0.0, 1.0);
        p.bounds = Some(bounds);
        p.black_box = Some(Arc::new(f));
        p
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn subfunctions(&self) -> &[SubfunctionSpec] {
        &self.subfunctions
    }

    pub fn vtr(&self) -> f64 {
        self.vtr
    }

    pub fn vtr_direction(&self) -> VtrDirection {
        self.vtr_direction
    }

    pub fn init_range(&self) -> (f64, f64) {
        self.init_range
    }

    /// Per-variable box constraints; only meta-optimization problems have them.
    pub fn bounds(&self) -> Option<&[(f64, f64)]> {
        self.bounds.as_deref()
    }

    /// Initialization interval of variable `i`.
    pub fn init_interval(&self, i: usize) -> (f64, f64) {
        match &self.bounds {
            Some(b) => b[i],
            None => self.init_range,
        }
    }

    pub fn cost_denominator(&self) -> CostDenominator {
        self.cost_denominator
    }

    pub fn with_vtr(mut self, vtr: f64) -> Self {
        self.vtr = vtr;
        self
    }

    pub fn with_init_range(mut self, range: (f64, f64)) -> Self {
        self.init_range = range;
        self
    }

    /// Orthogonal matrix used by subfunction `i`, if it is rotated.
    pub fn rotation(&self, i: usize) -> Option<&DMatrix<f64>> {
        self.rotation_cache[i].as_deref().map(|b| &b.rotation)
    }

    /// Indices of the subfunctions that read variable `v`.
    pub fn subfunctions_of(&self, v: usize) -> &[usize] {
        &self.subfunctions_of[v]
    }

    /// Budget fraction charged for recomputing subfunction `i`.
    pub fn subfunction_cost(&self, i: usize) -> f64 {
        self.sub_cost[i]
    }

    /// Width of the largest subfunction.
    pub fn max_subfunction_size(&self) -> usize {
        self.subfunctions
            .iter()
            .map(|s| s.index_set.len())
            .max()
            .unwrap_or(1)
    }

    /// True when the fitness `f` meets the value to reach.
    pub fn reached(&self, f: f64) -> bool {
        match self.vtr_direction {
            VtrDirection::AtMost => f <= self.vtr,
            VtrDirection::AtLeast => f >= self.vtr,
        }
    }

    /// Value of subfunction `i` at `x`.
    pub fn subvalue(&self, i: usize, x: &[f64]) -> f64 {
        let sf = &self.subfunctions[i];
        let idx = &sf.index_set;
        match sf.kind {
            SubfunctionKind::PowerSum { weight, exponent } => {
                let v = x[idx[0]];
                if exponent == 2.0 {
                    weight * v * v
                } else {
                    weight * v.abs().powf(exponent)
                }
            }
            SubfunctionKind::RotatedEllipsoid | SubfunctionKind::GridNeighborhood => {
                let block = self.rotation_cache[i]
                    .as_ref()
                    .expect("rotated subfunction without rotation");
                let k = idx.len();
                let mut total = 0.0;
                for r in 0..k {
                    let mut y = 0.0;
                    for (c, &v) in idx.iter().enumerate() {
                        y += block.rotation[(r, c)] * x[v];
                    }
                    total += block.weights[r] * y * y;
                }
                total
            }
            SubfunctionKind::Ridge { sharp } => {
                let sq: f64 = idx[1..].iter().map(|&v| x[v] * x[v]).sum();
                let g = if sharp { sq.sqrt() } else { sq };
                -x[idx[0]] + 100.0 * g
            }
            SubfunctionKind::RosenbrockPair => {
                let a = x[idx[0]];
                let b = x[idx[1]];
                let t = a * a - b;
                100.0 * t * t + (a - 1.0) * (a - 1.0)
            }
            SubfunctionKind::BlackBox => {
                let f = self.black_box.as_ref().expect("black-box problem without objective");
                let xs: Vec<f64> = idx.iter().map(|&v| x[v]).collect();
                f(&xs)
            }
        }
    }

    /// Uncharged evaluation, summed in index order. Used as an oracle.
    pub fn evaluate_direct(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.ell, "solution length mismatch");
        (0..self.subfunctions.len()).map(|i| self.subvalue(i, x)).sum()
    }

    /// Computes every subfunction, charges exactly one evaluation.
    pub fn evaluate_full(
        &self,
        x: &[f64],
        ledger: &mut EvaluationLedger,
    ) -> Result<(f64, SubvalueCache), BudgetExhausted> {
        assert_eq!(x.len(), self.ell, "solution length mismatch");
        ledger.charge(1.0)?;
        let values: Vec<f64> = (0..self.subfunctions.len())
            .map(|i| self.subvalue(i, x))
            .collect();
        let cache = SubvalueCache::from_values(&values);
        Ok((cache.total(), cache))
    }

    /// Sorted, duplicate-free subfunction indices touched by `changed`.
    pub fn touched_subfunctions(&self, changed: &[usize]) -> Vec<usize> {
        let mut touched: Vec<usize> = changed
            .iter()
            .flat_map(|&v| self.subfunctions_of[v].iter().copied())
            .collect();
        touched.sort_unstable();
        touched.dedup();
        touched
    }

    /// Charge of recomputing the given subfunctions.
    pub fn partial_cost(&self, touched: &[usize]) -> f64 {
        touched.iter().map(|&i| self.sub_cost[i]).sum()
    }

    /// Recomputes the subfunctions that read any variable in `changed`.
    /// `cache` must describe `x` as it was before the change.
    pub fn evaluate_partial(
        &self,
        x: &[f64],
        changed: &[usize],
        cache: &mut SubvalueCache,
        ledger: &mut EvaluationLedger,
    ) -> Result<f64, BudgetExhausted> {
        let touched = self.touched_subfunctions(changed);
        self.evaluate_touched(x, &touched, cache, ledger)
    }

    pub(crate) fn evaluate_touched(
        &self,
        x: &[f64],
        touched: &[usize],
        cache: &mut SubvalueCache,
        ledger: &mut EvaluationLedger,
    ) -> Result<f64, BudgetExhausted> {
        ledger.charge(self.partial_cost(touched))?;
        for &i in touched {
            cache.set(i, self.subvalue(i, x));
        }
        Ok(cache.total())
    }

    /// Ground-truth variable interaction graph: `u ~ v` iff some subfunction
    /// reads both.
    pub fn true_vig(&self) -> Vig {
        let mut edges = Vec::new();
        for sf in &self.subfunctions {
            for (a, &u) in sf.index_set.iter().enumerate() {
                for &v in &sf.index_set[a + 1..] {
                    edges.push((u, v));
                }
            }
        }
        Vig::from_edges(self.ell, edges)
    }
}

/// Fitness budget bookkeeping in units of full evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationLedger {
    spent: f64,
    budget: Option<f64>,
    log: Option<Vec<f64>>,
}

impl EvaluationLedger {
    pub fn new(budget: f64) -> Self {
        Self {
            spent: 0.0,
            budget: Some(budget),
            log: None,
        }
    }

    pub fn unbounded() -> Self {
        Self {
            spent: 0.0,
            budget: None,
            log: None,
        }
    }

    /// Records every successful charge so the total can be replayed.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn log(&self) -> Option<&[f64]> {
        self.log.as_deref()
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn budget(&self) -> Option<f64> {
        self.budget
    }

    pub fn remaining(&self) -> f64 {
        self.budget.map_or(f64::INFINITY, |b| b - self.spent)
    }

    /// Adds `cost` unless that would exceed the budget.
    pub fn charge(&mut self, cost: f64) -> Result<(), BudgetExhausted> {
        if let Some(budget) = self.budget {
            if self.spent + cost > budget {
                return Err(BudgetExhausted {
                    spent: self.spent,
                    budget,
                });
            }
        }
        self.spent += cost;
        if let Some(log) = &mut self.log {
            log.push(cost);
        }
        Ok(())
    }
}

/// Subfunction values of one solution, summed through a fixed pairwise tree
/// so that the aggregate is independent of the update history.
#[derive(Debug, Clone, PartialEq)]
pub struct SubvalueCache {
    len: usize,
    tree: Vec<f64>,
}

impl SubvalueCache {
    pub fn from_values(values: &[f64]) -> Self {
        let len = values.len();
        let size = len.max(1).next_power_of_two();
        let mut tree = vec![0.0; 2 * size];
        tree[size..size + len].copy_from_slice(values);
        for n in (1..size).rev() {
            tree[n] = tree[2 * n] + tree[2 * n + 1];
        }
        Self { len, tree }
    }

    fn leaves(&self) -> usize {
        self.tree.len() / 2
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn values(&self) -> &[f64] {
        let size = self.leaves();
        &self.tree[size..size + self.len]
    }

    pub fn value(&self, i: usize) -> f64 {
        self.tree[self.leaves() + i]
    }

    /// Aggregate fitness.
    pub fn total(&self) -> f64 {
        self.tree[1]
    }

    pub(crate) fn set(&mut self, i: usize, value: f64) {
        let mut n = self.leaves() + i;
        self.tree[n] = value;
        while n > 1 {
            n /= 2;
            self.tree[n] = self.tree[2 * n] + self.tree[2 * n + 1];
        }
    }
}

/// A point together with its cached subfunction values.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub cache: SubvalueCache,
    pub fitness: f64,
}

impl Solution {
    /// Fully evaluates `x`.
    pub fn evaluate(
        problem: &ProblemInstance,
        x: Vec<f64>,
        ledger: &mut EvaluationLedger,
    ) -> Result<Self, BudgetExhausted> {
        let (fitness, cache) = problem.evaluate_full(&x, ledger)?;
        Ok(Self { x, cache, fitness })
    }
}

fn incompatible(name: &str, ell: usize, reason: impl Into<String>) -> ProblemError {
    ProblemError::IncompatibleDimension {
        name: name.to_string(),
        ell,
        reason: reason.into(),
    }
}

#[derive(Clone, Copy)]
enum Stride {
    Fixed(usize),
    /// 4 after even blocks, 5 after odd blocks.
    DisjointPairs,
}

/// Block start positions of an REB term; the last block has to end exactly at
/// the last variable.
fn reb_starts(name: &str, ell: usize, kappa: usize, stride: Stride) -> Result<Vec<usize>, ProblemError> {
    if kappa == 0 {
        return Err(ProblemError::NonPositiveBlockSize);
    }
    if ell < kappa {
        return Err(incompatible(name, ell, format!("needs at least {kappa} variables")));
    }
    let mut starts = Vec::new();
    let mut start = 0;
    loop {
        if start + kappa > ell {
            return Err(incompatible(
                name,
                ell,
                format!("blocks of width {kappa} do not tile the variables with this stride"),
            ));
        }
        starts.push(start);
        if start + kappa == ell {
            return Ok(starts);
        }
        let step = match stride {
            // stride 0 encodes consecutive disjoint blocks
            Stride::Fixed(0) => kappa,
            Stride::Fixed(s) => s,
            Stride::DisjointPairs => {
                if starts.len() % 2 == 1 {
                    4
                } else {
                    5
                }
            }
        };
        start += step;
    }
}

fn reb_term(
    name: &str,
    ell: usize,
    offset: usize,
    kappa: usize,
    stride: Stride,
    params: impl Fn(usize) -> (f64, f64),
) -> Result<Vec<SubfunctionSpec>, ProblemError> {
    let starts = reb_starts(name, ell - offset, kappa, stride)?;
    Ok(starts
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let (c, theta) = params(i);
            SubfunctionSpec::block(
                (offset + s..offset + s + kappa).collect(),
                SubfunctionKind::RotatedEllipsoid,
                c,
                theta,
            )
        })
        .collect())
}

fn alternating(i: usize) -> (f64, f64) {
    if i.is_multiple_of(2) {
        (1.0, 5.0)
    } else {
        (6.0, 45.0)
    }
}

fn separable(ell: usize, weight: impl Fn(usize) -> (f64, f64)) -> Vec<SubfunctionSpec> {
    (0..ell)
        .map(|i| {
            let (w, e) = weight(i);
            SubfunctionSpec::single(i, SubfunctionKind::PowerSum { weight: w, exponent: e })
        })
        .collect()
}

/// Builds a named benchmark instance of dimension `ell`.
pub fn make_problem(name: &str, ell: usize, params: &ProblemParams) -> Result<ProblemInstance, ProblemError> {
    if ell == 0 {
        return Err(incompatible(name, ell, "dimension must be positive"));
    }
    let c6 = (6.0, 45.0);
    let (subfunctions, vtr) = match name {
        "sphere" => (separable(ell, |_| (1.0, 2.0)), DEFAULT_VTR),
        "rotated-ellipsoid" => {
            let c = params.condition.unwrap_or(6.0);
            let theta = params.angle_deg.unwrap_or(45.0);
            let sf = SubfunctionSpec::block((0..ell).collect(), SubfunctionKind::RotatedEllipsoid, c, theta);
            (vec![sf], DEFAULT_VTR)
        }
        "cigar" => (
            separable(ell, |i| (if i == 0 { 1.0 } else { 1e6 }, 2.0)),
            DEFAULT_VTR,
        ),
        "tablet" => (
            separable(ell, |i| (if i == 0 { 1e6 } else { 1.0 }, 2.0)),
            DEFAULT_VTR,
        ),
        "cigar-tablet" => (
            separable(ell, |i| {
                let w = if i == 0 {
                    1.0
                } else if i == ell - 1 {
                    1e8
                } else {
                    1e4
                };
                (w, 2.0)
            }),
            DEFAULT_VTR,
        ),
        "two-axes" => (
            separable(ell, |i| (if i < ell / 2 { 1e6 } else { 1.0 }, 2.0)),
            DEFAULT_VTR,
        ),
        "different-powers" => (
            separable(ell, |i| {
                let e = if ell == 1 {
                    2.0
                } else {
                    2.0 + 10.0 * i as f64 / (ell - 1) as f64
                };
                (1.0, e)
            }),
            DEFAULT_VTR,
        ),
        "rosenbrock" => {
            if ell < 2 {
                return Err(incompatible(name, ell, "needs at least 2 variables"));
            }
            let sfs = (0..ell - 1)
                .map(|i| SubfunctionSpec::block(vec![i, i + 1], SubfunctionKind::RosenbrockPair, 0.0, 0.0))
                .collect();
            (sfs, DEFAULT_VTR)
        }
        "parabolic-ridge" => {
            let mut sfs = vec![SubfunctionSpec::single(0, SubfunctionKind::Ridge { sharp: false })];
            sfs.extend((1..ell).map(|i| {
                SubfunctionSpec::single(i, SubfunctionKind::PowerSum { weight: 100.0, exponent: 2.0 })
            }));
            (sfs, RIDGE_VTR)
        }
        "sharp-ridge" => {
            let sf = SubfunctionSpec::block((0..ell).collect(), SubfunctionKind::Ridge { sharp: true }, 0.0, 0.0);
            (vec![sf], RIDGE_VTR)
        }
        "soreb" => {
            let kappa = params.kappa.unwrap_or(5);
            let c = params.condition.unwrap_or(6.0);
            let theta = params.angle_deg.unwrap_or(45.0);
            (reb_term(name, ell, 0, kappa, Stride::Fixed(kappa), |_| (c, theta))?, DEFAULT_VTR)
        }
        "reb2weak" => (reb_term(name, ell, 0, 2, Stride::Fixed(1), |_| (1.0, 5.0))?, DEFAULT_VTR),
        "reb2strong" => (reb_term(name, ell, 0, 2, Stride::Fixed(1), |_| (6.0, 5.0))?, DEFAULT_VTR),
        "reb2alternating" => (reb_term(name, ell, 0, 2, Stride::Fixed(1), alternating)?, DEFAULT_VTR),
        "reb5nooverlap" => (reb_term(name, ell, 0, 5, Stride::Fixed(0), |_| c6)?, DEFAULT_VTR),
        "reb5smalloverlap" => (reb_term(name, ell, 0, 5, Stride::Fixed(1), |_| c6)?, DEFAULT_VTR),
        "reb5largeoverlap" => (reb_term(name, ell, 0, 5, Stride::Fixed(4), |_| c6)?, DEFAULT_VTR),
        "reb5alternating" => (reb_term(name, ell, 0, 5, Stride::Fixed(4), alternating)?, DEFAULT_VTR),
        "reb5disjointpairs" => (reb_term(name, ell, 0, 5, Stride::DisjointPairs, |_| c6)?, DEFAULT_VTR),
        "reb10nooverlap" => (reb_term(name, ell, 0, 10, Stride::Fixed(0), |_| c6)?, DEFAULT_VTR),
        "reb10smalloverlap" => (reb_term(name, ell, 0, 10, Stride::Fixed(1), |_| c6)?, DEFAULT_VTR),
        "reb10largeoverlap" => (reb_term(name, ell, 0, 10, Stride::Fixed(4), |_| c6)?, DEFAULT_VTR),
        "reb10alternating" => (reb_term(name, ell, 0, 10, Stride::Fixed(4), alternating)?, DEFAULT_VTR),
        "osoreb" => {
            if params.offset >= ell {
                return Err(incompatible(name, ell, "offset of the second term exceeds the dimension"));
            }
            let mut sfs = reb_term(name, ell, 0, 5, Stride::Fixed(4), |_| c6)?;
            sfs.extend(reb_term(name, ell, params.offset, 2, Stride::Fixed(5), |_| c6)?);
            (sfs, DEFAULT_VTR)
        }
        "rebgrid" => {
            let side = (ell as f64).sqrt().round() as usize;
            if side * side != ell {
                return Err(incompatible(name, ell, "grid problems need a perfect-square dimension"));
            }
            let mut sfs = Vec::with_capacity(ell);
            for r in 0..side {
                for c in 0..side {
                    let v = r * side + c;
                    let mut set = vec![v];
                    if r > 0 {
                        set.push(v - side);
                    }
                    if r + 1 < side {
                        set.push(v + side);
                    }
                    if c > 0 {
                        set.push(v - 1);
                    }
                    if c + 1 < side {
                        set.push(v + 1);
                    }
                    set.sort_unstable();
                    sfs.push(SubfunctionSpec::block(set, SubfunctionKind::GridNeighborhood, 6.0, 45.0));
                }
            }
            (sfs, DEFAULT_VTR)
        }
        other => return Err(ProblemError::UnknownProblem(other.to_string())),
    };
    Ok(ProblemInstance::assemble(name, ell, subfunctions, vtr, params))
}
