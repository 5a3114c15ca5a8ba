//! Variable dependency structure: fitness-based pairwise dependency tests
//! collected in a dependency strength matrix, thresholding into a variable
//! interaction graph, and clique seeding into (conditional) linkage models.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

use crate::problems::{BudgetExhausted, EvaluationLedger, ProblemInstance, Solution};

/// Edge threshold on dependency strengths.
pub const DEFAULT_D_MIN: f64 = 1e-6;
/// Perturbation size of a dependency test, in units of the init-range width.
pub const DEFAULT_PERTURBATION: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkageError {
    #[error("a linkage set must sample at least one variable")]
    EmptyElement,
    #[error("variable {0} is both sampled and conditioned on")]
    OverlappingSets(usize),
    #[error("dimension {ell} is not divisible by block size {kappa}")]
    IndivisibleBlocks { ell: usize, kappa: usize },
    #[error("block size must be positive")]
    ZeroBlockSize,
}

/// Symmetric matrix of pairwise dependency strengths in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dsm {
    n: usize,
    strengths: Vec<f64>,
    tested: Vec<bool>,
}

impl Dsm {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            strengths: vec![0.0; n * n],
            tested: vec![false; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn strength(&self, i: usize, j: usize) -> f64 {
        self.strengths[i * self.n + j]
    }

    pub fn is_tested(&self, i: usize, j: usize) -> bool {
        self.tested[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, strength: f64) {
        assert_ne!(i, j, "the diagonal of a DSM is fixed at zero");
        for (a, b) in [(i, j), (j, i)] {
            self.strengths[a * self.n + b] = strength;
            self.tested[a * self.n + b] = true;
        }
    }

    /// Pairs `(i, j)`, `i < j`, that have not been measured, in index order.
    pub fn untested_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if !self.is_tested(i, j) {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    pub fn tested_count(&self) -> usize {
        self.tested.iter().filter(|&&t| t).count() / 2
    }

    pub fn fully_tested(&self) -> bool {
        self.tested_count() == self.n * self.n.saturating_sub(1) / 2
    }
}

/// Undirected variable interaction graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Vig {
    n: usize,
    adjacency: Vec<Vec<usize>>,
    matrix: Vec<bool>,
    threshold: Option<f64>,
}

impl Vig {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            adjacency: vec![Vec::new(); n],
            matrix: vec![false; n * n],
            threshold: None,
        }
    }

    /// Builds a graph from an edge list; self-loops and repeats are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = Self::empty(n);
        for (u, v) in edges {
            if u != v && !g.matrix[u * n + v] {
                g.matrix[u * n + v] = true;
                g.matrix[v * n + u] = true;
                g.adjacency[u].push(v);
                g.adjacency[v].push(u);
            }
        }
        for list in &mut g.adjacency {
            list.sort_unstable();
        }
        g
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// The `d_min` this graph was thresholded with, if it came from a DSM.
    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.matrix[u * self.n + v]
    }

    /// Neighbors of `v` in ascending order.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    /// Edges `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, list) in self.adjacency.iter().enumerate() {
            out.extend(list.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// A set of variables that is resampled jointly, optionally conditioned on
/// the current values of another, disjoint set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FosElement {
    sampled: Vec<usize>,
    conditioned_on: Vec<usize>,
}

impl FosElement {
    pub fn new(sampled: Vec<usize>, conditioned_on: Vec<usize>) -> Result<Self, LinkageError> {
        if sampled.is_empty() {
            return Err(LinkageError::EmptyElement);
        }
        if let Some(&v) = conditioned_on.iter().find(|v| sampled.contains(v)) {
            return Err(LinkageError::OverlappingSets(v));
        }
        Ok(Self {
            sampled,
            conditioned_on,
        })
    }

    pub fn unconditional(sampled: Vec<usize>) -> Self {
        Self::new(sampled, Vec::new()).expect("non-empty sampled set")
    }

    pub fn sampled(&self) -> &[usize] {
        &self.sampled
    }

    pub fn conditioned_on(&self) -> &[usize] {
        &self.conditioned_on
    }

    pub fn is_conditional(&self) -> bool {
        !self.conditioned_on.is_empty()
    }

    /// Sampled variables followed by the conditioning variables.
    pub fn involved(&self) -> Vec<usize> {
        let mut v = self.sampled.clone();
        v.extend_from_slice(&self.conditioned_on);
        v
    }
}

impl fmt::Display for FosElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |s: &[usize]| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        if self.conditioned_on.is_empty() {
            write!(f, "{}", join(&self.sampled))
        } else {
            write!(f, "{} | {}", join(&self.sampled), join(&self.conditioned_on))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkageOrigin {
    StaticUnivariate,
    StaticMarginalProduct,
    StaticFull,
    StaticSubfunctionBlocks,
    StaticConditionalTrueVig,
    FitnessBasedOnline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkageModel {
    pub elements: Vec<FosElement>,
    pub origin: LinkageOrigin,
}

impl LinkageModel {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn is_conditional(&self) -> bool {
        self.elements.iter().any(FosElement::is_conditional)
    }

    /// True when every variable in `0..ell` is sampled by some element.
    pub fn covers(&self, ell: usize) -> bool {
        let mut seen = vec![false; ell];
        for e in &self.elements {
            for &v in e.sampled() {
                seen[v] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Largest number of variables one element's distribution spans.
    pub fn max_involved(&self) -> usize {
        self.elements
            .iter()
            .map(|e| e.sampled().len() + e.conditioned_on().len())
            .max()
            .unwrap_or(0)
    }

    /// One element per line, `sampled | conditioned_on`.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.elements {
            writeln!(w, "{e}")?;
        }
        Ok(())
    }
}

/// Second-difference non-additivity of `i` and `j` around `reference`,
/// normalized by the largest absolute fitness among the four probes.
///
/// Only the subfunctions that read `i` or `j` are recomputed and charged.
pub fn dependency_test(
    problem: &ProblemInstance,
    reference: &Solution,
    i: usize,
    j: usize,
    perturbation: f64,
    ledger: &mut EvaluationLedger,
) -> Result<f64, BudgetExhausted> {
    assert_ne!(i, j, "dependency test needs two distinct variables");
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    let touched_a = problem.touched_subfunctions(&[a]);
    let touched_b = problem.touched_subfunctions(&[b]);
    let touched_ab = problem.touched_subfunctions(&[a, b]);
    let cost = problem.partial_cost(&touched_a) + problem.partial_cost(&touched_b) + problem.partial_cost(&touched_ab);
    ledger.charge(cost)?;

    let step = |v: usize| {
        let (lo, hi) = problem.init_interval(v);
        perturbation * (hi - lo)
    };
    let mut x = reference.x.clone();
    let base_a = x[a];
    let base_b = x[b];
    let (da, db) = (step(a), step(b));

    let mut non_additivity = 0.0;
    let mut shift_a = 0.0;
    let mut shift_b = 0.0;
    let mut shift_ab = 0.0;
    for &k in &touched_ab {
        let f0 = reference.cache.value(k);
        x[a] = base_a + da;
        x[b] = base_b;
        let fa = if touched_a.binary_search(&k).is_ok() { problem.subvalue(k, &x) } else { f0 };
        x[a] = base_a;
        x[b] = base_b + db;
        let fb = if touched_b.binary_search(&k).is_ok() { problem.subvalue(k, &x) } else { f0 };
        x[a] = base_a + da;
        let fab = problem.subvalue(k, &x);
        non_additivity += (fab - fa) - (fb - f0);
        shift_a += fa - f0;
        shift_b += fb - f0;
        shift_ab += fab - f0;
    }
    let f = reference.fitness;
    let scale = [f, f + shift_a, f + shift_b, f + shift_ab]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((non_additivity.abs() / (1e-300 + scale)).clamp(0.0, 1.0))
}

/// Tests up to `pair_budget` untested pairs, chosen uniformly at random
/// without replacement. Returns how many pairs were tested.
pub fn update_dsm_incremental<R: Rng + ?Sized>(
    dsm: &mut Dsm,
    problem: &ProblemInstance,
    reference: &Solution,
    pair_budget: usize,
    perturbation: f64,
    ledger: &mut EvaluationLedger,
    rng: &mut R,
) -> Result<usize, BudgetExhausted> {
    let mut pairs = dsm.untested_pairs();
    let count = pair_budget.min(pairs.len());
    for t in 0..count {
        let pick = rng.random_range(t..pairs.len());
        pairs.swap(t, pick);
        let (i, j) = pairs[t];
        let s = dependency_test(problem, reference, i, j, perturbation, ledger)?;
        dsm.set(i, j, s);
    }
    Ok(count)
}

/// Adds an edge for every tested pair whose strength exceeds `d_min`.
pub fn build_vig(dsm: &Dsm, d_min: f64) -> Vig {
    let n = dsm.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if dsm.is_tested(i, j) && dsm.strength(i, j) > d_min {
                edges.push((i, j));
            }
        }
    }
    let mut g = Vig::from_edges(n, edges);
    g.threshold = Some(d_min);
    g
}

/// Grows one greedy clique from every vertex (neighbors admitted in ascending
/// index order), drops duplicates, and conditions each clique on its outside
/// neighbors.
pub fn clique_seeding(vig: &Vig) -> LinkageModel {
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut elements = Vec::new();
    for v in 0..vig.len() {
        let mut clique = vec![v];
        for &u in vig.neighbors(v) {
            if clique.iter().all(|&w| vig.has_edge(u, w)) {
                clique.push(u);
            }
        }
        clique.sort_unstable();
        if !seen.insert(clique.clone()) {
            continue;
        }
        let mut outside: Vec<usize> = clique
            .iter()
            .flat_map(|&w| vig.neighbors(w).iter().copied())
            .filter(|u| clique.binary_search(u).is_err())
            .collect();
        outside.sort_unstable();
        outside.dedup();
        elements.push(FosElement {
            sampled: clique,
            conditioned_on: outside,
        });
    }
    LinkageModel {
        elements,
        origin: LinkageOrigin::FitnessBasedOnline,
    }
}

/// Linkage models that do not depend on fitness information.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StaticLinkage {
    Univariate,
    MarginalProduct(usize),
    Full,
    /// One unconditional element per subfunction index set (deduplicated),
    /// e.g. the overlapping pairs of Rosenbrock.
    SubfunctionBlocks,
    ConditionalTrueVig,
}

pub fn static_model(kind: StaticLinkage, problem: &ProblemInstance) -> Result<LinkageModel, LinkageError> {
    let ell = problem.ell();
    let model = match kind {
        StaticLinkage::Univariate => LinkageModel {
            elements: (0..ell).map(|i| FosElement::unconditional(vec![i])).collect(),
            origin: LinkageOrigin::StaticUnivariate,
        },
        StaticLinkage::MarginalProduct(kappa) => {
            if kappa == 0 {
                return Err(LinkageError::ZeroBlockSize);
            }
            if !ell.is_multiple_of(kappa) {
                return Err(LinkageError::IndivisibleBlocks { ell, kappa });
            }
            LinkageModel {
                elements: (0..ell / kappa)
                    .map(|b| FosElement::unconditional((b * kappa..(b + 1) * kappa).collect()))
                    .collect(),
                origin: LinkageOrigin::StaticMarginalProduct,
            }
        }
        StaticLinkage::Full => LinkageModel {
            elements: vec![FosElement::unconditional((0..ell).collect())],
            origin: LinkageOrigin::StaticFull,
        },
        StaticLinkage::SubfunctionBlocks => {
            let mut seen = HashSet::new();
            let mut elements = Vec::new();
            for sf in problem.subfunctions() {
                let mut set = sf.index_set.clone();
                set.sort_unstable();
                if seen.insert(set.clone()) {
                    elements.push(FosElement::unconditional(set));
                }
            }
            LinkageModel {
                elements,
                origin: LinkageOrigin::StaticSubfunctionBlocks,
            }
        }
        StaticLinkage::ConditionalTrueVig => {
            let mut m = clique_seeding(&problem.true_vig());
            m.origin = LinkageOrigin::StaticConditionalTrueVig;
            m
        }
    };
    Ok(model)
}

/// Writes one `u v strength` line per edge. Strengths come from `dsm` when
/// given, otherwise every edge is reported with strength 1.
pub fn write_edge_list<W: Write>(vig: &Vig, dsm: Option<&Dsm>, mut w: W) -> io::Result<()> {
    for (u, v) in vig.edges() {
        let s = dsm.map_or(1.0, |d| d.strength(u, v));
        writeln!(w, "{u} {v} {s}")?;
    }
    Ok(())
}
