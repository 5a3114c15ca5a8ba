#![allow(dead_code)]

use rvgomea::problems::{make_problem, ProblemInstance, ProblemParams, PROBLEM_NAMES};

/// Every benchmark family at the smallest dimension in `[lo, hi]` it accepts.
pub fn families_between(lo: usize, hi: usize) -> Vec<ProblemInstance> {
    PROBLEM_NAMES
        .iter()
        .map(|name| {
            (lo..=hi)
                .find_map(|ell| make_problem(name, ell, &ProblemParams::default()).ok())
                .unwrap_or_else(|| panic!("no dimension in [{lo}, {hi}] fits `{name}`"))
        })
        .collect()
}

/// Whether no variable is read by two subfunctions.
pub fn is_non_overlapping(p: &ProblemInstance) -> bool {
    (0..p.ell()).all(|v| p.subfunctions_of(v).len() <= 1)
}

pub fn rel_close(a: f64, b: f64, scale: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * scale.max(1.0)
}
