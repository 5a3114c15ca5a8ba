use std::cell::Cell;
use std::fs;

use proptest::prelude::*;
use rvgomea::harness::{
    bisect_population, compare_ratio, replicate_seed, run_experiment, splitmix64, write_aggregates, ExperimentSpec,
    PopulationPolicy, SeedPolicy, BISECT_FLOOR, RESULTS_HEADER,
};
use rvgomea::linkage::StaticLinkage;
use rvgomea::optimizer::{LinkageSpec, Variant};

fn sphere(replicates: usize) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new("sphere", 10, Variant::IrvGomea, LinkageSpec::Static(StaticLinkage::Univariate));
    spec.population = PopulationPolicy::Fixed(20);
    spec.replicates = replicates;
    spec.seeds = SeedPolicy::Base(7);
    spec.budget = 1e6;
    spec
}

fn csv_bytes(spec: &ExperimentSpec) -> (Vec<u8>, Vec<u8>) {
    let report = run_experiment(spec).unwrap();
    let mut csv = Vec::new();
    let mut log = Vec::new();
    report.write_csv(&mut csv).unwrap();
    report.write_runs(&mut log).unwrap();
    (csv, log)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn sphere_cell_succeeds_everywhere() {
    let report = run_experiment(&sphere(5)).unwrap();
    assert_eq!(report.aggregates.len(), 1);
    assert_eq!(report.runs.len(), 5);
    let a = &report.aggregates[0];
    assert_eq!((a.successes, a.success_rate), (5, 1.0));
    assert_eq!(a.corrected_cost, a.mean_cost);

    let (csv, _) = csv_bytes(&sphere(5));
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], RESULTS_HEADER.join(","));
}

#[test]
fn one_replicate_has_equal_mean_and_median() {
    let a = run_experiment(&sphere(1)).unwrap().aggregates.remove(0);
    assert_eq!(a.successes, 1);
    assert_eq!(a.mean_cost, a.median_cost);
}

#[test]
fn zero_budget_leaves_cost_fields_empty() {
    let mut spec = sphere(3);
    spec.budget = 0.0;
    let report = run_experiment(&spec).unwrap();
    let a = &report.aggregates[0];
    assert!(a.failed());
    assert_eq!(a.success_rate, 0.0);
    assert_eq!((a.mean_cost, a.median_cost, a.corrected_cost), (None, None, None));
    let mut out = Vec::new();
    write_aggregates(&mut out, &report.aggregates).unwrap();
    let row = String::from_utf8(out).unwrap().lines().nth(1).unwrap().to_string();
    assert!(row.ends_with(",0.0,,,"), "{row}");
}

/// The aggregate row can be recomputed from the per-run log alone.
#[test]
fn aggregates_follow_from_the_run_log() {
    let mut spec = ExperimentSpec::new("rotated-ellipsoid", 8, Variant::IrvGomea, LinkageSpec::Static(StaticLinkage::Full));
    spec.replicates = 6;
    spec.population = PopulationPolicy::Fixed(12);
    spec.budget = 4e3;
    let (_, log) = csv_bytes(&spec);
    let report = run_experiment(&spec).unwrap();
    let a = &report.aggregates[0];

    let runs: Vec<serde_json::Value> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(runs.len(), 6);
    let mut costs: Vec<f64> = runs
        .iter()
        .filter(|r| r["success"].as_bool().unwrap())
        .map(|r| r["spent"].as_f64().unwrap())
        .collect();
    assert_eq!(a.successes, costs.len());
    assert_eq!(a.success_rate, costs.len() as f64 / 6.0);
    if costs.is_empty() {
        assert!(a.failed());
        return;
    }
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    assert!((a.mean_cost.unwrap() - mean).abs() <= 1e-12 * mean);
    assert_eq!(a.median_cost.unwrap(), median(&mut costs));
    let corrected = mean / a.success_rate;
    assert!((a.corrected_cost.unwrap() - corrected).abs() <= 1e-12 * corrected);
}

#[test]
fn reruns_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = sphere(4);
    spec.telemetry = true;
    let write = |tag: &str, workers: Option<usize>| {
        let mut spec = spec.clone();
        spec.workers = workers;
        let report = run_experiment(&spec).unwrap();
        let csv = dir.path().join(format!("{tag}.csv"));
        let log = dir.path().join(format!("{tag}.jsonl"));
        report.write_csv(fs::File::create(&csv).unwrap()).unwrap();
        report.write_runs(fs::File::create(&log).unwrap()).unwrap();
        (fs::read(csv).unwrap(), fs::read(log).unwrap())
    };
    let first = write("a", None);
    assert_eq!(first, write("b", None));
    assert_eq!(first, write("c", Some(2)));
}

#[test]
fn explicit_seeds_must_match_replicates() {
    let mut spec = sphere(3);
    spec.seeds = SeedPolicy::Explicit(vec![1, 2]);
    assert!(spec.validate().is_err());
    assert!(run_experiment(&spec).is_err());
    spec.seeds = SeedPolicy::Explicit(vec![11, 12, 13]);
    let report = run_experiment(&spec).unwrap();
    let seeds: Vec<u64> = report.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![11, 12, 13]);
}

#[test]
fn base_seeds_are_mixed_replicate_offsets() {
    let spec = sphere(3);
    for r in 0..3u64 {
        let expected = splitmix64(7u64.wrapping_add((r + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        assert_eq!(replicate_seed(7, r), expected);
        assert_eq!(spec.seed(r as usize), expected);
    }
}

#[test]
fn bisection_reaches_the_interior_minimum() {
    let out = bisect_population(128, |n| Some((n as f64 - 24.0).abs() + 100.0));
    assert_eq!(out.population, Some(24));
    assert_eq!(out.cost, Some(100.0));
}

#[test]
fn bisection_of_a_growing_cost_stops_at_the_floor() {
    let out = bisect_population(256, |n| Some(n as f64));
    assert_eq!(out.population, Some(BISECT_FLOOR));
}

#[test]
fn optimal_start_keeps_the_search_above_half() {
    let out = bisect_population(100, |n| Some((n as f64 - 100.0).abs()));
    assert_eq!(out.population, Some(100));
    assert!(out.probes.iter().all(|&(n, _)| (50..=100).contains(&n)), "{:?}", out.probes);
}

#[test]
fn failed_probes_are_never_chosen() {
    let out = bisect_population(64, |n| (n >= 20).then_some(n as f64));
    assert_eq!(out.population, Some(20));
    assert!(bisect_population(64, |_| None).population.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Each size is evaluated at most once, the number of evaluations grows
    /// logarithmically, and the answer is the best size evaluated.
    #[test]
    fn bisection_probes_are_logarithmic(start in 4usize..5000, opt in 1.0f64..5000.0, slope in 0.1f64..10.0) {
        let calls = Cell::new(0usize);
        let out = bisect_population(start, |n| {
            calls.set(calls.get() + 1);
            Some(slope * (n as f64 - opt).abs() + 1.0)
        });
        let log = (start as f64).log2().ceil() as usize;
        prop_assert_eq!(calls.get(), out.probes.len());
        prop_assert!(calls.get() <= 3 * log + 3, "{} calls from {}", calls.get(), start);
        let mut sizes: Vec<usize> = out.probes.iter().map(|p| p.0).collect();
        sizes.sort_unstable();
        sizes.dedup();
        prop_assert_eq!(sizes.len(), out.probes.len());
        let best = out.probes.iter().filter_map(|p| p.1).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(out.cost, Some(best));
        let chosen = out.population.unwrap();
        prop_assert!(out.probes.iter().all(|&(n, c)| c.unwrap() > best || n >= chosen));
        prop_assert!(sizes.iter().all(|&n| n >= BISECT_FLOOR && n <= start));
    }
}

#[test]
fn comparing_an_experiment_with_itself_gives_unit_ratios() {
    let a = run_experiment(&sphere(3)).unwrap().aggregates;
    let rows = compare_ratio(&a, &a);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].ratio, Some(1.0));
    assert_eq!(rows[0].note, "");
}

#[test]
fn failed_side_gives_an_empty_ratio_and_a_note() {
    let a = run_experiment(&sphere(2)).unwrap().aggregates;
    let mut spec = sphere(2);
    spec.budget = 0.0;
    let b = run_experiment(&spec).unwrap().aggregates;
    let rows = compare_ratio(&a, &b);
    assert_eq!(rows[0].ratio, None);
    assert_eq!(rows[0].note, "b failed");
    assert_eq!(compare_ratio(&b, &b)[0].note, "both failed");
    let mut other = a.clone();
    other[0].ell = 12;
    let rows = compare_ratio(&a, &other);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].note, "missing in b");
    assert_eq!(rows[1].note, "missing in a");
}
