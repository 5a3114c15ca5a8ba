use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rvgomea::harness::{
    bisect_population, cell_cost, compare_ratio, run_experiment, write_aggregates, write_ratios, ExperimentSpec,
    PopulationPolicy, SeedPolicy,
};
use rvgomea::optimizer::{LinkageSpec, Variant};
use rvgomea::problems::{CostDenominator, ProblemParams};
use rvgomea::rates::{self, RateTarget, TuneOptions};

type BoxError = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(name = "rvgomea", version, about = "RV-GOMEA / iRV-GOMEA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicate sweeps and write aggregate CSV plus a JSON-lines run log.
    Run(RunArgs),
    /// Search the population size that minimizes the corrected cost.
    Bisect(RunArgs),
    /// Tune fixed learning rates per (problem, kappa, population) cell.
    TuneRates(TuneArgs),
    /// Fit the learning-rate function to tuned samples.
    FitAlphas(FitArgs),
    /// Run two configurations and report per-cell cost ratios a/b.
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    #[arg(long)]
    problem: String,
    /// Dimensions, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    ell: Vec<usize>,
    /// Block size of block-structured problems.
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long, default_value = "full")]
    linkage: LinkageSpec,
    /// N, `guideline`, `bisect` or `bisect:START`.
    #[arg(long, default_value = "guideline")]
    pop: String,
    #[arg(long, default_value_t = 30)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e8)]
    budget: f64,
    #[arg(long)]
    vtr: Option<f64>,
    /// Lower and upper bound of the initialization range, e.g. `-115,-100`.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_range)]
    init_range: Option<(f64, f64)>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "total-indices")]
    cost_denominator: CostDenominator,
    /// Write per-generation statistics as JSON lines to this file.
    #[arg(long)]
    telemetry: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Variants, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "irv")]
    variant: Vec<Variant>,
    /// Aggregate CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-run JSON-lines log; defaults to the CSV path with a `.jsonl` extension.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, default_value = "irv")]
    variant: Variant,
    #[arg(long, default_value = "rv")]
    against_variant: Variant,
    /// Linkage of the second configuration; same as `--linkage` when absent.
    #[arg(long)]
    against_linkage: Option<LinkageSpec>,
    /// Population policy of the second configuration; same as `--pop` when absent.
    #[arg(long)]
    against_pop: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long, value_delimiter = ',', default_value = "rotated-ellipsoid,sphere")]
    problem: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    kappa: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "20,40,80")]
    pop: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    /// Probed rate pairs per outer restart.
    #[arg(long, default_value_t = 48.0)]
    outer_budget: f64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Sample CSV written by `tune-rates`.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, default_value = "cov")]
    target: RateTarget,
    /// Fit the samples as given, without the cell filter.
    #[arg(long)]
    no_filter: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `LOW,HIGH`")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if lo > hi {
        return Err("lower bound exceeds upper bound".into());
    }
    Ok((lo, hi))
}

fn parse_pop(s: &str) -> Result<PopulationPolicy, BoxError> {
    Ok(match s {
        "guideline" => PopulationPolicy::Guideline,
        "bisect" => PopulationPolicy::Bisect { start: 256 },
        other => match other.strip_prefix("bisect:") {
            Some(n) => PopulationPolicy::Bisect { start: n.parse()? },
            None => PopulationPolicy::Fixed(other.parse().map_err(|_| format!("bad --pop `{other}`"))?),
        },
    })
}

fn spec_from(args: &ExperimentArgs, variants: Vec<Variant>) -> Result<ExperimentSpec, BoxError> {
    let params = ProblemParams {
        kappa: args.kappa,
        init_range: args.init_range,
        cost_denominator: args.cost_denominator,
        ..ProblemParams::default()
    };
    Ok(ExperimentSpec {
        problem: args.problem.clone(),
        params,
        ells: args.ell.clone(),
        variants,
        linkage: args.linkage,
        population: parse_pop(&args.pop)?,
        replicates: args.replicates,
        seeds: SeedPolicy::Base(args.seed),
        budget: args.budget,
        vtr: args.vtr,
        workers: args.workers,
        telemetry: args.telemetry.is_some(),
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, BoxError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_run(args: RunArgs) -> Result<(), BoxError> {
    let spec = spec_from(&args.experiment, args.variant)?;
    let report = run_experiment(&spec)?;
    report.write_csv(output(args.out.as_deref())?)?;
    let log = args.log.or_else(|| args.out.as_ref().map(|p| p.with_extension("jsonl")));
    if let Some(log) = log {
        report.write_runs(File::create(log)?)?;
    }
    if let Some(t) = &args.experiment.telemetry {
        report.write_telemetry(BufWriter::new(File::create(t)?))?;
    }
    Ok(())
}

fn cmd_bisect(args: RunArgs) -> Result<(), BoxError> {
    let mut spec = spec_from(&args.experiment, args.variant.clone())?;
    let start = match spec.population {
        PopulationPolicy::Bisect { start } => start,
        PopulationPolicy::Fixed(n) => n,
        PopulationPolicy::Guideline => 256,
    };
    spec.population = PopulationPolicy::Bisect { start };
    spec.validate()?;
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "problem,ell,variant,pop,corrected_cost,probes")?;
    for &ell in &spec.ells {
        for &variant in &spec.variants {
            let mut failure = None;
            let outcome = bisect_population(start, |n| match cell_cost(&spec, ell, variant, n) {
                Ok(c) => c,
                Err(e) => {
                    failure.get_or_insert(e);
                    None
                }
            });
            if let Some(e) = failure {
                return Err(e.into());
            }
            let fmt_opt = |v: Option<f64>| v.map(|c| c.to_string()).unwrap_or_default();
            let probes: Vec<String> = outcome.probes.iter().map(|(n, c)| format!("{n}:{}", fmt_opt(*c))).collect();
            writeln!(
                out,
                "{},{ell},{variant},{},{},{}",
                spec.problem,
                outcome.population.map(|n| n.to_string()).unwrap_or_default(),
                fmt_opt(outcome.cost),
                probes.join(" ")
            )?;
        }
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), BoxError> {
    let a = spec_from(&args.experiment, vec![args.variant])?;
    let mut b = spec_from(&args.experiment, vec![args.against_variant])?;
    if let Some(l) = args.against_linkage {
        b.linkage = l;
    }
    if let Some(p) = &args.against_pop {
        b.population = parse_pop(p)?;
    }
    let ra = run_experiment(&a)?;
    let rb = run_experiment(&b)?;
    write_ratios(output(args.out.as_deref())?, &compare_ratio(&ra.aggregates, &rb.aggregates))?;
    if let Some(out) = &args.out {
        write_aggregates(File::create(out.with_extension("a.csv"))?, &ra.aggregates)?;
        write_aggregates(File::create(out.with_extension("b.csv"))?, &rb.aggregates)?;
    }
    Ok(())
}

fn cmd_tune(args: TuneArgs) -> Result<(), BoxError> {
    let options = TuneOptions {
        replicates: args.replicates,
        outer_restarts: args.restarts,
        outer_budget: args.outer_budget,
        seed: args.seed,
        ..TuneOptions::default()
    };
    let problems: Vec<&str> = args.problem.iter().map(String::as_str).collect();
    let job = || rates::tune_grid(&problems, &args.kappa, &args.pop, &options);
    let samples = match args.workers {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?.install(job)?,
        None => job()?,
    };
    rates::write_samples(output(args.out.as_deref())?, &samples)?;
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<(), BoxError> {
    let samples = rates::read_samples(File::open(&args.samples)?)?;
    let samples = if args.no_filter { samples } else { rates::filter_samples(&samples) };
    let options = rates::FitOptions {
        seed: args.seed,
        ..rates::FitOptions::default()
    };
    let fit = rates::fit_alphas_with(&samples, args.target, &options, |_, _| {})?;
    output(args.out.as_deref())?.write_all(fit.to_text().as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bisect(a) => cmd_bisect(a),
        Command::TuneRates(a) => cmd_tune(a),
        Command::FitAlphas(a) => cmd_fit(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
