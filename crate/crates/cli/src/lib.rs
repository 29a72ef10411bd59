//! Command implementations behind the `buyback` binary: instance resolution,
//! single-run experiments, f-sweeps over the synthetic cloud market,
//! competitive-ratio curves, lower-bound replays, trace audits and rounding
//! experiments. Everything is deterministic given the config and master seed.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use buyback::audit::{audit_deterministic, audit_fractional, AuditReport};
use buyback::engine::{
    deterministic_integral, fractional_primal_dual, run_algorithm, AlgorithmId, RunResult,
};
use buyback::generators::{cloud_market, GeneratorSpec};
use buyback::model::{EventTrace, WeightMatrixInstance};
use buyback::numerics::{
    deterministic_tau, gamma_deterministic, gamma_general, lambert_w_m1, matching_penalty,
};
use buyback::offline::{optimal_matching, optimal_single};
use buyback::rng::derive_seed;
use buyback::rounding::{
    fractional_plan_profit, kappa_for, large_capacity_round, lossless_expected_profit,
    lossless_round_single, threshold_randomized_single, RoundingSeed,
};

pub mod svg;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    CheckFailed(String),
    Lib(buyback::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, out: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(out, "usage error: {msg}"),
            CliError::CheckFailed(msg) => write!(out, "check failed: {msg}"),
            CliError::Lib(e) => write!(out, "{e}"),
            CliError::Io(e) => write!(out, "io error: {e}"),
        }
    }
}

impl From<buyback::Error> for CliError {
    fn from(e: buyback::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    /// Process exit code: 1 for failed checks, 2 for usage and I/O problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Instance source plus the knobs shared by every command.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ExperimentConfig {
    pub instance_path: Option<PathBuf>,
    pub generator: Option<String>,
    pub algorithm: Option<String>,
    pub f: Option<f64>,
    pub f_grid: Option<String>,
    pub replications: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub tolerance: Option<f64>,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub trace_path: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Loads the instance from a file or a generator spec, applying the `--f`
    /// override when present.
    pub fn resolve_instance(&self) -> CliResult<WeightMatrixInstance> {
        let mut inst = match (&self.instance_path, &self.generator) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)?;
                WeightMatrixInstance::from_json(&text)?
            }
            (None, Some(spec)) => spec.parse::<GeneratorSpec>()?.generate(),
            (None, None) => {
                return Err(CliError::Usage("provide --instance PATH or --gen SPEC".into()))
            }
        };
        if let Some(f) = self.f {
            inst.buyback_factor = f;
        }
        inst.validate()?;
        Ok(inst)
    }

    pub fn parse_f_grid(&self, default: &str) -> CliResult<Vec<f64>> {
        let text = self.f_grid.as_deref().unwrap_or(default);
        parse_grid(text)
    }
}

/// Parses `A:B:STEP` into an inclusive grid.
pub fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!("--f-grid expects A:B:STEP, got {text:?}")));
    }
    let a: f64 = parts[0].parse().map_err(|e| CliError::Usage(format!("{text}: {e}")))?;
    let b: f64 = parts[1].parse().map_err(|e| CliError::Usage(format!("{text}: {e}")))?;
    let step: f64 = parts[2].parse().map_err(|e| CliError::Usage(format!("{text}: {e}")))?;
    // the negation also rejects a NaN step
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(step > 0.0) || b < a {
        return Err(CliError::Usage(format!("degenerate grid {text:?}")));
    }
    let count = ((b - a) / step).round() as usize;
    let mut grid: Vec<f64> = (0..=count).map(|k| a + step * k as f64).collect();
    if let Some(last) = grid.last_mut() {
        if (*last - b).abs() < step * 1e-9 {
            *last = b;
        }
    }
    Ok(grid)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn json_pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

/// Profit, optimum and audit summary of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateReport {
    pub algorithm: String,
    pub f: f64,
    pub profit: f64,
    pub opt: f64,
    /// performance gap ALG/OPT (1.0 when OPT is zero)
    pub gap: f64,
    pub events: usize,
    pub trace_path: Option<String>,
    pub audit: Option<AuditReport>,
}

/// Runs one algorithm on one instance; writes `result.json`, the trace CSV
/// and, for the two primal-dual algorithms, the dual-audit JSON.
pub fn cmd_simulate(config: &ExperimentConfig) -> CliResult<SimulateReport> {
    let instance = config.resolve_instance()?;
    let alg: AlgorithmId = config
        .algorithm
        .as_deref()
        .unwrap_or("fractional")
        .parse()
        .map_err(|e: buyback::Error| CliError::Usage(e.to_string()))?;
    let run = run_algorithm(alg, &instance)?;
    let opt = instance_opt(&instance)?;
    let f = instance.buyback_factor;

    let audit = match alg {
        AlgorithmId::Fractional => Some(audit_fractional(
            &run.trace,
            &instance,
            &matching_penalty(f),
            config.gamma.unwrap_or_else(|| gamma_general(f)),
        )?),
        AlgorithmId::Deterministic => Some(audit_deterministic(
            &run.trace,
            &instance,
            deterministic_tau(f),
            config.gamma.unwrap_or_else(|| gamma_deterministic(f)),
        )?),
        _ => None,
    };

    fs::create_dir_all(&config.out_dir)?;
    let trace_path = config.out_dir.join("trace.csv");
    write_text(&trace_path, &run.trace.to_csv())?;
    if let Some(report) = &audit {
        write_text(&config.out_dir.join("audit.json"), &json_pretty(report))?;
    }

    let report = SimulateReport {
        algorithm: alg.name().to_string(),
        f,
        profit: run.profit(),
        opt,
        gap: if opt > 0.0 { run.profit() / opt } else { 1.0 },
        events: run.trace.len(),
        trace_path: Some(trace_path.display().to_string()),
        audit,
    };
    write_text(&config.out_dir.join("result.json"), &json_pretty(&report))?;
    Ok(report)
}

fn instance_opt(instance: &WeightMatrixInstance) -> CliResult<f64> {
    if instance.num_offline == 1
        && instance.capacities[0] == 1.0
        && instance.arrivals.iter().all(|a| a.demand == 1.0)
    {
        let stream: Vec<f64> = instance.arrivals.iter().map(|a| a.weights[0]).collect();
        return Ok(optimal_single(&stream));
    }
    Ok(optimal_matching(instance)?.value)
}

/// One sweep cell: mean performance gap and its 95% confidence half-width.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub f: f64,
    pub algorithm: String,
    pub mean_gap: f64,
    pub ci95: f64,
}

const SWEEP_ALGORITHMS: [AlgorithmId; 4] = [
    AlgorithmId::Fractional,
    AlgorithmId::Deterministic,
    AlgorithmId::Greedy,
    AlgorithmId::FreeDisposal,
];

/// Sweeps the buyback factor over the cloud-market family: for every grid
/// point and replication seed, runs the four algorithms, records the gaps
/// ALG/OPT, and emits `sweep.csv` plus an SVG overlaying the theoretical
/// guarantees `1/Γ_gen(f)` and `1/Γ_det(f)`.
pub fn cmd_sweep(config: &ExperimentConfig) -> CliResult<Vec<SweepCell>> {
    let grid = config.parse_f_grid("0:3:0.25")?;
    let reps = config.replications;

    // cells run independently; indices keep the output deterministic
    let gaps: Vec<(usize, usize, Vec<f64>)> = grid
        .par_iter()
        .enumerate()
        .flat_map(|(fi, &f)| {
            (0..reps)
                .into_par_iter()
                .map(move |rep| (fi, rep, f))
                .collect::<Vec<_>>()
        })
        .map(|(fi, rep, f)| {
            let seed = derive_seed(config.master_seed, fi as u64, rep as u64);
            let instance = cloud_market(f, seed);
            let opt = optimal_matching(&instance).expect("cloud market is unit-capacity").value;
            let cell: Vec<f64> = SWEEP_ALGORITHMS
                .iter()
                .map(|&alg| {
                    let run = run_algorithm(alg, &instance).expect("cloud market run");
                    if opt > 0.0 {
                        run.profit() / opt
                    } else {
                        1.0
                    }
                })
                .collect();
            (fi, rep, cell)
        })
        .collect();

    let mut cells = Vec::new();
    for (fi, &f) in grid.iter().enumerate() {
        for (ai, alg) in SWEEP_ALGORITHMS.iter().enumerate() {
            let samples: Vec<f64> = gaps
                .iter()
                .filter(|(gfi, _, _)| *gfi == fi)
                .map(|(_, _, cell)| cell[ai])
                .collect();
            let (mean, ci) = mean_ci95(&samples);
            cells.push(SweepCell { f, algorithm: alg.name().to_string(), mean_gap: mean, ci95: ci });
        }
    }

    let mut csv = String::from("f,algorithm,mean_gap,ci95\n");
    for cell in &cells {
        csv.push_str(&format!(
            "{:.6},{},{:.9},{:.9}\n",
            cell.f, cell.algorithm, cell.mean_gap, cell.ci95
        ));
    }
    fs::create_dir_all(&config.out_dir)?;
    write_text(&config.out_dir.join("sweep.csv"), &csv)?;

    let svg_text = sweep_svg(&grid, &cells);
    write_text(&config.out_dir.join("sweep.svg"), &svg_text)?;
    Ok(cells)
}

fn mean_ci95(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

fn sweep_svg(grid: &[f64], cells: &[SweepCell]) -> String {
    let mut chart = svg::Chart::new("buyback factor f", "performance gap ALG/OPT");
    let theory_gen: Vec<(f64, f64)> = grid.iter().map(|&f| (f, 1.0 / gamma_general(f))).collect();
    let theory_det: Vec<(f64, f64)> =
        grid.iter().map(|&f| (f, 1.0 / gamma_deterministic(f))).collect();
    chart.add_series("1/gamma_gen", "#888888", &theory_gen);
    chart.add_series("1/gamma_det", "#bbbbbb", &theory_det);
    let colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];
    for (ai, alg) in SWEEP_ALGORITHMS.iter().enumerate() {
        let series: Vec<(f64, f64)> = cells
            .iter()
            .filter(|c| c.algorithm == alg.name())
            .map(|c| (c.f, c.mean_gap))
            .collect();
        chart.add_series(alg.name(), colors[ai], &series);
    }
    chart.render()
}

/// Row of the competitive-ratio curves table.
#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub f: f64,
    pub gamma_gen: f64,
    pub gamma_det: f64,
    pub gamma_gen_single: f64,
    pub gamma_det_single: f64,
}

/// Tabulates the optimal competitive-ratio curves (matching and
/// single-resource branches) and renders them as CSV + SVG.
pub fn cmd_curves(config: &ExperimentConfig) -> CliResult<Vec<CurveRow>> {
    let grid = config.parse_f_grid("0:3:0.05")?;
    let rows: Vec<CurveRow> = grid
        .iter()
        .map(|&f| CurveRow {
            f,
            gamma_gen: gamma_general(f),
            gamma_det: gamma_deterministic(f),
            gamma_gen_single: -lambert_w_m1(-1.0 / (std::f64::consts::E * (1.0 + f)))
                .expect("in range"),
            gamma_det_single: 1.0 + 2.0 * f + 2.0 * (f * (1.0 + f)).sqrt(),
        })
        .collect();

    let mut csv = String::from("f,gamma_gen,gamma_det,gamma_gen_single,gamma_det_single\n");
    for r in &rows {
        csv.push_str(&format!(
            "{:.6},{:.9},{:.9},{:.9},{:.9}\n",
            r.f, r.gamma_gen, r.gamma_det, r.gamma_gen_single, r.gamma_det_single
        ));
    }
    fs::create_dir_all(&config.out_dir)?;
    write_text(&config.out_dir.join("curves.csv"), &csv)?;

    let mut chart = svg::Chart::new("buyback factor f", "competitive ratio");
    chart.add_series("gamma_gen", "#000000", &rows.iter().map(|r| (r.f, r.gamma_gen)).collect::<Vec<_>>());
    chart.add_series("gamma_gen_single", "#555555", &rows.iter().map(|r| (r.f, r.gamma_gen_single)).collect::<Vec<_>>());
    chart.add_series("gamma_det", "#999999", &rows.iter().map(|r| (r.f, r.gamma_det)).collect::<Vec<_>>());
    chart.add_series("gamma_det_single", "#cccccc", &rows.iter().map(|r| (r.f, r.gamma_det_single)).collect::<Vec<_>>());
    write_text(&config.out_dir.join("curves.svg"), &chart.render())?;
    Ok(rows)
}

/// Outcome of a lower-bound replay.
#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundReport {
    pub family: String,
    pub f: f64,
    pub opt: f64,
    pub profit: f64,
    pub empirical_ratio: f64,
    pub theoretical_bound: f64,
    /// recurrence families: index of the first nonpositive term, if any
    pub positivity_failure_at: Option<usize>,
}

/// Generates a lower-bound family, runs the designated algorithm and reports
/// the empirical OPT/ALG against the theoretical bound. For the recurrence
/// families the report carries the positivity verdict instead of a run.
pub fn cmd_lowerbound(config: &ExperimentConfig) -> CliResult<LowerBoundReport> {
    let spec_text = config
        .generator
        .as_deref()
        .ok_or_else(|| CliError::Usage("lowerbound requires --gen SPEC".into()))?;
    let spec: GeneratorSpec = spec_text.parse()?;
    let report = match spec {
        GeneratorSpec::DetLbSingle { f, gamma, n, w0 } => {
            let stream = buyback::generators::det_lb_single_stream(f, gamma, n, w0);
            LowerBoundReport {
                family: "det-lb-single".into(),
                f,
                opt: stream.weights.iter().copied().fold(0.0, f64::max),
                profit: f64::NAN,
                empirical_ratio: f64::NAN,
                theoretical_bound: gamma_deterministic(f),
                positivity_failure_at: stream.failed_at,
            }
        }
        GeneratorSpec::DetLbMatching { f, gamma, n, w0 } => {
            let (_, stream) = buyback::generators::det_lb_matching(f, gamma, n, w0);
            LowerBoundReport {
                family: "det-lb-matching".into(),
                f,
                opt: f64::NAN,
                profit: f64::NAN,
                empirical_ratio: f64::NAN,
                theoretical_bound: gamma_deterministic(f),
                positivity_failure_at: stream.failed_at,
            }
        }
        ref other => {
            let instance = other.generate();
            let f = instance.buyback_factor;
            let alg: AlgorithmId = config
                .algorithm
                .as_deref()
                .unwrap_or("fractional")
                .parse()
                .map_err(|e: buyback::Error| CliError::Usage(e.to_string()))?;
            let run = run_algorithm(alg, &instance)?;
            let opt = instance_opt(&instance)?;
            let bound = match alg {
                AlgorithmId::Deterministic | AlgorithmId::Greedy => gamma_deterministic(f),
                _ => gamma_general(f),
            };
            LowerBoundReport {
                family: family_name(other).into(),
                f,
                opt,
                profit: run.profit(),
                empirical_ratio: opt / run.profit(),
                theoretical_bound: bound,
                positivity_failure_at: None,
            }
        }
    };
    fs::create_dir_all(&config.out_dir)?;
    write_text(&config.out_dir.join("lowerbound.json"), &json_pretty(&report))?;
    Ok(report)
}

fn family_name(spec: &GeneratorSpec) -> &'static str {
    match spec {
        GeneratorSpec::GreedyKiller { .. } => "greedy-killer",
        GeneratorSpec::Permutation { .. } => "permutation",
        GeneratorSpec::Continuum { .. } => "continuum",
        GeneratorSpec::RandomTContinuum { .. } => "random-t-continuum",
        GeneratorSpec::DetLbSingle { .. } => "det-lb-single",
        GeneratorSpec::DetLbMatching { .. } => "det-lb-matching",
        GeneratorSpec::CloudMarket { .. } => "cloud-market",
        GeneratorSpec::Random(_) => "random",
    }
}

/// Audits a stored trace against a stored instance. Exit code 0 if feasible.
pub fn cmd_audit(config: &ExperimentConfig) -> CliResult<AuditReport> {
    let instance = config.resolve_instance()?;
    let trace_path = config
        .trace_path
        .as_ref()
        .ok_or_else(|| CliError::Usage("audit requires --trace PATH".into()))?;
    let trace = EventTrace::from_csv(&fs::read_to_string(trace_path)?)?;
    let f = instance.buyback_factor;
    let alg = config.algorithm.as_deref().unwrap_or("fractional");
    let report = match alg {
        "fractional" => audit_fractional(
            &trace,
            &instance,
            &matching_penalty(f),
            config.gamma.unwrap_or_else(|| gamma_general(f)),
        )?,
        "det" | "deterministic" => audit_deterministic(
            &trace,
            &instance,
            deterministic_tau(f),
            config.gamma.unwrap_or_else(|| gamma_deterministic(f)),
        )?,
        other => return Err(CliError::Usage(format!("cannot audit algorithm {other:?}"))),
    };
    fs::create_dir_all(&config.out_dir)?;
    write_text(&config.out_dir.join("audit.json"), &json_pretty(&report))?;
    if !report.feasible {
        return Err(CliError::CheckFailed(format!(
            "dual certificate infeasible: max violation {}",
            report.max_constraint_violation
        )));
    }
    Ok(report)
}

/// Writes a generated instance as JSON.
pub fn cmd_gen(config: &ExperimentConfig) -> CliResult<PathBuf> {
    let spec_text = config
        .generator
        .as_deref()
        .ok_or_else(|| CliError::Usage("gen requires --gen SPEC".into()))?;
    let spec: GeneratorSpec = spec_text.parse()?;
    let mut instance = spec.generate();
    if let Some(f) = config.f {
        instance.buyback_factor = f;
    }
    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("instance.json");
    write_text(&path, &instance.to_json()?)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct OptReport {
    pub opt: f64,
    pub assignment_edges: usize,
}

/// Computes the optimum offline value of an instance.
pub fn cmd_opt(config: &ExperimentConfig) -> CliResult<OptReport> {
    let instance = config.resolve_instance()?;
    let result = optimal_matching(&instance)?;
    Ok(OptReport { opt: result.value, assignment_edges: result.assignment.len() })
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundReport {
    pub scheme: String,
    pub f: f64,
    pub mean_profit: f64,
    pub std_error: f64,
    pub replications: usize,
    pub fractional_profit: Option<f64>,
    pub expected_profit: Option<f64>,
    pub kappa: Option<f64>,
}

/// Runs one of the rounding schemes against the fractional plan of the
/// instance's own fractional run.
pub fn cmd_round(config: &ExperimentConfig) -> CliResult<RoundReport> {
    let instance = config.resolve_instance()?;
    let f = instance.buyback_factor;
    let scheme = config.algorithm.as_deref().unwrap_or("lossless-round");
    let reps = config.replications.max(1);
    let report = match scheme {
        "lossless-round" => {
            if instance.num_offline != 1 {
                return Err(CliError::Usage("lossless-round needs a single-resource instance".into()));
            }
            let stream: Vec<f64> = instance.arrivals.iter().map(|a| a.weights[0]).collect();
            let run = fractional_primal_dual(&instance, &matching_penalty(f))?;
            let plan = run.allocated_per_arrival(stream.len());
            let mut rng = buyback::rng::Rng::new(config.master_seed);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..reps {
                let eta = config.eta.unwrap_or_else(|| rng.next_f64());
                let rounded = lossless_round_single(&plan, &stream, f, RoundingSeed::new(eta, 0))?;
                sum += rounded.profit();
                sumsq += rounded.profit() * rounded.profit();
            }
            let (mean, se) = mean_se(sum, sumsq, reps);
            RoundReport {
                scheme: scheme.into(),
                f,
                mean_profit: mean,
                std_error: se,
                replications: reps,
                fractional_profit: Some(fractional_plan_profit(&plan, &stream, f)?),
                expected_profit: Some(lossless_expected_profit(&plan, &stream, f)?),
                kappa: None,
            }
        }
        "ak-round" => {
            if instance.num_offline != 1 {
                return Err(CliError::Usage("ak-round needs a single-resource instance".into()));
            }
            let stream: Vec<f64> = instance.arrivals.iter().map(|a| a.weights[0]).collect();
            let mut rng = buyback::rng::Rng::new(config.master_seed);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for rep in 0..reps {
                let eta = config.eta.unwrap_or_else(|| rng.next_f64());
                let seed = derive_seed(config.master_seed, 1, rep as u64);
                let run = threshold_randomized_single(&stream, f, RoundingSeed::new(eta, seed))?;
                sum += run.profit();
                sumsq += run.profit() * run.profit();
            }
            let (mean, se) = mean_se(sum, sumsq, reps);
            RoundReport {
                scheme: scheme.into(),
                f,
                mean_profit: mean,
                std_error: se,
                replications: reps,
                fractional_profit: Some(buyback::numerics::canonical_profit(
                    f,
                    optimal_single(&stream),
                )),
                expected_profit: None,
                kappa: None,
            }
        }
        "cap-round" => {
            let run = fractional_primal_dual(&instance, &matching_penalty(f))?;
            let z = run.allocation_matrix(instance.arrivals.len(), instance.num_offline);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for rep in 0..reps {
                let seed = derive_seed(config.master_seed, 2, rep as u64);
                let rounded = large_capacity_round(&instance, &z, seed)?;
                sum += rounded.profit();
                sumsq += rounded.profit() * rounded.profit();
            }
            let (mean, se) = mean_se(sum, sumsq, reps);
            let s_min = instance.capacities.iter().copied().fold(f64::INFINITY, f64::min);
            RoundReport {
                scheme: scheme.into(),
                f,
                mean_profit: mean,
                std_error: se,
                replications: reps,
                fractional_profit: Some(run.profit()),
                expected_profit: None,
                kappa: Some(kappa_for(s_min)),
            }
        }
        other => return Err(CliError::Usage(format!("unknown rounding scheme {other:?}"))),
    };
    fs::create_dir_all(&config.out_dir)?;
    write_text(&config.out_dir.join("round.json"), &json_pretty(&report))?;
    Ok(report)
}

fn mean_se(sum: f64, sumsq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sumsq / nf) - mean * mean).max(0.0) * nf / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Convenience used by tests: run the deterministic algorithm with its
/// optimal scalar.
pub fn run_det_default(instance: &WeightMatrixInstance) -> CliResult<RunResult> {
    Ok(deterministic_integral(instance, deterministic_tau(instance.buyback_factor))?)
}
