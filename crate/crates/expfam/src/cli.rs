//! Command-line surface. The binary is a thin wrapper around [`run`], which
//! is also exercised directly by integration tests.
//!
//! Every command validates inputs before computing, writes outputs
//! atomically, and derives all randomness from `--seed` (omitting the flag
//! picks a random seed that is printed and recorded in the output).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};
use rand::RngCore;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{sweep, FamilySpec};
use crate::family::{FamilyModel, FisherMatrix, ParameterVector};
use crate::io;
use crate::moments::{alpha_profiles, sandwich_check, AlphaMode, DirectionSet};
use crate::num::Scalar;
use crate::solver::{fit_l1, SolverConfig};
use crate::sparsity::{re_constants, two_stage_fit, TwoStageConfig};

#[derive(Debug, Parser)]
#[command(
    name = "expfam",
    about = "Sparse estimation in exponential families: L1 MLE, two-stage refit, moment diagnostics, RE constants, synthetic experiments",
    version
)]
pub struct Cli {
    /// Seed for all randomness; omitted, a random seed is drawn and reported.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Suppress progress lines on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// L1-regularized maximum likelihood fit.
    Fit(FitArgs),
    /// Two-stage fit: L1, threshold, restricted refit.
    TwoStage(TwoStageArgs),
    /// Fit the analytic standardized moment/cumulant constant alpha.
    Alpha(AlphaArgs),
    /// Restricted Fisher eigenvalue constants.
    Re(ReArgs),
    /// Verify the almost-strong-convexity sandwich on random cases.
    VerifyConvexity(VerifyConvexityArgs),
    /// Run a synthetic experiment sweep from a JSON config.
    Experiment(ExperimentArgs),
    /// Recompute aggregate statistics from a records.csv.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Family spec as inline JSON, e.g. '{"kind":"bernoulli"}'.
    #[arg(long)]
    pub family: String,
    /// Dataset CSV (header t1,...,tp).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iters: usize,
    /// Output JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TwoStageArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Threshold tau; defaults to 18*lambda/kappa_min^2 when --kappa-min is
    /// given.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub kappa_min: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AlphaArgs {
    #[arg(long)]
    pub family: String,
    /// Natural parameter as a comma-separated list.
    #[arg(long)]
    pub theta: String,
    /// moment | cumulant
    #[arg(long, default_value = "cumulant")]
    pub mode: String,
    #[arg(long, default_value_t = 8)]
    pub k_max: usize,
    /// Number of sampled directions.
    #[arg(long, default_value_t = 50)]
    pub directions: usize,
    /// Restrict directions to the cone over this support (comma list);
    /// default samples the whole sphere.
    #[arg(long)]
    pub cone_support: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReArgs {
    /// Headerless CSV matrix.
    #[arg(long)]
    pub fisher: PathBuf,
    /// Support indices, comma-separated, 0-based.
    #[arg(long)]
    pub support: String,
    #[arg(long, default_value_t = 500)]
    pub budget: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyConvexityArgs {
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub theta_star: String,
    /// Alpha to use; "fit" fits it from sampled directions.
    #[arg(long, default_value = "fit")]
    pub alpha: String,
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config JSON (schema expfam-experiment/1).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_family_spec(text: &str) -> Result<FamilySpec> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: "--family".into(),
        msg: e.to_string(),
    })
}

fn parse_vector(text: &str) -> Result<Array1<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    vals.map(Array1::from).map_err(|e| Error::Parse {
        path: "--theta".into(),
        msg: e.to_string(),
    })
}

fn parse_indices(text: &str) -> Result<BTreeSet<usize>> {
    text.split(',')
        .map(|s| {
            s.trim().parse::<usize>().map_err(|e| Error::Parse {
                path: "--support".into(),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Headerless CSV matrix reader for `re --fisher`.
fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|_| Error::Parse {
            path: path.display().to_string(),
            msg: format!("line {}: bad number", lineno + 1),
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    msg: format!("line {}: ragged row", lineno + 1),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            msg: "empty matrix".into(),
        });
    }
    let (r, c) = (rows.len(), rows[0].len());
    Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect()).map_err(|e| {
        Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    })
}

fn build_family(spec: &FamilySpec, p: usize) -> Result<FamilyModel<f64>> {
    spec.build(p)
}

fn resolve_seed(seed: Option<u64>, quiet: bool) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let s = rand::rngs::OsRng.next_u64();
            if !quiet {
                eprintln!("seed: {s} (randomly chosen; pass --seed {s} to reproduce)");
            }
            s
        }
    }
}

/// Configures the global thread pool from EXPFAM_THREADS once; later calls
/// are no-ops (rayon pools are process-global).
pub fn init_threads() {
    if let Ok(v) = std::env::var("EXPFAM_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

#[derive(Serialize)]
struct FitReport {
    schema: &'static str,
    family: FamilySpec,
    lambda: f64,
    seed: u64,
    estimate: Vec<f64>,
    objective_trace: Vec<f64>,
    kkt_residual: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct TwoStageReport {
    schema: &'static str,
    family: FamilySpec,
    lambda: f64,
    tau: f64,
    seed: u64,
    stage1_estimate: Vec<f64>,
    stage2_estimate: Vec<f64>,
    support: Vec<usize>,
    stage1_kkt: f64,
    stage2_kkt: f64,
    converged: bool,
}

#[derive(Serialize)]
struct AlphaDirectionReport {
    direction: Vec<f64>,
    ratios: Vec<f64>,
    alpha: f64,
}

#[derive(Serialize)]
struct AlphaReport {
    schema: &'static str,
    mode: String,
    k_max: usize,
    seed: u64,
    alpha: f64,
    directions: Vec<AlphaDirectionReport>,
}

#[derive(Serialize)]
struct ReReport {
    schema: &'static str,
    kappa_min: f64,
    kappa_max: f64,
    support: Vec<usize>,
    method: String,
    certificate_samples: usize,
    seed: u64,
}

#[derive(Serialize)]
struct ConvexityCase {
    fisher_risk: f64,
    regret: f64,
    ratio: Option<f64>,
    applicable: bool,
    sandwich_holds: bool,
}

#[derive(Serialize)]
struct ConvexityReportOut {
    schema: &'static str,
    alpha: f64,
    seed: u64,
    cases: usize,
    applicable_cases: usize,
    violations: usize,
    /// counts of applicable-case ratios in ten equal bins over [0, 1]
    ratio_histogram: Vec<usize>,
    samples: Vec<ConvexityCase>,
}

/// Runs a parsed command; the process exit code is 0 on Ok, 1 on Err.
pub fn run(cli: Cli) -> Result<()> {
    init_threads();
    let seed = resolve_seed(cli.seed, cli.quiet);
    match cli.command {
        Command::Fit(args) => cmd_fit(args, seed),
        Command::TwoStage(args) => cmd_two_stage(args, seed),
        Command::Alpha(args) => cmd_alpha(args, seed),
        Command::Re(args) => cmd_re(args, seed),
        Command::VerifyConvexity(args) => cmd_verify_convexity(args, seed),
        Command::Experiment(args) => cmd_experiment(args, cli.quiet),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_fit(args: FitArgs, seed: u64) -> Result<()> {
    let spec = parse_family_spec(&args.family)?;
    let data = io::read_dataset_csv(&args.data)?;
    let family = build_family(&spec, data.dim())?;
    let mut cfg = SolverConfig::new(args.lambda);
    cfg.tol_kkt = args.tol;
    cfg.max_iters = args.max_iters;
    let fit = fit_l1(&family, &data, &cfg)?;
    io::write_json(
        &args.out,
        &FitReport {
            schema: "expfam-fit/1",
            family: spec,
            lambda: args.lambda,
            seed,
            estimate: fit.estimate.values().to_vec(),
            objective_trace: fit.objective_trace,
            kkt_residual: fit.kkt_residual,
            iterations: fit.iterations,
            converged: fit.converged,
        },
    )
}

fn cmd_two_stage(args: TwoStageArgs, seed: u64) -> Result<()> {
    let spec = parse_family_spec(&args.fit.family)?;
    let data = io::read_dataset_csv(&args.fit.data)?;
    let family = build_family(&spec, data.dim())?;
    let tau = match (args.tau, args.kappa_min) {
        (Some(t), _) => t,
        (None, Some(k)) if k > 0.0 => 18.0 * args.fit.lambda / (k * k),
        _ => {
            return Err(Error::validation(
                "two-stage needs --tau, or --kappa-min to apply the default rule",
            ))
        }
    };
    let mut solver = SolverConfig::new(args.fit.lambda);
    solver.tol_kkt = args.fit.tol;
    solver.max_iters = args.fit.max_iters;
    let cfg = TwoStageConfig {
        lambda: args.fit.lambda,
        tau,
        solver,
    };
    let out = two_stage_fit(&family, &data, &cfg)?;
    io::write_json(
        &args.fit.out,
        &TwoStageReport {
            schema: "expfam-two-stage/1",
            family: spec,
            lambda: args.fit.lambda,
            tau,
            seed,
            stage1_estimate: out.stage1.estimate.values().to_vec(),
            stage2_estimate: out.stage2.estimate.values().to_vec(),
            support: out.support.iter().copied().collect(),
            stage1_kkt: out.stage1.kkt_residual,
            stage2_kkt: out.stage2.kkt_residual,
            converged: out.stage1.converged && out.stage2.converged,
        },
    )
}

fn cmd_alpha(args: AlphaArgs, seed: u64) -> Result<()> {
    let spec = parse_family_spec(&args.family)?;
    let theta = ParameterVector::new(parse_vector(&args.theta)?);
    let family = build_family(&spec, theta.len())?;
    let mode = match args.mode.as_str() {
        "moment" => AlphaMode::Moment,
        "cumulant" => AlphaMode::Cumulant,
        other => return Err(Error::validation(format!("unknown mode '{other}'"))),
    };
    let dirs = match &args.cone_support {
        Some(s) => DirectionSet::RestrictedCone {
            support: parse_indices(s)?,
            sample_count: args.directions,
        },
        None => DirectionSet::AllDirections {
            sample_count: args.directions,
        },
    };
    let profiles = alpha_profiles(&family, &theta, &dirs, args.k_max, seed)?;
    let mut alpha = 0.0_f64;
    let directions: Vec<AlphaDirectionReport> = profiles
        .iter()
        .map(|p| {
            let a = match mode {
                AlphaMode::Moment => p.alpha_moment,
                AlphaMode::Cumulant => p.alpha_cumulant,
            };
            alpha = alpha.max(a);
            AlphaDirectionReport {
                direction: p.direction.to_vec(),
                ratios: p.standardized_ratios(mode),
                alpha: a,
            }
        })
        .collect();
    io::write_json(
        &args.out,
        &AlphaReport {
            schema: "expfam-alpha/1",
            mode: args.mode,
            k_max: args.k_max,
            seed,
            alpha,
            directions,
        },
    )
}

fn cmd_re(args: ReArgs, seed: u64) -> Result<()> {
    let matrix = read_matrix_csv(&args.fisher)?;
    let fisher = FisherMatrix::new(matrix)?;
    let support = parse_indices(&args.support)?;
    let re = re_constants(&fisher, &support, args.budget, seed)?;
    io::write_json(
        &args.out,
        &ReReport {
            schema: "expfam-re/1",
            kappa_min: re.kappa_min,
            kappa_max: re.kappa_max,
            support: re.support.iter().copied().collect(),
            method: format!("{:?}", re.method),
            certificate_samples: re.certificate_samples,
            seed,
        },
    )
}

fn cmd_verify_convexity(args: VerifyConvexityArgs, seed: u64) -> Result<()> {
    use rand::SeedableRng;
    let spec = parse_family_spec(&args.family)?;
    let theta_star = ParameterVector::new(parse_vector(&args.theta_star)?);
    let family = build_family(&spec, theta_star.len())?;
    let alpha = if args.alpha == "fit" {
        crate::moments::fit_alpha(
            &family,
            &theta_star,
            &DirectionSet::AllDirections { sample_count: 100 },
            8,
            AlphaMode::Cumulant,
            seed,
        )?
    } else {
        args.alpha.parse::<f64>().map_err(|e| Error::Parse {
            path: "--alpha".into(),
            msg: e.to_string(),
        })?
    };
    let fisher = family.fisher_information(&theta_star)?;
    // perturbations at controlled Fisher radii straddling the threshold
    let threshold = if alpha > 0.0 {
        1.0 / (16.0 * alpha * alpha)
    } else {
        1.0
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(args.cases);
    let mut applicable = 0usize;
    let mut violations = 0usize;
    let mut hist = vec![0usize; 10];
    let p = family.dimension();
    let mut produced = 0usize;
    while produced < args.cases {
        let dir: Array1<f64> = Array1::from_iter((0..p).map(|_| f64::std_normal(&mut rng)));
        let fnorm2 = fisher.quadratic_form(dir.view())?;
        if fnorm2 <= 1e-12 {
            continue;
        }
        // half below the threshold radius, half above
        let target = if produced % 2 == 0 {
            threshold * (0.05 + 0.9 * f64::uniform01(&mut rng))
        } else {
            threshold * (1.5 + 3.0 * f64::uniform01(&mut rng))
        };
        let scale = (target / fnorm2).sqrt();
        let theta = ParameterVector::new(theta_star.values().to_owned() + &(dir * scale));
        if !family.domain_contains(&theta) {
            continue;
        }
        produced += 1;
        let rep = sandwich_check(&family, &theta_star, &theta, alpha)?;
        if rep.applicable {
            applicable += 1;
            if !rep.sandwich_holds {
                violations += 1;
            }
            if let Some(r) = rep.ratio {
                let bin = ((r * 10.0).floor() as isize).clamp(0, 9) as usize;
                hist[bin] += 1;
            }
        }
        samples.push(ConvexityCase {
            fisher_risk: rep.fisher_risk,
            regret: rep.regret,
            ratio: rep.ratio,
            applicable: rep.applicable,
            sandwich_holds: rep.sandwich_holds,
        });
    }
    io::write_json(
        &args.out,
        &ConvexityReportOut {
            schema: "expfam-verify-convexity/1",
            alpha,
            seed,
            cases: args.cases,
            applicable_cases: applicable,
            violations,
            ratio_histogram: hist,
            samples,
        },
    )
}

fn cmd_experiment(args: ExperimentArgs, quiet: bool) -> Result<()> {
    let config = io::load_experiment_config(&args.config)?;
    if !quiet {
        eprintln!(
            "experiment: p={} s={} grid={:?} trials={}",
            config.p, config.s, config.n_grid, config.trials
        );
    }
    let out = sweep(&config)?;
    io::write_records_csv(&args.out_dir.join("records.csv"), &out.records)?;
    // echo the fully materialized config alongside the summary
    #[derive(Serialize)]
    struct Summary<'a> {
        schema: &'static str,
        config: &'a crate::experiments::ExperimentConfig,
        summary: &'a crate::experiments::SweepSummary,
    }
    io::write_json(
        &args.out_dir.join("summary.json"),
        &Summary {
            schema: "expfam-summary/1",
            config: &config,
            summary: &out.summary,
        },
    )
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let records = io::read_records_csv(&args.records)?;
    #[derive(Serialize)]
    struct Report {
        schema: &'static str,
        records: usize,
        failed: usize,
        converged: usize,
        thm3_qualifying: usize,
        thm5_qualifying: usize,
        median_fisher_risk_by_n: Vec<(usize, f64)>,
    }
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let median_by_n: Vec<(usize, f64)> = ns
        .iter()
        .map(|&n| {
            let mut v: Vec<f64> = records
                .iter()
                .filter(|r| r.n == n && !r.failed)
                .map(|r| r.fisher_risk)
                .collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = if v.is_empty() {
                f64::NAN
            } else if v.len() % 2 == 1 {
                v[v.len() / 2]
            } else {
                0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
            };
            (n, m)
        })
        .collect();
    io::write_json(
        &args.out,
        &Report {
            schema: "expfam-report/1",
            records: records.len(),
            failed: records.iter().filter(|r| r.failed).count(),
            converged: records.iter().filter(|r| r.converged).count(),
            thm3_qualifying: records
                .iter()
                .filter(|r| r.lambda_dominates && r.eq6_holds)
                .count(),
            thm5_qualifying: records.iter().filter(|r| r.blambda1_holds).count(),
            median_fisher_risk_by_n: median_by_n,
        },
    )
}
