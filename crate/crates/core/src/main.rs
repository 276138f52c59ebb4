//! Command-line front end: graph generation, threshold calibration,
//! expansion coefficients, embedding, clustering, the two-community test,
//! metric reports, sweeps, and error-rate estimation.

use clap::{Args, Parser, Subcommand, ValueEnum};
use gmbm::calibrate::{calibrate_tau, default_tolerance, DEFAULT_CALIBRATION_SAMPLES};
use gmbm::error::Error;
use gmbm::gegenbauer::{harmonic_dimension, ExpansionCoefficients};
use gmbm::graphio::{
    read_embedding, read_graph, read_latents, write_embedding, write_graph, write_latents,
};
use gmbm::harness::{
    detection_auc, estimate_test_errors, parse_sweep_config, sweep, OutFormat,
};
use gmbm::metrics::{
    crossing_edge_count, label_accuracy, label_overlap, linear_residual, operator_error,
    pair_error, ErrorReport,
};
use gmbm::model::{connect_graph, sample_latents, ModelParams};
use gmbm::rng::Stream;
use gmbm::spectral::{
    build_embedding, cluster_graph, detect_dimension, eigentop, lambda1_for_graph,
    test_two_community, TestPolicy, DEFAULT_GAP_GAMMA,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gmbm", version, about = "Latent-geometry graph toolkit")]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format for tabular commands.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    /// Analytic threshold from the expansion coefficients.
    Formula,
    /// Empirical quantile over simulated zero-separation graphs.
    Null,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a graph (and optionally its latents) to files.
    Generate(GenerateArgs),
    /// Calibrate the connection threshold for a target edge probability.
    Calibrate(CalibrateArgs),
    /// Expansion coefficients of the threshold kernel.
    Coeffs(CoeffsArgs),
    /// Spectral embedding of a graph file.
    Embed(EmbedArgs),
    /// Two-community labels from the second eigenvector.
    Cluster(ClusterArgs),
    /// One-vs-two community hypothesis test.
    Test(TestArgs),
    /// Error report for an embedding against the true latents.
    Metrics(MetricsArgs),
    /// Run a sweep described by a config file.
    Sweep(SweepArgs),
    /// Empirical type-I/type-II error rates of the test.
    TestErrors(TestErrorsArgs),
    /// Detection AUC of the test statistic.
    Auc(AucArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Target edge probability; calibrates tau.
    #[arg(long, conflicts_with = "tau")]
    p: Option<f64>,
    /// Explicit connection threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Calibration sample count.
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SAMPLES)]
    samples: usize,
    /// Also write the latent vectors to this CSV.
    #[arg(long)]
    latents: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SAMPLES)]
    samples: usize,
    /// Calibration tolerance on the achieved probability.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct CoeffsArgs {
    /// Sphere dimension the coefficients live on.
    #[arg(long)]
    d: usize,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    kmax: usize,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Embedding dimension (number of eigenpairs after the top one).
    #[arg(long)]
    d: usize,
    /// Normalization eigenvalue; taken from the graph header when --auto.
    #[arg(long, conflicts_with = "auto")]
    lambda1: Option<f64>,
    #[arg(long)]
    auto: bool,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Number of informative eigenvalues to assume.
    #[arg(long, conflicts_with = "auto")]
    d_est: Option<usize>,
    /// Detect the dimension from the eigenvalue gaps.
    #[arg(long)]
    auto: bool,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum)]
    policy: PolicyArg,
    /// Test level for the null policy.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Null simulations for the null policy.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Log-power slack exponent for the formula policy.
    #[arg(long, default_value_t = 9.0)]
    beta: f64,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    embedding: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Key-value config file describing the sweep.
    config: PathBuf,
}

#[derive(Args)]
struct TestErrorsArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    null_trials: usize,
    #[arg(long, default_value_t = 100)]
    alt_trials: usize,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SAMPLES)]
    samples: usize,
}

#[derive(Args)]
struct AucArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SAMPLES)]
    samples: usize,
}

fn emit(out: &Option<PathBuf>, text: &str) -> gmbm::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_)
        | Error::Parse(_)
        | Error::InvalidCoefficients(_)
        | Error::ShapeMismatch(_) => 2,
        _ => 3,
    }
}

fn run(cli: &Cli) -> gmbm::Result<()> {
    let stream = Stream::root(cli.seed);
    match &cli.command {
        Command::Generate(args) => {
            let params = ModelParams {
                n: args.n,
                d: args.d,
                mu: args.mu,
                p: args.p,
                tau: args.tau,
                seed: cli.seed,
            };
            let params = params.calibrated(args.samples, stream)?;
            let tau = params.tau()?;
            let latents = sample_latents(&params, stream)?;
            let mut graph = connect_graph(&latents, tau)?;
            graph.meta.mu = params.mu;
            graph.meta.p = params.p;
            graph.meta.seed = params.seed;
            let out = cli.out.clone().ok_or_else(|| {
                Error::InvalidParameter("generate needs --out for the graph file".into())
            })?;
            write_graph(&out, &graph)?;
            if let Some(path) = &args.latents {
                write_latents(path, &latents, &graph.meta)?;
            }
            eprintln!(
                "wrote {} vertices, {} edges (density {:.5}) to {}",
                graph.n,
                graph.edge_count,
                graph.density(),
                out.display()
            );
            Ok(())
        }
        Command::Calibrate(args) => {
            let tol = args
                .tol
                .unwrap_or_else(|| default_tolerance(args.p, args.samples));
            let cal = calibrate_tau(
                args.d,
                args.mu,
                args.p,
                args.samples,
                tol,
                gmbm::model::calibration_stream(stream, args.d, args.mu, args.p),
            )?;
            let line = serde_json::json!({
                "tau": cal.tau,
                "achieved_p": cal.achieved_p,
                "se": cal.se,
                "samples": cal.samples,
            });
            emit(&cli.out, &format!("{line}\n"))
        }
        Command::Coeffs(args) => {
            let coeffs = ExpansionCoefficients::compute(args.d, args.tau, args.kmax)?;
            let mut text = String::from("k,N_k,lambda_k,c_k,method\n");
            for k in 0..=args.kmax {
                text.push_str(&format!(
                    "{},{},{},{},{:?}\n",
                    k,
                    harmonic_dimension(args.d, k)?,
                    coeffs.lambda[k],
                    coeffs.c[k],
                    coeffs.method[k]
                ));
            }
            emit(&cli.out, &text)
        }
        Command::Embed(args) => {
            let graph = read_graph(&args.graph)?;
            let lambda1 = match (args.lambda1, args.auto) {
                (Some(v), _) => v,
                (None, true) => {
                    lambda1_for_graph(&graph, DEFAULT_CALIBRATION_SAMPLES, stream)?
                }
                (None, false) => {
                    return Err(Error::InvalidParameter(
                        "embed needs --lambda1 or --auto".into(),
                    ))
                }
            };
            let dec = eigentop(&graph, args.d + 1)?;
            let emb = build_embedding(&dec, args.d, lambda1)?;
            let out = cli.out.clone().ok_or_else(|| {
                Error::InvalidParameter("embed needs --out for the embedding CSV".into())
            })?;
            write_embedding(&out, emb.n, emb.d, &emb.u_hat)?;
            Ok(())
        }
        Command::Cluster(args) => {
            let graph = read_graph(&args.graph)?;
            let d_est = match (args.d_est, args.auto) {
                (Some(v), _) => v,
                (None, true) => {
                    let d_guess = if graph.meta.d >= 2 { graph.meta.d } else { 8 };
                    let i_max = gmbm::spectral::default_gap_range(d_guess, graph.n);
                    let dec = eigentop(&graph, (i_max + 2).min(graph.n))?;
                    detect_dimension(&dec.eigenvalues, i_max, DEFAULT_GAP_GAMMA)?
                }
                (None, false) => 1,
            };
            let labels = cluster_graph(&graph, d_est)?;
            let mut text = String::with_capacity(labels.len() * 3);
            for l in labels {
                text.push_str(if l > 0 { "1\n" } else { "-1\n" });
            }
            emit(&cli.out, &text)
        }
        Command::Test(args) => {
            let graph = read_graph(&args.graph)?;
            let params = graph.meta.to_params();
            let policy = match args.policy {
                PolicyArg::Formula => TestPolicy::Formula { beta: args.beta },
                PolicyArg::Null => TestPolicy::EmpiricalNull {
                    alpha: args.alpha,
                    trials: args.trials,
                },
            };
            let dec = eigentop(&graph, 2)?;
            let decision = test_two_community(&dec, &params, &policy, stream)?;
            let line = serde_json::to_string(&decision)
                .map_err(|e| Error::Parse(format!("decision serialization: {e}")))?;
            emit(&cli.out, &format!("{line}\n"))
        }
        Command::Metrics(args) => {
            let graph = read_graph(&args.graph)?;
            let (latents, _) = read_latents(&args.latents)?;
            let (en, ed, u_hat) = read_embedding(&args.embedding)?;
            if en != latents.n || ed != latents.d {
                return Err(Error::ShapeMismatch(format!(
                    "embedding is {en} x {ed}, latents are {} x {}",
                    latents.n, latents.d
                )));
            }
            let (abs, norm, rel) = pair_error(&u_hat, &latents.u, latents.n, latents.d)?;
            let (op, fro) = operator_error(&u_hat, &latents.u, latents.n, latents.d)?;
            let est_labels = cluster_graph(&graph, latents.d)?;
            let overlap = label_overlap(&est_labels, &latents.labels)?;
            let accuracy = label_accuracy(&est_labels, &latents.labels)?;
            let crossing = crossing_edge_count(&graph, &latents.labels)?;
            let residual = match graph.meta.tau {
                Some(tau) => {
                    let coeffs = ExpansionCoefficients::compute(latents.d - 1, tau, 2)?;
                    // The rank-one correction divides by p0; past the kernel
                    // support (|tau| >= 1) the residual is undefined, not zero.
                    if coeffs.p0() > 0.0 {
                        Some(linear_residual(&graph, &latents, &coeffs)?)
                    } else {
                        None
                    }
                }
                None => None,
            };
            let report = ErrorReport {
                pair_error_abs: Some(abs),
                pair_norm: Some(norm),
                relative_pair_error: Some(rel),
                op_error: Some(op),
                fro_error: Some(fro),
                overlap: Some(overlap),
                accuracy: Some(accuracy),
                crossing_edges: Some(crossing),
                linear_residual: residual,
            };
            let line = serde_json::to_string(&report)
                .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
            emit(&cli.out, &format!("{line}\n"))
        }
        Command::Sweep(args) => {
            let text = std::fs::read_to_string(&args.config)?;
            let mut config = parse_sweep_config(&text)?;
            if let Some(out) = &cli.out {
                config.out = Some(out.clone());
            }
            if config.out.is_none() {
                return Err(Error::InvalidParameter(
                    "sweep needs an output path (config key out or --out)".into(),
                ));
            }
            if cli.format == Format::Jsonl {
                config.format = OutFormat::Jsonl;
            }
            let records = sweep(&config)?;
            eprintln!(
                "wrote {} rows to {}",
                records.len(),
                config.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
            );
            Ok(())
        }
        Command::TestErrors(args) => {
            let params = ModelParams {
                n: args.n,
                d: args.d,
                mu: args.mu,
                p: Some(args.p),
                tau: None,
                seed: cli.seed,
            };
            let (type1, type2, threshold) = estimate_test_errors(
                &params,
                args.alpha,
                args.null_trials,
                args.alt_trials,
                args.samples,
                stream,
            )?;
            let line = serde_json::json!({
                "type1": type1,
                "type2": type2,
                "threshold": threshold,
                "alpha": args.alpha,
                "null_trials": args.null_trials,
                "alt_trials": args.alt_trials,
            });
            emit(&cli.out, &format!("{line}\n"))
        }
        Command::Auc(args) => {
            let params = ModelParams {
                n: args.n,
                d: args.d,
                mu: args.mu,
                p: Some(args.p),
                tau: None,
                seed: cli.seed,
            };
            let (auc, se) = detection_auc(&params, args.trials, args.samples, stream)?;
            let line = serde_json::json!({
                "auc": auc,
                "se": se,
                "trials": args.trials,
            });
            emit(&cli.out, &format!("{line}\n"))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("gmbm: thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gmbm: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
