//! Command-line surface: argument parsing, file orchestration, and exit
//! codes. The library does the real work; this module translates between
//! the shell and the library, keeping every command deterministic for a
//! given seed.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid input (shape, non-finite,
//! asymmetry), 4 numerical failure, 5 file or format trouble, 6 version or
//! checksum mismatch.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibrate::{calibrate, CalibrationFixed, CalibrationTarget};
use crate::diagnostics::{predict, summarize, FitSummary};
use crate::error::{Result, SofterError};
use crate::io::{
    load_chain, load_dataset, load_manifest, save_chain, save_manifest, sha256_file, ChainFile,
    LoadOptions, RunManifest,
};
use crate::model::{ChainSamples, Dataset, SofterConfig, Symmetry};
use crate::simbench::{gen_dataset, make_truth, run_benchmark, BenchSpec, Scenario, TruthSpec};

#[derive(Parser)]
#[command(
    name = "softer",
    version,
    about = "Bayesian regression of a scalar outcome on a tensor predictor \
             with a softened rank decomposition"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the prior-calibration conditions and print the
    /// hyperparameter bundle as JSON.
    Calibrate(CalibrateArgs),
    /// Draw a synthetic dataset from a chosen coefficient truth.
    Simulate(SimulateArgs),
    /// Run the Gibbs sampler and write chains, summary, and manifest.
    Fit(FitArgs),
    /// Recompute the posterior summary of a finished fit.
    Summarize(SummarizeArgs),
    /// Predict outcomes for new data from a finished fit.
    Predict(PredictArgs),
    /// Run a scenario-by-method benchmark grid from a JSON specification.
    Bench(BenchArgs),
    /// Print convergence diagnostics and emit plot-ready trace CSVs.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SymArg {
    None,
    Symmetric,
    SemiSymmetric,
}

impl From<SymArg> for Symmetry {
    fn from(v: SymArg) -> Symmetry {
        match v {
            SymArg::None => Symmetry::None,
            SymArg::Symmetric => Symmetry::Symmetric,
            SymArg::SemiSymmetric => Symmetry::SemiSymmetric,
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// Target marginal variance of each coefficient entry.
    #[arg(long, default_value_t = 1.0)]
    v_star: f64,
    /// Target share of that variance contributed by the softening.
    #[arg(long, default_value_t = 0.1)]
    av_star: f64,
    /// Decomposition rank D.
    #[arg(long, default_value_t = 3)]
    d: usize,
    /// Dirichlet concentration alpha.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Number of tensor modes (the calibration identities hold for 2).
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 3.0)]
    a_taugamma: f64,
    #[arg(long, default_value_t = 0.5)]
    a_sigma: f64,
    #[arg(long, default_value_t = 3.0)]
    a_lambda: f64,
    /// Gamma rate for lambda; defaults to a_lambda^(1/(2K)).
    #[arg(long)]
    b_lambda: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Predictor extents, e.g. 16x16 or 8x8x4.
    #[arg(long)]
    dims: String,
    /// Training sample size.
    #[arg(long)]
    n: usize,
    /// Coefficient truth: diagonal, lowrank:R, squares:rects.json, or
    /// file:tensor.csv.
    #[arg(long)]
    truth: String,
    #[arg(long, default_value_t = 0.5)]
    noise_variance: f64,
    #[arg(long, value_enum, default_value_t = SymArg::None)]
    symmetry: SymArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra held-out units written alongside the training files.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Outcome CSV, one value per line.
    #[arg(long)]
    outcomes: PathBuf,
    /// Optional scalar-covariate CSV, one comma-separated row per unit.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Predictor tensors, binary or CSV.
    #[arg(long)]
    tensors: PathBuf,
    /// Full configuration JSON; command-line flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Decomposition rank for the default configuration.
    #[arg(long, conflicts_with = "config")]
    d: Option<usize>,
    #[arg(long, value_enum)]
    symmetry: Option<SymArg>,
    /// Freeze each margin at its row mean (the constrained baseline).
    #[arg(long)]
    hard: bool,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Credible-interval level for the written summary.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Center and scale the outcome and covariates, scale tensor entries;
    /// the transform is stored in the manifest.
    #[arg(long)]
    standardize: bool,
    /// Largest mirror-pair mismatch repaired by averaging under a
    /// symmetric fit.
    #[arg(long, default_value_t = 0.0)]
    sym_tol: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Directory written by `softer fit`.
    #[arg(long)]
    fit_dir: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Write the summary JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    fit_dir: PathBuf,
    #[arg(long)]
    tensors: PathBuf,
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Known outcomes; when given, the predictive MSE is printed.
    #[arg(long)]
    outcomes: Option<PathBuf>,
    /// Write predictions here, one per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark specification JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Results CSV, a pure function of the specification.
    #[arg(long)]
    out: PathBuf,
    /// Wall-clock CSV; omitted unless requested so results stay
    /// reproducible byte for byte.
    #[arg(long)]
    timings: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    fit_dir: PathBuf,
    /// Write monitored traces here in long format
    /// (parameter,chain,draw,value).
    #[arg(long)]
    traces_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

/// Entry point behind `main`; parses, dispatches, and maps errors to exit
/// codes.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_thread_pool();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let outcome = match cli.cmd {
        Cmd::Calibrate(a) => cmd_calibrate(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::Summarize(a) => cmd_summarize(a),
        Cmd::Predict(a) => cmd_predict(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Diagnose(a) => cmd_diagnose(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code().clamp(0, 255) as u8)
        }
    }
}

/// SOFTER_THREADS caps the worker pool; unset or invalid leaves the
/// default (one worker per core).
fn init_thread_pool() {
    if let Ok(v) = std::env::var("SOFTER_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let fixed = CalibrationFixed {
        a_taugamma: a.a_taugamma,
        a_sigma: a.a_sigma,
        a_lambda: a.a_lambda,
        b_lambda: a.b_lambda.unwrap_or_else(|| a.a_lambda.powf(1.0 / (2.0 * a.k as f64))),
        alpha: a.alpha,
        d: a.d,
    };
    let target = CalibrationTarget { v_star: a.v_star, av_star: a.av_star };
    let hyper = calibrate(target, fixed, a.k)?;
    println!("{}", serde_json::to_string_pretty(&hyper)?);
    Ok(())
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| SofterError::Invalid(format!("bad dimension {tok:?} in {s:?}")))
        })
        .collect::<Result<_>>()?;
    if dims.is_empty() || dims.iter().any(|&d| d == 0) {
        return Err(SofterError::Invalid(format!("bad dims {s:?}")));
    }
    Ok(dims)
}

fn parse_truth(s: &str) -> Result<TruthSpec> {
    if s == "diagonal" {
        return Ok(TruthSpec::Diagonal);
    }
    if let Some(rank) = s.strip_prefix("lowrank:") {
        let rank = rank
            .parse::<usize>()
            .map_err(|_| SofterError::Invalid(format!("bad lowrank rank {rank:?}")))?;
        return Ok(TruthSpec::Lowrank { rank });
    }
    if let Some(path) = s.strip_prefix("squares:") {
        let rects = serde_json::from_str(&fs::read_to_string(path)?)?;
        return Ok(TruthSpec::Squares { rects });
    }
    if let Some(path) = s.strip_prefix("file:") {
        return Ok(TruthSpec::File { path: path.to_string() });
    }
    Err(SofterError::Invalid(format!(
        "truth {s:?} is none of diagonal, lowrank:R, squares:rects.json, file:tensor.csv"
    )))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    use rand::SeedableRng;
    let dims = parse_dims(&a.dims)?;
    let spec = parse_truth(&a.truth)?;
    let symmetry = Symmetry::from(a.symmetry);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let mut truth = make_truth(&spec, &dims, &mut rng)?;
    if symmetry != Symmetry::None {
        crate::io::symmetrize_tensor(&mut truth, f64::INFINITY, 1)?;
    }
    let scenario = Scenario {
        name: "simulate".into(),
        n: a.n,
        truth,
        noise_variance: a.noise_variance,
        symmetry,
        seed: a.seed,
    };
    let (train, holdout) = gen_dataset(&scenario, a.holdout.max(1))?;
    fs::create_dir_all(&a.out_dir)?;
    let write = |name: &str, data: &Dataset| -> Result<()> {
        crate::io::write_vector_csv(&a.out_dir.join(format!("{name}_y.csv")), data.y())?;
        crate::io::write_tensors_csv(
            &a.out_dir.join(format!("{name}_x.csv")),
            data.predictors(),
        )
    };
    write("train", &train)?;
    if a.holdout > 0 {
        write("holdout", &holdout)?;
    }
    crate::io::write_tensors_csv(
        &a.out_dir.join("truth.csv"),
        std::slice::from_ref(&scenario.truth),
    )?;
    println!(
        "wrote {} training and {} holdout units to {}",
        a.n,
        a.holdout,
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let symmetry_flag = a.symmetry.map(Symmetry::from);
    let load_symmetry = symmetry_flag.unwrap_or_else(|| {
        a.config
            .as_deref()
            .and_then(|p| fs::read_to_string(p).ok())
            .and_then(|text| serde_json::from_str::<SofterConfig>(&text).ok())
            .map_or(Symmetry::None, |c| c.symmetry)
    });
    let opts = LoadOptions {
        standardize: a.standardize,
        symmetry: load_symmetry,
        sym_tol: a.sym_tol,
    };
    let (dataset, transform) =
        load_dataset(&a.outcomes, a.covariates.as_deref(), &a.tensors, opts)?;
    let dims = dataset.dims().expect("nonempty dataset").to_vec();

    let mut config = match &a.config {
        Some(path) => {
            let cfg: SofterConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
            if cfg.dims != dims {
                return Err(SofterError::Shape(format!(
                    "config dims {:?} disagree with data dims {dims:?}",
                    cfg.dims
                )));
            }
            cfg
        }
        None => SofterConfig::default_for(dims, a.d.unwrap_or(3))?,
    };
    if let Some(s) = symmetry_flag {
        config.symmetry = s;
    }
    if a.hard {
        config.hard_mode = true;
    }
    if let Some(v) = a.iterations {
        config.sampler.iterations = v;
    }
    if let Some(v) = a.burn_in {
        config.sampler.burn_in = v;
    }
    if let Some(v) = a.thin {
        config.sampler.thin = v;
    }
    if let Some(v) = a.chains {
        config.sampler.chains = v;
    }
    if let Some(v) = a.seed {
        config.sampler.seed = v;
    }
    config.validate()?;

    let finished = run_chains_with_checkpoints(&config, &dataset)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut chain_paths = Vec::new();
    let mut samples = Vec::new();
    for (file, s) in finished {
        let name = format!("chain_{}.json", s.stream);
        save_chain(&a.out_dir.join(&name), &file)?;
        chain_paths.push(name);
        samples.push(s);
    }
    let summary = summarize(&samples, a.level)?;
    fs::write(
        a.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    crate::io::write_tensors_csv(
        &a.out_dir.join("posterior_mean.csv"),
        std::slice::from_ref(&summary.posterior_mean_b),
    )?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        config,
        outcome_checksum: sha256_file(&a.outcomes)?,
        covariate_checksum: match &a.covariates {
            Some(p) => Some(sha256_file(p)?),
            None => None,
        },
        tensor_checksum: sha256_file(&a.tensors)?,
        transform,
        chain_paths,
    };
    save_manifest(&a.out_dir.join("manifest.json"), &manifest)?;
    report_fit(&summary);
    println!("wrote fit to {}", a.out_dir.display());
    Ok(())
}

/// Runs the configured chains like `run_chains`, but keeps each finished
/// chain's full checkpoint so the written files can seed an exact
/// continuation.
fn run_chains_with_checkpoints(
    config: &SofterConfig,
    dataset: &Dataset,
) -> Result<Vec<(ChainFile, ChainSamples)>> {
    use rayon::prelude::*;
    let seed = config.sampler.seed;
    (0..config.sampler.chains as u64)
        .into_par_iter()
        .map(|c| {
            let stream = crate::sampler::RngStream { seed, stream: c };
            match config.symmetry {
                Symmetry::None => {
                    let mut chain = crate::sampler::Chain::new(config, dataset, stream)?;
                    chain.run()?;
                    let ckpt = chain.checkpoint();
                    Ok((ChainFile::Unstructured(ckpt), chain.into_samples()))
                }
                _ => {
                    let mut chain =
                        crate::symmetric::SymmetricChain::new(config, dataset, stream)?;
                    chain.run()?;
                    let ckpt = chain.checkpoint();
                    Ok((ChainFile::Symmetric(ckpt), chain.into_samples()))
                }
            }
        })
        .collect()
}

fn report_fit(summary: &FitSummary) {
    println!(
        "retained {} draws; intercept {:.4}; residual variance {:.4}",
        summary.draws, summary.mu.mean, summary.tau2.mean
    );
    if let Some(worst) = summary
        .psrf
        .iter()
        .max_by(|x, y| x.psrf.partial_cmp(&y.psrf).expect("psrf comparable"))
    {
        println!("largest scale-reduction factor {:.4} ({})", worst.psrf, worst.name);
    }
}

/// Loads a fit directory back into memory, verifying that every chain was
/// drawn under the manifest's configuration.
fn load_fit(dir: &Path) -> Result<(RunManifest, Vec<ChainSamples>)> {
    let manifest = load_manifest(&dir.join("manifest.json"))?;
    let mut samples = Vec::new();
    for name in &manifest.chain_paths {
        let chain = load_chain(&dir.join(name))?;
        if chain.config_hash() != manifest.config_hash {
            return Err(SofterError::VersionMismatch(format!(
                "chain {name} was drawn under a different configuration than the manifest"
            )));
        }
        samples.push(chain.to_samples(&manifest.config));
    }
    if samples.is_empty() {
        return Err(SofterError::Invalid("manifest lists no chains".into()));
    }
    Ok((manifest, samples))
}

fn cmd_summarize(a: SummarizeArgs) -> Result<()> {
    let (_, samples) = load_fit(&a.fit_dir)?;
    let summary = summarize(&samples, a.level)?;
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    match &a.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let (manifest, samples) = load_fit(&a.fit_dir)?;
    let cov = match &a.covariates {
        Some(p) => crate::io::read_matrix_csv(p)?,
        None => vec![],
    };
    let mut xs = crate::io::read_tensors_any(&a.tensors)?;
    let n = xs.len();
    let mut cov = if cov.is_empty() { vec![vec![]; n] } else { cov };
    if manifest.config.symmetry != Symmetry::None {
        for (i, t) in xs.iter_mut().enumerate() {
            crate::io::symmetrize_tensor(t, f64::INFINITY, i + 1)?;
        }
    }
    // new data must enter the model on the scale the fit saw
    if let Some(tf) = &manifest.transform {
        for t in &mut xs {
            for v in t.values_mut() {
                *v /= tf.x_scale;
            }
        }
        for row in &mut cov {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - tf.covariate_centers[j]) / tf.covariate_scales[j];
            }
        }
    }
    let dataset = Dataset::new(vec![0.0; n], cov, xs)?;
    let mut preds = predict(&samples, &dataset)?;
    if let Some(tf) = &manifest.transform {
        for p in &mut preds {
            *p = tf.unstandardize_prediction(*p);
        }
    }
    if let Some(path) = &a.out {
        crate::io::write_vector_csv(path, &preds)?;
    }
    if let Some(ypath) = &a.outcomes {
        let y = crate::io::read_vector_csv(ypath)?;
        if y.len() != preds.len() {
            return Err(SofterError::Shape(format!(
                "{} outcomes for {} predictions",
                y.len(),
                preds.len()
            )));
        }
        let mse =
            y.iter().zip(&preds).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
        println!("predictive_mse {mse}");
    } else if a.out.is_none() {
        for p in &preds {
            println!("{p}");
        }
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let spec: BenchSpec = serde_json::from_str(&fs::read_to_string(&a.spec)?)?;
    let out = run_benchmark(&spec)?;
    fs::write(&a.out, crate::simbench::results_csv(&out))?;
    if let Some(path) = &a.timings {
        fs::write(path, crate::simbench::timings_csv(&out))?;
    }
    let failed = out.results.iter().filter(|r| r.metric == "failed").count();
    println!(
        "wrote {} result rows to {}{}",
        out.results.len(),
        a.out.display(),
        if failed > 0 { format!(" ({failed} failed cells)") } else { String::new() }
    );
    Ok(())
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let (_, samples) = load_fit(&a.fit_dir)?;
    let summary = summarize(&samples, a.level)?;
    if summary.psrf.is_empty() {
        println!("scale-reduction factors need at least two chains; this fit has {}", samples.len());
    } else {
        println!("{:<24} {:>10}", "parameter", "psrf");
        for e in &summary.psrf {
            println!("{:<24} {:>10.5}", e.name, e.psrf);
        }
        let worst = summary.psrf.iter().map(|e| e.psrf).fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{}",
            if worst < 1.1 {
                "all monitored factors below 1.1".to_string()
            } else {
                format!("largest factor {worst:.5} is at or above 1.1; consider longer chains")
            }
        );
    }
    if let Some(path) = &a.traces_out {
        write_traces(path, &samples)?;
        println!("wrote traces to {}", path.display());
    }
    Ok(())
}

/// Long-format traces of the monitored scalars: intercept, covariate
/// coefficients, residual variance, and the monitored coefficient entries.
fn write_traces(path: &Path, samples: &[ChainSamples]) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::from("parameter,chain,draw,value\n");
    let offsets: Vec<usize> = match samples[0].records.first() {
        Some(r) => crate::diagnostics::monitored_b_offsets(r.b.len()),
        None => return Err(SofterError::Invalid("chains hold no retained draws".into())),
    };
    let dims = samples[0].records[0].b.dims().to_vec();
    for s in samples {
        for (i, rec) in s.records.iter().enumerate() {
            let mut push = |name: &str, v: f64| {
                let _ = writeln!(out, "{name},{},{},{v}", s.stream, i + 1);
            };
            push("mu", rec.mu);
            for (j, d) in rec.delta.iter().enumerate() {
                push(&format!("delta[{}]", j + 1), *d);
            }
            push("tau2", rec.tau2);
            for &off in &offsets {
                let idx: Vec<String> = crate::tensor::index_from_offset(&dims, off)
                    .iter()
                    .map(|v| v.to_string())
                    .collect();
                push(&format!("b[{}]", idx.join(",")), rec.b.values()[off]);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}
