use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tsrobust::harness::{
    emit_plots, load_case_study_path, run_case_study, run_experiment, CaseStudyConfig, CaseStudyRun,
    CaseStudyTransform, ExperimentConfig,
};
use tsrobust::robustness::ReportDocument;
use tsrobust::scoring::{accuracy_score, normality_diagnostic, normalized_error, obs_equivalent, MIN_NORMALITY_VALUES};
use tsrobust::synth::default_burn_in;
use tsrobust::{
    compute_robustness, fit, random_model, signature_of, simulate, CausalModel, FitConfig, ModelGenConfig,
    SurrogateConfig, TimeSeriesData, DEFAULT_ZERO_TOL,
};

#[derive(Parser)]
#[command(name = "tsrobust", version, about = "Causal structure fitting and robustness for multivariate time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random stationary model and/or simulate data from one
    Synth(SynthArgs),
    /// Fit the sparsest structure(s) to a data CSV
    Fit(FitArgs),
    /// Fit surrogate replicates and rank structures by robustness
    Robustness(RobustnessArgs),
    /// Compare a fitted model or robustness report with the true model
    Score(ScoreArgs),
    /// Run a Monte Carlo recovery study from a TOML config
    Experiment(ExperimentArgs),
    /// Robustness analysis of the wage/price macro dataset
    Casestudy(CaseStudyArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Master seed; drawn from system entropy and printed when omitted
    #[arg(long)]
    seed: Option<u64>,
}

impl SeedArg {
    fn resolve(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            let s = rand::random::<u64>();
            eprintln!("seed: {s}");
            s
        })
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Simulate from this model JSON instead of generating one
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Connectivity ratio
    #[arg(long, default_value_t = 0.4)]
    connectivity: f64,
    /// Observations to simulate; 0 skips simulation
    #[arg(long, default_value_t = 500)]
    length: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    data_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Confidence level of the edge test
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    /// Directory for one model JSON per minimal structure
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    /// Surrogate lag order, defaults to p
    #[arg(long)]
    surrogate_lags: Option<usize>,
    #[command(flatten)]
    seed: SeedArg,
    /// Report JSON
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-replicate structure CSV
    #[arg(long)]
    replicates_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    truth: PathBuf,
    /// Fitted model JSON
    #[arg(long, conflicts_with = "report", required_unless_present = "report")]
    fit: Option<PathBuf>,
    /// Robustness report JSON; its most robust structure is scored
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write normalized-error probability-plot pairs to this CSV
    #[arg(long)]
    emit_probplot: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CaseStudyArgs {
    /// Raw CSV with UNRATE, GDPC1, GDPPOT, HCOMPBS, IDPBS, OPHPBS columns
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha_low: f64,
    #[arg(long, default_value_t = 0.99)]
    alpha_high: f64,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value_t = 55.0)]
    trust_threshold: f64,
    #[command(flatten)]
    seed: SeedArg,
    /// Directory for the two report JSONs
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Robustness(a) => robustness(a),
        Command::Score(a) => score(a),
        Command::Experiment(a) => experiment(a),
        Command::Casestudy(a) => casestudy(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let seed = a.seed.resolve();
    let model = match &a.model {
        Some(path) => CausalModel::read_path(path).with_context(|| format!("reading {}", path.display()))?,
        None => random_model(&ModelGenConfig::new(a.n, a.p, a.connectivity, seed))?,
    };
    match &a.model_out {
        Some(path) => model.write_path(path)?,
        None if a.model.is_none() => println!("{}", model.to_json()?),
        None => {}
    }
    if a.length > 0 {
        let burn_in = a.burn_in.unwrap_or_else(|| default_burn_in(model.n(), model.p()));
        // independent stream from the generator
        let data = simulate(&model, a.length, burn_in, tsrobust::synth::child_seed(seed, 1))?;
        match &a.data_out {
            Some(path) => data.write_csv_path(path)?,
            None => data.write_csv(std::io::stdout().lock())?,
        }
    }
    Ok(())
}

fn read_data(path: &PathBuf) -> Result<TimeSeriesData> {
    TimeSeriesData::read_csv_path(path).with_context(|| format!("reading {}", path.display()))
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let data = read_data(&a.data)?;
    let res = fit(&data, &FitConfig::new(a.p, a.alpha))?;
    println!(
        "{} minimal structure(s) with {} edges over {} orderings",
        res.models.len(),
        res.sparsity,
        res.permutation_log.len()
    );
    for (i, m) in res.models.iter().enumerate() {
        println!("[{i}] {}", signature_of(m, DEFAULT_ZERO_TOL).describe(m.labels()));
        print!("{m}");
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        for (i, m) in res.models.iter().enumerate() {
            m.write_path(dir.join(format!("model_{i}.json")))?;
        }
    }
    Ok(())
}

fn robustness(a: RobustnessArgs) -> Result<()> {
    let data = read_data(&a.data)?;
    let seed = a.seed.resolve();
    let surrogate = SurrogateConfig {
        lags: a.surrogate_lags,
        ..SurrogateConfig::default()
    };
    let report = compute_robustness(&data, &FitConfig::new(a.p, a.alpha), a.replicates, &surrogate, seed)?;
    for s in report.structures.iter().take(5) {
        println!("{:6.1}%  {}", s.robustness, s.signature.describe(&report.labels));
    }
    if report.failures > 0 {
        println!("{} of {} replicates failed", report.failures, report.replicates);
    }
    if let Some(path) = &a.out {
        std::fs::write(path, report.to_json()?)?;
    }
    if let Some(path) = &a.replicates_csv {
        report.write_replicate_csv(File::create(path)?)?;
    }
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let truth = CausalModel::read_path(&a.truth).with_context(|| format!("reading {}", a.truth.display()))?;
    let (fitted, std) = match (&a.fit, &a.report) {
        (Some(path), _) => (CausalModel::read_path(path)?, None),
        (None, Some(path)) => {
            let doc: ReportDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            let Some(best) = doc.most_robust else {
                bail!("report has no most robust structure");
            };
            best.model(Some(truth.labels().to_vec()))?
        }
        (None, None) => unreachable!("clap requires one of --fit or --report"),
    };
    let truth_sig = signature_of(&truth, DEFAULT_ZERO_TOL);
    let fit_sig = signature_of(&fitted, DEFAULT_ZERO_TOL);
    let mut out = json!({
        "equivalent": obs_equivalent(&truth_sig, &fit_sig)?,
        "exact": truth_sig == fit_sig,
        "zeta": accuracy_score(&truth, &fitted)?,
    });
    if let Some(std) = &std {
        let phi = normalized_error(&truth, &fitted, std)?;
        let values: Vec<f64> = phi.iter().map(|e| e.value).collect();
        out["phi"] = serde_json::to_value(&phi)?;
        if values.len() >= MIN_NORMALITY_VALUES {
            let diag = normality_diagnostic(&values)?;
            out["ks_statistic"] = json!(diag.ks_statistic);
            out["ks_p_value"] = json!(diag.p_value);
            if let Some(path) = &a.emit_probplot {
                let mut f = File::create(path)?;
                writeln!(f, "sample,normal_quantile")?;
                for (s, q) in diag.plot {
                    writeln!(f, "{s},{q}")?;
                }
            }
        } else if a.emit_probplot.is_some() {
            eprintln!("only {} normalized errors; probability plot skipped", values.len());
        }
    } else if a.emit_probplot.is_some() {
        bail!("--emit-probplot needs a robustness report with standard deviations");
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::read_path(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let summary = run_experiment(&cfg)?;
    for c in &summary.cells {
        println!(
            "n={} p={} r={} T={}: {:.0}% ({:.0}%) of {} trials, {} failed",
            c.cell.n, c.cell.p, c.cell.r, c.cell.t, c.recovery_rate, c.raw_recovery_rate, c.trials, c.failures
        );
    }
    let files = emit_plots(&summary, &a.out)?;
    println!("wrote {} files to {}", files.len(), a.out.display());
    Ok(())
}

fn print_run(name: &str, run: &CaseStudyRun) {
    println!("{name} (alpha = {}): max robustness {:.1}%", run.alpha, run.max_robustness);
    if let (Some(model), Some(sig)) = (&run.most_robust, &run.signature) {
        println!("  {}", sig.describe(model.labels()));
        print!("{model}");
    }
    if !run.trusted {
        println!("  below the trust threshold");
    }
}

fn casestudy(a: CaseStudyArgs) -> Result<()> {
    let data = load_case_study_path(&a.data, &CaseStudyTransform::default())
        .with_context(|| format!("loading {}", a.data.display()))?;
    let cfg = CaseStudyConfig {
        alpha_low: a.alpha_low,
        alpha_high: a.alpha_high,
        replicates: a.replicates,
        seed: a.seed.resolve(),
        trust_threshold: a.trust_threshold,
        ..CaseStudyConfig::default()
    };
    let report = run_case_study(&data, &cfg)?;
    print_run("low confidence", &report.low);
    print_run("high confidence", &report.high);
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("low.json"), report.low.report.to_json()?)?;
        std::fs::write(dir.join("high.json"), report.high.report.to_json()?)?;
    }
    Ok(())
}
