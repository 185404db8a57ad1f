//! Monte Carlo recovery study over a grid of generated models, CSV output
//! for its plots, and the wage/price case study.

use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{signature_of, CausalModel, CoefStack, StructureSignature, TimeSeriesData, DEFAULT_ZERO_TOL};
use crate::robustness::{compute_robustness, RobustnessReport};
use crate::scoring::{accuracy_score, normality_diagnostic, normalized_error, obs_equivalent, MIN_NORMALITY_VALUES};
use crate::sp::{refit_on_structure, FitConfig};
use crate::synth::{child_seed, default_burn_in, random_model, simulate, ModelGenConfig, SurrogateConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub p: usize,
    /// Connectivity ratio.
    pub r: f64,
    /// Observations per simulated series.
    pub t: usize,
}

impl Cell {
    pub fn new(n: usize, p: usize, r: f64, t: usize) -> Self {
        Self { n, p, r, t }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub cells: Vec<Cell>,
    pub models_per_cell: usize,
    /// Surrogate replicates per trial.
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            cells: Self::default_grid(),
            models_per_cell: 100,
            replicates: 100,
            alpha: 0.95,
            seed: 0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Three variables; `p` in {1, 2}, `r` in {0.4, 0.5}, `T` in {500, 1000}.
    pub fn default_grid() -> Vec<Cell> {
        let mut cells = Vec::new();
        for t in [500, 1000] {
            for p in [1, 2] {
                for r in [0.4, 0.5] {
                    cells.push(Cell::new(3, p, r, t));
                }
            }
        }
        cells
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::config("experiment grid has no cells"));
        }
        for c in &self.cells {
            if c.n == 0 || c.p == 0 || c.t == 0 || !(c.r > 0.0 && c.r <= 1.0) {
                return Err(Error::config(format!("invalid grid cell {c:?}")));
            }
        }
        if self.models_per_cell == 0 {
            return Err(Error::config("models_per_cell must be at least 1"));
        }
        if self.replicates < 2 {
            return Err(Error::config("replicates must be at least 2"));
        }
        FitConfig::new(1, self.alpha).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cell: usize,
    pub trial: usize,
    pub seed: u64,
    /// Robustness of the most robust structure, in percent.
    pub robustness: Option<f64>,
    /// Most robust structure is equivalent to the truth.
    pub correct: bool,
    /// Most robust structure has exactly the true support.
    pub exact: bool,
    /// Some minimal model of the fit on the original series is equivalent.
    pub raw_correct: bool,
    pub zeta: Option<f64>,
    pub true_edges: Option<usize>,
    pub failure: Option<String>,
    /// Normalized coefficient errors; filled only for exact matches.
    #[serde(skip)]
    pub phi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub trials: usize,
    pub recovery_rate: f64,
    pub raw_recovery_rate: f64,
    pub failures: usize,
    pub median_zeta_correct: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    pub trials: Vec<TrialRecord>,
}

fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

impl ExperimentSummary {
    pub fn pooled_phi(&self) -> Vec<f64> {
        self.trials.iter().flat_map(|t| t.phi.iter().copied()).collect()
    }

    pub fn recovery_rate(&self) -> f64 {
        rate(self.trials.iter().filter(|t| t.correct).count(), self.trials.len())
    }

    /// Recovery rate over trials whose robustness satisfies `keep`, with
    /// the number of such trials.
    pub fn conditional_recovery(&self, keep: impl Fn(f64) -> bool) -> (f64, usize) {
        let sel: Vec<&TrialRecord> = self
            .trials
            .iter()
            .filter(|t| t.robustness.is_some_and(&keep))
            .collect();
        (rate(sel.iter().filter(|t| t.correct).count(), sel.len()), sel.len())
    }
}

fn run_trial(cfg: &ExperimentConfig, cell_idx: usize, trial: usize) -> TrialRecord {
    let seed = child_seed(child_seed(cfg.seed, cell_idx as u64), trial as u64);
    let mut rec = TrialRecord {
        cell: cell_idx,
        trial,
        seed,
        robustness: None,
        correct: false,
        exact: false,
        raw_correct: false,
        zeta: None,
        true_edges: None,
        failure: None,
        phi: Vec::new(),
    };
    if let Err(e) = fill_trial(cfg, &cfg.cells[cell_idx], seed, &mut rec) {
        rec.failure = Some(e.to_string());
    }
    rec
}

fn fill_trial(cfg: &ExperimentConfig, cell: &Cell, seed: u64, rec: &mut TrialRecord) -> Result<()> {
    let truth = random_model(&ModelGenConfig::new(cell.n, cell.p, cell.r, child_seed(seed, 0)))?;
    let truth_sig = signature_of(&truth, DEFAULT_ZERO_TOL);
    rec.true_edges = Some(truth_sig.edge_count());
    let data = simulate(&truth, cell.t, default_burn_in(cell.n, cell.p), child_seed(seed, 1))?;
    let report = compute_robustness(
        &data,
        &FitConfig::new(cell.p, cfg.alpha),
        cfg.replicates,
        &SurrogateConfig::default(),
        child_seed(seed, 2),
    )?;
    for m in &report.original_fit {
        if obs_equivalent(&signature_of(m, DEFAULT_ZERO_TOL), &truth_sig)? {
            rec.raw_correct = true;
            break;
        }
    }
    let best = report
        .best()
        .ok_or_else(|| Error::Scoring("no replicate produced a structure".into()))?;
    rec.robustness = Some(best.robustness);
    rec.correct = obs_equivalent(&best.signature, &truth_sig)?;
    rec.exact = best.signature == truth_sig;
    let mean = best.stats.mean_model(Some(truth.labels().to_vec()))?;
    rec.zeta = Some(accuracy_score(&truth, &mean)?);
    if rec.exact {
        if let Some(std) = &best.stats.std {
            let estimate = refit_on_structure(&data, &best.signature, cell.p)?;
            if let Ok(entries) = normalized_error(&truth, &estimate, std) {
                rec.phi = entries.into_iter().map(|e| e.value).collect();
            }
        }
    }
    Ok(())
}

/// Runs every trial of every cell. Per-trial errors are recorded, never
/// propagated.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.cells.len())
        .flat_map(|c| (0..cfg.models_per_cell).map(move |t| (c, t)))
        .collect();
    let trials: Vec<TrialRecord> = jobs.par_iter().map(|&(c, t)| run_trial(cfg, c, t)).collect();

    let cells = cfg
        .cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let recs: Vec<&TrialRecord> = trials.iter().filter(|t| t.cell == i).collect();
            let zetas: Vec<f64> = recs.iter().filter(|t| t.correct).filter_map(|t| t.zeta).collect();
            CellSummary {
                cell: *cell,
                trials: recs.len(),
                recovery_rate: rate(recs.iter().filter(|t| t.correct).count(), recs.len()),
                raw_recovery_rate: rate(recs.iter().filter(|t| t.raw_correct).count(), recs.len()),
                failures: recs.iter().filter(|t| t.failure.is_some()).count(),
                median_zeta_correct: quantile(&zetas, 0.5),
            }
        })
        .collect();
    Ok(ExperimentSummary {
        config: cfg.clone(),
        cells,
        trials,
    })
}

/// Linearly interpolated sample quantile.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

pub const HISTOGRAM_BINS: usize = 20;

/// Counts over the bins `[0,5), [5,10), ..., [95,100]`.
pub fn robustness_histogram(values: impl IntoIterator<Item = f64>) -> [usize; HISTOGRAM_BINS] {
    let mut counts = [0; HISTOGRAM_BINS];
    let width = 100.0 / HISTOGRAM_BINS as f64;
    for v in values {
        let bin = ((v / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    counts
}

fn write_histogram(path: &Path, counts: &[usize; HISTOGRAM_BINS]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    let width = 100.0 / HISTOGRAM_BINS as f64;
    for (i, c) in counts.iter().enumerate() {
        w.write_record([
            (i as f64 * width).to_string(),
            ((i + 1) as f64 * width).to_string(),
            c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn five_numbers(values: &[f64]) -> Vec<String> {
    let mut row = vec![values.len().to_string()];
    for q in [0.0, 0.25, 0.5, 0.75, 1.0] {
        row.push(quantile(values, q).map(|v| v.to_string()).unwrap_or_default());
    }
    row
}

const BOX_HEADER: [&str; 6] = ["count", "min", "q1", "median", "q3", "max"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the plot series and tables into `dir` and returns the paths.
pub fn emit_plots(summary: &ExperimentSummary, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if summary.trials.is_empty() {
        return Err(Error::config("experiment summary has no trials"));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut path = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };

    let r_of = |correct: bool| {
        summary
            .trials
            .iter()
            .filter(move |t| t.correct == correct)
            .filter_map(|t| t.robustness)
    };
    write_histogram(&path("hist_correct.csv"), &robustness_histogram(r_of(true)))?;
    write_histogram(&path("hist_incorrect.csv"), &robustness_histogram(r_of(false)))?;

    let mut w = csv::Writer::from_path(path("zeta_box.csv"))?;
    w.write_record(["n", "p", "r", "t"].iter().chain(BOX_HEADER.iter()))?;
    for (i, c) in summary.config.cells.iter().enumerate() {
        let z: Vec<f64> = summary.trials.iter().filter(|t| t.cell == i).filter_map(|t| t.zeta).collect();
        let mut row = vec![c.n.to_string(), c.p.to_string(), c.r.to_string(), c.t.to_string()];
        row.extend(five_numbers(&z));
        w.write_record(row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("zeta_by_correct.csv"))?;
    w.write_record(["correct"].iter().chain(BOX_HEADER.iter()))?;
    for correct in [true, false] {
        let z: Vec<f64> = summary
            .trials
            .iter()
            .filter(|t| t.correct == correct)
            .filter_map(|t| t.zeta)
            .collect();
        let mut row = vec![correct.to_string()];
        row.extend(five_numbers(&z));
        w.write_record(row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("scatter.csv"))?;
    w.write_record(["robustness", "zeta", "correct"])?;
    for t in &summary.trials {
        w.write_record([opt(t.robustness), opt(t.zeta), t.correct.to_string()])?;
    }
    w.flush()?;

    let phi = summary.pooled_phi();
    let mut w = csv::Writer::from_path(path("phi_probplot.csv"))?;
    w.write_record(["sample", "normal_quantile"])?;
    if phi.len() >= MIN_NORMALITY_VALUES {
        for (s, q) in normality_diagnostic(&phi)?.plot {
            w.write_record([s.to_string(), q.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("summary.csv"))?;
    w.write_record([
        "n", "p", "r", "t", "trials", "recovery", "raw_recovery", "table", "failures", "median_zeta_correct",
    ])?;
    for s in &summary.cells {
        w.write_record([
            s.cell.n.to_string(),
            s.cell.p.to_string(),
            s.cell.r.to_string(),
            s.cell.t.to_string(),
            s.trials.to_string(),
            s.recovery_rate.to_string(),
            s.raw_recovery_rate.to_string(),
            format!("{:.0}% ({:.0}%)", s.recovery_rate, s.raw_recovery_rate),
            s.failures.to_string(),
            opt(s.median_zeta_correct),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("trials.csv"))?;
    w.write_record([
        "cell", "n", "p", "r", "t", "trial", "seed", "robustness", "correct", "exact", "raw_correct", "zeta",
        "true_edges", "failure",
    ])?;
    for tr in &summary.trials {
        let c = &summary.config.cells[tr.cell];
        w.write_record([
            tr.cell.to_string(),
            c.n.to_string(),
            c.p.to_string(),
            c.r.to_string(),
            c.t.to_string(),
            tr.trial.to_string(),
            tr.seed.to_string(),
            opt(tr.robustness),
            tr.correct.to_string(),
            tr.exact.to_string(),
            tr.raw_correct.to_string(),
            opt(tr.zeta),
            tr.true_edges.map(|e| e.to_string()).unwrap_or_default(),
            tr.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(written)
}

pub const CASE_STUDY_INPUTS: [&str; 6] = ["UNRATE", "GDPC1", "GDPPOT", "HCOMPBS", "IDPBS", "OPHPBS"];
pub const CASE_STUDY_LABELS: [&str; 6] = ["w", "p", "e", "u", "z", "pi_m"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseStudyTransform {
    /// Trailing window of the price-inflation moving average.
    pub ma_window: usize,
    /// Use log differences of wages, prices and productivity.
    pub difference: bool,
}

impl Default for CaseStudyTransform {
    fn default() -> Self {
        Self {
            ma_window: 12,
            difference: true,
        }
    }
}

/// Builds the six model variables from the raw macro series. Extra columns
/// (dates, for instance) are ignored.
pub fn load_case_study<R: Read>(raw_csv: R, transform: &CaseStudyTransform) -> Result<TimeSeriesData> {
    if transform.ma_window == 0 {
        return Err(Error::config("moving-average window must be at least 1"));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(raw_csv);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = CASE_STUDY_INPUTS
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| Error::Ingestion {
                row: 0,
                column: name.to_string(),
                reason: "missing column".into(),
            })
        })
        .collect::<Result<_>>()?;

    let mut raw: Vec<[f64; 6]> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let mut row = [0.0; 6];
        for (k, &c) in idx.iter().enumerate() {
            let field = record.get(c).unwrap_or("");
            row[k] = field.parse().map_err(|_| Error::Ingestion {
                row: r + 1,
                column: CASE_STUDY_INPUTS[k].into(),
                reason: format!("cannot parse {field:?} as a number"),
            })?;
        }
        raw.push(row);
    }

    let log_of = |r: usize, k: usize, v: f64| -> Result<f64> {
        if v > 0.0 && v.is_finite() {
            Ok(v.ln())
        } else {
            Err(Error::Ingestion {
                row: r + 1,
                column: CASE_STUDY_INPUTS[k].into(),
                reason: format!("log argument {v} is not positive"),
            })
        }
    };
    let mut e = Vec::with_capacity(raw.len());
    let mut u = Vec::with_capacity(raw.len());
    let mut levels = Vec::with_capacity(raw.len());
    for (r, row) in raw.iter().enumerate() {
        e.push(log_of(r, 0, 1.0 - row[0] / 100.0)?);
        u.push(log_of(r, 1, row[1])? - log_of(r, 2, row[2])?);
        levels.push([log_of(r, 3, row[3])?, log_of(r, 4, row[4])?, log_of(r, 5, row[5])?]);
    }

    let d = usize::from(transform.difference);
    let wpz: Vec<[f64; 3]> = (0..raw.len())
        .map(|r| {
            if r < d {
                [f64::NAN; 3]
            } else if d == 1 {
                std::array::from_fn(|k| levels[r][k] - levels[r - 1][k])
            } else {
                levels[r]
            }
        })
        .collect();
    // price inflation used by the moving average
    let dp: Vec<f64> = (0..raw.len())
        .map(|r| if r == 0 { f64::NAN } else { levels[r][1] - levels[r - 1][1] })
        .collect();

    let start = transform.ma_window;
    if raw.len() <= start + 2 {
        return Err(Error::InsufficientData(format!(
            "{} raw rows leave too few after dropping {start}",
            raw.len()
        )));
    }
    let rows = raw.len() - start;
    let values = DMatrix::from_fn(rows, 6, |i, j| {
        let r = i + start;
        match j {
            0 => wpz[r][0],
            1 => wpz[r][1],
            2 => e[r],
            3 => u[r],
            4 => wpz[r][2],
            _ => dp[r + 1 - transform.ma_window..=r].iter().sum::<f64>() / transform.ma_window as f64,
        }
    });
    TimeSeriesData::new(values, Some(CASE_STUDY_LABELS.iter().map(|s| s.to_string()).collect()))
}

pub fn load_case_study_path(path: impl AsRef<Path>, transform: &CaseStudyTransform) -> Result<TimeSeriesData> {
    load_case_study(std::fs::File::open(path)?, transform)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseStudyConfig {
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Robustness (percent) below which the structure is not trusted.
    pub trust_threshold: f64,
    pub p: usize,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        Self {
            alpha_low: 0.05,
            alpha_high: 0.99,
            replicates: 100,
            seed: 0,
            trust_threshold: 55.0,
            p: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaseStudyRun {
    pub alpha: f64,
    pub max_robustness: f64,
    pub trusted: bool,
    pub most_robust: Option<CausalModel>,
    pub signature: Option<StructureSignature>,
    pub std: Option<CoefStack>,
    pub report: RobustnessReport,
}

#[derive(Clone, Debug)]
pub struct CaseStudyReport {
    pub low: CaseStudyRun,
    pub high: CaseStudyRun,
}

fn case_study_run(data: &TimeSeriesData, cfg: &CaseStudyConfig, alpha: f64, seed: u64) -> Result<CaseStudyRun> {
    let report = compute_robustness(
        data,
        &FitConfig::new(cfg.p, alpha),
        cfg.replicates,
        &SurrogateConfig::default(),
        seed,
    )?;
    let max_robustness = report.max_robustness();
    let (most_robust, signature, std) = match report.best() {
        Some(b) => (
            Some(b.stats.mean_model(Some(report.labels.clone()))?),
            Some(b.signature.clone()),
            b.stats.std.clone(),
        ),
        None => (None, None, None),
    };
    Ok(CaseStudyRun {
        alpha,
        max_robustness,
        trusted: max_robustness >= cfg.trust_threshold,
        most_robust,
        signature,
        std,
        report,
    })
}

/// Robustness analysis of `data` at a low and a high confidence level.
pub fn run_case_study(data: &TimeSeriesData, cfg: &CaseStudyConfig) -> Result<CaseStudyReport> {
    if cfg.replicates < 2 {
        return Err(Error::config(format!(
            "robustness needs at least 2 replicates, got {}",
            cfg.replicates
        )));
    }
    Ok(CaseStudyReport {
        low: case_study_run(data, cfg, cfg.alpha_low, child_seed(cfg.seed, 0))?,
        high: case_study_run(data, cfg, cfg.alpha_high, child_seed(cfg.seed, 1))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn raw_csv(rows: usize, f: impl Fn(usize) -> [f64; 6]) -> String {
        let mut s = String::from("DATE,UNRATE,GDPC1,GDPPOT,HCOMPBS,IDPBS,OPHPBS\n");
        for r in 0..rows {
            let v = f(r);
            s.push_str(&format!("{r},{},{},{},{},{},{}\n", v[0], v[1], v[2], v[3], v[4], v[5]));
        }
        s
    }

    #[test]
    fn case_study_transforms() {
        let csv = raw_csv(30, |r| [5.0, 100.0, 100.0, 50.0, (0.01 * r as f64).exp(), 2.0 + r as f64]);
        let data = load_case_study(csv.as_bytes(), &CaseStudyTransform::default()).unwrap();
        assert_eq!(data.len(), 18);
        assert_eq!(data.labels(), CASE_STUDY_LABELS);
        let v = data.values();
        for i in 0..data.len() {
            assert_abs_diff_eq!(v[(i, 2)], 0.95f64.ln(), epsilon = 1e-15);
            assert_abs_diff_eq!(v[(i, 2)], -0.05129, epsilon = 1e-5);
            assert_eq!(v[(i, 3)], 0.0);
            assert_eq!(v[(i, 0)], 0.0);
            assert_abs_diff_eq!(v[(i, 1)], 0.01, epsilon = 1e-12);
            assert_abs_diff_eq!(v[(i, 5)], 0.01, epsilon = 1e-12);
            let r = (i + 12) as f64;
            assert_abs_diff_eq!(v[(i, 4)], ((2.0 + r) / (1.0 + r)).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn moving_average_is_trailing_and_inclusive() {
        // dp at raw row r equals r
        let csv = raw_csv(20, |r| [5.0, 1.0, 1.0, 1.0, (r * (r + 1) / 2) as f64 + 1.0, 1.0]);
        let t = CaseStudyTransform {
            ma_window: 3,
            ..CaseStudyTransform::default()
        };
        let data = load_case_study(csv.as_bytes(), &t).unwrap();
        let dp = |r: usize| ((r * (r + 1) / 2) as f64 + 1.0).ln() - ((r * (r - 1) / 2) as f64 + 1.0).ln();
        for i in 0..data.len() {
            let r = i + 3;
            let expect = (dp(r) + dp(r - 1) + dp(r - 2)) / 3.0;
            assert_abs_diff_eq!(data.values()[(i, 5)], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn ingestion_errors_name_row_and_column() {
        let csv = "UNRATE,GDPC1,GDPPOT,HCOMPBS,IDPBS\n5,1,1,1,1\n";
        match load_case_study(csv.as_bytes(), &CaseStudyTransform::default()) {
            Err(Error::Ingestion { column, .. }) => assert_eq!(column, "OPHPBS"),
            other => panic!("unexpected {other:?}"),
        }
        let csv = raw_csv(20, |r| [5.0, 1.0, 1.0, if r == 4 { 0.0 } else { 1.0 }, 1.0, 1.0]);
        match load_case_study(csv.as_bytes(), &CaseStudyTransform::default()) {
            Err(Error::Ingestion { row, column, .. }) => {
                assert_eq!(row, 5);
                assert_eq!(column, "HCOMPBS");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn histogram_edges() {
        let counts = robustness_histogram([0.0, 4.99, 5.0, 99.0, 100.0]);
        assert_eq!(counts[0], 2);
        assert_eq!(counts[1], 1);
        assert_eq!(counts[19], 2);
        assert_eq!(counts.iter().sum::<usize>(), 5);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), Some(1.0));
        assert_eq!(quantile(&v, 0.5), Some(2.5));
        assert_eq!(quantile(&v, 1.0), Some(4.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg = ExperimentConfig::from_toml(
            "models_per_cell = 2\nreplicates = 5\nseed = 9\n[[cells]]\nn = 3\np = 1\nr = 0.4\nt = 300\n",
        )
        .unwrap();
        assert_eq!(cfg.cells, vec![Cell::new(3, 1, 0.4, 300)]);
        assert_eq!(cfg.alpha, 0.95);
        assert!(ExperimentConfig::from_toml("models_per_cell = 0").is_err());
        assert!(ExperimentConfig::from_toml("replicates = 1").is_err());
        assert_eq!(ExperimentConfig::default().cells.len(), 8);
    }

    #[test]
    fn single_model_experiment() {
        let cfg = ExperimentConfig {
            cells: vec![Cell::new(3, 1, 0.4, 300)],
            models_per_cell: 1,
            replicates: 10,
            seed: 3,
            ..ExperimentConfig::default()
        };
        let s = run_experiment(&cfg).unwrap();
        assert_eq!(s.trials.len(), 1);
        let r = s.cells[0].recovery_rate;
        assert!(r == 0.0 || r == 100.0);
        let again = run_experiment(&cfg).unwrap();
        assert_eq!(s.trials, again.trials);
    }

    #[test]
    fn case_study_needs_two_replicates() {
        let data = TimeSeriesData::new(DMatrix::from_fn(50, 2, |i, j| ((i * 7 + j * 3) % 11) as f64), None).unwrap();
        let cfg = CaseStudyConfig {
            replicates: 1,
            ..CaseStudyConfig::default()
        };
        assert!(run_case_study(&data, &cfg).is_err());
    }
}
