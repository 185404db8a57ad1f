//! Structure robustness under surrogate resampling.
//!
//! Each replicate draws a surrogate series from the conditional Gaussian
//! fitted to the data, refits it, and records the signature of every
//! minimal model returned. A structure seen in `K` of `N` replicates has
//! robustness `R = 100 K / N`; the spread of its coefficients across those
//! replicates estimates their standard errors.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    default_labels, signature_of, CausalModel, CoefStack, StructureSignature, TimeSeriesData,
    DEFAULT_ZERO_TOL,
};
use crate::sp::{fit, FitConfig};
use crate::synth::{child_seed, default_burn_in, SurrogateConfig, SurrogateSampler};

/// Entrywise mean and sample standard deviation of a coefficient stack.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientStats {
    pub count: usize,
    pub mean: CoefStack,
    /// `None` with fewer than two replicates.
    pub std: Option<CoefStack>,
    pub mean_d0: DVector<f64>,
}

impl CoefficientStats {
    /// Model built from the mean coefficients and mean noise variances.
    pub fn mean_model(&self, labels: Option<Vec<String>>) -> Result<CausalModel> {
        CausalModel::from_stack(self.mean.clone(), self.mean_d0.clone(), labels)
    }
}

/// Mean and sample standard deviation (denominator `K - 1`) of the
/// coefficients of `models`, all of which must have signature `sig`.
pub fn coefficient_stats(models: &[&CausalModel], sig: &StructureSignature) -> Result<CoefficientStats> {
    let first = models
        .first()
        .ok_or_else(|| Error::Scoring("no replicate models for coefficient statistics".into()))?;
    let (n, p) = (first.n(), first.p());
    for m in models {
        if m.n() != n || m.p() != p || signature_of(m, DEFAULT_ZERO_TOL) != *sig {
            return Err(Error::Scoring(
                "replicate model does not match the requested signature".into(),
            ));
        }
    }
    let k = models.len() as f64;
    // shifted by the first replicate so identical inputs give an exact mean
    let base = first.coefficient_stack();
    let mut shift: CoefStack = vec![DMatrix::zeros(n, n); p + 1];
    let mut shift_d0 = DVector::zeros(n);
    for m in models {
        for ((acc, c), b) in shift.iter_mut().zip(m.coefficient_stack()).zip(&base) {
            *acc += c - b;
        }
        shift_d0 += m.d0() - first.d0();
    }
    let mut mean: CoefStack = base.iter().zip(shift).map(|(b, s)| b + s / k).collect();
    let mean_d0 = first.d0() + shift_d0 / k;
    // support is exact so off-support means are exact zeros already
    for i in 0..n {
        mean[0][(i, i)] = 1.0;
    }

    let std = (models.len() >= 2).then(|| {
        let mut var: CoefStack = vec![DMatrix::zeros(n, n); p + 1];
        for m in models {
            for (l, c) in m.coefficient_stack().into_iter().enumerate() {
                var[l] += (c - &mean[l]).map(|d| d * d);
            }
        }
        var.into_iter()
            .enumerate()
            .map(|(l, v)| {
                DMatrix::from_fn(n, n, |r, c| {
                    if sig.contains(l, r, c) {
                        (v[(r, c)] / (k - 1.0)).sqrt()
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    });
    Ok(CoefficientStats {
        count: models.len(),
        mean,
        std,
        mean_d0,
    })
}

#[derive(Clone, Debug)]
pub struct StructureStats {
    pub signature: StructureSignature,
    /// Replicates producing this structure (`K`).
    pub count: usize,
    /// `100 K / N`.
    pub robustness: f64,
    pub stats: CoefficientStats,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReplicateOutcome {
    Fitted(Vec<usize>),
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct RobustnessReport {
    /// Sorted by decreasing count, ties by signature order.
    pub structures: Vec<StructureStats>,
    pub replicates: usize,
    pub failures: usize,
    /// Index into `structures` of the most robust structure.
    pub most_robust: Option<usize>,
    pub seed: u64,
    pub labels: Vec<String>,
    /// Minimal models of the fit on the original data (not counted in `K`).
    pub original_fit: Vec<CausalModel>,
    /// Per-replicate structure indices, in replicate order.
    pub outcomes: Vec<ReplicateOutcome>,
}

impl RobustnessReport {
    pub fn best(&self) -> Option<&StructureStats> {
        self.most_robust.map(|i| &self.structures[i])
    }

    pub fn max_robustness(&self) -> f64 {
        self.best().map_or(0.0, |s| s.robustness)
    }

    pub fn failure_rate(&self) -> f64 {
        100.0 * self.failures as f64 / self.replicates as f64
    }

    pub fn find(&self, sig: &StructureSignature) -> Option<&StructureStats> {
        self.structures.iter().find(|s| s.signature == *sig)
    }

    pub fn to_document(&self) -> Result<ReportDocument> {
        let labels = self.labels.clone();
        let structures = self
            .structures
            .iter()
            .map(|s| StructureEntry {
                description: s.signature.describe(&labels),
                signature: s.signature.clone(),
                count: s.count,
                robustness: s.robustness,
            })
            .collect();
        let most_robust = self.best().map(|best| MostRobustEntry {
            index: self.most_robust.unwrap_or_default(),
            description: best.signature.describe(&labels),
            robustness: best.robustness,
            mean: StackDocument::from_stack(&best.stats.mean),
            mean_d0: best.stats.mean_d0.iter().copied().collect(),
            std: best.stats.std.as_ref().map(StackDocument::from_stack),
        });
        Ok(ReportDocument {
            labels,
            replicates: self.replicates,
            failures: self.failures,
            seed: self.seed,
            original_fit: self
                .original_fit
                .iter()
                .map(|m| signature_of(m, DEFAULT_ZERO_TOL).describe(&self.labels))
                .collect(),
            structures,
            most_robust,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document()?)?)
    }

    /// One row per replicate and observed structure.
    pub fn write_replicate_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["replicate", "status", "structure", "description"])?;
        for (i, outcome) in self.outcomes.iter().enumerate() {
            match outcome {
                ReplicateOutcome::Fitted(idx) => {
                    for &s in idx {
                        wtr.write_record([
                            i.to_string(),
                            "ok".into(),
                            s.to_string(),
                            self.structures[s].signature.describe(&self.labels),
                        ])?;
                    }
                }
                ReplicateOutcome::Failed(msg) => {
                    wtr.write_record([i.to_string(), "failed".into(), String::new(), msg.clone()])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StackDocument {
    pub a0: Vec<Vec<f64>>,
    pub lags: Vec<Vec<Vec<f64>>>,
}

impl StackDocument {
    pub fn from_stack(stack: &CoefStack) -> Self {
        Self {
            a0: linalg::to_rows(&stack[0]),
            lags: stack[1..].iter().map(linalg::to_rows).collect(),
        }
    }

    pub fn to_stack(&self) -> Result<CoefStack> {
        let n = self.a0.len();
        std::iter::once(&self.a0)
            .chain(self.lags.iter())
            .map(|rows| {
                if rows.len() != n {
                    return Err(Error::dimension("ragged coefficient stack"));
                }
                linalg::from_rows(rows, n).ok_or_else(|| Error::dimension("ragged coefficient stack"))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructureEntry {
    pub description: String,
    pub signature: StructureSignature,
    pub count: usize,
    pub robustness: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MostRobustEntry {
    pub index: usize,
    pub description: String,
    pub robustness: f64,
    pub mean: StackDocument,
    pub mean_d0: Vec<f64>,
    pub std: Option<StackDocument>,
}

impl MostRobustEntry {
    /// Mean-coefficient model and standard deviation stack.
    pub fn model(&self, labels: Option<Vec<String>>) -> Result<(CausalModel, Option<CoefStack>)> {
        let model = CausalModel::from_stack(
            self.mean.to_stack()?,
            DVector::from_vec(self.mean_d0.clone()),
            labels,
        )?;
        let std = self.std.as_ref().map(StackDocument::to_stack).transpose()?;
        Ok((model, std))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportDocument {
    pub labels: Vec<String>,
    pub replicates: usize,
    pub failures: usize,
    pub seed: u64,
    pub original_fit: Vec<String>,
    pub structures: Vec<StructureEntry>,
    pub most_robust: Option<MostRobustEntry>,
}

/// Runs `replicates` surrogate refits of `data` and tallies structures.
pub fn compute_robustness(
    data: &TimeSeriesData,
    fit_cfg: &FitConfig,
    replicates: usize,
    surrogate_cfg: &SurrogateConfig,
    seed: u64,
) -> Result<RobustnessReport> {
    if replicates < 2 {
        return Err(Error::config(format!(
            "robustness needs at least 2 replicates, got {replicates}"
        )));
    }
    fit_cfg.validate()?;
    let original = fit(data, fit_cfg)?;

    let surrogate_p = surrogate_cfg.lag_order(fit_cfg.p);
    let sampler = SurrogateSampler::from_data(data, surrogate_p, surrogate_cfg.estimator)?;
    let length = surrogate_cfg.length.unwrap_or(data.len());
    let burn_in = surrogate_cfg
        .burn_in
        .unwrap_or_else(|| default_burn_in(data.n_vars(), surrogate_p));

    let results: Vec<Result<Vec<CausalModel>>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let series = sampler.sample(length, burn_in, child_seed(seed, i as u64))?;
            Ok(fit(&series, fit_cfg)?.models)
        })
        .collect();

    let mut groups: BTreeMap<StructureSignature, Vec<CausalModel>> = BTreeMap::new();
    let mut raw_outcomes: Vec<std::result::Result<Vec<StructureSignature>, String>> = Vec::with_capacity(replicates);
    for res in results {
        match res {
            Ok(models) => {
                let mut sigs = Vec::with_capacity(models.len());
                for m in models {
                    let sig = signature_of(&m, DEFAULT_ZERO_TOL);
                    sigs.push(sig.clone());
                    groups.entry(sig).or_default().push(m);
                }
                raw_outcomes.push(Ok(sigs));
            }
            Err(e) => raw_outcomes.push(Err(e.to_string())),
        }
    }
    let failures = raw_outcomes.iter().filter(|o| o.is_err()).count();

    let mut structures = groups
        .into_iter()
        .map(|(signature, models)| {
            let refs: Vec<&CausalModel> = models.iter().collect();
            let stats = coefficient_stats(&refs, &signature)?;
            Ok(StructureStats {
                robustness: 100.0 * models.len() as f64 / replicates as f64,
                count: models.len(),
                signature,
                stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    structures.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.signature.cmp(&b.signature)));

    let index: BTreeMap<&StructureSignature, usize> = structures
        .iter()
        .enumerate()
        .map(|(i, s)| (&s.signature, i))
        .collect();
    let outcomes = raw_outcomes
        .iter()
        .map(|o| match o {
            Ok(sigs) => ReplicateOutcome::Fitted(sigs.iter().map(|s| index[s]).collect()),
            Err(msg) => ReplicateOutcome::Failed(msg.clone()),
        })
        .collect();

    let labels = if data.labels().is_empty() {
        default_labels(data.n_vars())
    } else {
        data.labels().to_vec()
    };
    Ok(RobustnessReport {
        most_robust: (!structures.is_empty()).then_some(0),
        structures,
        replicates,
        failures,
        seed,
        labels,
        original_fit: original.models,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn model_with(a: f64, b: f64) -> CausalModel {
        CausalModel::new(
            dmatrix![1.0, a; 0.0, 1.0],
            vec![dmatrix![b, 0.0; 0.0, 0.0]],
            DVector::from_vec(vec![1.0, 2.0]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn two_replicate_stats() {
        let (m1, m2) = (model_with(0.4, -0.5), model_with(0.6, -0.5));
        let sig = signature_of(&m1, DEFAULT_ZERO_TOL);
        let stats = coefficient_stats(&[&m1, &m2], &sig).unwrap();
        assert_abs_diff_eq!(stats.mean[0][(0, 1)], 0.5, epsilon = 1e-15);
        let std = stats.std.unwrap();
        assert_abs_diff_eq!(std[0][(0, 1)], 0.02f64.sqrt(), epsilon = 1e-15);
        assert_eq!(std[1][(0, 0)], 0.0);
        assert_eq!(std[0][(0, 0)], 0.0);
        assert_eq!(std[0][(1, 0)], 0.0);
    }

    #[test]
    fn identical_replicates_have_zero_std() {
        let m = model_with(0.3, 0.7);
        let sig = signature_of(&m, DEFAULT_ZERO_TOL);
        let stats = coefficient_stats(&[&m, &m, &m], &sig).unwrap();
        assert!(stats.std.as_ref().unwrap().iter().all(|s| s.iter().all(|v| *v == 0.0)));
        assert_eq!(stats.mean_model(None).unwrap(), m);
    }

    #[test]
    fn single_replicate_has_no_std() {
        let m = model_with(0.3, 0.7);
        let sig = signature_of(&m, DEFAULT_ZERO_TOL);
        let stats = coefficient_stats(&[&m], &sig).unwrap();
        assert!(stats.std.is_none());
    }

    #[test]
    fn mismatched_signature_is_rejected() {
        let m = model_with(0.3, 0.7);
        let other = model_with(0.0, 0.7);
        let sig = signature_of(&m, DEFAULT_ZERO_TOL);
        assert!(coefficient_stats(&[&m, &other], &sig).is_err());
        assert!(coefficient_stats(&[], &sig).is_err());
    }

    #[test]
    fn single_replicate_run_is_refused() {
        let data = TimeSeriesData::new(DMatrix::from_fn(100, 2, |i, j| ((i * 31 + j * 17) % 13) as f64), None).unwrap();
        assert!(matches!(
            compute_robustness(&data, &FitConfig::default(), 1, &SurrogateConfig::default(), 0),
            Err(Error::InvalidConfig(_))
        ));
    }
}
