//! Scoring a fitted model against a known truth: observational
//! equivalence, the relative Frobenius error of the stacked coefficients,
//! bootstrap-normalized coefficient errors, and a normality check for them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{signature_of, stack_full_matrix, CausalModel, CoefStack, StructureSignature, TemporalEdge};

/// A node of the unrolled window graph: variable observed at `t - lag`.
type Node = (usize, usize);

fn skeleton(sig: &StructureSignature) -> BTreeSet<(usize, usize)> {
    sig.contemporaneous()
        .iter()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect()
}

fn adjacent(sig: &StructureSignature, a: Node, b: Node) -> bool {
    if a.1 == b.1 {
        let key = (a.0.min(b.0), a.0.max(b.0));
        return a.0 != b.0 && skeleton_contains(sig, key);
    }
    let (early, late) = if a.1 > b.1 { (a, b) } else { (b, a) };
    sig.temporal().contains(&TemporalEdge {
        cause: early.0,
        effect: late.0,
        lag: early.1 - late.1,
    })
}

fn skeleton_contains(sig: &StructureSignature, key: (usize, usize)) -> bool {
    sig.contemporaneous().contains(&key) || sig.contemporaneous().contains(&(key.1, key.0))
}

/// Unshielded colliders `(a, c, b)` with `a < b` at present-time nodes `c`,
/// whose parents may be contemporaneous or lagged.
pub fn v_structures(sig: &StructureSignature) -> BTreeSet<(Node, usize, Node)> {
    let mut out = BTreeSet::new();
    for c in 0..sig.n() {
        let parents: Vec<Node> = sig
            .contemporaneous()
            .iter()
            .filter(|&&(_, e)| e == c)
            .map(|&(cause, _)| (cause, 0))
            .chain(
                sig.temporal()
                    .iter()
                    .filter(|t| t.effect == c)
                    .map(|t| (t.cause, t.lag)),
            )
            .collect();
        for (i, &a) in parents.iter().enumerate() {
            for &b in &parents[i + 1..] {
                if !adjacent(sig, a, b) {
                    out.insert((a.min(b), c, a.max(b)));
                }
            }
        }
    }
    out
}

/// Markov equivalence of two structures: identical lagged edges, and equal
/// contemporaneous skeletons and v-structure sets.
pub fn obs_equivalent(a: &StructureSignature, b: &StructureSignature) -> Result<bool> {
    if a.n() != b.n() || a.p() != b.p() {
        return Err(Error::dimension(format!(
            "cannot compare structures with (n, p) = ({}, {}) and ({}, {})",
            a.n(),
            a.p(),
            b.n(),
            b.p()
        )));
    }
    Ok(a.temporal() == b.temporal() && skeleton(a) == skeleton(b) && v_structures(a) == v_structures(b))
}

pub fn models_obs_equivalent(a: &CausalModel, b: &CausalModel, zero_tol: f64) -> Result<bool> {
    if a.labels() != b.labels() {
        return Err(Error::dimension("models have different variable labels"));
    }
    obs_equivalent(&signature_of(a, zero_tol), &signature_of(b, zero_tol))
}

/// `||A_true - A_fit||_F / ||A_true||_F` on the `(p+1)`-copy stacked matrices.
pub fn accuracy_score(a_true: &CausalModel, a_fit: &CausalModel) -> Result<f64> {
    accuracy_score_with_copies(a_true, a_fit, a_true.p() + 1)
}

pub fn accuracy_score_with_copies(a_true: &CausalModel, a_fit: &CausalModel, copies: usize) -> Result<f64> {
    if a_true.n() != a_fit.n() || a_true.p() != a_fit.p() {
        return Err(Error::dimension("models differ in variable count or lag order"));
    }
    let t = stack_full_matrix(a_true, copies)?;
    let f = stack_full_matrix(a_fit, copies)?;
    Ok((&t - &f).norm() / t.norm())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiEntry {
    /// 0 for `A0`, `k` for `Ak`.
    pub matrix: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// `(A_true - A_fit) / sigma` at every stack position with finite `sigma > 0`.
pub fn normalized_error(a_true: &CausalModel, a_fit: &CausalModel, sigma: &CoefStack) -> Result<Vec<PhiEntry>> {
    let n = a_true.n();
    if a_fit.n() != n || a_fit.p() != a_true.p() || sigma.len() != a_true.p() + 1 {
        return Err(Error::dimension("models and standard deviations disagree in shape"));
    }
    let truth = a_true.coefficient_stack();
    let fitted = a_fit.coefficient_stack();
    let mut out = Vec::new();
    for (l, s) in sigma.iter().enumerate() {
        if s.nrows() != n || s.ncols() != n {
            return Err(Error::dimension("standard deviation matrix has the wrong shape"));
        }
        for r in 0..n {
            for c in 0..n {
                let sd = s[(r, c)];
                if sd > 0.0 && sd.is_finite() {
                    out.push(PhiEntry {
                        matrix: l,
                        row: r,
                        col: c,
                        value: (truth[l][(r, c)] - fitted[l][(r, c)]) / sd,
                    });
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Scoring("no coefficient has a positive standard deviation".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityDiagnostic {
    pub ks_statistic: f64,
    /// Asymptotic Kolmogorov p-value.
    pub p_value: f64,
    /// `(sample quantile, standard normal quantile)` at positions `(i - 0.5)/n`.
    pub plot: Vec<(f64, f64)>,
}

pub const MIN_NORMALITY_VALUES: usize = 20;

/// One-sample Kolmogorov-Smirnov comparison against N(0, 1).
pub fn normality_diagnostic(values: &[f64]) -> Result<NormalityDiagnostic> {
    if values.len() < MIN_NORMALITY_VALUES {
        return Err(Error::Scoring(format!(
            "normality diagnostic needs at least {MIN_NORMALITY_VALUES} values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Scoring("non-finite value in normality diagnostic".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norm = Normal::standard();
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = norm.cdf(x);
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    let plot = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, norm.inverse_cdf((i as f64 + 0.5) / n)))
        .collect();
    Ok(NormalityDiagnostic {
        ks_statistic: d,
        p_value: ks_p_value(d, sorted.len()),
        plot,
    })
}

/// Asymptotic p-value of a one-sample KS statistic with Stephens' small
/// sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // theta-function form converges fast for small lambda
        let pi2 = std::f64::consts::PI.powi(2);
        let mut cdf = 0.0;
        for k in 1..=20 {
            let j = (2 * k - 1) as f64;
            cdf += (-j * j * pi2 / (8.0 * lambda * lambda)).exp();
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub equivalent: bool,
    pub zeta: f64,
    pub phi_entries: Vec<PhiEntry>,
    pub ks_statistic: Option<f64>,
}

/// Equivalence, accuracy and (when `sigma` is given) normalized errors.
pub fn score(a_true: &CausalModel, a_fit: &CausalModel, sigma: Option<&CoefStack>, zero_tol: f64) -> Result<ScoreBundle> {
    let equivalent = models_obs_equivalent(a_true, a_fit, zero_tol)?;
    let zeta = accuracy_score(a_true, a_fit)?;
    let phi_entries = match sigma {
        Some(s) => normalized_error(a_true, a_fit, s)?,
        None => Vec::new(),
    };
    let ks_statistic = if phi_entries.len() >= MIN_NORMALITY_VALUES {
        let values: Vec<f64> = phi_entries.iter().map(|e| e.value).collect();
        Some(normality_diagnostic(&values)?.ks_statistic)
    } else {
        None
    };
    Ok(ScoreBundle {
        equivalent,
        zeta,
        phi_entries,
        ks_statistic,
    })
}
