//! Sparsest-permutation search for structural VAR models.
//!
//! For every ordering of the variables the conditional covariance `Gamma0`
//! of `x_t` given its `p` lags is factored as `Gamma0^-1 = A0 D0^-1 A0'` with
//! `A0` unit upper triangular in that ordering, and the lag matrices follow
//! from `A0' W = -[A1' ... Ap']`. Each candidate edge is then kept only if
//! the corresponding partial correlation is significant (Fisher z test); the
//! orderings producing the fewest edges win.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::autocov::{
    conditional_params, estimate_autocov_with, joint_covariance, AutocovEstimator, AutocovSet,
    ConditionalParams,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    causal_order, signature_of, CausalModel, StructureSignature, TimeSeriesData, DEFAULT_ZERO_TOL,
};

/// Largest variable count for which all `n!` orderings are searched.
pub const MAX_SEARCH_VARIABLES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Lag order of the fitted model.
    pub p: usize,
    /// Confidence level of the edge-retention test.
    pub alpha: f64,
    /// Largest lag estimated from data; at least `p`.
    pub max_lag: Option<usize>,
    /// Test/prune/re-solve passes per ordering.
    pub prune_iterations: usize,
    pub estimator: AutocovEstimator,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            p: 1,
            alpha: 0.95,
            max_lag: None,
            prune_iterations: 1,
            estimator: AutocovEstimator::PerLag,
        }
    }
}

impl FitConfig {
    pub fn new(p: usize, alpha: f64) -> Self {
        Self {
            p,
            alpha,
            ..Self::default()
        }
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag.unwrap_or(self.p).max(self.p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if let Some(m) = self.max_lag {
            if m < self.p {
                return Err(Error::config(format!("max_lag {m} is below p = {}", self.p)));
            }
        }
        if self.prune_iterations == 0 {
            return Err(Error::config("prune_iterations must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationRecord {
    pub order: Vec<usize>,
    pub edges: usize,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Signature-distinct models attaining the minimal edge count, in the
    /// lexicographic order of the first ordering that produced each.
    pub models: Vec<CausalModel>,
    pub sparsity: usize,
    pub permutation_log: Vec<PermutationRecord>,
}

impl FitResult {
    pub fn signatures(&self) -> Vec<StructureSignature> {
        self.models.iter().map(|m| signature_of(m, DEFAULT_ZERO_TOL)).collect()
    }
}

/// A regressor of `x_t`: variable `var` observed at `t - lag`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Regressor {
    pub var: usize,
    pub lag: usize,
}

impl Regressor {
    pub fn new(var: usize, lag: usize) -> Self {
        Self { var, lag }
    }
}

/// Joint second moments of `[x_t; x_{t-1}; ...; x_{t-p}]` with the effective
/// sample size used by significance tests.
#[derive(Clone, Debug)]
pub struct JointMoments {
    n: usize,
    p: usize,
    cov: DMatrix<f64>,
    n_eff: usize,
}

impl JointMoments {
    pub fn new(acs: &AutocovSet, p: usize, n_eff: usize) -> Result<Self> {
        if acs.max_lag() < p {
            return Err(Error::InsufficientLags {
                requested: p,
                available: acs.max_lag(),
            });
        }
        Ok(Self {
            n: acs.n(),
            p,
            cov: joint_covariance(acs, p)?,
            n_eff,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_eff(&self) -> usize {
        self.n_eff
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn index(&self, r: Regressor) -> usize {
        r.lag * self.n + r.var
    }

    /// Least-squares coefficients of `x_{target,t}` on `parents` and the
    /// residual variance.
    pub fn regress(&self, target: usize, parents: &[Regressor]) -> Result<(DVector<f64>, f64)> {
        let t = self.index(Regressor::new(target, 0));
        let var = self.cov[(t, t)];
        if parents.is_empty() {
            return Ok((DVector::zeros(0), var));
        }
        let idx: Vec<usize> = parents.iter().map(|&r| self.index(r)).collect();
        let sxx = linalg::submatrix(&self.cov, &idx, &idx);
        let sxy = linalg::subvector(&self.cov, &idx, t);
        let chol = sxx.cholesky().ok_or_else(|| {
            Error::DegenerateConditional(format!("regressors of variable {target} are collinear"))
        })?;
        let beta = chol.solve(&sxy);
        let resid = var - sxy.dot(&beta);
        if !(resid > 0.0) {
            return Err(Error::DegenerateConditional(format!(
                "residual variance of variable {target} is not positive"
            )));
        }
        Ok((beta, resid))
    }

    /// Partial correlation of `x_{target,t}` with each parent given the others.
    pub fn partial_correlations(&self, target: usize, parents: &[Regressor]) -> Result<Vec<f64>> {
        if parents.is_empty() {
            return Ok(Vec::new());
        }
        let idx: Vec<usize> = std::iter::once(self.index(Regressor::new(target, 0)))
            .chain(parents.iter().map(|&r| self.index(r)))
            .collect();
        let sub = linalg::submatrix(&self.cov, &idx, &idx);
        let k = idx.len();
        let precision = sub
            .cholesky()
            .ok_or_else(|| {
                Error::DegenerateConditional(format!(
                    "joint covariance around variable {target} is not positive definite"
                ))
            })?
            .solve(&DMatrix::identity(k, k));
        Ok((1..k)
            .map(|r| {
                let rho = -precision[(0, r)] / (precision[(0, 0)] * precision[(r, r)]).sqrt();
                rho.clamp(-1.0, 1.0)
            })
            .collect())
    }
}

/// Two-sided standard-normal critical value at confidence `alpha`.
pub fn significance_threshold(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + 0.5 * alpha)
}

/// `|atanh(rho)| * sqrt(n_eff - conditioning_size - 3)`.
pub fn fisher_z_statistic(rho: f64, n_eff: usize, conditioning_size: usize) -> Result<f64> {
    let dof = n_eff as f64 - conditioning_size as f64 - 3.0;
    if dof <= 0.0 {
        return Err(Error::InsufficientData(format!(
            "effective sample size {n_eff} too small for a conditioning set of {conditioning_size}"
        )));
    }
    let r = rho.abs().min(1.0 - 1e-16);
    Ok(r.atanh() * dof.sqrt())
}

/// Retains the candidates whose partial correlation with `target` (given
/// the remaining candidates) is significant at confidence `alpha`.
pub fn prune_edges(
    moments: &JointMoments,
    target: usize,
    candidates: &[Regressor],
    alpha: f64,
) -> Result<Vec<Regressor>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let threshold = significance_threshold(alpha);
    let rhos = moments.partial_correlations(target, candidates)?;
    let conditioning = candidates.len() - 1;
    let mut kept = Vec::with_capacity(candidates.len());
    for (&cand, rho) in candidates.iter().zip(rhos) {
        if fisher_z_statistic(rho, moments.n_eff(), conditioning)? > threshold {
            kept.push(cand);
        }
    }
    Ok(kept)
}

/// Unpruned structural model implied by `params` when the variables are
/// causally ordered as `order` (causes first), returned in original
/// variable order.
pub fn decompose_conditional(
    params: &ConditionalParams,
    order: &[usize],
    labels: Option<Vec<String>>,
) -> Result<CausalModel> {
    let n = params.gamma0.nrows();
    if order.len() != n || !order.iter().copied().sorted().eq(0..n) {
        return Err(Error::dimension("ordering is not a permutation of the variables"));
    }
    let perm = linalg::permutation_matrix(order);
    let gamma = &perm * &params.gamma0 * perm.transpose();
    let precision = gamma
        .cholesky()
        .ok_or_else(|| Error::DegenerateConditional("conditional covariance is not positive definite".into()))?
        .solve(&DMatrix::identity(n, n));
    // Reversing the order turns the lower Cholesky factor of the reversed
    // precision into an upper factor U with precision = U U'.
    let rev = linalg::permutation_matrix(&(0..n).rev().collect::<Vec<_>>());
    let lower = (&rev * linalg::symmetrize(&precision) * &rev)
        .cholesky()
        .ok_or_else(|| Error::DegenerateConditional("precision matrix is not positive definite".into()))?
        .l();
    let upper = &rev * lower * &rev;
    let scale = upper.diagonal();
    let mut a0_perm = upper.clone();
    for (j, mut col) in a0_perm.column_iter_mut().enumerate() {
        col /= scale[j];
    }
    let d_perm = scale.map(|s| 1.0 / (s * s));

    let a0 = perm.transpose() * &a0_perm * &perm;
    let lags = (1..=params.p)
        .map(|k| {
            let w_perm = &perm * params.w_block(k) * perm.transpose();
            let ak_perm = -(w_perm.transpose() * &a0_perm);
            perm.transpose() * ak_perm * &perm
        })
        .collect();
    let mut d0 = DVector::zeros(n);
    for (i, &var) in order.iter().enumerate() {
        d0[var] = d_perm[i];
    }
    let mut a0 = a0;
    for i in 0..n {
        a0[(i, i)] = 1.0;
    }
    // exact zeros above the factor's triangle
    for (a, &row) in order.iter().enumerate() {
        for &col in &order[..=a] {
            if row != col {
                a0[(row, col)] = 0.0;
            }
        }
    }
    CausalModel::new(a0, lags, d0, labels)
}

fn equation_candidates(order: &[usize], position: usize, n: usize, p: usize) -> Vec<Regressor> {
    order[..position]
        .iter()
        .map(|&v| Regressor::new(v, 0))
        .chain((1..=p).flat_map(|lag| (0..n).map(move |v| Regressor::new(v, lag))))
        .collect()
}

fn write_equation(
    a0: &mut DMatrix<f64>,
    lags: &mut [DMatrix<f64>],
    target: usize,
    parents: &[Regressor],
    beta: &DVector<f64>,
) {
    for i in 0..a0.nrows() {
        if i != target {
            a0[(i, target)] = 0.0;
        }
    }
    for lag in lags.iter_mut() {
        lag.column_mut(target).fill(0.0);
    }
    for (r, b) in parents.iter().zip(beta.iter()) {
        if r.lag == 0 {
            a0[(r.var, target)] = -b;
        } else {
            lags[r.lag - 1][(r.var, target)] = -b;
        }
    }
}

/// Fit for a single ordering: Cholesky decomposition, edge pruning and a
/// constrained re-solve of any equation that lost edges.
pub fn fit_ordering(
    params: &ConditionalParams,
    moments: &JointMoments,
    order: &[usize],
    cfg: &FitConfig,
    labels: Option<Vec<String>>,
) -> Result<(CausalModel, usize)> {
    let n = moments.n();
    let p = moments.p();
    let full = decompose_conditional(params, order, labels.clone())?;
    let mut a0 = full.a0().clone();
    let mut lags = full.lags().to_vec();
    let mut d0 = full.d0().clone();
    let mut edges = 0;
    for (position, &target) in order.iter().enumerate() {
        let candidates = equation_candidates(order, position, n, p);
        let mut kept = candidates.clone();
        for _ in 0..cfg.prune_iterations {
            let next = prune_edges(moments, target, &kept, cfg.alpha)?;
            let changed = next.len() != kept.len();
            kept = next;
            if !changed {
                break;
            }
        }
        edges += kept.len();
        if kept.len() != candidates.len() {
            let (beta, resid) = moments.regress(target, &kept)?;
            write_equation(&mut a0, &mut lags, target, &kept, &beta);
            d0[target] = resid;
        }
    }
    Ok((CausalModel::new(a0, lags, d0, labels)?, edges))
}

/// Sparsest-permutation fit on second moments `acs` with effective sample
/// size `n_eff`.
pub fn fit_autocov(
    acs: &AutocovSet,
    n_eff: usize,
    cfg: &FitConfig,
    labels: Option<Vec<String>>,
) -> Result<FitResult> {
    cfg.validate()?;
    let n = acs.n();
    if n > MAX_SEARCH_VARIABLES {
        return Err(Error::TooManyVariables {
            n,
            max: MAX_SEARCH_VARIABLES,
        });
    }
    let params = conditional_params(acs, cfg.p)?;
    let moments = JointMoments::new(acs, cfg.p, n_eff)?;

    let mut log = Vec::new();
    let mut best: Vec<(CausalModel, StructureSignature)> = Vec::new();
    let mut sparsity = usize::MAX;
    for order in (0..n).permutations(n) {
        let (model, edges) = fit_ordering(&params, &moments, &order, cfg, labels.clone())?;
        log.push(PermutationRecord {
            order: order.clone(),
            edges,
        });
        if edges < sparsity {
            sparsity = edges;
            best.clear();
        }
        if edges == sparsity {
            let sig = signature_of(&model, DEFAULT_ZERO_TOL);
            if !best.iter().any(|(_, s)| *s == sig) {
                best.push((model, sig));
            }
        }
    }
    Ok(FitResult {
        models: best.into_iter().map(|(m, _)| m).collect(),
        sparsity,
        permutation_log: log,
    })
}

pub fn fit(data: &TimeSeriesData, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if data.n_vars() > MAX_SEARCH_VARIABLES {
        return Err(Error::TooManyVariables {
            n: data.n_vars(),
            max: MAX_SEARCH_VARIABLES,
        });
    }
    let acs = estimate_autocov_with(data, cfg.max_lag(), cfg.estimator)?;
    let n_eff = data.len().saturating_sub(cfg.p);
    fit_autocov(&acs, n_eff, cfg, Some(data.labels().to_vec()))
}

/// Coefficients on a fixed support by per-equation least squares on the
/// joint moments; zeros off the support.
pub fn refit_on_moments(
    moments: &JointMoments,
    sig: &StructureSignature,
    labels: Option<Vec<String>>,
) -> Result<CausalModel> {
    let n = moments.n();
    let p = moments.p();
    if sig.n() != n || sig.p() != p {
        return Err(Error::dimension(format!(
            "signature is for n = {}, p = {} but moments are for n = {n}, p = {p}",
            sig.n(),
            sig.p()
        )));
    }
    if causal_order(&sig.contemporaneous_indicator())?.is_none() {
        return Err(Error::invalid_model("signature contains a contemporaneous cycle"));
    }
    let mut a0 = DMatrix::identity(n, n);
    let mut lags = vec![DMatrix::zeros(n, n); p];
    let mut d0 = DVector::zeros(n);
    for target in 0..n {
        let parents: Vec<Regressor> = sig
            .contemporaneous()
            .iter()
            .filter(|&&(_, e)| e == target)
            .map(|&(c, _)| Regressor::new(c, 0))
            .chain(
                sig.temporal()
                    .iter()
                    .filter(|t| t.effect == target)
                    .map(|t| Regressor::new(t.cause, t.lag)),
            )
            .collect();
        let (beta, resid) = moments.regress(target, &parents)?;
        write_equation(&mut a0, &mut lags, target, &parents, &beta);
        d0[target] = resid;
    }
    CausalModel::new(a0, lags, d0, labels)
}

pub fn refit_on_structure(data: &TimeSeriesData, sig: &StructureSignature, p: usize) -> Result<CausalModel> {
    let acs = estimate_autocov_with(data, p, AutocovEstimator::PerLag)?;
    let moments = JointMoments::new(&acs, p, data.len().saturating_sub(p))?;
    refit_on_moments(&moments, sig, Some(data.labels().to_vec()))
}
