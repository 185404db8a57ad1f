//! Autocovariance estimation, block-Toeplitz assembly and the conditional
//! Gaussian `x_t | x_{t-1..t-p} ~ N(W [x_{t-1}; ...; x_{t-p}], Gamma0)`.
//!
//! Blocks follow `L_tau = E[x_{t+tau} x_t']`, so `L_{-tau} = L_tau'`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{companion_matrix, stack_full_matrix, CausalModel, TimeSeriesData};

/// Reciprocal condition number below which a Toeplitz system is refused.
pub const RCOND_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutocovEstimator {
    /// Divide lag `tau` sums by `T - tau`.
    #[default]
    PerLag,
    /// Divide every lag by `T`; the Toeplitz stack is then always PSD.
    Biased,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutocovSet {
    n: usize,
    blocks: Vec<DMatrix<f64>>,
    sample_size: Option<usize>,
}

impl AutocovSet {
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>, sample_size: Option<usize>) -> Result<Self> {
        let n = blocks
            .first()
            .ok_or_else(|| Error::dimension("autocovariance needs at least L0"))?
            .nrows();
        if blocks.iter().any(|b| b.nrows() != n || b.ncols() != n) {
            return Err(Error::dimension("autocovariance blocks must all be n x n"));
        }
        Ok(Self {
            n,
            blocks,
            sample_size,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_lag(&self) -> usize {
        self.blocks.len() - 1
    }

    /// `L_tau`.
    pub fn block(&self, tau: usize) -> &DMatrix<f64> {
        &self.blocks[tau]
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Number of observations behind the estimate; `None` for exact sets.
    pub fn sample_size(&self) -> Option<usize> {
        self.sample_size
    }

    /// `E[x_{s+offset} x_s']` for a signed offset.
    pub(crate) fn signed(&self, offset: isize) -> DMatrix<f64> {
        if offset >= 0 {
            self.blocks[offset as usize].clone()
        } else {
            self.blocks[(-offset) as usize].transpose()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = AutocovDocument {
            n: self.n,
            max_lag: self.max_lag(),
            sample_size: self.sample_size,
            blocks: self.blocks.iter().map(linalg::to_rows).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

#[derive(Serialize, Deserialize)]
struct AutocovDocument {
    n: usize,
    max_lag: usize,
    sample_size: Option<usize>,
    blocks: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalParams {
    /// `n x n*p` conditional-mean weights `[W1 ... Wp]`.
    pub w: DMatrix<f64>,
    /// Conditional covariance, symmetric positive definite.
    pub gamma0: DMatrix<f64>,
    pub p: usize,
}

impl ConditionalParams {
    /// Weight block applied to `x_{t-k}`, `k` in `1..=p`.
    pub fn w_block(&self, k: usize) -> DMatrix<f64> {
        let n = self.gamma0.nrows();
        self.w.columns((k - 1) * n, n).clone_owned()
    }
}

pub fn estimate_autocov(data: &TimeSeriesData, max_lag: usize) -> Result<AutocovSet> {
    estimate_autocov_with(data, max_lag, AutocovEstimator::PerLag)
}

pub fn estimate_autocov_with(
    data: &TimeSeriesData,
    max_lag: usize,
    estimator: AutocovEstimator,
) -> Result<AutocovSet> {
    let t = data.len();
    if max_lag + 2 > t {
        return Err(Error::InsufficientData(format!(
            "max lag {max_lag} needs at least {} observations, have {t}",
            max_lag + 2
        )));
    }
    let means = data.column_means();
    let mut centered = data.values().clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let blocks = (0..=max_lag)
        .map(|tau| {
            let lead = centered.rows(tau, t - tau);
            let base = centered.rows(0, t - tau);
            let denom = match estimator {
                AutocovEstimator::PerLag => (t - tau) as f64,
                AutocovEstimator::Biased => t as f64,
            };
            let mut l = lead.transpose() * base / denom;
            if tau == 0 {
                l = linalg::symmetrize(&l);
            }
            l
        })
        .collect();
    AutocovSet::from_blocks(blocks, Some(t))
}

/// `n*p x n*p` covariance of `[x_{t-1}; ...; x_{t-p}]`: block `(i, j)` is
/// `L_{j-i}` above the diagonal and `L_{i-j}'` below it.
pub fn build_toeplitz(acs: &AutocovSet, p: usize) -> Result<DMatrix<f64>> {
    if p == 0 || p > acs.max_lag() + 1 {
        return Err(Error::InsufficientLags {
            requested: p,
            available: acs.max_lag() + 1,
        });
    }
    let n = acs.n();
    let mut out = DMatrix::zeros(n * p, n * p);
    for i in 0..p {
        for j in 0..p {
            out.view_mut((i * n, j * n), (n, n))
                .copy_from(&acs.signed(j as isize - i as isize));
        }
    }
    Ok(linalg::symmetrize(&out))
}

/// Covariance of `[x_t; x_{t-1}; ...; x_{t-p}]`.
pub fn joint_covariance(acs: &AutocovSet, p: usize) -> Result<DMatrix<f64>> {
    build_toeplitz(acs, p + 1)
}

/// Schur complement of the lag block: `W = [L1 ... Lp] T_p^-1` and
/// `Gamma0 = L0 - W [L1 ... Lp]'`.
pub fn conditional_params(acs: &AutocovSet, p: usize) -> Result<ConditionalParams> {
    let n = acs.n();
    if p == 0 {
        let gamma0 = linalg::symmetrize(acs.block(0));
        if gamma0.clone().cholesky().is_none() {
            return Err(Error::DegenerateConditional(
                "lag-0 covariance is not positive definite".into(),
            ));
        }
        return Ok(ConditionalParams {
            w: DMatrix::zeros(n, 0),
            gamma0,
            p,
        });
    }
    if p > acs.max_lag() {
        return Err(Error::InsufficientLags {
            requested: p,
            available: acs.max_lag(),
        });
    }
    let toeplitz = build_toeplitz(acs, p)?;
    let rcond = linalg::reciprocal_condition_sym(&toeplitz);
    if !(rcond >= RCOND_FLOOR) {
        return Err(Error::DegenerateAutocovariance(format!(
            "order-{p} block-Toeplitz matrix has reciprocal condition {rcond:.3e}"
        )));
    }
    let chol = toeplitz.cholesky().ok_or_else(|| {
        Error::DegenerateAutocovariance(format!("order-{p} block-Toeplitz matrix is not positive definite"))
    })?;
    let mut cross = DMatrix::zeros(n, n * p);
    for k in 1..=p {
        cross.columns_mut((k - 1) * n, n).copy_from(acs.block(k));
    }
    // W' = T^-1 C' since T is symmetric
    let w = chol.solve(&cross.transpose()).transpose();
    let gamma0 = linalg::symmetrize(&(acs.block(0) - &w * cross.transpose()));
    if gamma0.clone().cholesky().is_none() {
        return Err(Error::DegenerateConditional(
            "conditional covariance is not positive definite".into(),
        ));
    }
    Ok(ConditionalParams { w, gamma0, p })
}

/// Exact stationary autocovariances `L_0..L_max_lag` of `model`.
///
/// The state covariance of the companion form is found with the doubling
/// iteration for `S = F S F' + Q`; lags beyond `p - 1` follow the
/// Yule-Walker recursion `L_tau = sum_k Phi_k L_{tau-k}`.
pub fn model_implied_autocov(model: &CausalModel, max_lag: usize) -> Result<AutocovSet> {
    let radius = model.spectral_radius()?;
    if radius >= 1.0 - 1e-10 {
        return Err(Error::NonStationary {
            spectral_radius: radius,
        });
    }
    let rf = model.reduced_form()?;
    let n = model.n();
    let p = model.p();
    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(max_lag + 1);
    if p == 0 {
        blocks.push(rf.innovation_cov.clone());
        blocks.extend((0..max_lag).map(|_| DMatrix::zeros(n, n)));
        return AutocovSet::from_blocks(blocks, None);
    }

    let f = companion_matrix(&rf.phi, n);
    let mut s = DMatrix::zeros(n * p, n * p);
    s.view_mut((0, 0), (n, n)).copy_from(&rf.innovation_cov);
    let mut g = f;
    for _ in 0..200 {
        let step = &g * &s * g.transpose();
        let scale = linalg::max_abs(&s);
        s += &step;
        if linalg::max_abs(&step) <= f64::EPSILON * 1e-3 * scale {
            break;
        }
        g = &g * &g;
    }
    let s = linalg::symmetrize(&s);

    for tau in 0..=max_lag {
        let l = if tau < p {
            s.view((0, tau * n), (n, n)).clone_owned()
        } else {
            let mut acc = DMatrix::zeros(n, n);
            for (k, phi) in rf.phi.iter().enumerate() {
                let offset = tau as isize - (k as isize + 1);
                let prev = if offset >= 0 {
                    blocks[offset as usize].clone()
                } else {
                    blocks[(-offset) as usize].transpose()
                };
                acc += phi * prev;
            }
            acc
        };
        blocks.push(l);
    }
    AutocovSet::from_blocks(blocks, None)
}

/// Joint covariance `(A D^-1 A')^-1` of `copies` consecutive observation
/// vectors, oldest first, with the process started from zero.
pub fn stacked_joint_covariance(model: &CausalModel, copies: usize) -> Result<DMatrix<f64>> {
    let m = stack_full_matrix(model, copies)?;
    let n = model.n();
    let d = nalgebra::DVector::from_fn(n * copies, |i, _| model.d0()[i % n]);
    // X = M^-1 e, so cov(X) = M^-1 D M^-T
    let m_inv = m
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::invalid_model("stacked coefficient matrix is singular"))?;
    Ok(linalg::symmetrize(
        &(&m_inv * DMatrix::from_diagonal(&d) * m_inv.transpose()),
    ))
}

/// Autocovariances read from the most recent blocks of
/// [`stacked_joint_covariance`]; converges to [`model_implied_autocov`] as
/// `copies` grows.
pub fn stacked_autocov(model: &CausalModel, max_lag: usize, copies: usize) -> Result<AutocovSet> {
    if copies < max_lag + model.p() + 1 {
        return Err(Error::dimension("too few copies for the requested lags"));
    }
    let n = model.n();
    let joint = stacked_joint_covariance(model, copies)?;
    let last = copies - 1;
    let blocks = (0..=max_lag)
        .map(|tau| joint.view((last * n, (last - tau) * n), (n, n)).clone_owned())
        .collect();
    AutocovSet::from_blocks(blocks, None)
}
