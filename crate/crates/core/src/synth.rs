//! Random stationary models, forward simulation and surrogate series.

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autocov::{conditional_params, estimate_autocov_with, AutocovEstimator, ConditionalParams};
use crate::error::{Error, Result};
use crate::model::{is_stationary, CausalModel, TimeSeriesData};

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th child stream of `master`:
/// `splitmix64(master ^ splitmix64(index))`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Burn-in used when none is configured: `max(100, 10 * p * n)`.
pub fn default_burn_in(n: usize, p: usize) -> usize {
    (10 * p * n).max(100)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelGenConfig {
    pub n: usize,
    pub p: usize,
    pub connectivity: f64,
    pub coef_lo: f64,
    pub coef_hi: f64,
    /// Mean of `log d0`.
    pub noise_log_mean: f64,
    /// Standard deviation of `log d0`.
    pub noise_log_sd: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for ModelGenConfig {
    fn default() -> Self {
        Self {
            n: 3,
            p: 1,
            connectivity: 0.4,
            coef_lo: 0.4,
            coef_hi: 1.0,
            noise_log_mean: -1.0,
            noise_log_sd: 0.1,
            max_attempts: 100_000,
            seed: 0,
        }
    }
}

impl ModelGenConfig {
    pub fn new(n: usize, p: usize, connectivity: f64, seed: u64) -> Self {
        Self {
            n,
            p,
            connectivity,
            seed,
            ..Self::default()
        }
    }

    /// `n(n-1)/2 + n^2 p`.
    pub fn max_edges(&self) -> usize {
        self.n * (self.n.saturating_sub(1)) / 2 + self.n * self.n * self.p
    }

    /// Number of nonzero coefficients, `round(r * max_edges)`.
    pub fn target_edges(&self) -> usize {
        ((self.connectivity * self.max_edges() as f64).round() as usize).min(self.max_edges())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be positive"));
        }
        if !(self.connectivity > 0.0 && self.connectivity <= 1.0) {
            return Err(Error::config(format!(
                "connectivity ratio {} outside (0, 1]",
                self.connectivity
            )));
        }
        if !(self.coef_lo > 0.0 && self.coef_lo < self.coef_hi) {
            return Err(Error::config("coefficient interval needs 0 < lo < hi"));
        }
        if !(self.noise_log_sd >= 0.0) || !self.noise_log_mean.is_finite() {
            return Err(Error::config("invalid noise distribution parameters"));
        }
        if self.max_attempts == 0 {
            return Err(Error::config("max_attempts must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Contemporaneous(usize, usize),
    Lagged(usize, usize, usize),
}

/// Draws a random acyclic stationary model with exactly `target_edges()`
/// nonzero coefficients, retrying on nonstationary draws.
pub fn random_model(cfg: &ModelGenConfig) -> Result<CausalModel> {
    cfg.validate()?;
    let n = cfg.n;
    let mut rng = rng_from_seed(cfg.seed);
    let m = cfg.target_edges();
    let noise = Normal::new(cfg.noise_log_mean, cfg.noise_log_sd)
        .map_err(|e| Error::config(e.to_string()))?;

    for _ in 0..cfg.max_attempts {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut slots = Vec::with_capacity(cfg.max_edges());
        for a in 0..n {
            for b in a + 1..n {
                slots.push(Slot::Contemporaneous(order[a], order[b]));
            }
        }
        for lag in 1..=cfg.p {
            for k in 0..n {
                for j in 0..n {
                    slots.push(Slot::Lagged(k, j, lag));
                }
            }
        }
        let values: Vec<f64> = slots
            .iter()
            .map(|_| {
                let mag = rng.random_range(cfg.coef_lo..=cfg.coef_hi);
                if rng.random_bool(0.5) { mag } else { -mag }
            })
            .collect();
        let keep = index::sample(&mut rng, slots.len(), m);

        let mut a0 = DMatrix::identity(n, n);
        let mut lags = vec![DMatrix::zeros(n, n); cfg.p];
        for i in keep.iter() {
            match slots[i] {
                Slot::Contemporaneous(k, j) => a0[(k, j)] = values[i],
                Slot::Lagged(k, j, lag) => lags[lag - 1][(k, j)] = values[i],
            }
        }
        let d0 = DVector::from_fn(n, |_, _| noise.sample(&mut rng).exp());
        let model = CausalModel::new(a0, lags, d0, None)?;
        if is_stationary(&model)? {
            return Ok(model);
        }
    }
    Err(Error::GenerationFailed {
        attempts: cfg.max_attempts,
    })
}

/// Runs the structural recursion from a zero initial state and returns the
/// `t` rows following `burn_in` discarded ones.
pub fn simulate(model: &CausalModel, t: usize, burn_in: usize, seed: u64) -> Result<TimeSeriesData> {
    let radius = model.spectral_radius()?;
    if !is_stationary(model)? {
        return Err(Error::NonStationary {
            spectral_radius: radius,
        });
    }
    let p = model.p();
    if t < p + 1 {
        return Err(Error::InsufficientData(format!("need T >= {}, got {t}", p + 1)));
    }
    let n = model.n();
    let a0t_inv = model
        .a0()
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::invalid_model("contemporaneous matrix is singular"))?;
    let phi: Vec<DMatrix<f64>> = model.lags().iter().map(|a| -(&a0t_inv * a.transpose())).collect();
    let sd: Vec<f64> = model.d0().iter().map(|v| v.sqrt()).collect();
    let mut rng = rng_from_seed(seed);

    let series = run_recursion(n, t, burn_in, &phi, |rng: &mut SeededRng| {
        let e = DVector::from_fn(n, |i, _| sd[i] * rng.sample::<f64, _>(StandardNormal));
        &a0t_inv * e
    }, &mut rng);
    TimeSeriesData::new(series, Some(model.labels().to_vec()))
}

/// `x_t = sum_k phi[k-1] x_{t-k} + shock(rng)`, zero initial state.
fn run_recursion(
    n: usize,
    t: usize,
    burn_in: usize,
    phi: &[DMatrix<f64>],
    mut shock: impl FnMut(&mut SeededRng) -> DVector<f64>,
    rng: &mut SeededRng,
) -> DMatrix<f64> {
    let total = burn_in + t;
    let mut all = DMatrix::zeros(total, n);
    let mut x = DVector::zeros(n);
    for step in 0..total {
        x.copy_from(&shock(rng));
        for (k, block) in phi.iter().enumerate() {
            if step > k {
                let prev = all.row(step - k - 1).transpose();
                x.gemv(1.0, block, &prev, 1.0);
            }
        }
        all.row_mut(step).copy_from(&x.transpose());
    }
    all.rows(burn_in, t).clone_owned()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    /// Surrogate lag order as a multiple of the fitted lag order.
    pub lag_multiplier: usize,
    /// Explicit surrogate lag order; overrides `lag_multiplier`.
    pub lags: Option<usize>,
    /// Output length; defaults to the source length.
    pub length: Option<usize>,
    /// Defaults to [`default_burn_in`].
    pub burn_in: Option<usize>,
    pub estimator: AutocovEstimator,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            lag_multiplier: 1,
            lags: None,
            length: None,
            burn_in: None,
            estimator: AutocovEstimator::PerLag,
        }
    }
}

impl SurrogateConfig {
    pub fn lag_order(&self, fit_p: usize) -> usize {
        self.lags.unwrap_or(fit_p * self.lag_multiplier.max(1))
    }
}

/// Fitted conditional Gaussian used to draw surrogate series.
#[derive(Clone, Debug)]
pub struct SurrogateSampler {
    params: ConditionalParams,
    chol: DMatrix<f64>,
    means: DVector<f64>,
    labels: Vec<String>,
}

impl SurrogateSampler {
    pub fn from_data(data: &TimeSeriesData, p: usize, estimator: AutocovEstimator) -> Result<Self> {
        let acs = estimate_autocov_with(data, p, estimator)?;
        let params = conditional_params(&acs, p)?;
        Self::new(params, data.column_means(), data.labels().to_vec())
    }

    pub fn new(params: ConditionalParams, means: DVector<f64>, labels: Vec<String>) -> Result<Self> {
        let chol = params
            .gamma0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::DegenerateConditional("conditional covariance is not positive definite".into()))?
            .l();
        Ok(Self {
            params,
            chol,
            means,
            labels,
        })
    }

    pub fn params(&self) -> &ConditionalParams {
        &self.params
    }

    /// Draws `t` rows after `burn_in` discarded ones, adding the source means back.
    pub fn sample(&self, t: usize, burn_in: usize, seed: u64) -> Result<TimeSeriesData> {
        let n = self.means.len();
        let phi: Vec<DMatrix<f64>> = (1..=self.params.p).map(|k| self.params.w_block(k)).collect();
        let mut rng = rng_from_seed(seed);
        let chol = &self.chol;
        let mut series = run_recursion(n, t, burn_in, &phi, |rng: &mut SeededRng| {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            chol * z
        }, &mut rng);
        for (j, mut col) in series.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.means[j]);
        }
        TimeSeriesData::new(series, Some(self.labels.clone()))
    }
}

/// Surrogate series sampled from the conditional Gaussian fitted to `data`
/// with `p` lags.
pub fn surrogate(
    data: &TimeSeriesData,
    p: usize,
    t_out: usize,
    burn_in: usize,
    seed: u64,
) -> Result<TimeSeriesData> {
    SurrogateSampler::from_data(data, p, AutocovEstimator::PerLag)?.sample(t_out, burn_in, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{is_acyclic, signature_of};
    use nalgebra::dmatrix;

    #[test]
    fn edge_count_arithmetic() {
        let cfg = ModelGenConfig::new(3, 1, 0.5, 7);
        assert_eq!(cfg.max_edges(), 12);
        assert_eq!(cfg.target_edges(), 6);
        assert_eq!(ModelGenConfig::new(3, 1, 0.4, 0).target_edges(), 5);
        assert_eq!(ModelGenConfig::new(3, 2, 1.0, 0).target_edges(), 21);
        // 0.5 * 3 = 1.5 rounds away from zero
        assert_eq!(ModelGenConfig::new(2, 1, 0.3, 0).target_edges(), 2);
    }

    #[test]
    fn random_models_meet_target() {
        for seed in 0..40 {
            let cfg = ModelGenConfig::new(3, 1, 0.5, seed);
            let m = random_model(&cfg).unwrap();
            assert_eq!(signature_of(&m, 0.0).edge_count(), 6);
            assert!(is_acyclic(m.a0()).unwrap());
            assert!(is_stationary(&m).unwrap());
            for v in m.a0().iter().chain(m.lags().iter().flat_map(|l| l.iter())) {
                assert!(*v == 0.0 || *v == 1.0 || (0.4..=1.0).contains(&v.abs()));
            }
        }
    }

    #[test]
    fn fully_connected_when_ratio_is_one() {
        let m = random_model(&ModelGenConfig {
            coef_lo: 0.05,
            coef_hi: 0.1,
            ..ModelGenConfig::new(3, 1, 1.0, 3)
        })
        .unwrap();
        assert_eq!(signature_of(&m, 0.0).edge_count(), 12);
    }

    #[test]
    fn generation_failure_reports_attempts() {
        // every lag-1 self effect near 1 with all slots filled is explosive
        let cfg = ModelGenConfig {
            coef_lo: 5.0,
            coef_hi: 6.0,
            max_attempts: 7,
            ..ModelGenConfig::new(2, 1, 1.0, 1)
        };
        assert!(matches!(random_model(&cfg), Err(Error::GenerationFailed { attempts: 7 })));
    }

    #[test]
    fn invalid_configs() {
        assert!(random_model(&ModelGenConfig::new(3, 1, 0.0, 0)).is_err());
        assert!(random_model(&ModelGenConfig { coef_lo: 1.0, coef_hi: 0.5, ..Default::default() }).is_err());
    }

    #[test]
    fn same_seed_same_model() {
        let cfg = ModelGenConfig::new(4, 2, 0.3, 99);
        assert_eq!(random_model(&cfg).unwrap(), random_model(&cfg).unwrap());
    }

    #[test]
    fn simulate_is_deterministic_and_rejects_explosive_models() {
        let m = CausalModel::new(dmatrix![1.0], vec![dmatrix![-0.5]], DVector::from_element(1, 1.0), None).unwrap();
        let a = simulate(&m, 50, 10, 4).unwrap();
        assert_eq!(a, simulate(&m, 50, 10, 4).unwrap());
        assert_ne!(a, simulate(&m, 50, 10, 5).unwrap());
        let bad = CausalModel::new(dmatrix![1.0], vec![dmatrix![-1.0]], DVector::from_element(1, 1.0), None).unwrap();
        assert!(matches!(simulate(&bad, 50, 10, 0), Err(Error::NonStationary { .. })));
    }

    #[test]
    fn pure_noise_variance() {
        let m = CausalModel::independent_noise(DVector::from_element(1, 1.0), 0, None).unwrap();
        let data = simulate(&m, 100_000, 0, 11).unwrap();
        let col = data.values().column(0);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn child_seeds_are_distinct() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|i| child_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
    }

    #[test]
    fn burn_in_default() {
        assert_eq!(default_burn_in(3, 1), 100);
        assert_eq!(default_burn_in(6, 2), 120);
    }
}
