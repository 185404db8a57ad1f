//! Structural vector autoregression fitting by sparsest permutation, with
//! surrogate-series robustness of the fitted structure and bootstrap
//! standard deviations of its coefficients.

pub mod autocov;
pub mod error;
pub mod harness;
mod linalg;
pub mod model;
pub mod robustness;
pub mod scoring;
pub mod sp;
pub mod synth;

pub use autocov::{
    build_toeplitz, conditional_params, estimate_autocov, model_implied_autocov, AutocovEstimator, AutocovSet,
    ConditionalParams,
};
pub use error::{Error, Result};
pub use model::{signature_of, CausalModel, StructureSignature, TemporalEdge, TimeSeriesData, DEFAULT_ZERO_TOL};
pub use robustness::{compute_robustness, RobustnessReport};
pub use scoring::{accuracy_score, normality_diagnostic, normalized_error, obs_equivalent};
pub use sp::{fit, FitConfig, FitResult};
pub use synth::{random_model, simulate, surrogate, ModelGenConfig, SurrogateConfig};
