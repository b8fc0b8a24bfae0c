//! Network parameters and the params file format.
//!
//! The params file is a small TOML document:
//!
//! ```toml
//! [network]
//! gamma = 0.2
//! theta = 1.0
//! sigma_b = 1.0
//!
//! [weights]
//! values = [0.0, 0.5, -0.3, 0.0]   # row-major, W[i][j] is the weight from j to i
//!
//! [inputs]
//! values = [0.6, 0.4]
//! ```
//!
//! The number of neurons is the length of `inputs.values`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParamViolation, Result};

/// Patterns are packed into a `u64`, one bit per neuron.
pub const MAX_NEURONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub n_neurons: usize,
    /// Row-major `N x N`; `weights[i * N + j]` is the increment of neuron `i`
    /// when neuron `j` spikes.
    pub weights: Vec<f64>,
    pub inputs: Vec<f64>,
    /// Leak rate, in `[0, 1)`.
    pub leak: f64,
    pub threshold: f64,
    pub noise_amp: f64,
}

impl NetworkParams {
    /// Builds and validates in one go.
    pub fn new(
        weights: Vec<f64>,
        inputs: Vec<f64>,
        leak: f64,
        threshold: f64,
        noise_amp: f64,
    ) -> Result<Self> {
        validate_params(NetworkParams {
            n_neurons: inputs.len(),
            weights,
            inputs,
            leak,
            threshold,
            noise_amp,
        })
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_neurons + j]
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n_neurons..(i + 1) * self.n_neurons]
    }

    /// Default burn-in: `10 * ceil(1 / (1 - gamma))` steps.
    pub fn default_burn_in(&self) -> usize {
        10 * (1.0 / (1.0 - self.leak)).ceil() as usize
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: ParamsFile = toml::from_str(s).map_err(|e| Error::Parse {
            line: e
                .span()
                .map(|sp| s[..sp.start.min(s.len())].lines().count().max(1))
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        let n = file.inputs.values.len();
        if let Some(declared) = file.network.n_neurons {
            if declared != n {
                return Err(Error::InvalidParams(vec![ParamViolation {
                    field: "n_neurons",
                    message: format!("declared {declared} but inputs has {n} entries"),
                }]));
            }
        }
        validate_params(NetworkParams {
            n_neurons: n,
            weights: file.weights.values,
            inputs: file.inputs.values,
            leak: file.network.gamma,
            threshold: file.network.theta,
            noise_amp: file.network.sigma_b,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ParamsFile {
            network: NetworkSection {
                n_neurons: Some(self.n_neurons),
                gamma: self.leak,
                theta: self.threshold,
                sigma_b: self.noise_amp,
            },
            weights: ValuesSection {
                values: self.weights.clone(),
            },
            inputs: ValuesSection {
                values: self.inputs.clone(),
            },
        };
        toml::to_string(&file).expect("params always serialize")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    network: NetworkSection,
    weights: ValuesSection,
    inputs: ValuesSection,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_neurons: Option<usize>,
    gamma: f64,
    theta: f64,
    sigma_b: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValuesSection {
    values: Vec<f64>,
}

/// Checks every invariant and reports all violations at once.
pub fn validate_params(candidate: NetworkParams) -> Result<NetworkParams> {
    let mut errs = Vec::new();
    let n = candidate.n_neurons;
    let mut push = |field, message: String| errs.push(ParamViolation { field, message });

    if n == 0 {
        push("n_neurons", "must be at least 1".into());
    }
    if n > MAX_NEURONS {
        push(
            "n_neurons",
            format!("at most {MAX_NEURONS} neurons are supported"),
        );
    }
    if candidate.inputs.len() != n {
        push(
            "inputs",
            format!("expected {n} entries, got {}", candidate.inputs.len()),
        );
    }
    if candidate.weights.len() != n * n {
        push(
            "weights",
            format!(
                "expected {} entries (N x N), got {}",
                n * n,
                candidate.weights.len()
            ),
        );
    }
    if !(candidate.leak.is_finite() && candidate.leak >= 0.0) {
        push("leak", "leak must be >= 0".into());
    } else if candidate.leak >= 1.0 {
        push("leak", "leak must be < 1".into());
    }
    if !(candidate.threshold.is_finite() && candidate.threshold > 0.0) {
        push("threshold", "threshold must be positive".into());
    }
    if !(candidate.noise_amp.is_finite() && candidate.noise_amp > 0.0) {
        push("noise_amp", "noise amplitude must be positive".into());
    }
    if let Some(k) = candidate.weights.iter().position(|w| !w.is_finite()) {
        push("weights", format!("entry {k} is not finite"));
    }
    if let Some(k) = candidate.inputs.iter().position(|x| !x.is_finite()) {
        push("inputs", format!("entry {k} is not finite"));
    }

    if errs.is_empty() {
        Ok(candidate)
    } else {
        Err(Error::InvalidParams(errs))
    }
}
