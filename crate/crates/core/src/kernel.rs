//! Exact conditional spike statistics of the network given a finite history.
//!
//! Conditionally on the spike history, `V_i(0)` is Gaussian with mean `C_i`
//! and variance `sigma_i^2`, independently across neurons. A neuron's memory
//! starts at its last firing time `tau_i`; a history of depth `R` with no spike
//! of neuron `i` is treated as if `tau_i = -R` (the truncated history).
//!
//! All spike probabilities go through [`log_gauss_tail`], so potentials stay
//! finite even when a probability underflows.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::params::NetworkParams;
use crate::raster::{last_fire_index, SpikeBlock, SpikingPattern};

/// `|x|` beyond which the tail is evaluated by continued fraction.
const ASYMPTOTIC_SWITCH: f64 = 8.0;
const CF_TERMS: u32 = 60;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// `pi(x) = P(N(0,1) >= x)`.
pub fn gauss_tail(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite(x));
    }
    Ok(tail(x))
}

/// `log pi(x)`, accurate in the far tails (no underflow for `|x| <= 40`).
pub fn log_gauss_tail(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite(x));
    }
    Ok(log_tail(x))
}

#[inline]
pub(crate) fn tail(x: f64) -> f64 {
    if x > ASYMPTOTIC_SWITCH {
        log_tail(x).exp()
    } else if x < -ASYMPTOTIC_SWITCH {
        1.0 - log_tail(-x).exp()
    } else {
        0.5 * libm::erfc(x / SQRT_2)
    }
}

#[inline]
pub(crate) fn log_tail(x: f64) -> f64 {
    if x > ASYMPTOTIC_SWITCH {
        // Laplace continued fraction for the Mills ratio.
        let mut t = x;
        for k in (1..=CF_TERMS).rev() {
            t = x + f64::from(k) / t;
        }
        -0.5 * x * x - LN_SQRT_2PI - t.ln()
    } else if x < -ASYMPTOTIC_SWITCH {
        (-log_tail(-x).exp()).ln_1p()
    } else {
        (0.5 * libm::erfc(x / SQRT_2)).ln()
    }
}

/// Standard normal density.
#[inline]
pub(crate) fn gauss_density(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// `phi(x) / pi(x)`, the hazard of the standard normal.
pub(crate) fn gauss_hazard(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI - log_tail(x)).exp()
}

fn check_history(history: &SpikeBlock, params: &NetworkParams) -> Result<()> {
    if history.n_neurons() != params.n_neurons {
        return Err(Error::DimensionMismatch(format!(
            "history has {} neurons, params have {}",
            history.n_neurons(),
            params.n_neurons
        )));
    }
    Ok(())
}

/// Index of the first pattern inside neuron `i`'s memory window.
#[inline]
fn memory_start(patterns: &[u64], i: usize) -> usize {
    last_fire_index(patterns, i).unwrap_or(0)
}

/// `x_ij = sum_{l = tau_i}^{-1} gamma^{-1-l} omega_j(l)` over a history ending at `-1`.
pub fn integrated_spikes(
    history: &SpikeBlock,
    i: usize,
    j: usize,
    params: &NetworkParams,
) -> Result<f64> {
    check_history(history, params)?;
    let n = params.n_neurons;
    for (what, idx) in [("neuron index i", i), ("neuron index j", j)] {
        if idx >= n {
            return Err(Error::OutOfRange {
                what,
                value: idx as i64,
                limit: n as i64 - 1,
            });
        }
    }
    let p = history.patterns();
    let from = memory_start(p, i);
    let mut acc = 0.0;
    let mut g = 1.0;
    for k in (from..p.len()).rev() {
        if (p[k] >> j) & 1 == 1 {
            acc += g;
        }
        g *= params.leak;
    }
    Ok(acc)
}

/// Conditional law of `V(0)` given a history ending at `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub drift: Vec<f64>,
    pub variance: Vec<f64>,
    /// Last firing times, in `-R..=-1`.
    pub last_fire: Vec<i64>,
}

impl ConditionalMoments {
    /// `(theta - C_i) / sigma_i`: spike probability of neuron `i` is `pi(y_i)`.
    pub fn reduced_thresholds(&self, params: &NetworkParams) -> Vec<f64> {
        self.drift
            .iter()
            .zip(&self.variance)
            .map(|(c, v)| (params.threshold - c) / v.sqrt())
            .collect()
    }
}

pub fn conditional_moments(
    history: &SpikeBlock,
    params: &NetworkParams,
) -> Result<ConditionalMoments> {
    check_history(history, params)?;
    let n = params.n_neurons;
    let mut drift = vec![0.0; n];
    let mut variance = vec![0.0; n];
    moments_into(history.patterns(), params, &mut drift, &mut variance);
    let depth = history.len() as i64;
    let last_fire = (0..n)
        .map(|i| memory_start(history.patterns(), i) as i64 - depth)
        .collect();
    Ok(ConditionalMoments {
        drift,
        variance,
        last_fire,
    })
}

/// Fills drift and variance for a packed history (earliest pattern first).
pub(crate) fn moments_into(
    patterns: &[u64],
    params: &NetworkParams,
    drift: &mut [f64],
    variance: &mut [f64],
) {
    let n = params.n_neurons;
    let depth = patterns.len();
    let gamma = params.leak;
    let sb2 = params.noise_amp * params.noise_amp;
    let mut x = vec![0.0; n];
    for i in 0..n {
        let from = memory_start(patterns, i);
        let steps = (depth - from) as i32;
        x.iter_mut().for_each(|v| *v = 0.0);
        let mut g = 1.0;
        for k in (from..depth).rev() {
            let p = patterns[k];
            for (j, xj) in x.iter_mut().enumerate() {
                if (p >> j) & 1 == 1 {
                    *xj += g;
                }
            }
            g *= gamma;
        }
        let synaptic: f64 = params
            .weight_row(i)
            .iter()
            .zip(&x)
            .map(|(w, x)| w * x)
            .sum();
        // (1 - gamma^q) / (1 - gamma) as a finite geometric sum stays exact at gamma = 0.
        let geo: f64 = (0..steps).map(|e| gamma.powi(e)).sum();
        let geo2: f64 = (0..steps).map(|e| gamma.powi(2 * e)).sum();
        drift[i] = synaptic + params.inputs[i] * geo;
        variance[i] = sb2 * geo2;
    }
}

/// Reduced thresholds `y_i = (theta - C_i) / sigma_i` for a packed history.
pub(crate) fn reduced_thresholds_into(patterns: &[u64], params: &NetworkParams, y: &mut [f64]) {
    let n = params.n_neurons;
    let mut drift = vec![0.0; n];
    let mut variance = vec![0.0; n];
    moments_into(patterns, params, &mut drift, &mut variance);
    for i in 0..n {
        y[i] = (params.threshold - drift[i]) / variance[i].sqrt();
    }
}

fn check_next(next: &SpikingPattern, params: &NetworkParams) -> Result<()> {
    if next.n_neurons() != params.n_neurons {
        return Err(Error::DimensionMismatch(format!(
            "pattern has {} neurons, params have {}",
            next.n_neurons(),
            params.n_neurons
        )));
    }
    Ok(())
}

/// `P(omega(0) = next | history)`, a product of independent per-neuron factors.
pub fn transition_prob(
    next: &SpikingPattern,
    history: &SpikeBlock,
    params: &NetworkParams,
) -> Result<f64> {
    check_next(next, params)?;
    check_history(history, params)?;
    let mut y = vec![0.0; params.n_neurons];
    reduced_thresholds_into(history.patterns(), params, &mut y);
    Ok(y.iter()
        .enumerate()
        .map(|(i, &yi)| if next.fires(i) { tail(yi) } else { tail(-yi) })
        .product())
}

/// `psi = log P(omega(0) = next | history)`, evaluated in log space.
pub fn potential(
    next: &SpikingPattern,
    history: &SpikeBlock,
    params: &NetworkParams,
) -> Result<f64> {
    check_next(next, params)?;
    check_history(history, params)?;
    let mut y = vec![0.0; params.n_neurons];
    reduced_thresholds_into(history.patterns(), params, &mut y);
    Ok(potential_from_thresholds(next.bits(), &y))
}

#[inline]
pub(crate) fn potential_from_thresholds(next: u64, y: &[f64]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            if (next >> i) & 1 == 1 {
                log_tail(yi)
            } else {
                log_tail(-yi)
            }
        })
        .sum()
}

/// Per-neuron bounds `C_i^- <= C_i <= C_i^+` over all histories.
pub fn drift_envelope(params: &NetworkParams) -> (Vec<f64>, Vec<f64>) {
    let inv = 1.0 / (1.0 - params.leak);
    let mut lo = Vec::with_capacity(params.n_neurons);
    let mut hi = Vec::with_capacity(params.n_neurons);
    for i in 0..params.n_neurons {
        let row = params.weight_row(i);
        let neg: f64 = row.iter().filter(|w| **w < 0.0).sum();
        let pos: f64 = row.iter().filter(|w| **w > 0.0).sum();
        // The input term ranges over [I, I/(1-gamma)] (or the reverse when I < 0).
        let input = params.inputs[i];
        lo.push(neg * inv + input.min(input * inv));
        hi.push(pos * inv + input.max(input * inv));
    }
    (lo, hi)
}

/// Regularity constants of the transition kernel.
///
/// `k_const` bounds the variation of `g_0` and `k_prime` that of `log g_0`:
/// histories agreeing on their last `k` patterns give values differing by at
/// most `K gamma^k` and `K' gamma^k` respectively. `[a_bound, b_bound]`
/// contains every reduced threshold `(theta - C_i) / sigma_i`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct VariationConstants {
    pub k_const: f64,
    pub k_prime: f64,
    pub a_bound: f64,
    pub b_bound: f64,
}

pub fn variation_constants(params: &NetworkParams) -> VariationConstants {
    let gamma = params.leak;
    let sb = params.noise_amp;
    let (a, b) = reduced_threshold_range(params);
    let total: f64 = params.weights.iter().map(|w| w.abs()).sum::<f64>()
        + params.inputs.iter().map(|x| x.abs()).sum::<f64>();
    let k_const = (2.0 / PI).sqrt() / sb * ((1.0 + gamma) / (1.0 - gamma)).sqrt() * total;
    let k_prime = (2.0 * PI).sqrt() * gauss_hazard(b) * k_const;
    VariationConstants {
        k_const,
        k_prime,
        a_bound: a,
        b_bound: b,
    }
}

/// Smallest and largest attainable `(theta - C_i) / sigma_i` over neurons and histories.
fn reduced_threshold_range(params: &NetworkParams) -> (f64, f64) {
    let (c_lo, c_hi) = drift_envelope(params);
    let sb = params.noise_amp;
    let shrink = (1.0 - params.leak * params.leak).sqrt();
    let theta = params.threshold;
    // sigma_i ranges over [sigma_B, sigma_B / shrink]; the extreme ratio
    // depends on the sign of the numerator.
    let a = c_hi
        .iter()
        .map(|c| {
            let d = (theta - c) / sb;
            d.min(d * shrink)
        })
        .fold(f64::INFINITY, f64::min);
    let b = c_lo
        .iter()
        .map(|c| {
            let d = (theta - c) / sb;
            d.max(d * shrink)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    (a, b)
}

/// Per-step bounds on the probability that a neuron stays silent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NoFireBounds {
    pub pi_minus: f64,
    pub pi_plus: f64,
}

impl NoFireBounds {
    /// `1 - pi(y)` is increasing in `y`, so its extremes over the admissible
    /// range `[a, b]` sit at the endpoints.
    pub fn from_params(params: &NetworkParams) -> Self {
        let (a, b) = reduced_threshold_range(params);
        NoFireBounds {
            pi_minus: tail(-a),
            pi_plus: tail(-b),
        }
    }

    /// `(Pi_-^m, Pi_+^m)`.
    pub fn over(&self, horizon: u32) -> (f64, f64) {
        let m = horizon as i32;
        (self.pi_minus.powi(m), self.pi_plus.powi(m))
    }
}

/// Bounds on the probability that a given neuron stays silent for `horizon`
/// consecutive steps in the stationary regime.
pub fn no_fire_bounds(params: &NetworkParams, horizon: u32) -> Result<(f64, f64)> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    Ok(NoFireBounds::from_params(params).over(horizon))
}
