//! Seeded simulation of the noisy leaky integrate-and-fire network
//!
//! ```text
//! V_i(t+1) = gamma V_i(t) (1 - Z_i(t)) + sum_j W_ij Z_j(t) + I_i + sigma_B B_i(t)
//! ```
//!
//! with `Z_i(t) = [V_i(t) >= theta]` and `B_i(t)` i.i.d. standard normal.
//!
//! Noise comes from a ChaCha8 stream seeded with the run seed; each uniform is
//! the top 53 bits of one `u64` draw, and normals are produced in pairs by the
//! Marsaglia polar method. Rasters are therefore reproducible bit for bit
//! across platforms for a given `(params, steps, seed, burn_in)`.

use std::io::{self, Write};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::NetworkParams;
use crate::raster::{Raster, SpikeBlock, SpikingPattern};

/// Largest trace matrix `run` will allocate.
pub const MAX_TRACE_BYTES: u128 = 4 << 30;

#[derive(Debug, Clone)]
struct GaussianSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    fn new(seed: u64) -> Self {
        GaussianSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    #[inline]
    fn uniform_pm1(&mut self) -> f64 {
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        2.0 * u - 1.0
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = self.uniform_pm1();
            let v = self.uniform_pm1();
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }
}

/// Membrane potentials at time `time`, plus the noise stream.
#[derive(Debug, Clone)]
pub struct SimState {
    pub potentials: Vec<f64>,
    pub time: i64,
    noise: GaussianSource,
}

impl SimState {
    /// `V(0) = 0` at time 0.
    pub fn new(params: &NetworkParams, seed: u64) -> Self {
        SimState {
            potentials: vec![0.0; params.n_neurons],
            time: 0,
            noise: GaussianSource::new(seed),
        }
    }

    pub fn with_potentials(potentials: Vec<f64>, time: i64, seed: u64) -> Self {
        SimState {
            potentials,
            time,
            noise: GaussianSource::new(seed),
        }
    }
}

/// Firing state `Z(V)` of the given potentials.
pub fn firing_pattern(potentials: &[f64], threshold: f64) -> u64 {
    potentials
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold)
        .fold(0u64, |acc, (i, _)| acc | (1 << i))
}

/// Advances one step, drawing fresh noise. Returns the pattern `Z(V(t))` of
/// the state before the update.
pub fn step(state: &mut SimState, params: &NetworkParams) -> SpikingPattern {
    let n = params.n_neurons;
    let mut noise = [0.0f64; crate::params::MAX_NEURONS];
    for z in noise.iter_mut().take(n) {
        *z = state.noise.next();
    }
    step_with_noise(state, params, &noise[..n])
}

/// One update with caller-supplied standard-normal variates (one per neuron).
pub fn step_with_noise(
    state: &mut SimState,
    params: &NetworkParams,
    noise: &[f64],
) -> SpikingPattern {
    let n = params.n_neurons;
    debug_assert_eq!(noise.len(), n);
    let fired = firing_pattern(&state.potentials, params.threshold);
    for (i, &z) in noise.iter().enumerate().take(n) {
        let v = state.potentials[i];
        let leak = if (fired >> i) & 1 == 1 {
            0.0
        } else {
            params.leak * v
        };
        let synaptic: f64 = params
            .weight_row(i)
            .iter()
            .enumerate()
            .filter(|(j, _)| (fired >> j) & 1 == 1)
            .map(|(_, w)| w)
            .sum();
        state.potentials[i] = leak + synaptic + params.inputs[i] + params.noise_amp * z;
    }
    state.time += 1;
    SpikingPattern::new(n, fired).expect("pattern fits the network")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub raster: Raster,
    /// Row-major `T x N`: `traces[t * N + i]` is the potential whose firing
    /// state is bit `i` of raster pattern `t`.
    pub traces: Option<Vec<f64>>,
}

impl SimOutput {
    pub fn trace(&self, t: usize) -> Option<&[f64]> {
        let n = self.raster.n_neurons();
        self.traces.as_ref().map(|tr| &tr[t * n..(t + 1) * n])
    }
}

/// Simulates from `V(0) = 0`, discards `burn_in` steps, then records `steps`
/// patterns. The raster's time labels start at `burn_in`.
pub fn run(
    params: &NetworkParams,
    steps: usize,
    seed: u64,
    burn_in: usize,
    keep_traces: bool,
) -> Result<SimOutput> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let n = params.n_neurons;
    if keep_traces {
        let bytes = steps as u128 * n as u128 * 8;
        if bytes > MAX_TRACE_BYTES {
            return Err(Error::InvalidArgument(format!(
                "trace storage of {bytes} bytes exceeds the {MAX_TRACE_BYTES}-byte limit"
            )));
        }
    }
    let mut state = SimState::new(params, seed);
    for _ in 0..burn_in {
        step(&mut state, params);
    }
    let mut patterns = Vec::with_capacity(steps);
    let mut traces = keep_traces.then(|| Vec::with_capacity(steps * n));
    for _ in 0..steps {
        if let Some(tr) = traces.as_mut() {
            tr.extend_from_slice(&state.potentials);
        }
        patterns.push(step(&mut state, params).bits());
    }
    Ok(SimOutput {
        raster: SpikeBlock::new(n, burn_in as i64, patterns)?,
        traces,
    })
}

/// CSV with header `time,V_1,...,V_N`.
pub fn write_traces<W: Write>(output: &SimOutput, mut out: W) -> io::Result<()> {
    let n = output.raster.n_neurons();
    let traces = output
        .traces
        .as_ref()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "simulation kept no traces"))?;
    let header: Vec<String> = (1..=n).map(|i| format!("V_{i}")).collect();
    writeln!(out, "time,{}", header.join(","))?;
    for (t, row) in traces.chunks(n).enumerate() {
        write!(out, "{}", output.raster.start() + t as i64)?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
