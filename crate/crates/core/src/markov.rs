//! Range-`R` Markov approximation of the spike-train statistics.
//!
//! States are words of `R` patterns. Each word `w'` has exactly `2^N` legal
//! successors, one per next pattern `a`, and the transition weight is
//! `exp(psi(W))` where `W` is the `(R+1)`-block `w'` followed by `a`. Only the
//! legal entries are stored, row-major: entry `w' * 2^N + a`.
//!
//! The same storage holds unnormalized chains built from arbitrary potentials;
//! [`stationary`] handles both through power iteration for the Perron
//! eigenvalue `s` and its left/right eigenvectors `l`, `r`. The Gibbs measure
//! of a word is `l_w r_w` with `<l, r> = 1`, the pressure is `log s`, and the
//! induced Markov chain moves `w' -> w` with probability
//! `exp(psi) r_w / (s r_w')`.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{self, gauss_density, log_tail, moments_into, tail};
use crate::params::NetworkParams;
use crate::raster::{pack, successor, unpack, SpikeBlock};

/// Default cap on `N * R`, the number of bits in a word.
pub const DEFAULT_MAX_STATE_BITS: usize = 20;
/// Cap on `N * L` for enumerations over blocks of length `L`.
pub const MAX_BLOCK_BITS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsChain {
    n_neurons: usize,
    range: usize,
    log_weights: Vec<f64>,
    normalized: bool,
    params: Option<NetworkParams>,
}

pub(crate) fn check_state_bits(n_neurons: usize, range: usize, cap: usize) -> Result<()> {
    if range == 0 {
        return Err(Error::InvalidArgument(
            "range must be at least 1 (the potential needs one history pattern)".into(),
        ));
    }
    let bits = n_neurons * range;
    if bits > cap || n_neurons * (range + 1) > 62 {
        return Err(Error::StateSpaceTooLarge {
            bits,
            cap,
            bytes: 8u128 << (n_neurons * (range + 1)).min(120),
        });
    }
    Ok(())
}

impl GibbsChain {
    /// Wraps raw log-weights laid out row-major (`w' * 2^N + a`).
    pub fn from_log_weights(
        n_neurons: usize,
        range: usize,
        log_weights: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        check_state_bits(n_neurons, range, 62)?;
        let expected = 1usize << (n_neurons * (range + 1));
        if log_weights.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: log_weights.len(),
            });
        }
        if let Some(x) = log_weights.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(*x));
        }
        Ok(GibbsChain {
            n_neurons,
            range,
            log_weights,
            normalized,
            params: None,
        })
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn range(&self) -> usize {
        self.range
    }

    pub fn n_words(&self) -> usize {
        1 << (self.n_neurons * self.range)
    }

    pub fn n_patterns(&self) -> usize {
        1 << self.n_neurons
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    /// Network parameters the chain was built from, if any.
    pub fn params(&self) -> Option<&NetworkParams> {
        self.params.as_ref()
    }

    /// Row-major log-weights, `2^N` entries per word.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    #[inline]
    pub fn log_weight(&self, word: u64, next: u64) -> f64 {
        self.log_weights[((word as usize) << self.n_neurons) | next as usize]
    }

    /// Log-weights of the successors of `word`, indexed by the next pattern.
    pub fn row(&self, word: u64) -> &[f64] {
        let k = self.n_patterns();
        &self.log_weights[word as usize * k..(word as usize + 1) * k]
    }

    /// `psi` of an `(R+1)`-block given by its code.
    #[inline]
    pub fn psi(&self, block: u64) -> f64 {
        let bits = self.n_neurons * self.range;
        self.log_weight(block & ((1u64 << bits) - 1), block >> bits)
    }

    #[inline]
    pub fn successor(&self, word: u64, next: u64) -> u64 {
        successor(word, next, self.n_neurons, self.range)
    }

    /// Every stored transition as `(word, successor, log-weight)`.
    pub fn entries(&self) -> impl Iterator<Item = (u64, u64, f64)> + '_ {
        let k = self.n_patterns();
        self.log_weights.iter().enumerate().map(move |(idx, &lw)| {
            let w = (idx / k) as u64;
            let a = (idx % k) as u64;
            (w, self.successor(w, a), lw)
        })
    }
}

/// Builds the normalized range-`R` chain of the network, capped at
/// [`DEFAULT_MAX_STATE_BITS`].
pub fn build_chain(params: &NetworkParams, range: usize) -> Result<GibbsChain> {
    build_chain_capped(params, range, DEFAULT_MAX_STATE_BITS)
}

pub fn build_chain_capped(
    params: &NetworkParams,
    range: usize,
    max_state_bits: usize,
) -> Result<GibbsChain> {
    let n = params.n_neurons;
    check_state_bits(n, range, max_state_bits)?;
    let k = 1usize << n;
    let mut log_weights = vec![0.0; k << (n * range)];
    log_weights.par_chunks_mut(k).enumerate().for_each_init(
        || (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]),
        |(drift, var, lp1, lp0), (w, row)| {
            let hist = unpack(w as u64, n, range);
            moments_into(&hist, params, drift, var);
            for i in 0..n {
                let y = (params.threshold - drift[i]) / var[i].sqrt();
                lp1[i] = log_tail(y);
                lp0[i] = log_tail(-y);
            }
            for (a, slot) in row.iter_mut().enumerate() {
                *slot = (0..n)
                    .map(|i| if (a >> i) & 1 == 1 { lp1[i] } else { lp0[i] })
                    .sum();
            }
        },
    );
    Ok(GibbsChain {
        n_neurons: n,
        range,
        log_weights,
        normalized: true,
        params: Some(params.clone()),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    /// Stop once successive iterates differ by less than this in max norm.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            tol: 1e-12,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryAnalysis {
    /// Left Perron vector, scaled so that `<l, r> = 1`.
    pub left_vec: Vec<f64>,
    /// Right Perron vector, scaled to mean 1.
    pub right_vec: Vec<f64>,
    /// Invariant measure on words, `l_w r_w`.
    pub measure: Vec<f64>,
    /// Perron eigenvalue `s`.
    pub eigenvalue: f64,
    /// `log s`.
    pub pressure: f64,
    pub entropy: f64,
    pub rates: Vec<f64>,
    pub sweeps: usize,
    pub residual: f64,
}

impl StationaryAnalysis {
    /// Transition probabilities of the induced Markov chain, row-major like the chain.
    pub fn transition_probs(&self, chain: &GibbsChain) -> Vec<f64> {
        let k = chain.n_patterns();
        let s = self.eigenvalue;
        let shift = max_log_weight(chain);
        chain
            .log_weights()
            .iter()
            .enumerate()
            .map(|(idx, &lw)| {
                let w = (idx / k) as u64;
                let next = chain.successor(w, (idx % k) as u64);
                // s is stored unshifted; divide in log space to avoid overflow.
                ((lw - shift).exp() / (s * (-shift).exp())) * self.right_vec[next as usize]
                    / self.right_vec[w as usize]
            })
            .collect()
    }
}

fn max_log_weight(chain: &GibbsChain) -> f64 {
    chain
        .log_weights()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn stationary(chain: &GibbsChain) -> Result<StationaryAnalysis> {
    stationary_with(chain, PowerOptions::default())
}

pub fn stationary_with(chain: &GibbsChain, opts: PowerOptions) -> Result<StationaryAnalysis> {
    let n_words = chain.n_words();
    let k = chain.n_patterns();
    // Shifting all log-weights by their max keeps exp() finite; the
    // eigenvalue scales by exp(-shift).
    let shift = max_log_weight(chain);
    let weights: Vec<f64> = chain
        .log_weights()
        .iter()
        .map(|lw| (lw - shift).exp())
        .collect();

    let (left, left_sweeps, left_res) = power_left(chain, &weights, opts)?;
    let (right, right_sweeps, right_res) = power_right(chain, &weights, opts)?;

    // Rayleigh quotient <l, L r> / <l, r>.
    let mut lr = 0.0;
    let mut llr = 0.0;
    for w in 0..n_words {
        let row = &weights[w * k..(w + 1) * k];
        let lrow: f64 = row
            .iter()
            .enumerate()
            .map(|(a, x)| x * right[chain.successor(w as u64, a as u64) as usize])
            .sum();
        llr += left[w] * lrow;
        lr += left[w] * right[w];
    }
    let scaled_s = llr / lr;
    let pressure = scaled_s.ln() + shift;
    let eigenvalue = pressure.exp();

    let mean_r = right.iter().sum::<f64>() / n_words as f64;
    let right_vec: Vec<f64> = right.iter().map(|x| x / mean_r).collect();
    let norm: f64 = left.iter().zip(&right_vec).map(|(l, r)| l * r).sum();
    let left_vec: Vec<f64> = left.iter().map(|l| l / norm).collect();
    let measure: Vec<f64> = left_vec
        .iter()
        .zip(&right_vec)
        .map(|(l, r)| l * r)
        .collect();

    let mut analysis = StationaryAnalysis {
        left_vec,
        right_vec,
        measure,
        eigenvalue,
        pressure,
        entropy: 0.0,
        rates: vec![0.0; chain.n_neurons()],
        sweeps: left_sweeps.max(right_sweeps),
        residual: left_res.max(right_res),
    };

    let windows = window_measure(&analysis, chain);
    let mut mean_psi = 0.0;
    let mut rates = vec![0.0; chain.n_neurons()];
    for (idx, &p) in windows.iter().enumerate() {
        mean_psi += p * chain.log_weights()[idx];
        let a = idx % k;
        for (i, r) in rates.iter_mut().enumerate() {
            if (a >> i) & 1 == 1 {
                *r += p;
            }
        }
    }
    analysis.entropy = pressure - mean_psi;
    analysis.rates = rates;
    Ok(analysis)
}

fn power_left(
    chain: &GibbsChain,
    weights: &[f64],
    opts: PowerOptions,
) -> Result<(Vec<f64>, usize, f64)> {
    let n_words = chain.n_words();
    let k = chain.n_patterns();
    let mut cur = vec![1.0 / n_words as f64; n_words];
    let mut next = vec![0.0; n_words];
    let mut residual = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (w, &lw) in cur.iter().enumerate() {
            if lw == 0.0 {
                continue;
            }
            let row = &weights[w * k..(w + 1) * k];
            for (a, &x) in row.iter().enumerate() {
                next[chain.successor(w as u64, a as u64) as usize] += lw * x;
            }
        }
        let total: f64 = next.iter().sum();
        residual = 0.0;
        for (c, x) in cur.iter_mut().zip(&next) {
            let v = x / total;
            residual = f64::max(residual, (v - *c).abs());
            *c = v;
        }
        if residual < opts.tol {
            return Ok((cur, sweep, residual));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_sweeps,
        residual,
    })
}

fn power_right(
    chain: &GibbsChain,
    weights: &[f64],
    opts: PowerOptions,
) -> Result<(Vec<f64>, usize, f64)> {
    let n_words = chain.n_words();
    let k = chain.n_patterns();
    let mut cur = vec![1.0; n_words];
    let mut next = vec![0.0; n_words];
    let mut residual = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        for (w, slot) in next.iter_mut().enumerate() {
            let row = &weights[w * k..(w + 1) * k];
            *slot = row
                .iter()
                .enumerate()
                .map(|(a, x)| x * cur[chain.successor(w as u64, a as u64) as usize])
                .sum();
        }
        let mean = next.iter().sum::<f64>() / n_words as f64;
        residual = 0.0;
        for (c, x) in cur.iter_mut().zip(&next) {
            let v = x / mean;
            residual = f64::max(residual, (v - *c).abs());
            *c = v;
        }
        if residual < opts.tol {
            return Ok((cur, sweep, residual));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_sweeps,
        residual,
    })
}

/// Gibbs probability of every `(R+1)`-window, in the chain's row-major layout.
pub fn window_measure(analysis: &StationaryAnalysis, chain: &GibbsChain) -> Vec<f64> {
    let k = chain.n_patterns();
    let trans = analysis.transition_probs(chain);
    trans
        .iter()
        .enumerate()
        .map(|(idx, t)| analysis.measure[idx / k] * t)
        .collect()
}

/// Probability of every block of `len` patterns, indexed by block code
/// (earliest pattern in the lowest bits).
pub fn block_measure(
    analysis: &StationaryAnalysis,
    chain: &GibbsChain,
    len: usize,
) -> Result<Vec<f64>> {
    let n = chain.n_neurons();
    let r = chain.range();
    if len == 0 {
        return Err(Error::InvalidArgument(
            "block length must be at least 1".into(),
        ));
    }
    if n * len > MAX_BLOCK_BITS.max(n * r) {
        return Err(Error::StateSpaceTooLarge {
            bits: n * len,
            cap: MAX_BLOCK_BITS,
            bytes: 8u128 << (n * len).min(120),
        });
    }
    if len <= r {
        let mut out = vec![0.0; 1 << (n * len)];
        let mask = (1u64 << (n * len)) - 1;
        for (w, &p) in analysis.measure.iter().enumerate() {
            out[(w as u64 & mask) as usize] += p;
        }
        return Ok(out);
    }
    let k = chain.n_patterns();
    let trans = analysis.transition_probs(chain);
    let mut cur = analysis.measure.clone();
    for l in r..len {
        let mut next = vec![0.0; cur.len() << n];
        let shift = n * (l - r);
        for (b, &p) in cur.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let w = (b >> shift) as u64;
            for a in 0..k {
                next[b | (a << (n * l))] = p * trans[(w as usize) * k + a];
            }
        }
        cur = next;
    }
    Ok(cur)
}

fn check_block(chain: &GibbsChain, block: &SpikeBlock) -> Result<()> {
    if block.n_neurons() != chain.n_neurons() {
        return Err(Error::DimensionMismatch(format!(
            "block has {} neurons, chain has {}",
            block.n_neurons(),
            chain.n_neurons()
        )));
    }
    if block.len() < chain.range() {
        return Err(Error::LengthMismatch {
            expected: chain.range(),
            actual: block.len(),
        });
    }
    Ok(())
}

/// Chapman-Kolmogorov: `mu(w(0)) * prod_n T(w(n), w(n+1))` along the block.
pub fn block_probability(
    analysis: &StationaryAnalysis,
    chain: &GibbsChain,
    block: &SpikeBlock,
) -> Result<f64> {
    check_block(chain, block)?;
    let n = chain.n_neurons();
    let r = chain.range();
    let pats = block.patterns();
    let mut w = pack(&pats[..r], n);
    let mut p = analysis.measure[w as usize];
    let shift = max_log_weight(chain);
    let scaled_s = (analysis.pressure - shift).exp();
    for &a in &pats[r..] {
        let next = chain.successor(w, a);
        p *= (chain.log_weight(w, a) - shift).exp() / scaled_s * analysis.right_vec[next as usize]
            / analysis.right_vec[w as usize];
        w = next;
    }
    Ok(p)
}

/// Kullback-Leibler divergence rate `d(mu_coarse, mu_fine) = P(psi_fine) -
/// mu_coarse(psi_fine) - h(mu_coarse)`.
///
/// The coarse measure is extended to `(R_fine + 1)`-blocks by Chapman-Kolmogorov
/// before averaging the fine potential.
pub fn kl_divergence(
    coarse: &StationaryAnalysis,
    coarse_chain: &GibbsChain,
    fine_chain: &GibbsChain,
) -> Result<f64> {
    if coarse_chain.n_neurons() != fine_chain.n_neurons() {
        return Err(Error::DimensionMismatch(format!(
            "coarse chain has {} neurons, fine chain has {}",
            coarse_chain.n_neurons(),
            fine_chain.n_neurons()
        )));
    }
    if coarse_chain.range() > fine_chain.range() {
        return Err(Error::InvalidArgument(format!(
            "coarse range {} exceeds fine range {}",
            coarse_chain.range(),
            fine_chain.range()
        )));
    }
    if let (Some(a), Some(b)) = (coarse_chain.params(), fine_chain.params()) {
        if a != b {
            return Err(Error::InvalidArgument(
                "chains were built from different parameters".into(),
            ));
        }
    }
    let fine_pressure = if fine_chain.normalized() {
        0.0
    } else {
        stationary(fine_chain)?.pressure
    };
    let blocks = block_measure(coarse, coarse_chain, fine_chain.range() + 1)?;
    let mean_fine: f64 = blocks
        .iter()
        .enumerate()
        .map(|(b, &p)| p * fine_chain.psi(b as u64))
        .sum();
    Ok(fine_pressure - mean_fine - coarse.entropy)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GibbsRatioBounds {
    pub c1: f64,
    pub c2: f64,
    /// `(length, min ratio, max ratio)` per cylinder length.
    pub per_length: Vec<(usize, f64, f64)>,
}

/// Extremes of `mu([omega_0^{L-1}]) / exp(-L P + sum_k psi(T^k omega))` over
/// all cylinders of length `1..=max_len` and all `R`-pattern pasts preceding them.
pub fn gibbs_ratio_bounds(
    analysis: &StationaryAnalysis,
    chain: &GibbsChain,
    max_len: usize,
) -> Result<GibbsRatioBounds> {
    let n = chain.n_neurons();
    let r = chain.range();
    if max_len < r {
        return Err(Error::InvalidArgument(format!(
            "max_len {max_len} must be at least the range {r}"
        )));
    }
    if n * (r + max_len) > MAX_BLOCK_BITS {
        return Err(Error::StateSpaceTooLarge {
            bits: n * (r + max_len),
            cap: MAX_BLOCK_BITS,
            bytes: 8u128 << (n * (r + max_len)).min(120),
        });
    }
    let window_mask = (1u64 << (n * (r + 1))) - 1;
    let hist_bits = n * r;
    // psi sums for every (past, cylinder) sequence, grown one pattern at a time.
    let mut sums = vec![0.0; 1 << hist_bits];
    let mut per_length = Vec::with_capacity(max_len);
    let (mut c1, mut c2) = (f64::INFINITY, f64::NEG_INFINITY);
    for len in 1..=max_len {
        let seq_bits = n * (r + len);
        let prev_bits = seq_bits - n;
        let mut next = vec![0.0; 1 << seq_bits];
        for (seq, slot) in next.iter_mut().enumerate() {
            let seq = seq as u64;
            let prev = seq & ((1u64 << prev_bits) - 1);
            let window = (seq >> (n * (len - 1))) & window_mask;
            *slot = sums[prev as usize] + chain.psi(window);
        }
        sums = next;
        let cyl = block_measure(analysis, chain, len)?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (seq, &s) in sums.iter().enumerate() {
            let c = seq >> hist_bits;
            let log_ratio = cyl[c].ln() - s + len as f64 * analysis.pressure;
            lo = lo.min(log_ratio);
            hi = hi.max(log_ratio);
        }
        let (lo, hi) = (lo.exp(), hi.exp());
        per_length.push((len, lo, hi));
        c1 = c1.min(lo);
        c2 = c2.max(hi);
    }
    Ok(GibbsRatioBounds { c1, c2, per_length })
}

/// Stationary law of one neuron's membrane potential: a Gaussian mixture
/// weighted by the invariant measure of the histories.
#[derive(Debug, Clone, PartialEq)]
pub struct MembraneMixture {
    /// `(weight, mean, standard deviation)` per history word.
    pub components: Vec<(f64, f64, f64)>,
    /// `[C^-, C^+]` envelope of the means, widened by 8 of the largest standard deviations.
    pub support: (f64, f64),
}

impl MembraneMixture {
    pub fn new(analysis: &StationaryAnalysis, chain: &GibbsChain, neuron: usize) -> Result<Self> {
        let params = chain
            .params()
            .ok_or_else(|| Error::InvalidArgument("chain carries no network parameters".into()))?;
        let n = chain.n_neurons();
        if neuron >= n {
            return Err(Error::OutOfRange {
                what: "neuron index",
                value: neuron as i64,
                limit: n as i64 - 1,
            });
        }
        let mut drift = vec![0.0; n];
        let mut var = vec![0.0; n];
        let components = analysis
            .measure
            .iter()
            .enumerate()
            .map(|(w, &mu)| {
                let hist = unpack(w as u64, n, chain.range());
                moments_into(&hist, params, &mut drift, &mut var);
                (mu, drift[neuron], var[neuron].sqrt())
            })
            .collect();
        let (lo, hi) = kernel::drift_envelope(params);
        let sd_max = params.noise_amp / (1.0 - params.leak * params.leak).sqrt();
        Ok(MembraneMixture {
            components,
            support: (lo[neuron] - 8.0 * sd_max, hi[neuron] + 8.0 * sd_max),
        })
    }

    pub fn density(&self, v: f64) -> f64 {
        self.components
            .iter()
            .map(|&(w, m, s)| w * gauss_density((v - m) / s) / s)
            .sum()
    }

    pub fn cdf(&self, v: f64) -> f64 {
        self.components
            .iter()
            .map(|&(w, m, s)| w * tail((m - v) / s))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|&(w, m, _)| w * m).sum()
    }

    /// Evenly spaced grid over [`MembraneMixture::support`].
    pub fn auto_grid(&self, points: usize) -> Vec<f64> {
        let (lo, hi) = self.support;
        let points = points.max(2);
        (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect()
    }
}

/// Density of neuron `neuron`'s stationary membrane potential on `grid`.
pub fn membrane_density(
    analysis: &StationaryAnalysis,
    chain: &GibbsChain,
    neuron: usize,
    grid: &[f64],
) -> Result<Vec<f64>> {
    if let Some(x) = grid.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(*x));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("grid must be sorted".into()));
    }
    let mix = MembraneMixture::new(analysis, chain, neuron)?;
    Ok(grid.iter().map(|&v| mix.density(v)).collect())
}

/// Trapezoid rule on a sorted grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Text dump: header `N=<n> R=<r> normalized=<bool>`, then one
/// `word successor log_weight` line per legal transition.
pub fn write_chain<W: Write>(chain: &GibbsChain, mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "N={} R={} normalized={}",
        chain.n_neurons(),
        chain.range(),
        chain.normalized()
    )?;
    for (w, next, lw) in chain.entries() {
        writeln!(out, "{w} {next} {lw:e}")?;
    }
    Ok(())
}

pub fn parse_chain(text: &str) -> Result<GibbsChain> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty chain file".into(),
    })?;
    let (mut n, mut r, mut normalized) = (None, None, None);
    for field in header.split_whitespace() {
        let bad = || Error::Parse {
            line: 1,
            message: format!("malformed header field `{field}`"),
        };
        let (key, value) = field.split_once('=').ok_or_else(bad)?;
        match key {
            "N" => n = Some(value.parse::<usize>().map_err(|_| bad())?),
            "R" => r = Some(value.parse::<usize>().map_err(|_| bad())?),
            "normalized" => normalized = Some(value.parse::<bool>().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    let (n, r) = match (n, r) {
        (Some(n), Some(r)) => (n, r),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "header needs N and R".into(),
            })
        }
    };
    check_state_bits(n, r, 62)?;
    let k = 1usize << n;
    let mut log_weights = vec![f64::NAN; k << (n * r)];
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let bad = |m: &str| Error::Parse {
            line: lineno,
            message: m.to_string(),
        };
        let mut it = line.split_whitespace();
        let (Some(w), Some(next), Some(lw), None) = (it.next(), it.next(), it.next(), it.next())
        else {
            return Err(bad("expected `word successor log_weight`"));
        };
        let w: u64 = w.parse().map_err(|_| bad("bad word"))?;
        let next: u64 = next.parse().map_err(|_| bad("bad successor"))?;
        let lw: f64 = lw.parse().map_err(|_| bad("bad log weight"))?;
        if w as usize >= (1 << (n * r)) {
            return Err(bad("word out of range"));
        }
        let a = next >> (n * (r - 1));
        if a >= k as u64 || successor(w, a, n, r) != next {
            return Err(bad("illegal transition"));
        }
        log_weights[((w as usize) << n) | a as usize] = lw;
    }
    if log_weights.iter().any(|x| x.is_nan()) {
        return Err(Error::Parse {
            line: 0,
            message: "chain file is missing transitions".into(),
        });
    }
    GibbsChain::from_log_weights(n, r, log_weights, normalized.unwrap_or(false))
}
