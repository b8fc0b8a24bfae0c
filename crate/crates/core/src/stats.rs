//! Empirical estimators computed by time averages over a raster.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::{GibbsChain, StationaryAnalysis};
use crate::raster::{pack, Raster};

/// Sliding-window counts of blocks of `block_len` patterns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmpiricalMeasure {
    pub n_neurons: usize,
    pub block_len: usize,
    /// Block code (earliest pattern in the low bits) to count.
    pub counts: BTreeMap<u64, u64>,
    pub total: u64,
}

impl EmpiricalMeasure {
    pub fn frequency(&self, code: u64) -> f64 {
        self.counts.get(&code).copied().unwrap_or(0) as f64 / self.total as f64
    }

    pub fn frequencies(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        let total = self.total as f64;
        self.counts
            .iter()
            .map(move |(&c, &k)| (c, k as f64 / total))
    }

    /// Plug-in block entropy `-sum f log f` in nats.
    pub fn entropy(&self) -> f64 {
        -self.frequencies().map(|(_, f)| f * f.ln()).sum::<f64>()
    }

    /// Dense frequency vector indexed by block code.
    pub fn dense(&self) -> Result<Vec<f64>> {
        let bits = self.n_neurons * self.block_len;
        if bits > crate::markov::MAX_BLOCK_BITS {
            return Err(Error::StateSpaceTooLarge {
                bits,
                cap: crate::markov::MAX_BLOCK_BITS,
                bytes: 8u128 << bits,
            });
        }
        let mut out = vec![0.0; 1 << bits];
        for (c, f) in self.frequencies() {
            out[c as usize] = f;
        }
        Ok(out)
    }
}

fn too_short(len: usize, needed: usize) -> Error {
    Error::InvalidArgument(format!(
        "raster of length {len} is too short (needs at least {needed})"
    ))
}

/// Codes of every window of `n` consecutive patterns, in time order.
fn window_codes(raster: &Raster, n: usize) -> Result<impl Iterator<Item = u64> + '_> {
    let nn = raster.n_neurons();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "block length must be at least 1".into(),
        ));
    }
    if nn * n > 64 {
        return Err(Error::OutOfRange {
            what: "block bits",
            value: (nn * n) as i64,
            limit: 64,
        });
    }
    if raster.len() < n {
        return Err(too_short(raster.len(), n));
    }
    let pats = raster.patterns();
    let top = nn * (n - 1);
    let first = pack(&pats[..n], nn);
    Ok(
        std::iter::once(first).chain(pats[n..].iter().scan(first, move |code, &p| {
            *code = (*code >> nn) | (p << top);
            Some(*code)
        })),
    )
}

pub fn empirical_blocks(raster: &Raster, n: usize) -> Result<EmpiricalMeasure> {
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for code in window_codes(raster, n)? {
        *counts.entry(code).or_insert(0) += 1;
        total += 1;
    }
    Ok(EmpiricalMeasure {
        n_neurons: raster.n_neurons(),
        block_len: n,
        counts,
        total,
    })
}

pub fn empirical_rates(raster: &Raster) -> Vec<f64> {
    let n = raster.n_neurons();
    let mut counts = vec![0u64; n];
    for &p in raster.patterns() {
        for (i, c) in counts.iter_mut().enumerate() {
            *c += (p >> i) & 1;
        }
    }
    counts
        .iter()
        .map(|&c| c as f64 / raster.len() as f64)
        .collect()
}

/// `out[i][j]` is the time average of `omega_i(t) omega_j(t + lag)`.
pub fn empirical_pairwise(raster: &Raster, lag: i64) -> Result<Vec<Vec<f64>>> {
    let n = raster.n_neurons();
    let shift = lag.unsigned_abs() as usize;
    if raster.len() < shift + 1 {
        return Err(too_short(raster.len(), shift + 1));
    }
    let pats = raster.patterns();
    let windows = pats.len() - shift;
    let mut counts = vec![vec![0u64; n]; n];
    for t in 0..windows {
        let (a, b) = if lag >= 0 {
            (pats[t], pats[t + shift])
        } else {
            (pats[t + shift], pats[t])
        };
        if a == 0 || b == 0 {
            continue;
        }
        for (i, row) in counts.iter_mut().enumerate() {
            if (a >> i) & 1 == 1 {
                for (j, c) in row.iter_mut().enumerate() {
                    *c += (b >> j) & 1;
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / windows as f64).collect())
        .collect())
}

/// Conditional block-entropy estimate `H_{n+1} - H_n`, clamped to `[0, N log 2]`.
pub fn entropy_rate(shorter: &EmpiricalMeasure, longer: &EmpiricalMeasure) -> Result<f64> {
    if shorter.n_neurons != longer.n_neurons || longer.block_len != shorter.block_len + 1 {
        return Err(Error::DimensionMismatch(format!(
            "entropy rate needs block lengths n and n+1 over the same neurons, got {} and {}",
            shorter.block_len, longer.block_len
        )));
    }
    let cap = shorter.n_neurons as f64 * std::f64::consts::LN_2;
    Ok((longer.entropy() - shorter.entropy()).clamp(0.0, cap))
}

/// Plug-in divergence `P(psi) - mu_emp(psi) - h_emp` of the raster against
/// a chain, with `h_emp` estimated at block length `R`.
pub fn empirical_kl(
    raster: &Raster,
    analysis: &StationaryAnalysis,
    chain: &GibbsChain,
) -> Result<f64> {
    if raster.n_neurons() != chain.n_neurons() {
        return Err(Error::DimensionMismatch(format!(
            "raster has {} neurons, chain has {}",
            raster.n_neurons(),
            chain.n_neurons()
        )));
    }
    let r = chain.range();
    let mut sum = 0.0;
    let mut count = 0u64;
    for code in window_codes(raster, r + 1)? {
        let psi = chain.psi(code);
        assert!(
            psi.is_finite(),
            "reference potential is finite on every block"
        );
        sum += psi;
        count += 1;
    }
    let h = entropy_rate(
        &empirical_blocks(raster, r)?,
        &empirical_blocks(raster, r + 1)?,
    )?;
    Ok(analysis.pressure - sum / count as f64 - h)
}
