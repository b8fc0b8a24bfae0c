//! Maximum-entropy models over spike blocks.
//!
//! A monomial is a product of spike indicators `omega_i(t)` with offsets
//! `t in -R..=0` (history at negative offsets, present at 0). A potential of
//! range `R` is a linear combination of monomials; on an `(R+1)`-block coded
//! as in [`crate::raster`], the pair `(i, t)` is bit `i + N (t + R)`.
//!
//! Fitting solves the convex dual `min_lambda P(lambda) - sum_l lambda_l C_l`,
//! whose gradient is `mu_lambda(phi_l) - C_l`.

use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::{
    block_measure, check_state_bits, stationary, GibbsChain, StationaryAnalysis,
    DEFAULT_MAX_STATE_BITS,
};
use crate::raster::SpikeBlock;

/// Product of spike indicators; pairs are kept sorted and distinct.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Monomial {
    pairs: Vec<(usize, i32)>,
}

impl Monomial {
    /// `pairs` are `(neuron, offset)` with `offset <= 0`.
    pub fn new(mut pairs: Vec<(usize, i32)>) -> Result<Self> {
        if let Some(&(_, t)) = pairs.iter().find(|(_, t)| *t > 0) {
            return Err(Error::OutOfRange {
                what: "monomial offset",
                value: t as i64,
                limit: 0,
            });
        }
        pairs.sort_unstable_by_key(|&(i, t)| (t, i));
        if pairs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(
                "monomial repeats a (neuron, offset) pair".into(),
            ));
        }
        Ok(Monomial { pairs })
    }

    /// The constant monomial `phi_0 = 1`.
    pub fn constant() -> Self {
        Monomial { pairs: Vec::new() }
    }

    /// `omega_i(0)`.
    pub fn rate(neuron: usize) -> Self {
        Monomial {
            pairs: vec![(neuron, 0)],
        }
    }

    /// `omega_i(0) omega_j(0)`.
    pub fn pair(i: usize, j: usize) -> Result<Self> {
        Self::new(vec![(i, 0), (j, 0)])
    }

    pub fn pairs(&self) -> &[(usize, i32)] {
        &self.pairs
    }

    pub fn order(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_constant(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Smallest range able to hold the monomial.
    pub fn depth(&self) -> usize {
        self.pairs
            .iter()
            .map(|&(_, t)| (-t) as usize)
            .max()
            .unwrap_or(0)
    }

    /// Time-translate whose latest offset is 0.
    pub fn anchored(&self) -> Self {
        let latest = self.pairs.iter().map(|&(_, t)| t).max().unwrap_or(0);
        Monomial {
            pairs: self.pairs.iter().map(|&(i, t)| (i, t - latest)).collect(),
        }
    }

    /// Shifts every offset by `dt`; fails if an offset would become positive.
    pub fn shifted(&self, dt: i32) -> Result<Self> {
        Self::new(self.pairs.iter().map(|&(i, t)| (i, t + dt)).collect())
    }

    /// Bit mask over an `(R+1)`-block of `n_neurons`.
    pub fn mask(&self, n_neurons: usize, range: usize) -> Result<u64> {
        let mut mask = 0u64;
        for &(i, t) in &self.pairs {
            if i >= n_neurons {
                return Err(Error::OutOfRange {
                    what: "monomial neuron",
                    value: i as i64,
                    limit: n_neurons as i64 - 1,
                });
            }
            if (-t) as usize > range {
                return Err(Error::OutOfRange {
                    what: "monomial offset",
                    value: t as i64,
                    limit: -(range as i64),
                });
            }
            mask |= 1u64 << (i + n_neurons * (t + range as i32) as usize);
        }
        Ok(mask)
    }

    fn from_mask(mask: u64, n_neurons: usize, range: usize) -> Self {
        let mut pairs: Vec<(usize, i32)> = (0..64)
            .filter(|b| (mask >> b) & 1 == 1)
            .map(|b| (b % n_neurons, (b / n_neurons) as i32 - range as i32))
            .collect();
        pairs.sort_unstable_by_key(|&(i, t)| (t, i));
        Monomial { pairs }
    }
}

impl fmt::Display for Monomial {
    /// Text form with 1-based neurons: `(1,0) (2,-1)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .pairs
            .iter()
            .map(|(i, t)| format!("({},{})", i + 1, t))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// Value of `m` on `block`, whose last pattern is offset 0.
pub fn eval_monomial(m: &Monomial, block: &SpikeBlock) -> Result<u8> {
    let len = block.len();
    for &(i, t) in m.pairs() {
        if i >= block.n_neurons() {
            return Err(Error::OutOfRange {
                what: "monomial neuron",
                value: i as i64,
                limit: block.n_neurons() as i64 - 1,
            });
        }
        if (-t) as usize >= len {
            return Err(Error::OutOfRange {
                what: "monomial offset",
                value: t as i64,
                limit: 1 - len as i64,
            });
        }
    }
    Ok(m.pairs()
        .iter()
        .all(|&(i, t)| block.spike(i, (len as i32 - 1 + t) as usize)) as u8)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpletPotential {
    n_neurons: usize,
    range: usize,
    terms: Vec<(Monomial, f64)>,
    #[serde(skip)]
    masks: Vec<u64>,
}

impl UpletPotential {
    pub fn new(n_neurons: usize, range: usize, terms: Vec<(Monomial, f64)>) -> Result<Self> {
        check_state_bits(n_neurons, range, 62)?;
        let mut masks = Vec::with_capacity(terms.len());
        for (m, c) in &terms {
            if !c.is_finite() {
                return Err(Error::NonFinite(*c));
            }
            masks.push(m.mask(n_neurons, range)?);
        }
        let mut sorted = masks.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(
                "potential repeats a monomial".into(),
            ));
        }
        Ok(UpletPotential {
            n_neurons,
            range,
            terms,
            masks,
        })
    }

    /// Independent neurons: `sum_i lambda_i omega_i(0)`, at range 1.
    pub fn bernoulli(lambdas: &[f64]) -> Result<Self> {
        let terms = lambdas
            .iter()
            .enumerate()
            .map(|(i, &l)| (Monomial::rate(i), l))
            .collect();
        Self::new(lambdas.len(), 1, terms)
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn range(&self) -> usize {
        self.range
    }

    pub fn terms(&self) -> &[(Monomial, f64)] {
        &self.terms
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.terms.iter().map(|(_, c)| *c).collect()
    }

    /// Value on an `(R+1)`-block given by its code.
    #[inline]
    pub fn eval_code(&self, code: u64) -> f64 {
        self.masks
            .iter()
            .zip(&self.terms)
            .filter(|(m, _)| code & **m == **m)
            .map(|(_, (_, c))| c)
            .sum()
    }

    pub fn eval(&self, block: &SpikeBlock) -> Result<f64> {
        if block.n_neurons() != self.n_neurons || block.len() != self.range + 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected a block of {} patterns over {} neurons",
                self.range + 1,
                self.n_neurons
            )));
        }
        Ok(self.eval_code(crate::raster::pack(block.patterns(), self.n_neurons)))
    }

    /// Text form: header `N=<n> R=<r>`, then `lambda <coef> pairs (i,t) ...`
    /// per term with 1-based neurons.
    pub fn to_text(&self) -> String {
        let mut s = format!("N={} R={}\n", self.n_neurons, self.range);
        for (m, c) in &self.terms {
            let _ = write!(s, "lambda {c:e} pairs");
            if !m.is_constant() {
                let _ = write!(s, " {m}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty potential file".into(),
        })?;
        let bad_header = || Error::Parse {
            line: hline + 1,
            message: "header must be `N=<n> R=<r>`".into(),
        };
        let mut n = None;
        let mut r = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("N", v)) => n = v.parse::<usize>().ok(),
                Some(("R", v)) => r = v.parse::<usize>().ok(),
                _ => return Err(bad_header()),
            }
        }
        let (Some(n), Some(r)) = (n, r) else {
            return Err(bad_header());
        };
        let mut terms = Vec::new();
        for (idx, line) in lines {
            let bad = |m: &str| Error::Parse {
                line: idx + 1,
                message: m.to_string(),
            };
            let mut it = line.split_whitespace();
            if it.next() != Some("lambda") {
                return Err(bad("term must start with `lambda`"));
            }
            let coef: f64 = it
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad("bad coefficient"))?;
            if it.next() != Some("pairs") {
                return Err(bad("expected `pairs` after the coefficient"));
            }
            let rest: String = it.collect();
            let pairs = parse_pairs(&rest).map_err(|m| bad(&m))?;
            terms.push((Monomial::new(pairs)?, coef));
        }
        Self::new(n, r, terms)
    }
}

/// Parses `(i,t)(j,s)...` with 1-based neurons, whitespace already removed.
pub fn parse_pairs(s: &str) -> std::result::Result<Vec<(usize, i32)>, String> {
    let mut pairs = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        let body = rest
            .strip_prefix('(')
            .and_then(|r| r.split_once(')'))
            .ok_or_else(|| format!("malformed pair list `{s}`"))?;
        let (inner, tail) = body;
        let (i, t) = inner
            .split_once(',')
            .ok_or_else(|| format!("malformed pair `({inner})`"))?;
        let i: usize = i.trim().parse().map_err(|_| format!("bad neuron `{i}`"))?;
        let t: i32 = t.trim().parse().map_err(|_| format!("bad offset `{t}`"))?;
        if i == 0 {
            return Err("neurons are numbered from 1".into());
        }
        pairs.push((i - 1, t));
        rest = tail.trim_start();
    }
    Ok(pairs)
}

/// Expands the chain's potential in the monomial basis (subset Moebius
/// transform over the `N (R+1)` bits of a block). Zero coefficients are dropped.
pub fn block_to_uplet(chain: &GibbsChain) -> Result<UpletPotential> {
    let n = chain.n_neurons();
    let r = chain.range();
    let bits = n * (r + 1);
    check_state_bits(n, r, DEFAULT_MAX_STATE_BITS)?;
    let mut coef: Vec<f64> = (0..1u64 << bits).map(|code| chain.psi(code)).collect();
    for b in 0..bits {
        let bit = 1usize << b;
        for mask in 0..coef.len() {
            if mask & bit != 0 {
                coef[mask] -= coef[mask ^ bit];
            }
        }
    }
    let terms = coef
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(mask, &c)| (Monomial::from_mask(mask as u64, n, r), c))
        .collect();
    UpletPotential::new(n, r, terms)
}

/// Unnormalized chain with log-weights `psi_lambda(W)` on legal transitions.
pub fn chain_from_potential(pot: &UpletPotential) -> Result<GibbsChain> {
    let n = pot.n_neurons();
    let r = pot.range();
    check_state_bits(n, r, DEFAULT_MAX_STATE_BITS)?;
    let hist_bits = n * r;
    let k = 1u64 << n;
    let log_weights = (0..1u64 << (n * (r + 1)))
        .map(|idx| pot.eval_code((idx / k) | ((idx % k) << hist_bits)))
        .collect();
    GibbsChain::from_log_weights(n, r, log_weights, false)
}

/// Pressure `log s` of the potential's transfer operator.
pub fn pressure(pot: &UpletPotential) -> Result<f64> {
    Ok(stationary(&chain_from_potential(pot)?)?.pressure)
}

fn monomial_masks(monomials: &[Monomial], n: usize, range: usize) -> Result<Vec<u64>> {
    monomials.iter().map(|m| m.mask(n, range)).collect()
}

fn averages(measure: &[f64], masks: &[u64]) -> Vec<f64> {
    let mut out = vec![0.0; masks.len()];
    for (code, &p) in measure.iter().enumerate() {
        let code = code as u64;
        for (o, &m) in out.iter_mut().zip(masks) {
            if code & m == m {
                *o += p;
            }
        }
    }
    out
}

/// Pressure, stationary analysis and the Gibbs averages of `monomials`.
fn evaluate(pot: &UpletPotential, masks: &[u64]) -> Result<(StationaryAnalysis, Vec<f64>)> {
    let chain = chain_from_potential(pot)?;
    let analysis = stationary(&chain)?;
    let blocks = block_measure(&analysis, &chain, pot.range() + 1)?;
    let avg = averages(&blocks, masks);
    Ok((analysis, avg))
}

/// Gibbs averages `mu_lambda(phi)` for each monomial, which are the partial
/// derivatives of the pressure.
pub fn expectations(pot: &UpletPotential, monomials: &[Monomial]) -> Result<Vec<f64>> {
    let masks = monomial_masks(monomials, pot.n_neurons(), pot.range())?;
    Ok(evaluate(pot, &masks)?.1)
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Target for the max-norm gradient `max_l |mu(phi_l) - C_l|`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Multipliers beyond this max-norm mean the targets sit on the boundary.
    pub lambda_cap: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_iterations: 10_000,
            lambda_cap: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub potential: UpletPotential,
    pub pressure: f64,
    pub entropy: f64,
    pub targets: Vec<f64>,
    pub achieved: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Dual objective `P(lambda) - lambda . C` at each accepted iterate;
    /// nonincreasing up to rounding.
    pub objective_trace: Vec<f64>,
}

struct DualPoint {
    lambda: Vec<f64>,
    objective: f64,
    grad: Vec<f64>,
    pressure: f64,
    achieved: Vec<f64>,
}

/// Maximum-entropy fit of `monomials` to `targets` at range `range`.
///
/// Monomials are anchored so their latest offset is 0; translates of one
/// another are rejected as redundant, as is the constant monomial.
pub fn fit(
    targets: &[f64],
    monomials: &[Monomial],
    n_neurons: usize,
    range: usize,
    options: FitOptions,
) -> Result<FitResult> {
    if monomials.is_empty() {
        return Err(Error::InvalidArgument("no monomials to fit".into()));
    }
    if targets.len() != monomials.len() {
        return Err(Error::LengthMismatch {
            expected: monomials.len(),
            actual: targets.len(),
        });
    }
    if let Some(&c) = targets
        .iter()
        .find(|c| !(c.is_finite() && **c > 0.0 && **c < 1.0))
    {
        return Err(Error::BoundaryTarget(format!(
            "target {c} is outside (0, 1); the multipliers would diverge"
        )));
    }
    let anchored: Vec<Monomial> = monomials.iter().map(Monomial::anchored).collect();
    if anchored.iter().any(Monomial::is_constant) {
        return Err(Error::InvalidArgument(
            "the constant monomial has no free target".into(),
        ));
    }
    let mut seen = anchored.clone();
    seen.sort();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(
            "monomials include time-translates of each other".into(),
        ));
    }
    let masks = monomial_masks(&anchored, n_neurons, range)?;

    let point = |lambda: Vec<f64>| -> Result<DualPoint> {
        let terms = anchored
            .iter()
            .cloned()
            .zip(lambda.iter().copied())
            .collect();
        let pot = UpletPotential::new(n_neurons, range, terms)?;
        let (analysis, achieved) = evaluate(&pot, &masks)?;
        let dot: f64 = lambda.iter().zip(targets).map(|(l, c)| l * c).sum();
        let grad = achieved.iter().zip(targets).map(|(a, c)| a - c).collect();
        Ok(DualPoint {
            objective: analysis.pressure - dot,
            lambda,
            grad,
            pressure: analysis.pressure,
            achieved,
        })
    };

    let mut cur = point(vec![0.0; anchored.len()])?;
    let mut trace = vec![cur.objective];
    let mut step = 1.0;
    let mut iterations = 0;
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    while max_abs(&cur.grad) > options.tol {
        if iterations >= options.max_iterations {
            let residual = max_abs(&cur.grad);
            return Err(Error::FitNotConverged {
                iterations,
                residual,
                best: Box::new(finish(
                    cur, &anchored, targets, n_neurons, range, iterations, trace,
                )?),
            });
        }
        iterations += 1;
        let g2: f64 = cur.grad.iter().map(|g| g * g).sum();
        // Armijo backtracking from the Barzilai-Borwein trial step.
        let mut alpha = step;
        let next = loop {
            let lambda: Vec<f64> = cur
                .lambda
                .iter()
                .zip(&cur.grad)
                .map(|(l, g)| l - alpha * g)
                .collect();
            let cand = point(lambda)?;
            if cand.objective <= cur.objective - 1e-4 * alpha * g2 {
                break Some(cand);
            }
            // Near the optimum the objective is flat to rounding; fall back to
            // requiring a smaller gradient.
            let flat = 1e-13 * cur.objective.abs().max(1.0);
            let cand_g2: f64 = cand.grad.iter().map(|g| g * g).sum();
            if cand.objective <= cur.objective + flat && cand_g2 < g2 {
                break Some(cand);
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                break None;
            }
        };
        let Some(next) = next else {
            // No decrease is measurable: the gradient is at the resolution of
            // the objective.
            break;
        };
        let s: Vec<f64> = next
            .lambda
            .iter()
            .zip(&cur.lambda)
            .map(|(a, b)| a - b)
            .collect();
        let y: Vec<f64> = next
            .grad
            .iter()
            .zip(&cur.grad)
            .map(|(a, b)| a - b)
            .collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-6, 1e6)
        } else {
            2.0 * alpha
        };
        cur = next;
        trace.push(cur.objective);
        if max_abs(&cur.lambda) > options.lambda_cap {
            return Err(Error::BoundaryTarget(format!(
                "target on boundary of realizable set (|lambda| exceeded {})",
                options.lambda_cap
            )));
        }
    }
    let residual = max_abs(&cur.grad);
    let result = finish(cur, &anchored, targets, n_neurons, range, iterations, trace)?;
    if residual > options.tol {
        return Err(Error::FitNotConverged {
            iterations,
            residual,
            best: Box::new(result),
        });
    }
    Ok(result)
}

fn finish(
    point: DualPoint,
    monomials: &[Monomial],
    targets: &[f64],
    n_neurons: usize,
    range: usize,
    iterations: usize,
    objective_trace: Vec<f64>,
) -> Result<FitResult> {
    let mean_psi: f64 = point
        .lambda
        .iter()
        .zip(&point.achieved)
        .map(|(l, a)| l * a)
        .sum();
    let terms = monomials
        .iter()
        .cloned()
        .zip(point.lambda.iter().copied())
        .collect();
    Ok(FitResult {
        potential: UpletPotential::new(n_neurons, range, terms)?,
        pressure: point.pressure,
        entropy: point.pressure - mean_psi,
        targets: targets.to_vec(),
        residual: point.grad.iter().fold(0.0f64, |m, g| m.max(g.abs())),
        achieved: point.achieved,
        iterations,
        objective_trace,
    })
}

/// `d(mu_ref, mu_test) = P(psi_test) - mu_ref(psi_test) - h(mu_ref)`.
///
/// The reference measure is extended or marginalized to the test potential's
/// block length by Chapman-Kolmogorov.
pub fn model_divergence(
    reference: &StationaryAnalysis,
    reference_chain: &GibbsChain,
    test: &UpletPotential,
) -> Result<f64> {
    if test.n_neurons() != reference_chain.n_neurons() {
        return Err(Error::DimensionMismatch(format!(
            "potential has {} neurons, reference has {}",
            test.n_neurons(),
            reference_chain.n_neurons()
        )));
    }
    let p_test = pressure(test)?;
    let blocks = block_measure(reference, reference_chain, test.range() + 1)?;
    let mean_test: f64 = blocks
        .iter()
        .enumerate()
        .map(|(code, &p)| p * test.eval_code(code as u64))
        .sum();
    Ok(p_test - mean_test - reference.entropy)
}
