//! Spiking patterns, spike blocks, rasters and the integer word coding.
//!
//! A pattern is packed into a `u64` with neuron `i` (0-based) at bit `i`.
//! A block of `R` patterns is coded as a word whose lowest `N` bits hold the
//! earliest pattern: the bit of neuron `i` at time `n` (`n` in `-R..=-1`) sits
//! at position `i + (n + R) * N`.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::params::MAX_NEURONS;

#[inline]
pub(crate) fn pattern_mask(n_neurons: usize) -> u64 {
    if n_neurons >= 64 {
        u64::MAX
    } else {
        (1u64 << n_neurons) - 1
    }
}

fn check_neurons(n_neurons: usize) -> Result<()> {
    if n_neurons == 0 || n_neurons > MAX_NEURONS {
        return Err(Error::OutOfRange {
            what: "neuron count",
            value: n_neurons as i64,
            limit: MAX_NEURONS as i64,
        });
    }
    Ok(())
}

/// Firing state of all `N` neurons at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpikingPattern {
    bits: u64,
    n_neurons: usize,
}

impl SpikingPattern {
    pub fn new(n_neurons: usize, bits: u64) -> Result<Self> {
        check_neurons(n_neurons)?;
        if bits & !pattern_mask(n_neurons) != 0 {
            return Err(Error::OutOfRange {
                what: "pattern bits",
                value: bits as i64,
                limit: pattern_mask(n_neurons) as i64,
            });
        }
        Ok(SpikingPattern { bits, n_neurons })
    }

    /// Builds a pattern from 0/1 entries, neuron 0 first.
    pub fn from_spikes(spikes: &[u8]) -> Result<Self> {
        check_neurons(spikes.len())?;
        let mut bits = 0u64;
        for (i, &s) in spikes.iter().enumerate() {
            match s {
                0 => {}
                1 => bits |= 1 << i,
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "spike entries must be 0 or 1, got {s}"
                    )))
                }
            }
        }
        Ok(SpikingPattern {
            bits,
            n_neurons: spikes.len(),
        })
    }

    pub fn silent(n_neurons: usize) -> Self {
        SpikingPattern { bits: 0, n_neurons }
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    #[inline]
    pub fn fires(&self, i: usize) -> bool {
        (self.bits >> i) & 1 == 1
    }

    pub fn spike_count(&self) -> u32 {
        self.bits.count_ones()
    }
}

/// Consecutive spiking patterns with signed time labels `start..=end`.
///
/// Histories conventionally end at time `-1`; simulated rasters start wherever
/// recording began. The time labels never enter any probability computation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpikeBlock {
    n_neurons: usize,
    start: i64,
    patterns: Vec<u64>,
}

/// A recorded sample path. Same representation as a block.
pub type Raster = SpikeBlock;

impl SpikeBlock {
    pub fn new(n_neurons: usize, start: i64, patterns: Vec<u64>) -> Result<Self> {
        check_neurons(n_neurons)?;
        if patterns.is_empty() {
            return Err(Error::InvalidArgument(
                "spike block must be non-empty".into(),
            ));
        }
        let mask = pattern_mask(n_neurons);
        if let Some(p) = patterns.iter().find(|&&p| p & !mask != 0) {
            return Err(Error::OutOfRange {
                what: "pattern bits",
                value: *p as i64,
                limit: mask as i64,
            });
        }
        Ok(SpikeBlock {
            n_neurons,
            start,
            patterns,
        })
    }

    /// A history: the last pattern sits at time `-1`.
    pub fn history(n_neurons: usize, patterns: Vec<u64>) -> Result<Self> {
        let len = patterns.len() as i64;
        Self::new(n_neurons, -len, patterns)
    }

    /// Builds a block from rows of 0/1 entries (one row per time step).
    pub fn from_rows(start: i64, rows: &[&[u8]]) -> Result<Self> {
        let n = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut patterns = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
            patterns.push(SpikingPattern::from_spikes(row)?.bits());
        }
        Self::new(n, start, patterns)
    }

    pub fn from_patterns(start: i64, patterns: &[SpikingPattern]) -> Result<Self> {
        let n = patterns.first().map(|p| p.n_neurons()).unwrap_or(0);
        if let Some(p) = patterns.iter().find(|p| p.n_neurons() != n) {
            return Err(Error::DimensionMismatch(format!(
                "pattern with {} neurons in a block of {n}",
                p.n_neurons()
            )));
        }
        Self::new(n, start, patterns.iter().map(|p| p.bits()).collect())
    }

    #[inline]
    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    #[inline]
    pub fn start(&self) -> i64 {
        self.start
    }

    #[inline]
    pub fn end(&self) -> i64 {
        self.start + self.patterns.len() as i64 - 1
    }

    #[inline]
    pub fn patterns(&self) -> &[u64] {
        &self.patterns
    }

    pub fn pattern(&self, index: usize) -> SpikingPattern {
        SpikingPattern {
            bits: self.patterns[index],
            n_neurons: self.n_neurons,
        }
    }

    /// Pattern at absolute time `t`, if inside the block.
    pub fn at_time(&self, t: i64) -> Option<SpikingPattern> {
        if t < self.start || t > self.end() {
            return None;
        }
        Some(self.pattern((t - self.start) as usize))
    }

    #[inline]
    pub fn spike(&self, i: usize, index: usize) -> bool {
        (self.patterns[index] >> i) & 1 == 1
    }

    /// Same patterns, relabelled to start at `start`.
    pub fn with_start(&self, start: i64) -> Self {
        SpikeBlock {
            start,
            ..self.clone()
        }
    }

    /// Sub-block of `len` patterns beginning at index `from`, keeping time labels.
    pub fn window(&self, from: usize, len: usize) -> Result<Self> {
        if len == 0 || from + len > self.len() {
            return Err(Error::LengthMismatch {
                expected: from + len,
                actual: self.len(),
            });
        }
        Ok(SpikeBlock {
            n_neurons: self.n_neurons,
            start: self.start + from as i64,
            patterns: self.patterns[from..from + len].to_vec(),
        })
    }

    /// Appends a pattern at time `end + 1`.
    pub fn push(&mut self, pattern: SpikingPattern) -> Result<()> {
        if pattern.n_neurons() != self.n_neurons {
            return Err(Error::DimensionMismatch(format!(
                "pattern has {} neurons, block has {}",
                pattern.n_neurons(),
                self.n_neurons
            )));
        }
        self.patterns.push(pattern.bits());
        Ok(())
    }
}

/// Integer code of a block of `range` patterns over `n_neurons` neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    pub value: u64,
    pub n_neurons: usize,
    pub range: usize,
}

impl Word {
    pub fn new(value: u64, n_neurons: usize, range: usize) -> Result<Self> {
        let bits = word_bits(n_neurons, range)?;
        if bits < 64 && value >> bits != 0 {
            return Err(Error::OutOfRange {
                what: "word value",
                value: value as i64,
                limit: ((1u128 << bits) - 1) as i64,
            });
        }
        Ok(Word {
            value,
            n_neurons,
            range,
        })
    }

    /// Number of distinct words, `2^(N R)`.
    pub fn count(n_neurons: usize, range: usize) -> Result<u64> {
        let bits = word_bits(n_neurons, range)?;
        if bits >= 64 {
            return Err(Error::OutOfRange {
                what: "word bits",
                value: bits as i64,
                limit: 63,
            });
        }
        Ok(1u64 << bits)
    }
}

fn word_bits(n_neurons: usize, range: usize) -> Result<usize> {
    check_neurons(n_neurons)?;
    if range == 0 {
        return Err(Error::InvalidArgument(
            "word range must be at least 1".into(),
        ));
    }
    let bits = n_neurons * range;
    if bits > 64 {
        return Err(Error::OutOfRange {
            what: "word bits",
            value: bits as i64,
            limit: 64,
        });
    }
    Ok(bits)
}

/// Packs patterns (earliest first) into a word value. Caller guarantees `N * len <= 64`.
#[inline]
pub(crate) fn pack(patterns: &[u64], n_neurons: usize) -> u64 {
    patterns
        .iter()
        .enumerate()
        .fold(0u64, |acc, (k, &p)| acc | (p << (k * n_neurons)))
}

/// Pattern number `k` (0 = earliest) of a packed word.
#[inline]
pub(crate) fn unpack_at(word: u64, n_neurons: usize, k: usize) -> u64 {
    (word >> (k * n_neurons)) & pattern_mask(n_neurons)
}

pub(crate) fn unpack(word: u64, n_neurons: usize, len: usize) -> Vec<u64> {
    (0..len).map(|k| unpack_at(word, n_neurons, k)).collect()
}

/// `w = sum_i sum_n 2^{i + (n+R) N} omega_i(n)` for a block of length `range`.
pub fn encode_block(block: &SpikeBlock, range: usize) -> Result<Word> {
    if block.len() != range {
        return Err(Error::LengthMismatch {
            expected: range,
            actual: block.len(),
        });
    }
    word_bits(block.n_neurons(), range)?;
    Ok(Word {
        value: pack(block.patterns(), block.n_neurons()),
        n_neurons: block.n_neurons(),
        range,
    })
}

/// Inverse of [`encode_block`]; the result is labelled `-R..=-1`.
pub fn decode_word(word: Word) -> Result<SpikeBlock> {
    let w = Word::new(word.value, word.n_neurons, word.range)?;
    SpikeBlock::history(w.n_neurons, unpack(w.value, w.n_neurons, w.range))
}

/// Whether `next` is a legal successor of `prev`: the last `R-1` patterns of
/// `prev` are the first `R-1` patterns of `next`.
pub fn follows(prev: Word, next: Word) -> Result<bool> {
    if prev.n_neurons != next.n_neurons || prev.range != next.range {
        return Err(Error::DimensionMismatch(format!(
            "words over (N={}, R={}) and (N={}, R={})",
            prev.n_neurons, prev.range, next.n_neurons, next.range
        )));
    }
    Ok(follows_raw(
        prev.value,
        next.value,
        prev.n_neurons,
        prev.range,
    ))
}

#[inline]
pub(crate) fn follows_raw(prev: u64, next: u64, n_neurons: usize, range: usize) -> bool {
    let overlap_bits = n_neurons * (range - 1);
    let overlap_mask = if overlap_bits >= 64 {
        u64::MAX
    } else {
        (1u64 << overlap_bits) - 1
    };
    (prev >> n_neurons) == (next & overlap_mask)
}

/// The successor of word `w` (range `R`) when pattern `a` is appended.
#[inline]
pub(crate) fn successor(w: u64, a: u64, n_neurons: usize, range: usize) -> u64 {
    (w >> n_neurons) | (a << (n_neurons * (range - 1)))
}

/// Latest time in the block at which neuron `neuron` spiked, or the block
/// start if it never spiked. A spike exactly at the start gives the same answer.
pub fn last_firing_time(block: &SpikeBlock, neuron: usize) -> Result<i64> {
    if neuron >= block.n_neurons() {
        return Err(Error::OutOfRange {
            what: "neuron index",
            value: neuron as i64,
            limit: block.n_neurons() as i64 - 1,
        });
    }
    Ok(last_fire_index(block.patterns(), neuron)
        .map(|k| block.start() + k as i64)
        .unwrap_or(block.start()))
}

#[inline]
pub(crate) fn last_fire_index(patterns: &[u64], neuron: usize) -> Option<usize> {
    patterns.iter().rposition(|&p| (p >> neuron) & 1 == 1)
}

/// Writes the raster text format: a header `N=<n> T=<len> t0=<start>` then one
/// line of `N` characters `0`/`1` per time step, neuron 1 leftmost.
pub fn write_raster<W: Write>(raster: &Raster, mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "N={} T={} t0={}",
        raster.n_neurons(),
        raster.len(),
        raster.start()
    )?;
    let n = raster.n_neurons();
    let mut line = String::with_capacity(n + 1);
    for &p in raster.patterns() {
        line.clear();
        for i in 0..n {
            line.push(if (p >> i) & 1 == 1 { '1' } else { '0' });
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn raster_to_string(raster: &Raster) -> String {
    let mut buf = Vec::new();
    write_raster(raster, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("raster text is ASCII")
}

pub fn parse_raster(text: &str) -> Result<Raster> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty raster file".into(),
    })?;
    let mut n = None;
    let mut t = None;
    let mut t0 = None;
    for field in header.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("malformed header field `{field}`"),
        })?;
        let bad = |_| Error::Parse {
            line: 1,
            message: format!("bad value in `{field}`"),
        };
        match key {
            "N" => n = Some(value.parse::<usize>().map_err(bad)?),
            "T" => t = Some(value.parse::<usize>().map_err(bad)?),
            "t0" => t0 = Some(value.parse::<i64>().map_err(bad)?),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unknown header key `{key}`"),
                })
            }
        }
    }
    let missing = |k: &str| Error::Parse {
        line: 1,
        message: format!("header is missing `{k}`"),
    };
    let n = n.ok_or_else(|| missing("N"))?;
    let t = t.ok_or_else(|| missing("T"))?;
    let t0 = t0.ok_or_else(|| missing("t0"))?;
    check_neurons(n)?;

    let mut patterns = Vec::with_capacity(t);
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if line.len() != n {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected {n} characters, got {}", line.len()),
            });
        }
        let mut bits = 0u64;
        for (i, c) in line.bytes().enumerate() {
            match c {
                b'0' => {}
                b'1' => bits |= 1 << i,
                _ => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: format!("unexpected character `{}`", c as char),
                    })
                }
            }
        }
        patterns.push(bits);
    }
    if patterns.len() != t {
        return Err(Error::Parse {
            line: 1,
            message: format!("header says T={t} but found {} patterns", patterns.len()),
        });
    }
    SpikeBlock::new(n, t0, patterns)
}

/// Human-readable dump used in error messages and debugging.
pub fn block_to_rows(block: &SpikeBlock) -> String {
    let mut s = String::new();
    for (k, &p) in block.patterns().iter().enumerate() {
        let _ = write!(s, "{:>4}: ", block.start() + k as i64);
        for i in 0..block.n_neurons() {
            s.push(if (p >> i) & 1 == 1 { '1' } else { '0' });
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        let b = SpikeBlock::from_rows(-2, &[&[1], &[0]]).unwrap();
        assert_eq!(encode_block(&b, 2).unwrap().value, 1);

        let b = SpikeBlock::from_rows(-1, &[&[0, 1]]).unwrap();
        assert_eq!(encode_block(&b, 1).unwrap().value, 2);

        let b = SpikeBlock::from_rows(-3, &[&[0, 0], &[0, 0], &[0, 0]]).unwrap();
        assert_eq!(encode_block(&b, 3).unwrap().value, 0);
    }

    #[test]
    fn encode_rejects_length_mismatch() {
        let b = SpikeBlock::from_rows(-2, &[&[1], &[0]]).unwrap();
        assert!(matches!(
            encode_block(&b, 3),
            Err(Error::LengthMismatch {
                expected: 3,
                actual: 2
            })
        ));
    }

    #[test]
    fn decode_examples() {
        let zero = decode_word(Word::new(0, 2, 2).unwrap()).unwrap();
        assert_eq!(zero.patterns(), &[0, 0]);
        assert_eq!((zero.start(), zero.end()), (-2, -1));

        let ones = decode_word(Word::new(15, 2, 2).unwrap()).unwrap();
        assert_eq!(ones.patterns(), &[3, 3]);

        let one = decode_word(Word::new(1, 1, 2).unwrap()).unwrap();
        assert_eq!(one.at_time(-2).unwrap().bits(), 1);
        assert_eq!(one.at_time(-1).unwrap().bits(), 0);
    }

    #[test]
    fn decode_rejects_out_of_range() {
        assert!(Word::new(16, 2, 2).is_err());
        let forged = Word {
            value: 16,
            n_neurons: 2,
            range: 2,
        };
        assert!(decode_word(forged).is_err());
    }

    #[test]
    fn round_trip_exhaustive() {
        for n in 1..=4usize {
            for r in 1..=(12 / n) {
                for w in 0..(1u64 << (n * r)) {
                    let word = Word::new(w, n, r).unwrap();
                    let block = decode_word(word).unwrap();
                    assert_eq!(encode_block(&block, r).unwrap(), word);
                }
            }
        }
    }

    #[test]
    fn follows_examples() {
        let w = |v| Word::new(v, 1, 2).unwrap();
        // (1,0) -> (0,1): earliest bit is the lowest.
        assert!(follows(w(0b01), w(0b10)).unwrap());
        assert!(!follows(w(0b01), w(0b11)).unwrap());
        for a in 0..4 {
            for b in 0..4 {
                assert!(follows(Word::new(a, 2, 1).unwrap(), Word::new(b, 2, 1).unwrap()).unwrap());
            }
        }
        assert!(follows(Word::new(0, 1, 2).unwrap(), Word::new(0, 2, 1).unwrap()).is_err());
    }

    #[test]
    fn successor_count_is_two_to_the_n() {
        for n in 1..=3usize {
            for r in 1..=(9 / n) {
                let count = 1u64 << (n * r);
                for prev in 0..count {
                    let legal = (0..count)
                        .filter(|&next| follows_raw(prev, next, n, r))
                        .count();
                    assert_eq!(legal, 1 << n, "N={n} R={r} prev={prev}");
                    for a in 0..(1u64 << n) {
                        assert!(follows_raw(prev, successor(prev, a, n, r), n, r));
                    }
                }
            }
        }
    }

    #[test]
    fn last_firing_time_examples() {
        let b = |bits: &[u8]| {
            let rows: Vec<&[u8]> = bits.iter().map(std::slice::from_ref).collect();
            SpikeBlock::from_rows(-3, &rows).unwrap()
        };
        assert_eq!(last_firing_time(&b(&[0, 0, 0]), 0).unwrap(), -3);
        assert_eq!(last_firing_time(&b(&[1, 0, 1]), 0).unwrap(), -1);
        assert_eq!(last_firing_time(&b(&[1, 0, 0]), 0).unwrap(), -3);
        assert!(last_firing_time(&b(&[1, 0, 0]), 1).is_err());
    }

    #[test]
    fn raster_text_round_trip() {
        let r = SpikeBlock::from_rows(5, &[&[1, 0, 0], &[0, 1, 1], &[0, 0, 0]]).unwrap();
        let text = raster_to_string(&r);
        assert_eq!(text, "N=3 T=3 t0=5\n100\n011\n000\n");
        assert_eq!(parse_raster(&text).unwrap(), r);
    }

    #[test]
    fn raster_parse_errors() {
        assert!(parse_raster("").is_err());
        assert!(parse_raster("N=2 T=2 t0=0\n10\n").is_err());
        assert!(parse_raster("N=2 T=1 t0=0\n1x\n").is_err());
        assert!(parse_raster("N=2 T=1\n10\n").is_err());
    }

    proptest! {
        #[test]
        fn appending_a_spike_moves_last_firing_time(
            bits in proptest::collection::vec(0u64..8, 1..12),
            neuron in 0usize..3,
            start in -50i64..50,
        ) {
            let mut block = SpikeBlock::new(3, start, bits).unwrap();
            let before = last_firing_time(&block, neuron).unwrap();
            prop_assert!(before >= block.start() && before <= block.end());
            block.push(SpikingPattern::new(3, 1 << neuron).unwrap()).unwrap();
            prop_assert_eq!(last_firing_time(&block, neuron).unwrap(), block.end());
        }
    }
}
