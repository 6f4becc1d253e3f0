//! PMF quantization and a carry-propagating range coder.
//!
//! The coder keeps a 56-bit window of `low` with one carry bit above it, and
//! renormalizes a byte at a time whenever `range` drops below 2^48. Pending
//! 0xFF bytes are held back until a carry either resolves them or not.

use crate::error::{BanError, Result};
use crate::gaussnet::{Pmf, ALPHABET};

/// Quantized PMFs sum to this.
pub const TOTAL: u32 = 1 << 16;
const TOTAL_BITS: u32 = 16;
const WINDOW: u32 = 56;
const MASK56: u64 = (1 << WINDOW) - 1;
const TOP: u64 = 1 << 48;

/// Integer frequencies for the 256 byte values, each at least 1, summing to 65536.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedPmf {
    counts: [u32; ALPHABET],
    cum: [u32; ALPHABET + 1],
}

impl QuantizedPmf {
    pub fn uniform() -> Self {
        QuantizedPmf::from_counts([TOTAL / ALPHABET as u32; ALPHABET]).unwrap()
    }

    pub fn from_counts(counts: [u32; ALPHABET]) -> Result<Self> {
        let mut cum = [0u32; ALPHABET + 1];
        for (s, &c) in counts.iter().enumerate() {
            if c == 0 {
                return Err(BanError::InvalidConfig(format!("zero count for symbol {s}")));
            }
            cum[s + 1] = cum[s] + c;
        }
        if cum[ALPHABET] != TOTAL {
            return Err(BanError::InvalidConfig(format!("counts sum to {}, need {TOTAL}", cum[ALPHABET])));
        }
        Ok(QuantizedPmf { counts, cum })
    }

    pub fn counts(&self) -> &[u32; ALPHABET] {
        &self.counts
    }

    pub fn count(&self, sym: u8) -> u32 {
        self.counts[sym as usize]
    }

    pub fn cumulative(&self, sym: u8) -> u32 {
        self.cum[sym as usize]
    }

    pub fn min_count(&self) -> u32 {
        *self.counts.iter().min().unwrap()
    }

    pub fn prob(&self, sym: u8) -> f64 {
        self.counts[sym as usize] as f64 / TOTAL as f64
    }

    /// Ideal code length of `sym` under the quantized model.
    pub fn bits(&self, sym: u8) -> f64 {
        TOTAL_BITS as f64 - (self.counts[sym as usize] as f64).log2()
    }

    /// Symbol whose interval `[cum, cum + count)` contains `target < TOTAL`.
    pub fn symbol_at(&self, target: u32) -> u8 {
        // last s with cum[s] <= target
        (self.cum.partition_point(|&c| c <= target) - 1) as u8
    }
}

/// Rounds `p * 65536` to counts of at least 1, then fixes the total by
/// largest-remainder passes (ties go to the lower symbol index).
pub fn quantize(pmf: &Pmf) -> QuantizedPmf {
    quantize_probs(pmf.probs())
}

pub fn quantize_probs(p: &[f64]) -> QuantizedPmf {
    assert_eq!(p.len(), ALPHABET, "quantize needs 256 probabilities");
    let scale = TOTAL as f64;
    let mut counts = [0u32; ALPHABET];
    let mut rem = [0f64; ALPHABET];
    let mut sum: i64 = 0;
    for s in 0..ALPHABET {
        let x = if p[s].is_finite() { p[s].max(0.0) * scale } else { 0.0 };
        // for x >= 0 truncating x + 0.5 agrees with round() once clamped to 1
        let c = ((x + 0.5) as u32).clamp(1, TOTAL);
        counts[s] = c;
        rem[s] = x - c as f64;
        sum += c as i64;
    }
    let mut diff = TOTAL as i64 - sum;
    // Order of adjustment: largest remainder first when adding, smallest first
    // when removing, ties to the lower symbol; removal skips counts of 1.
    let up = |a: &usize, b: &usize| rem[*b].total_cmp(&rem[*a]).then(a.cmp(b));
    let down = |a: &usize, b: &usize| rem[*a].total_cmp(&rem[*b]).then(a.cmp(b));
    let mut order: Vec<usize> = if diff < 0 { (0..ALPHABET).filter(|&s| counts[s] > 1).collect() } else { (0..ALPHABET).collect() };
    let m = diff.unsigned_abs() as usize;
    if diff != 0 && m < order.len() {
        // a single pass touches exactly the first m symbols of the order, so
        // selecting that set is enough
        if diff > 0 {
            order.select_nth_unstable_by(m - 1, up);
        } else {
            order.select_nth_unstable_by(m - 1, down);
        }
        for &s in &order[..m] {
            if diff > 0 {
                counts[s] += 1;
            } else {
                counts[s] -= 1;
            }
        }
        diff = 0;
    }
    if diff != 0 {
        let mut order: Vec<usize> = (0..ALPHABET).collect();
        if diff > 0 {
            order.sort_by(up);
        } else {
            order.sort_by(down);
        }
        while diff != 0 {
            for &s in &order {
                if diff > 0 {
                    counts[s] += 1;
                    diff -= 1;
                } else if counts[s] > 1 {
                    counts[s] -= 1;
                    diff += 1;
                }
                if diff == 0 {
                    break;
                }
            }
        }
    }
    QuantizedPmf::from_counts(counts).expect("quantized counts are valid")
}

pub struct RangeEncoder {
    low: u64,
    range: u64,
    cache: u8,
    pending: u64,
    started: bool,
    symbols: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: MASK56, cache: 0, pending: 1, started: false, symbols: 0, out: Vec::new() }
    }

    pub fn encode(&mut self, pmf: &QuantizedPmf, sym: u8) {
        let s = sym as usize;
        let r = self.range >> TOTAL_BITS;
        let start = r * pmf.cum[s] as u64;
        self.symbols += 1;
        self.low += start;
        if pmf.cum[s + 1] == TOTAL {
            self.range -= start;
        } else {
            self.range = r * pmf.counts[s] as u64;
        }
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        let carry = (self.low >> WINDOW) as u8;
        if (self.low & MASK56) < (0xFFu64 << 48) || carry != 0 {
            let mut byte = self.cache.wrapping_add(carry);
            while self.pending > 0 {
                if self.started {
                    self.out.push(byte);
                }
                self.started = true;
                byte = 0xFFu8.wrapping_add(carry);
                self.pending -= 1;
            }
            self.cache = ((self.low >> 48) & 0xFF) as u8;
        }
        self.pending += 1;
        self.low = (self.low & (TOP - 1)) << 8;
    }

    /// Writes the shortest tail that pins a value inside the final interval.
    pub fn finish(mut self) -> Vec<u8> {
        if self.symbols == 0 {
            return Vec::new();
        }
        let k = flush_len(self.low & MASK56, self.range);
        let unit = 1u64 << (WINDOW - 8 * k);
        let low = self.low & MASK56;
        let v = low.div_ceil(unit) * unit;
        self.low = (self.low - low) + v;
        for _ in 0..=k {
            self.shift_low();
        }
        self.out
    }
}

/// Number of window bytes to flush: the fewest whose every continuation stays
/// inside `[low, low + range)`. That makes the code prefix-free, so a cut
/// payload can never pass for a complete one.
fn flush_len(low: u64, range: u64) -> u32 {
    (0..=2)
        .find(|&k| {
            let unit = 1u64 << (WINDOW - 8 * k);
            low.div_ceil(unit) * unit - low + unit <= range
        })
        .expect("range never drops below 2^48")
}

pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    low: u64,
    range: u64,
    code: u64,
    shifts: usize,
    symbols: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = RangeDecoder { input, pos: 0, low: 0, range: MASK56, code: 0, shifts: 0, symbols: 0 };
        for _ in 0..WINDOW / 8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub fn decode(&mut self, pmf: &QuantizedPmf) -> Result<u8> {
        if self.code >= self.range {
            return Err(BanError::Corrupt("range coder offset outside the interval".into()));
        }
        let r = self.range >> TOTAL_BITS;
        let target = (self.code / r).min(TOTAL as u64 - 1) as u32;
        let s = pmf.symbol_at(target) as usize;
        let start = r * pmf.cum[s] as u64;
        self.symbols += 1;
        self.code -= start;
        self.low = (self.low + start) & MASK56;
        if pmf.cum[s + 1] == TOTAL {
            self.range -= start;
        } else {
            self.range = r * pmf.counts[s] as u64;
        }
        if self.code >= self.range {
            return Err(BanError::Corrupt("range coder offset outside the interval".into()));
        }
        while self.range < TOP {
            self.range <<= 8;
            self.low = (self.low << 8) & MASK56;
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.shifts += 1;
        }
        Ok(s as u8)
    }

    /// Checks that the input was exactly as long as the encoder would have made it.
    pub fn finish(self) -> Result<()> {
        if self.symbols == 0 {
            return match self.input.len() {
                0 => Ok(()),
                n => Err(BanError::Corrupt(format!("{n} bytes of trailing payload"))),
            };
        }
        let k = flush_len(self.low, self.range);
        let unit = 1u64 << (WINDOW - 8 * k);
        let tail = self.low.div_ceil(unit) * unit - self.low;
        let expected = self.shifts + k as usize;
        match self.input.len().cmp(&expected) {
            std::cmp::Ordering::Less => Err(BanError::Truncated("range-coded payload")),
            std::cmp::Ordering::Greater => {
                Err(BanError::Corrupt(format!("{} bytes of trailing payload", self.input.len() - expected)))
            }
            // the encoder pins the shortest value in the final interval; any other tail was not written by it
            std::cmp::Ordering::Equal if self.code != tail => {
                Err(BanError::Corrupt("range-coded payload is damaged or truncated".into()))
            }
            std::cmp::Ordering::Equal => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_probs(rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mode = rng.random_range(0..3);
        let mut p: Vec<f64> = (0..ALPHABET)
            .map(|_| match mode {
                0 => rng.random::<f64>(),
                1 => rng.random::<f64>().powi(12),
                _ => (-40.0 * rng.random::<f64>()).exp(),
            })
            .collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        p
    }

    #[test]
    fn uniform_quantizes_to_256_each() {
        let q = quantize(&Pmf::uniform());
        assert!(q.counts().iter().all(|&c| c == 256));
    }

    #[test]
    fn one_hot_keeps_room_for_every_symbol() {
        let mut p = vec![0.0; ALPHABET];
        p[0] = 1.0;
        let q = quantize_probs(&p);
        assert_eq!(q.count(0), 65281);
        assert!((1..=255).all(|s| q.count(s) == 1));
    }

    #[test]
    fn random_pmfs_quantize_validly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let p = random_probs(&mut rng);
            let q = quantize_probs(&p);
            assert_eq!(q.counts().iter().sum::<u32>(), TOTAL);
            assert!(q.min_count() >= 1);
        }
    }

    /// Sorts and walks the whole order, one count per step.
    fn quantize_by_passes(p: &[f64]) -> [u32; ALPHABET] {
        let mut counts = [0u32; ALPHABET];
        let mut rem = [0f64; ALPHABET];
        for s in 0..ALPHABET {
            let x = p[s] * TOTAL as f64;
            counts[s] = (x.round() as u32).clamp(1, TOTAL);
            rem[s] = x - counts[s] as f64;
        }
        let mut diff = TOTAL as i64 - counts.iter().map(|&c| c as i64).sum::<i64>();
        let mut order: Vec<usize> = (0..ALPHABET).collect();
        if diff > 0 {
            order.sort_by(|&a, &b| rem[b].total_cmp(&rem[a]).then(a.cmp(&b)));
        } else {
            order.sort_by(|&a, &b| rem[a].total_cmp(&rem[b]).then(a.cmp(&b)));
        }
        while diff != 0 {
            for &s in &order {
                if diff > 0 {
                    counts[s] += 1;
                    diff -= 1;
                } else if diff < 0 && counts[s] > 1 {
                    counts[s] -= 1;
                    diff += 1;
                }
            }
        }
        counts
    }

    #[test]
    fn selection_matches_full_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5_000 {
            let p = random_probs(&mut rng);
            assert_eq!(quantize_probs(&p).counts(), &quantize_by_passes(&p));
        }
        let mut p = vec![0.0; ALPHABET];
        p[3] = 1.0;
        assert_eq!(quantize_probs(&p).counts(), &quantize_by_passes(&p));
    }

    #[test]
    fn largest_remainder_ties_favor_lower_index() {
        // 256 equal shares of 65535/65536 leave one count to place
        let mut p = vec![1.0 / 256.0; ALPHABET];
        p[0] = 0.0;
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        let q = quantize_probs(&p);
        assert_eq!(q.counts().iter().sum::<u32>(), TOTAL);
        assert_eq!(q.count(0), 1);
    }

    fn round_trip(pmfs: &[QuantizedPmf], syms: &[u8]) -> Vec<u8> {
        let mut enc = RangeEncoder::new();
        for (q, &s) in pmfs.iter().cycle().zip(syms) {
            enc.encode(q, s);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for (q, &s) in pmfs.iter().cycle().zip(syms) {
            assert_eq!(dec.decode(q).unwrap(), s);
        }
        dec.finish().unwrap();
        bytes
    }

    #[test]
    fn empty_stream_is_empty() {
        let bytes = RangeEncoder::new().finish();
        assert!(bytes.is_empty());
        RangeDecoder::new(&bytes).finish().unwrap();
    }

    #[test]
    fn single_uniform_symbol_fits_two_bytes() {
        let q = QuantizedPmf::uniform();
        for s in 0..=255u8 {
            let bytes = round_trip(std::slice::from_ref(&q), &[s]);
            assert!(bytes.len() <= 2, "symbol {s} took {} bytes", bytes.len());
        }
    }

    #[test]
    fn million_random_symbols_round_trip_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pmfs: Vec<QuantizedPmf> = (0..64).map(|_| quantize_probs(&random_probs(&mut rng))).collect();
        let n = 1_000_000;
        let mut syms = Vec::with_capacity(n);
        let mut ideal = 0.0;
        for i in 0..n {
            let q = &pmfs[i % pmfs.len()];
            // draw from the quantized distribution itself
            let t = rng.random_range(0..TOTAL);
            let s = q.symbol_at(t);
            ideal += q.bits(s);
            syms.push(s);
        }
        let bytes = round_trip(&pmfs, &syms);
        let bound = ((ideal + 64.0) / 8.0).ceil();
        assert!((bytes.len() as f64) <= bound, "{} > {bound}", bytes.len());
    }

    #[test]
    fn long_ff_runs_and_carries() {
        // symbol 255 at the top of every interval drives low toward all-ones
        let mut counts = [1u32; ALPHABET];
        counts[255] = TOTAL - 255;
        let q = QuantizedPmf::from_counts(counts).unwrap();
        let mut syms = vec![255u8; 5000];
        syms.extend([254u8, 0, 255, 255, 1]);
        round_trip(std::slice::from_ref(&q), &syms);
        let skew = quantize_probs(&{
            let mut p = vec![1e-9; ALPHABET];
            p[200] = 1.0;
            p
        });
        let syms: Vec<u8> = (0..20_000).map(|i| if i % 97 == 0 { 201 } else { 200 }).collect();
        round_trip(&[skew], &syms);
    }

    #[test]
    fn truncation_and_trailing_bytes_are_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = quantize_probs(&random_probs(&mut rng));
        let syms: Vec<u8> = (0..2000).map(|_| rng.random()).collect();
        let bytes = round_trip(std::slice::from_ref(&q), &syms);
        for cut in [1, 2, bytes.len() / 2] {
            let short = &bytes[..bytes.len() - cut];
            let mut dec = RangeDecoder::new(short);
            let res: Result<()> = (|| {
                for _ in &syms {
                    dec.decode(&q)?;
                }
                Ok(())
            })();
            let res = res.and_then(|_| dec.finish());
            assert!(res.is_err(), "cut of {cut} bytes went unnoticed");
        }
        let mut long = bytes.clone();
        long.extend([0u8; 9]);
        let mut dec = RangeDecoder::new(&long);
        for _ in &syms {
            dec.decode(&q).unwrap();
        }
        assert!(matches!(dec.finish(), Err(BanError::Corrupt(_))));
    }

    #[test]
    fn no_proper_prefix_decodes_cleanly() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for t in 0..3000 {
            let q = quantize_probs(&random_probs(&mut rng));
            let n = rng.random_range(1..300);
            let syms: Vec<u8> = (0..n).map(|_| q.symbol_at(rng.random_range(0..TOTAL))).collect();
            let mut enc = RangeEncoder::new();
            for &s in &syms {
                enc.encode(&q, s);
            }
            let bytes = enc.finish();
            let cut = 1 + t % bytes.len().min(3);
            let mut dec = RangeDecoder::new(&bytes[..bytes.len() - cut]);
            let decoded = syms.iter().try_for_each(|_| dec.decode(&q).map(|_| ()));
            assert!(decoded.and_then(|_| dec.finish()).is_err(), "trial {t}: cut of {cut} accepted");
        }
    }
}
