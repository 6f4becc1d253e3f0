//! Byte sequences as (context, target) samples.

use crate::error::{BanError, Result};

/// Padding byte used for positions before the start of a sequence.
pub const PAD: u8 = 0;

/// The `l` bytes preceding a target, oldest first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Context(Vec<u8>);

impl Context {
    pub fn new(window: Vec<u8>) -> Result<Self> {
        if window.is_empty() {
            return Err(BanError::InvalidConfig("context length must be at least 1".into()));
        }
        Ok(Context(window))
    }

    /// All-padding context of length `l`.
    pub fn empty(l: usize) -> Self {
        Context(vec![PAD; l])
    }

    /// Context for position `n` of `seq`, left-padded with [`PAD`].
    pub fn at(seq: &[u8], n: usize, l: usize) -> Self {
        let mut window = vec![PAD; l];
        let take = n.min(l);
        window[l - take..].copy_from_slice(&seq[n - take..n]);
        Context(window)
    }

    /// Shifts `next` into the window, dropping the oldest byte.
    pub fn push(&mut self, next: u8) {
        self.0.rotate_left(1);
        if let Some(last) = self.0.last_mut() {
            *last = next;
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub context: Context,
    pub target: u8,
    pub index: usize,
}

/// Splits `sequence` into one sample per position.
pub fn make_samples(sequence: &[u8], l: usize) -> Result<Vec<Sample>> {
    if l == 0 {
        return Err(BanError::InvalidConfig("context length must be at least 1".into()));
    }
    let mut context = Context::empty(l);
    let mut out = Vec::with_capacity(sequence.len());
    for (index, &target) in sequence.iter().enumerate() {
        out.push(Sample { context: context.clone(), target, index });
        context.push(target);
    }
    Ok(out)
}

/// Code length in bits, `-sum(log2 p)`.
pub fn sequence_log2_prob(per_symbol_probs: &[f64]) -> Result<f64> {
    let mut bits = 0.0;
    for (n, &p) in per_symbol_probs.iter().enumerate() {
        if !(p > 0.0 && p <= 1.0) {
            return Err(BanError::ModelDefect(format!("probability {p} at position {n} outside (0, 1]")));
        }
        bits -= p.log2();
    }
    // -0.0 for an all-ones input
    Ok(bits + 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_padding() {
        let s = make_samples(&[5, 7, 9], 2).unwrap();
        let got: Vec<(Vec<u8>, u8)> = s.iter().map(|s| (s.context.bytes().to_vec(), s.target)).collect();
        assert_eq!(got, vec![(vec![0, 0], 5), (vec![0, 5], 7), (vec![5, 7], 9)]);
        assert_eq!(s[2].index, 2);
    }

    #[test]
    fn empty_and_invalid() {
        assert!(make_samples(&[], 4).unwrap().is_empty());
        assert!(matches!(make_samples(&[1], 0), Err(BanError::InvalidConfig(_))));
    }

    #[test]
    fn random_lengths() {
        let seq: Vec<u8> = (0..100u32).map(|i| (i.wrapping_mul(2654435761) >> 24) as u8).collect();
        let s = make_samples(&seq, 8).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.iter().all(|s| s.context.len() == 8));
    }

    #[test]
    fn code_lengths() {
        assert_eq!(sequence_log2_prob(&[1.0 / 256.0; 4]).unwrap(), 32.0);
        assert_eq!(sequence_log2_prob(&[1.0]).unwrap(), 0.0);
        assert_eq!(sequence_log2_prob(&[0.5, 0.25]).unwrap(), 3.0);
        assert!(sequence_log2_prob(&[0.5, 0.0]).is_err());
    }

    #[test]
    fn context_at_matches_samples() {
        let seq = b"hello world";
        let s = make_samples(seq, 3).unwrap();
        for (n, sample) in s.iter().enumerate() {
            assert_eq!(sample.context, Context::at(seq, n, 3));
        }
    }

    proptest! {
        #[test]
        fn targets_reproduce_sequence(seq in proptest::collection::vec(any::<u8>(), 0..200), l in 1usize..12) {
            let s = make_samples(&seq, l).unwrap();
            let back: Vec<u8> = s.iter().map(|s| s.target).collect();
            prop_assert_eq!(back, seq.clone());
            // no padding once the window is full, unless the data has zeros
            for sample in s.iter().skip(l) {
                let n = sample.index;
                prop_assert_eq!(sample.context.bytes(), &seq[n - l..n]);
            }
        }

        #[test]
        fn code_length_is_additive(a in proptest::collection::vec(1e-6f64..=1.0, 0..50),
                                    b in proptest::collection::vec(1e-6f64..=1.0, 0..50)) {
            let joined: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
            let lhs = sequence_log2_prob(&joined).unwrap();
            let rhs = sequence_log2_prob(&a).unwrap() + sequence_log2_prob(&b).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
