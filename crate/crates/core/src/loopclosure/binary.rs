use std::fmt;

use super::LoopError;

/// Number of bits in a binarized descriptor.
pub const BINARY_BITS: usize = 256;

/// Sign pattern of a 256-dimensional float descriptor, bit `i` in word
/// `i / 64` at position `i % 64`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryDescriptor(pub [u64; 4]);

impl fmt::Debug for BinaryDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryDescriptor({})", self.to_hex())
    }
}

impl BinaryDescriptor {
    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, value: bool) {
        let mask = 1u64 << (i % 64);
        if value {
            self.0[i / 64] |= mask;
        } else {
            self.0[i / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }

    /// 64 hex digits, word 0 first, each word most significant nibble first.
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|w| format!("{w:016x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self, LoopError> {
        if s.len() != 64 || !s.is_ascii() {
            return Err(LoopError::Format(format!("expected 64 hex digits, got {s:?}")));
        }
        let mut words = [0u64; 4];
        for (i, w) in words.iter_mut().enumerate() {
            *w = u64::from_str_radix(&s[16 * i..16 * (i + 1)], 16)
                .map_err(|e| LoopError::Format(format!("bad hex {s:?}: {e}")))?;
        }
        Ok(Self(words))
    }
}

/// Bit `i` is set iff `d_i ≥ 0`.
pub fn binarize(d: &[f32]) -> BinaryDescriptor {
    assert_eq!(d.len(), BINARY_BITS, "binarize expects a {BINARY_BITS}-dimensional descriptor");
    let mut out = BinaryDescriptor::default();
    for (i, v) in d.iter().enumerate() {
        if *v >= 0.0 {
            out.0[i / 64] |= 1 << (i % 64);
        }
    }
    out
}

pub fn hamming(a: &BinaryDescriptor, b: &BinaryDescriptor) -> u32 {
    (a.0[0] ^ b.0[0]).count_ones()
        + (a.0[1] ^ b.0[1]).count_ones()
        + (a.0[2] ^ b.0[2]).count_ones()
        + (a.0[3] ^ b.0[3]).count_ones()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn zeros_map_to_all_ones() {
        assert_eq!(binarize(&[0.0; 256]).count_ones(), 256);
    }

    #[test]
    fn sign_readout() {
        let mut d = vec![0.01f32; 256];
        d[0] = -0.03;
        d[1] = 0.05;
        d[2] = -0.0001;
        let b = binarize(&d);
        assert_eq!((b.bit(0), b.bit(1), b.bit(2), b.bit(3)), (false, true, false, true));
    }

    #[test]
    fn gaussian_bits_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0f32, 0.07).unwrap();
        let n = 100_000;
        let mut ones = 0u64;
        for _ in 0..n {
            let d: Vec<f32> = (0..256).map(|_| normal.sample(&mut rng)).collect();
            ones += binarize(&d).count_ones() as u64;
        }
        let frac = ones as f64 / (n as f64 * 256.0);
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn hex_round_trip() {
        let b = BinaryDescriptor([0x0123_4567_89ab_cdef, 0, u64::MAX, 42]);
        assert_eq!(BinaryDescriptor::from_hex(&b.to_hex()).unwrap(), b);
        assert!(BinaryDescriptor::from_hex("xyz").is_err());
    }

    proptest! {
        #[test]
        fn scale_invariance(d in prop::collection::vec(-1.0f32..1.0, 256), scale in 0.01f32..100.0) {
            let scaled: Vec<f32> = d.iter().map(|v| v * scale).collect();
            prop_assert_eq!(binarize(&d), binarize(&scaled));
            let hundred: Vec<f32> = d.iter().map(|v| v * 100.0).collect();
            prop_assert_eq!(binarize(&d), binarize(&hundred));
        }

        #[test]
        fn stable_away_from_zero(
            d in prop::collection::vec(prop_oneof![0.01f32..1.0, -1.0f32..-0.01], 256),
            eps in prop::collection::vec(-1.0f32..1.0, 256),
        ) {
            let bound = d.iter().fold(f32::INFINITY, |m, v| m.min(v.abs()));
            let perturbed: Vec<f32> = d.iter().zip(&eps).map(|(v, e)| v + e * bound * 0.99).collect();
            prop_assert_eq!(hamming(&binarize(&d), &binarize(&perturbed)), 0);
        }
    }
}
