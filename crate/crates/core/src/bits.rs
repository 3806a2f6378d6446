//! Packed classical bit strings over GF(2).

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("mapping is not a permutation of 0..{0}")]
    NotAPermutation(usize),
    #[error("invalid character {0:?} in bit encoding")]
    BadEncoding(char),
}

/// Ordered sequence of bits packed into 64-bit words, least significant bit first.
///
/// Bits beyond `len` in the last word are always zero.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            words: Vec::with_capacity(bits.div_ceil(64)),
            len: 0,
        }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut s = Self::default();
        for b in bits {
            s.push(b);
        }
        s
    }

    /// Parses a string of `0`/`1` characters.
    pub fn from_binary(text: &str) -> Result<Self, BitsError> {
        let mut s = Self::with_capacity(text.len());
        for c in text.chars() {
            match c {
                '0' => s.push(false),
                '1' => s.push(true),
                other => return Err(BitsError::BadEncoding(other)),
            }
        }
        Ok(s)
    }

    /// `n` independent uniform bits.
    pub fn random(n: usize, rng: &mut SimRng) -> Self {
        let mut words: Vec<u64> = (0..n.div_ceil(64)).map(|_| rand::RngCore::next_u64(rng)).collect();
        if !n.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (n % 64)) - 1;
            }
        }
        Self { words, len: n }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn push(&mut self, value: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        self.len += 1;
        if value {
            self.words[(self.len - 1) / 64] |= 1u64 << ((self.len - 1) % 64);
        }
    }

    pub fn extend_from(&mut self, other: &BitString) {
        for b in other.iter() {
            self.push(b);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Bitwise sum modulo 2.
    pub fn xor(&self, other: &BitString) -> Result<BitString, BitsError> {
        if self.len != other.len {
            return Err(BitsError::LengthMismatch {
                left: self.len,
                right: other.len,
            });
        }
        Ok(BitString {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
            len: self.len,
        })
    }

    pub fn hamming_distance(&self, other: &BitString) -> Result<usize, BitsError> {
        Ok(self.xor(other)?.count_ones())
    }

    /// Sum modulo 2 of the bits at `positions`.
    pub fn parity(&self, positions: &[usize]) -> Result<bool, BitsError> {
        let mut acc = false;
        for &p in positions {
            if p >= self.len {
                return Err(BitsError::IndexOutOfRange { index: p, len: self.len });
            }
            acc ^= self.get(p);
        }
        Ok(acc)
    }

    /// Parity of the contiguous range `start..end`.
    pub fn range_parity(&self, start: usize, end: usize) -> bool {
        assert!(start <= end && end <= self.len);
        let mut acc = 0u64;
        let mut i = start;
        while i < end {
            let w = i / 64;
            let off = i % 64;
            let take = (64 - off).min(end - i);
            let mask = if take == 64 { u64::MAX } else { ((1u64 << take) - 1) << off };
            acc ^= self.words[w] & mask;
            i += take;
        }
        acc.count_ones() % 2 == 1
    }

    /// 64 bits starting at bit `offset`, zero-filled past the end.
    fn word_at(&self, offset: usize) -> u64 {
        let w = offset / 64;
        let s = offset % 64;
        let lo = self.words.get(w).copied().unwrap_or(0);
        if s == 0 {
            lo
        } else {
            let hi = self.words.get(w + 1).copied().unwrap_or(0);
            (lo >> s) | (hi << (64 - s))
        }
    }

    /// Parity of `self AND other[offset .. offset + self.len]`.
    ///
    /// This is one row of a Toeplitz matrix-vector product when `other` holds
    /// the matrix diagonals.
    pub fn and_parity_window(&self, other: &BitString, offset: usize) -> bool {
        assert!(offset + self.len <= other.len, "window exceeds source length");
        let mut acc = 0u64;
        for (k, &w) in self.words.iter().enumerate() {
            acc ^= w & other.word_at(offset + 64 * k);
        }
        acc.count_ones() % 2 == 1
    }

    /// Returns the string with `result[perm[i]] = self[i]`.
    pub fn permute(&self, perm: &Permutation) -> Result<BitString, BitsError> {
        if perm.len() != self.len {
            return Err(BitsError::LengthMismatch {
                left: self.len,
                right: perm.len(),
            });
        }
        let mut out = BitString::zeros(self.len);
        for (i, &target) in perm.as_slice().iter().enumerate() {
            if self.get(i) {
                out.set(target, true);
            }
        }
        Ok(out)
    }

    /// Bits at the given positions, in order.
    pub fn select(&self, positions: &[usize]) -> BitString {
        BitString::from_bools(positions.iter().map(|&p| self.get(p)))
    }

    /// Bits where `mask` is set.
    pub fn filter(&self, mask: &BitString) -> Result<BitString, BitsError> {
        if mask.len != self.len {
            return Err(BitsError::LengthMismatch {
                left: self.len,
                right: mask.len,
            });
        }
        Ok(BitString::from_bools(
            self.iter().zip(mask.iter()).filter(|(_, m)| *m).map(|(b, _)| b),
        ))
    }

    pub fn slice(&self, start: usize, end: usize) -> BitString {
        BitString::from_bools((start..end).map(|i| self.get(i)))
    }

    pub fn to_binary(&self) -> String {
        self.iter().map(|b| if b { '1' } else { '0' }).collect()
    }

    /// Hex with the first bit as the most significant bit of the first nibble;
    /// the final nibble is zero-padded on the right.
    pub fn to_hex(&self) -> String {
        const DIGITS: &[u8; 16] = b"0123456789abcdef";
        let mut out = String::with_capacity(self.len.div_ceil(4));
        for chunk in 0..self.len.div_ceil(4) {
            let mut nib = 0usize;
            for j in 0..4 {
                let i = chunk * 4 + j;
                nib <<= 1;
                if i < self.len && self.get(i) {
                    nib |= 1;
                }
            }
            out.push(DIGITS[nib] as char);
        }
        out
    }

    /// Inverse of [`to_hex`](Self::to_hex) for a known bit length.
    pub fn from_hex(text: &str, len: usize) -> Result<Self, BitsError> {
        let mut s = Self::with_capacity(len);
        for c in text.chars() {
            let v = c.to_digit(16).ok_or(BitsError::BadEncoding(c))?;
            for j in (0..4).rev() {
                if s.len < len {
                    s.push((v >> j) & 1 == 1);
                }
            }
        }
        if s.len != len {
            return Err(BitsError::LengthMismatch { left: s.len, right: len });
        }
        Ok(s)
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitString({})", self.to_binary())
        } else {
            write!(f, "BitString(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HexForm {
    len: usize,
    hex: String,
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        HexForm {
            len: self.len,
            hex: self.to_hex(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let h = HexForm::deserialize(d)?;
        BitString::from_hex(&h.hex, h.len).map_err(serde::de::Error::custom)
    }
}

/// One-time pad encryption: `M ⊕ K`.
pub fn vernam_encrypt(message: &BitString, key: &BitString) -> Result<BitString, BitsError> {
    message.xor(key)
}

/// One-time pad decryption; identical to encryption over GF(2).
pub fn vernam_decrypt(cipher: &BitString, key: &BitString) -> Result<BitString, BitsError> {
    cipher.xor(key)
}

/// Bijection on `0..n`, stored as the image of each index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self, BitsError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &t in &map {
            if t >= n || seen[t] {
                return Err(BitsError::NotAPermutation(n));
            }
            seen[t] = true;
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn random(n: usize, rng: &mut SimRng) -> Self {
        Self(rng.permutation(n))
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &t) in self.0.iter().enumerate() {
            inv[t] = i;
        }
        Self(inv)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bs(s: &str) -> BitString {
        BitString::from_binary(s).unwrap()
    }

    #[test]
    fn xor_examples() {
        assert_eq!(bs("1011").xor(&bs("0000")).unwrap(), bs("1011"));
        assert_eq!(bs("1011").xor(&bs("1011")).unwrap(), bs("0000"));
        assert_eq!(
            bs("1").xor(&bs("10")),
            Err(BitsError::LengthMismatch { left: 1, right: 2 })
        );
    }

    #[test]
    fn vernam_roundtrip() {
        let mut rng = SimRng::new(1);
        for _ in 0..20 {
            let m = BitString::random(64, &mut rng);
            let k = BitString::random(64, &mut rng);
            let c = vernam_encrypt(&m, &k).unwrap();
            assert_eq!(vernam_decrypt(&c, &k).unwrap(), m);
        }
    }

    #[test]
    fn parity_examples() {
        assert!(bs("1101").parity(&[0, 1, 2, 3]).unwrap());
        assert!(!bs("1101").parity(&[]).unwrap());
        assert_eq!(
            bs("1101").parity(&[4]),
            Err(BitsError::IndexOutOfRange { index: 4, len: 4 })
        );
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3]).is_err());
        let s = bs("1100101");
        assert_eq!(s.permute(&Permutation::identity(7)).unwrap(), s);
    }

    #[test]
    fn random_bits_basics() {
        assert!(BitString::random(0, &mut SimRng::new(3)).is_empty());
        assert_eq!(
            BitString::random(1000, &mut SimRng::new(3)),
            BitString::random(1000, &mut SimRng::new(3))
        );
        let ones = BitString::random(1_000_000, &mut SimRng::new(9)).count_ones();
        let frac = ones as f64 / 1e6;
        assert!((0.497..=0.503).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn hex_encoding() {
        let s = bs("10110");
        assert_eq!(s.to_hex(), "b0");
        assert_eq!(BitString::from_hex("b0", 5).unwrap(), s);
        assert!(BitString::from_hex("zz", 5).is_err());
    }

    #[test]
    fn range_parity_matches_naive() {
        let s = BitString::random(300, &mut SimRng::new(4));
        for (a, b) in [(0, 300), (3, 70), (64, 128), (63, 65), (10, 10), (130, 299)] {
            let naive = (a..b).filter(|&i| s.get(i)).count() % 2 == 1;
            assert_eq!(s.range_parity(a, b), naive, "{a}..{b}");
        }
    }

    #[test]
    fn window_parity_matches_naive() {
        let mut rng = SimRng::new(8);
        let key = BitString::random(150, &mut rng);
        let seed = BitString::random(400, &mut rng);
        for off in [0, 1, 63, 64, 65, 200, 250] {
            let naive = (0..150).filter(|&i| key.get(i) && seed.get(off + i)).count() % 2 == 1;
            assert_eq!(key.and_parity_window(&seed, off), naive);
        }
    }

    fn arb_bits(len: usize) -> impl Strategy<Value = BitString> {
        proptest::collection::vec(any::<bool>(), len).prop_map(BitString::from_bools)
    }

    proptest! {
        #[test]
        fn xor_group_laws((a, b, c) in (0usize..200).prop_flat_map(|n| (arb_bits(n), arb_bits(n), arb_bits(n)))) {
            let zero = BitString::zeros(a.len());
            prop_assert_eq!(a.xor(&zero).unwrap(), a.clone());
            prop_assert_eq!(a.xor(&a).unwrap(), zero);
            prop_assert_eq!(a.xor(&b).unwrap(), b.xor(&a).unwrap());
            prop_assert_eq!(a.xor(&b).unwrap().xor(&c).unwrap(), a.xor(&b.xor(&c).unwrap()).unwrap());
        }

        #[test]
        fn parity_is_linear(
            (x, y, pos) in (1usize..200).prop_flat_map(|n| (arb_bits(n), arb_bits(n), proptest::collection::vec(0..n, 0..50)))
        ) {
            let lhs = x.parity(&pos).unwrap() ^ y.parity(&pos).unwrap();
            prop_assert_eq!(lhs, x.xor(&y).unwrap().parity(&pos).unwrap());
        }

        #[test]
        fn permute_roundtrip_preserves_weight(seed in any::<u64>(), n in 0usize..300) {
            let mut rng = SimRng::new(seed);
            let s = BitString::random(n, &mut rng);
            let p = Permutation::random(n, &mut rng);
            let t = s.permute(&p).unwrap();
            prop_assert_eq!(t.count_ones(), s.count_ones());
            prop_assert_eq!(t.permute(&p.inverse()).unwrap(), s);
        }

        #[test]
        fn hex_roundtrip(s in (0usize..100).prop_flat_map(arb_bits)) {
            prop_assert_eq!(BitString::from_hex(&s.to_hex(), s.len()).unwrap(), s);
        }
    }
}
