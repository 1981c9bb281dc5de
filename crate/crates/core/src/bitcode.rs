//! Binary words and the integer codes built on them.
//!
//! Naturals map one-to-one onto binary words by the length-increasing
//! lexicographic order `(ε,0) (0,1) (1,2) (00,3) (01,4) ...`. Lengths here are
//! exact: `literal_length(n) = ⌊log2(n+1)⌋`. The real-valued `log2 n`
//! convention used by the analytic coding-length models lives in `ufcc`.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Arbitrary-precision natural number.
pub type Nat = BigUint;

/// A finite binary word, most significant bit first.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    bits: Vec<bool>,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            bits: Vec::with_capacity(n),
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Run of `n` copies of `bit`.
    pub fn repeat(bit: bool, n: usize) -> Self {
        Self {
            bits: vec![bit; n],
        }
    }

    /// The low `width` bits of `value`, most significant first.
    pub fn from_u64(value: u64, width: usize) -> Self {
        let mut s = Self::with_capacity(width);
        s.push_u64(value, width);
        s
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        self.bits.get(i).copied()
    }

    pub fn push(&mut self, bit: bool) {
        self.bits.push(bit);
    }

    pub fn push_u64(&mut self, value: u64, width: usize) {
        for i in (0..width).rev() {
            self.bits.push(i < 64 && (value >> i) & 1 == 1);
        }
    }

    /// Appends `value` in exactly `width` bits. Fails if it does not fit.
    pub fn push_biguint(&mut self, value: &BigUint, width: usize) -> Result<()> {
        if value.bits() as usize > width {
            return Err(Error::Overflow(format!(
                "value of {} bits does not fit in {width}",
                value.bits()
            )));
        }
        for i in (0..width as u64).rev() {
            self.bits.push(value.bit(i));
        }
        Ok(())
    }

    pub fn extend_from(&mut self, other: &BitString) {
        self.bits.extend_from_slice(&other.bits);
    }

    pub fn concat(&self, other: &BitString) -> BitString {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    pub fn starts_with(&self, prefix: &BitString) -> bool {
        self.bits.starts_with(&prefix.bits)
    }

    pub fn split_at(&self, mid: usize) -> (BitString, BitString) {
        let (a, b) = self.bits.split_at(mid.min(self.len()));
        (Self::from_bits(a.to_vec()), Self::from_bits(b.to_vec()))
    }

    pub fn slice(&self, start: usize, end: usize) -> BitString {
        Self::from_bits(self.bits[start..end].to_vec())
    }

    /// Packs into bytes MSB-first, zero-filling the final byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    /// Inverse of [`BitString::to_bytes`] given the true bit count.
    pub fn from_bytes(bytes: &[u8], bit_len: usize) -> Result<Self> {
        if bit_len > bytes.len() * 8 {
            return Err(Error::Decode(format!(
                "{bit_len} bits requested from {} bytes",
                bytes.len()
            )));
        }
        let bits = (0..bit_len)
            .map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0)
            .collect();
        Ok(Self { bits })
    }

    /// Reads the word as an unsigned binary numeral.
    pub fn to_biguint(&self) -> BigUint {
        let mut n = BigUint::zero();
        for &b in &self.bits {
            n <<= 1u32;
            if b {
                n += 1u32;
            }
        }
        n
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString(\"{self}\")")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bits)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sequential reader over a [`BitString`].
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bits: &'a [bool],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(s: &'a BitString) -> Self {
        Self {
            bits: s.bits(),
            pos: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bits.len() - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        let b = *self
            .bits
            .get(self.pos)
            .ok_or_else(|| Error::Decode("unexpected end of bit stream".into()))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn read_bits(&mut self, n: usize) -> Result<BitString> {
        if n > self.remaining() {
            return Err(Error::Decode(format!(
                "needed {n} bits, {} remain",
                self.remaining()
            )));
        }
        let out = BitString::from_bits(self.bits[self.pos..self.pos + n].to_vec());
        self.pos += n;
        Ok(out)
    }

    pub fn read_u64(&mut self, width: usize) -> Result<u64> {
        if width > 64 {
            return Err(Error::Decode(format!("cannot read {width}-bit integer into u64")));
        }
        let mut v = 0u64;
        for _ in 0..width {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v)
    }

    pub fn read_biguint(&mut self, width: usize) -> Result<BigUint> {
        Ok(self.read_bits(width)?.to_biguint())
    }

    /// Reads one self-delimited natural.
    pub fn read_self_delimited(&mut self) -> Result<Nat> {
        let mut len = 0usize;
        while self.read_bit().map_err(|_| {
            Error::Decode("unterminated unary length prefix".into())
        })? {
            len += 1;
        }
        let payload = self.read_bits(len).map_err(|_| {
            Error::Decode(format!("self-delimited payload needs {len} bits"))
        })?;
        Ok(lex_decode(&payload))
    }

    /// The unread suffix.
    pub fn rest(&self) -> BitString {
        BitString::from_bits(self.bits[self.pos..].to_vec())
    }
}

/// `B(n)`: the `n`-th word in length-increasing lexicographic order.
pub fn lex_encode(n: &Nat) -> BitString {
    // n+1 in binary with its leading 1 removed
    let shifted = n + 1u32;
    let width = shifted.bits() as usize - 1;
    let mut s = BitString::with_capacity(width);
    for i in (0..width as u64).rev() {
        s.push(shifted.bit(i));
    }
    s
}

pub fn lex_decode(b: &BitString) -> Nat {
    let mut n = BigUint::one();
    for &bit in b.bits() {
        n <<= 1u32;
        if bit {
            n += 1u32;
        }
    }
    n - 1u32
}

/// `l(n) = ⌊log2(n+1)⌋`, the length of `B(n)`.
pub fn literal_length(n: &Nat) -> u64 {
    (n + 1u32).bits() - 1
}

/// `1^{l(n)} 0 B(n)`.
pub fn self_delimit(n: &Nat) -> BitString {
    let body = lex_encode(n);
    let mut s = BitString::repeat(true, body.len());
    s.push(false);
    s.extend_from(&body);
    s
}

pub fn self_delimit_u64(n: u64) -> BitString {
    self_delimit(&Nat::from(n))
}

/// Splits one self-delimited natural off the front of `stream`.
pub fn parse_self_delimited(stream: &BitString) -> Result<(Nat, BitString)> {
    let mut r = BitReader::new(stream);
    let n = r.read_self_delimited()?;
    Ok((n, r.rest()))
}

/// `⟨m,n⟩ = self_delimit(m) ++ B(n)`.
pub fn pair_encode(m: &Nat, n: &Nat) -> BitString {
    self_delimit(m).concat(&lex_encode(n))
}

/// Inverse of [`pair_encode`]; the second component takes the whole remainder.
pub fn pair_decode(bits: &BitString) -> Result<(Nat, Nat)> {
    let (m, rest) = parse_self_delimited(bits)?;
    Ok((m, lex_decode(&rest)))
}

/// `Σ 2^{-l_i}` as an exact rational.
pub fn kraft_sum(lengths: &[u64]) -> BigRational {
    let Some(&max) = lengths.iter().max() else {
        return BigRational::zero();
    };
    let num: BigUint = lengths
        .iter()
        .map(|&l| BigUint::one() << (max - l))
        .sum();
    BigRational::new(BigInt::from(num), BigInt::from(BigUint::one() << max))
}

/// Whether `lengths` could be the word lengths of a prefix code.
pub fn kraft_feasible(lengths: &[u64]) -> bool {
    kraft_sum(lengths) <= BigRational::one()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn nat(n: u64) -> Nat {
        Nat::from(n)
    }

    #[test]
    fn lexicographic_order_matches_table() {
        let table = ["", "0", "1", "00", "01", "10", "11", "000"];
        for (n, w) in table.iter().enumerate() {
            assert_eq!(lex_encode(&nat(n as u64)), bs(w));
            assert_eq!(lex_decode(&bs(w)), nat(n as u64));
        }
    }

    #[test]
    fn literal_lengths() {
        assert_eq!(literal_length(&nat(0)), 0);
        assert_eq!(literal_length(&nat(6)), 2);
        assert_eq!(literal_length(&nat(7)), 3);
    }

    #[test]
    fn self_delimited_examples() {
        assert_eq!(self_delimit_u64(0), bs("0"));
        assert_eq!(self_delimit_u64(5), bs("11010"));
        assert_eq!(self_delimit_u64(3), bs("11000"));
    }

    #[test]
    fn self_delimited_parse_matches_exhaustive_oracle() {
        // every 5-bit stream either parses to a unique n with the rest as suffix,
        // or is malformed; the parsed prefix must re-encode to itself
        for v in 0u64..32 {
            let stream = BitString::from_u64(v, 5);
            match parse_self_delimited(&stream) {
                Ok((n, rest)) => {
                    assert_eq!(self_delimit(&n).concat(&rest), stream);
                }
                Err(_) => {
                    let ones = stream.bits().iter().take_while(|&&b| b).count();
                    assert!(ones == 5 || 2 * ones + 1 > 5);
                }
            }
        }
        let (n, rest) = parse_self_delimited(&bs("110101")).unwrap();
        assert_eq!((n, rest), (nat(5), bs("1")));
        assert_eq!(parse_self_delimited(&bs("0")).unwrap(), (nat(0), bs("")));
        assert!(parse_self_delimited(&bs("111")).is_err());
        assert!(parse_self_delimited(&bs("1101")).is_err());
    }

    #[test]
    fn pair_examples() {
        assert_eq!(pair_encode(&nat(5), &nat(2)), bs("110101"));
        assert_eq!(pair_encode(&nat(0), &nat(0)), bs("0"));
        assert_eq!(pair_encode(&nat(1), &nat(3)), bs("10000"));
        assert_eq!(pair_decode(&bs("10000")).unwrap(), (nat(1), nat(3)));
    }

    #[test]
    fn kraft_examples() {
        let r = |a: i64, b: i64| BigRational::new(a.into(), b.into());
        assert_eq!(kraft_sum(&[1, 2, 3, 3]), r(1, 1));
        assert_eq!(kraft_sum(&[1, 1]), r(1, 1));
        assert_eq!(kraft_sum(&[1, 1, 1]), r(3, 2));
        assert!(!kraft_feasible(&[1, 1, 1]));
    }

    #[test]
    fn byte_packing() {
        let s = bs("1010000011");
        let bytes = s.to_bytes();
        assert_eq!(bytes, vec![0b1010_0000, 0b1100_0000]);
        assert_eq!(BitString::from_bytes(&bytes, 10).unwrap(), s);
        assert!(BitString::from_bytes(&bytes, 17).is_err());
    }

    #[test]
    fn lex_roundtrip_below_2_16() {
        for n in 0u64..(1 << 16) {
            let w = lex_encode(&nat(n));
            assert_eq!(w.len() as u64, literal_length(&nat(n)));
            assert_eq!(lex_decode(&w), nat(n));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn self_delimit_parses_from_any_suffix(n in any::<u64>(), suffix in proptest::collection::vec(any::<bool>(), 0..40)) {
                let s = BitString::from_bits(suffix);
                let code = self_delimit(&Nat::from(n));
                prop_assert_eq!(code.len() as u64, 2 * literal_length(&Nat::from(n)) + 1);
                let (m, rest) = parse_self_delimited(&code.concat(&s)).unwrap();
                prop_assert_eq!(m, Nat::from(n));
                prop_assert_eq!(rest, s);
            }

            #[test]
            fn concatenation_is_associative(a in proptest::collection::vec(any::<bool>(), 0..20),
                                            b in proptest::collection::vec(any::<bool>(), 0..20),
                                            c in proptest::collection::vec(any::<bool>(), 0..20)) {
                let (a, b, c) = (BitString::from_bits(a), BitString::from_bits(b), BitString::from_bits(c));
                prop_assert_eq!(a.concat(&b).concat(&c), a.concat(&b.concat(&c)));
                prop_assert_eq!(a.concat(&BitString::new()), a.clone());
            }
        }
    }
}
