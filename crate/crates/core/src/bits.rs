use std::fmt;
use std::str::FromStr;

use crate::error::{QstError, Result};

/// A fixed-length binary configuration with entries in {0, 1}.
///
/// Basis indices treat position 0 as the most significant bit, so the
/// string `100` has index 4.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVector(Vec<u8>);

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector(vec![0; len])
    }

    pub fn ones(len: usize) -> Self {
        BitVector(vec![1; len])
    }

    /// Builds from raw bits; any nonzero entry is rejected.
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(QstError::Parse(format!(
                "bit {pos} has value {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(BitVector(bits))
    }

    pub fn one_hot(len: usize, pos: usize) -> Self {
        let mut bits = vec![0; len];
        bits[pos] = 1;
        BitVector(bits)
    }

    pub fn from_index(index: usize, len: usize) -> Self {
        let mut bits = vec![0; len];
        write_index_bits(index, &mut bits);
        BitVector(bits)
    }

    pub fn index(&self) -> usize {
        bits_to_index(&self.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

/// Index of a bit slice, position 0 most significant.
#[inline]
pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
}

/// Writes the `bits.len()` low bits of `index` into `bits`, most significant first.
#[inline]
pub fn write_index_bits(index: usize, bits: &mut [u8]) {
    let n = bits.len();
    for (i, b) in bits.iter_mut().enumerate() {
        *b = ((index >> (n - 1 - i)) & 1) as u8;
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitVector {
    type Err = QstError;

    fn from_str(s: &str) -> Result<Self> {
        s.bytes()
            .map(|c| match c {
                b'0' => Ok(0),
                b'1' => Ok(1),
                other => Err(QstError::Parse(format!(
                    "unexpected character {:?} in bit string {s:?}",
                    other as char
                ))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(BitVector)
    }
}

impl serde::Serialize for BitVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for BitVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl AsRef<[u8]> for BitVector {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_msb_first() {
        let v: BitVector = "100".parse().unwrap();
        assert_eq!(v.index(), 4);
        assert_eq!(BitVector::from_index(4, 3), v);
        assert_eq!(BitVector::one_hot(6, 0).index(), 32);
    }

    #[test]
    fn rejects_non_binary() {
        assert!("10a".parse::<BitVector>().is_err());
        assert!(BitVector::from_bits(vec![0, 2]).is_err());
    }

    #[test]
    fn display_round_trip() {
        for idx in 0..32 {
            let v = BitVector::from_index(idx, 5);
            let back: BitVector = v.to_string().parse().unwrap();
            assert_eq!(back, v);
        }
    }
}
