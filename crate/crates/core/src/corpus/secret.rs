use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvipError};

/// Binary secret vector s ∈ {0,1}^{d_s}, held by the user side only.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Secret {
    bits: Vec<u8>,
}

impl Secret {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(SvipError::InvalidArgument(
                "secret bits must be 0 or 1".into(),
            ));
        }
        Ok(Secret { bits })
    }

    pub fn sample(d_s: usize, rng: &mut impl RngCore) -> Self {
        assert!(d_s >= 1, "secret must have at least one bit");
        let bits = (0..d_s).map(|_| (rng.next_u32() & 1) as u8).collect();
        Secret { bits }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bits as ±-free f64 values for network input.
    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    /// Lowercase hex, ceil(d_s/4) digits, most-significant bit first.
    pub fn to_hex(&self) -> String {
        let digits = self.bits.len().div_ceil(4);
        let mut out = String::with_capacity(digits);
        // left-pad the bit string to a multiple of 4 with leading zeros
        let pad = digits * 4 - self.bits.len();
        let mut nibble = 0u8;
        let mut filled = pad;
        for &b in &self.bits {
            nibble = (nibble << 1) | b;
            filled += 1;
            if filled == 4 {
                out.push(char::from_digit(nibble as u32, 16).unwrap());
                nibble = 0;
                filled = 0;
            }
        }
        out
    }

    pub fn from_hex(hex: &str, d_s: usize) -> Result<Self> {
        let digits = d_s.div_ceil(4);
        if hex.len() != digits {
            return Err(SvipError::InvalidArgument(format!(
                "expected {digits} hex digits for {d_s} bits, got {}",
                hex.len()
            )));
        }
        let mut all_bits = Vec::with_capacity(digits * 4);
        for c in hex.chars() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| SvipError::InvalidArgument(format!("bad hex digit {c}")))?
                as u8;
            for k in (0..4).rev() {
                all_bits.push((v >> k) & 1);
            }
        }
        let pad = digits * 4 - d_s;
        if all_bits[..pad].iter().any(|&b| b != 0) {
            return Err(SvipError::InvalidArgument(
                "hex encodes more significant bits than the secret holds".into(),
            ));
        }
        Ok(Secret {
            bits: all_bits[pad..].to_vec(),
        })
    }

    pub fn hamming_distance(&self, other: &Secret) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip_msb_first() {
        // 6 bits 101101 → value 0b101101 = 0x2d, two digits.
        let s = Secret::from_bits(vec![1, 0, 1, 1, 0, 1]).unwrap();
        assert_eq!(s.to_hex(), "2d");
        assert_eq!(Secret::from_hex("2d", 6).unwrap(), s);
    }

    #[test]
    fn hex_width_is_ceil_of_quarter() {
        let s = Secret::from_bits(vec![1; 16]).unwrap();
        assert_eq!(s.to_hex(), "ffff");
        let s = Secret::from_bits(vec![0; 5]).unwrap();
        assert_eq!(s.to_hex().len(), 2);
    }

    #[test]
    fn rejects_non_binary_bits() {
        assert!(Secret::from_bits(vec![0, 2]).is_err());
    }

    #[test]
    fn sampled_secret_has_requested_length() {
        let mut rng = crate::numerics::rng::substream(0, "s");
        let s = Secret::sample(48, &mut rng);
        assert_eq!(s.len(), 48);
        assert_eq!(s.to_hex().len(), 12);
    }
}
