//! Fixed-point encoding into the ring Z/QZ with Q = 2^ring_bits.
//!
//! Elements are stored in 128 bits so ring widths up to 128 are available;
//! the default remains the 64-bit ring. Wider rings leave more headroom
//! between the scale-B^2 products and Q, which drives the wrap-failure
//! probability of local share truncation towards zero.

use super::MpcError;
use serde::{Deserialize, Serialize};

/// Fixed-point layout: reals are scaled by B = 2^precision_bits, rounded
/// to the nearest integer and reduced into the ring. Negative values use
/// two's-complement-style centering at Q/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    pub precision_bits: u32,
    pub ring_bits: u32,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig { precision_bits: 16, ring_bits: 64 }
    }
}

/// A single element of Z/QZ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingElement(pub u128);

impl FixedPointConfig {
    pub fn new(precision_bits: u32, ring_bits: u32) -> Self {
        assert!(ring_bits >= 8 && ring_bits <= 128, "ring_bits must be in 8..=128");
        assert!(precision_bits > 0 && precision_bits < ring_bits, "0 < L < ring width required");
        FixedPointConfig { precision_bits, ring_bits }
    }

    /// The scaling factor B = 2^L as a float.
    pub fn scale(&self) -> f64 {
        2f64.powi(self.precision_bits as i32)
    }

    fn mask(&self) -> u128 {
        if self.ring_bits == 128 {
            u128::MAX
        } else {
            (1u128 << self.ring_bits) - 1
        }
    }

    /// Bytes needed to transmit one ring element.
    pub fn element_bytes(&self) -> usize {
        self.ring_bits.div_ceil(8) as usize
    }

    pub fn reduce(&self, v: u128) -> RingElement {
        RingElement(v & self.mask())
    }

    /// Signed representative in [-Q/2, Q/2).
    pub fn centered(&self, v: RingElement) -> i128 {
        if self.ring_bits == 128 {
            v.0 as i128
        } else {
            let q = 1u128 << self.ring_bits;
            if v.0 >= q / 2 {
                (v.0 as i128) - (q as i128)
            } else {
                v.0 as i128
            }
        }
    }

    pub fn add(&self, a: RingElement, b: RingElement) -> RingElement {
        self.reduce(a.0.wrapping_add(b.0))
    }

    pub fn sub(&self, a: RingElement, b: RingElement) -> RingElement {
        self.reduce(a.0.wrapping_sub(b.0))
    }

    pub fn neg(&self, a: RingElement) -> RingElement {
        self.reduce(a.0.wrapping_neg())
    }

    pub fn mul(&self, a: RingElement, b: RingElement) -> RingElement {
        self.reduce(a.0.wrapping_mul(b.0))
    }

    /// Multiply by 2^k in the ring (exact).
    pub fn shl(&self, a: RingElement, k: u32) -> RingElement {
        self.reduce(a.0.wrapping_shl(k))
    }

    /// Arithmetic right shift of the centered representative with
    /// round-to-nearest, re-encoded. This is the local per-share
    /// truncation primitive; summed across shares it loses at most half a
    /// unit per share and carries no systematic bias.
    pub fn shift_right(&self, a: RingElement, k: u32) -> RingElement {
        let c = self.centered(a);
        let rounded = (c.wrapping_add(1i128 << (k - 1))) >> k;
        self.from_signed(rounded)
    }

    /// Truncate a scale-B^2 product back to scale B.
    pub fn trunc(&self, a: RingElement) -> RingElement {
        self.shift_right(a, self.precision_bits)
    }

    pub fn from_signed(&self, v: i128) -> RingElement {
        self.reduce(v as u128)
    }

    pub fn encode(&self, x: f64) -> Result<RingElement, MpcError> {
        let scaled = x * self.scale();
        let half_q = 2f64.powi(self.ring_bits as i32 - 1);
        if !scaled.is_finite() || scaled.abs() >= half_q {
            return Err(MpcError::Overflow { value: x });
        }
        let rounded = scaled.round() as i128;
        Ok(self.reduce(rounded as u128))
    }

    pub fn decode(&self, v: RingElement) -> f64 {
        self.centered(v) as f64 / self.scale()
    }

    pub fn uniform(&self, rng: &mut impl rand::RngCore) -> RingElement {
        let v = ((rng.next_u64() as u128) << 64) | rng.next_u64() as u128;
        self.reduce(v)
    }

    pub fn zero(&self) -> RingElement {
        RingElement(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_positive() {
        let cfg = FixedPointConfig::new(16, 64);
        assert_eq!(cfg.encode(1.5).unwrap().0, 98304);
    }

    #[test]
    fn encode_zero() {
        let cfg = FixedPointConfig::new(16, 64);
        assert_eq!(cfg.encode(0.0).unwrap().0, 0);
    }

    #[test]
    fn encode_negative_centers_at_q() {
        let cfg = FixedPointConfig::new(16, 64);
        // -0.25 * 2^16 = -16384, i.e. Q - 16384.
        assert_eq!(cfg.encode(-0.25).unwrap().0, (1u128 << 64) - 16384);
    }

    #[test]
    fn encode_decode_round_trip_error_bound() {
        for ring in [64u32, 96, 128] {
            let cfg = FixedPointConfig::new(16, ring);
            for &x in &[0.3, -7.25, 1e-4, 511.0, -0.125] {
                let e = cfg.encode(x).unwrap();
                assert!((cfg.decode(e) - x).abs() <= 0.5 / cfg.scale());
            }
        }
    }

    #[test]
    fn encode_overflow_detected() {
        let cfg = FixedPointConfig::new(16, 32);
        // 2^15 * 2^16 = 2^31 = Q/2 must overflow.
        assert!(matches!(cfg.encode(32768.0), Err(MpcError::Overflow { .. })));
        assert!(cfg.encode(32767.0).is_ok());
    }

    #[test]
    fn small_ring_arithmetic_wraps() {
        let cfg = FixedPointConfig::new(8, 16);
        let a = cfg.encode(100.0).unwrap();
        let b = cfg.encode(-100.0).unwrap();
        assert_eq!(cfg.add(a, b).0, 0);
        let c = cfg.centered(cfg.encode(-1.0).unwrap());
        assert_eq!(c, -256);
    }

    #[test]
    fn trunc_matches_floor_division() {
        let cfg = FixedPointConfig::new(16, 64);
        let v = cfg.encode(3.75).unwrap();
        let sq = cfg.mul(v, v); // scale B^2
        let back = cfg.trunc(sq);
        assert!((cfg.decode(back) - 3.75 * 3.75).abs() <= 2.0 / cfg.scale());
    }
}
