//! Arithmetic in Z_{2^l} and the fixed-point encoding of reals into it.
//!
//! Ring values are carried as `u64` and kept reduced below `2^l`. Negative
//! reals use two's complement inside the ring.

use ndarray::Array2;

use crate::error::{Error, Result};

/// A ring of integers modulo `2^bits`, `1 <= bits <= 64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ring {
    bits: u32,
}

impl Default for Ring {
    fn default() -> Self {
        Ring { bits: 64 }
    }
}

impl Ring {
    pub fn new(bits: u32) -> Self {
        assert!((1..=64).contains(&bits), "ring width must be in 1..=64");
        Ring { bits }
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn mask(self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    #[inline]
    pub fn reduce(self, v: u64) -> u64 {
        v & self.mask()
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        self.reduce(a.wrapping_add(b))
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        self.reduce(a.wrapping_sub(b))
    }

    #[inline]
    pub fn neg(self, a: u64) -> u64 {
        self.reduce(a.wrapping_neg())
    }

    // 2^l divides 2^64, so reducing the wrapped 64-bit product is exact.
    #[inline]
    pub fn mul(self, a: u64, b: u64) -> u64 {
        self.reduce(a.wrapping_mul(b))
    }

    /// Two's-complement reading of a reduced value.
    #[inline]
    pub fn to_signed(self, v: u64) -> i64 {
        let v = self.reduce(v);
        if self.bits == 64 {
            v as i64
        } else {
            let shift = 64 - self.bits;
            ((v << shift) as i64) >> shift
        }
    }

    #[inline]
    pub fn from_signed(self, v: i64) -> u64 {
        self.reduce(v as u64)
    }

    /// Bytes needed to ship one element on the wire.
    pub fn element_bytes(self) -> usize {
        self.bits.div_ceil(8) as usize
    }

    pub fn element(self, value: u64) -> RingElement {
        RingElement { value: self.reduce(value), ring: self }
    }

    pub fn matmul(self, a: &Array2<u64>, b: &Array2<u64>) -> Result<Array2<u64>> {
        let (n, k) = a.dim();
        let (k2, m) = b.dim();
        if k != k2 {
            return Err(Error::shape("ring matmul", (k, m), (k2, m)));
        }
        let mut out = Array2::<u64>::zeros((n, m));
        for i in 0..n {
            for t in 0..k {
                let av = a[[i, t]];
                if av == 0 {
                    continue;
                }
                for j in 0..m {
                    out[[i, j]] = out[[i, j]].wrapping_add(av.wrapping_mul(b[[t, j]]));
                }
            }
        }
        out.mapv_inplace(|v| self.reduce(v));
        Ok(out)
    }

    pub fn add_assign(self, acc: &mut Array2<u64>, other: &Array2<u64>) {
        acc.zip_mut_with(other, |a, &b| *a = self.add(*a, b));
    }

    pub fn sub_matrix(self, a: &Array2<u64>, b: &Array2<u64>) -> Array2<u64> {
        let mut out = a.clone();
        out.zip_mut_with(b, |x, &y| *x = self.sub(*x, y));
        out
    }

    pub fn hadamard(self, a: &Array2<u64>, b: &Array2<u64>) -> Array2<u64> {
        let mut out = a.clone();
        out.zip_mut_with(b, |x, &y| *x = self.mul(*x, y));
        out
    }
}

/// A single element of Z_{2^l}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingElement {
    value: u64,
    ring: Ring,
}

impl RingElement {
    pub fn value(self) -> u64 {
        self.value
    }

    pub fn ring(self) -> Ring {
        self.ring
    }
}

impl core::ops::Add for RingElement {
    type Output = RingElement;
    fn add(self, rhs: Self) -> Self {
        debug_assert_eq!(self.ring, rhs.ring);
        self.ring.element(self.ring.add(self.value, rhs.value))
    }
}

impl core::ops::Sub for RingElement {
    type Output = RingElement;
    fn sub(self, rhs: Self) -> Self {
        debug_assert_eq!(self.ring, rhs.ring);
        self.ring.element(self.ring.sub(self.value, rhs.value))
    }
}

impl core::ops::Mul for RingElement {
    type Output = RingElement;
    fn mul(self, rhs: Self) -> Self {
        debug_assert_eq!(self.ring, rhs.ring);
        self.ring.element(self.ring.mul(self.value, rhs.value))
    }
}

pub fn ring_add(a: RingElement, b: RingElement) -> RingElement {
    a + b
}

pub fn ring_mul(a: RingElement, b: RingElement) -> RingElement {
    a * b
}

/// Fixed-point encoding with `frac_bits` fractional bits inside a [`Ring`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FixedPointCodec {
    ring: Ring,
    frac_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec { ring: Ring::default(), frac_bits: 16 }
    }
}

impl FixedPointCodec {
    pub fn new(ring: Ring, frac_bits: u32) -> Self {
        assert!(frac_bits + 1 < ring.bits(), "fractional bits must leave room for sign and integer part");
        FixedPointCodec { ring, frac_bits }
    }

    pub fn ring(&self) -> Ring {
        self.ring
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    fn scale(&self) -> f64 {
        libm::ldexp(1.0, self.frac_bits as i32)
    }

    /// Exclusive bound on encodable magnitudes, `2^(l-f-1)`.
    pub fn magnitude_bound(&self) -> f64 {
        libm::ldexp(1.0, (self.ring.bits() - self.frac_bits - 1) as i32)
    }

    pub fn encode(&self, x: f64) -> Result<u64> {
        let bound = self.magnitude_bound();
        if !x.is_finite() || libm::fabs(x) >= bound {
            return Err(Error::Overflow { value: x, bound });
        }
        let scaled = libm::round(x * self.scale()) as i64;
        Ok(self.ring.from_signed(scaled))
    }

    pub fn decode(&self, r: u64) -> f64 {
        self.ring.to_signed(r) as f64 / self.scale()
    }

    /// Arithmetic right shift by `f` bits, used after multiplying two encoded values.
    pub fn truncate(&self, r: u64) -> u64 {
        self.ring.from_signed(self.ring.to_signed(r) >> self.frac_bits)
    }

    pub fn encode_matrix(&self, x: &Array2<f64>) -> Result<Array2<u64>> {
        let mut out = Array2::<u64>::zeros(x.dim());
        for (o, &v) in out.iter_mut().zip(x.iter()) {
            *o = self.encode(v)?;
        }
        Ok(out)
    }

    pub fn decode_matrix(&self, r: &Array2<u64>) -> Array2<f64> {
        r.mapv(|v| self.decode(v))
    }

    pub fn truncate_matrix(&self, r: &Array2<u64>) -> Array2<u64> {
        r.mapv(|v| self.truncate(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r8() -> Ring {
        Ring::new(8)
    }

    #[test]
    fn encode_examples() {
        let c = FixedPointCodec::default();
        assert_eq!(c.encode(1.5).unwrap(), 98304);
        assert_eq!(c.encode(0.0).unwrap(), 0);
        assert_eq!(c.encode(-1.0).unwrap(), 0u64.wrapping_sub(65536));
    }

    #[test]
    fn decode_examples() {
        let c = FixedPointCodec::default();
        assert_eq!(c.decode(98304), 1.5);
        assert_eq!(c.decode(0), 0.0);
        assert_eq!(c.decode(0u64.wrapping_sub(65536)), -1.0);
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let c = FixedPointCodec::default();
        let bound = c.magnitude_bound();
        assert_eq!(bound, (1u64 << 47) as f64);
        assert!(matches!(c.encode(bound), Err(Error::Overflow { .. })));
        assert!(matches!(c.encode(-bound * 2.0), Err(Error::Overflow { .. })));
        assert!(c.encode(f64::NAN).is_err());
        assert!(c.encode(bound - 1.0).is_ok());
    }

    #[test]
    fn small_ring_arithmetic() {
        let r = r8();
        assert_eq!(ring_add(r.element(200), r.element(100)).value(), 44);
        assert_eq!(ring_mul(r.element(77), r.element(0)).value(), 0);
        // 16 * 17 = 272, and 272 - 256 = 16.
        let big = 16u128 * 17u128 % 256;
        assert_eq!(ring_mul(r.element(16), r.element(17)).value() as u128, big);
    }

    #[test]
    fn small_ring_signed_view() {
        let r = r8();
        assert_eq!(r.to_signed(255), -1);
        assert_eq!(r.to_signed(128), -128);
        assert_eq!(r.to_signed(127), 127);
        assert_eq!(r.from_signed(-1), 255);
    }

    #[test]
    fn truncate_examples() {
        let c = FixedPointCodec::default();
        let r = c.ring();
        let prod = r.mul(c.encode(1.5).unwrap(), c.encode(2.0).unwrap());
        let t = c.truncate(prod);
        let want = c.encode(3.0).unwrap();
        assert!(r.to_signed(r.sub(t, want)).abs() <= 1);
        assert_eq!(c.truncate(0), 0);

        let prod = r.mul(c.encode(-0.5).unwrap(), c.encode(0.5).unwrap());
        let got = c.decode(c.truncate(prod));
        assert!((got + 0.25).abs() <= 1.0 / 65536.0);
    }

    #[test]
    fn ring_matmul_matches_wide_integers() {
        let r = Ring::new(12);
        let a = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 977 + j * 331) % 4096) as u64);
        let b = Array2::from_shape_fn((4, 2), |(i, j)| ((i * 123 + j * 2011 + 7) % 4096) as u64);
        let got = r.matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let want: u128 = (0..4).map(|t| a[[i, t]] as u128 * b[[t, j]] as u128).sum::<u128>() % 4096;
                assert_eq!(got[[i, j]] as u128, want);
            }
        }
        assert!(r.matmul(&a, &a).is_err());
    }

    #[test]
    fn random_products_within_bound() {
        use rand::{Rng, SeedableRng};
        let c = FixedPointCodec::default();
        let r = c.ring();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let ulp = 1.0 / 65536.0;
        for _ in 0..100_000 {
            let x: f64 = rng.random_range(-100.0..100.0);
            let y: f64 = rng.random_range(-100.0..100.0);
            let got = c.decode(c.truncate(r.mul(c.encode(x).unwrap(), c.encode(y).unwrap())));
            let tol = 2.0 * ulp * (1.0 + x.abs() + y.abs());
            assert!((got - x * y).abs() <= tol, "x={x} y={y} got={got}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_within_half_ulp(x in -1.0e9f64..1.0e9) {
            let c = FixedPointCodec::default();
            let back = c.decode(c.encode(x).unwrap());
            prop_assert!((back - x).abs() <= 0.5 / 65536.0);
        }

        #[test]
        fn addition_is_associative_and_commutative(a: u64, b: u64, c: u64, bits in 1u32..=64) {
            let r = Ring::new(bits);
            let (a, b, c) = (r.element(a), r.element(b), r.element(c));
            prop_assert_eq!((a + b) + c, a + (b + c));
            prop_assert_eq!(a + b, b + a);
            prop_assert!((a + b).value() <= r.mask());
        }
    }
}
