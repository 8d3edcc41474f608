//! Arithmetic in the integer quotient ring `Z_q` for a prime `q`, plus the
//! fixed-point codec that maps real-valued parameters into the ring.
//!
//! Every protocol value lives in `[0, q)`. Negative plaintexts are stored as
//! their residue and recovered with [`RingModulus::lift`], which picks the
//! representative in `(-q/2, q/2]`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `2^61 - 1`, a Mersenne prime. Products fit a 128-bit intermediate.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// Default fixed-point scale: two decimal digits.
pub const DEFAULT_SCALE: u64 = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RingError {
    #[error("modulus {0} is not a prime below 2^63")]
    InvalidModulus(u64),
    #[error("modulus mismatch: {left} vs {right}")]
    ModulusMismatch { left: u64, right: u64 },
    #[error("value {value} is not reduced modulo {modulus}")]
    Unreduced { value: u64, modulus: u64 },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("tensor of shape {shape:?} cannot hold {len} elements")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("value {value} is outside the representable range (|x| < {limit})")]
    OutOfRange { value: f64, limit: f64 },
    #[error("invalid fixed-point scale {0}")]
    InvalidScale(u64),
}

/// A prime modulus `q < 2^63`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct RingModulus(u64);

impl Default for RingModulus {
    fn default() -> Self {
        RingModulus(MERSENNE_61)
    }
}

impl TryFrom<u64> for RingModulus {
    type Error = RingError;
    fn try_from(q: u64) -> Result<Self, RingError> {
        RingModulus::new(q)
    }
}

impl From<RingModulus> for u64 {
    fn from(m: RingModulus) -> u64 {
        m.0
    }
}

impl fmt::Display for RingModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl RingModulus {
    pub fn new(q: u64) -> Result<Self, RingError> {
        if q >= 1 << 63 || !is_prime(q) {
            return Err(RingError::InvalidModulus(q));
        }
        Ok(RingModulus(q))
    }

    pub const fn mersenne61() -> Self {
        RingModulus(MERSENNE_61)
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    /// Largest non-negative representative of the centered range, `(q-1)/2`.
    #[inline]
    pub fn half(self) -> u64 {
        (self.0 - 1) / 2
    }

    pub fn element(self, value: u64) -> Result<RingElement, RingError> {
        if value >= self.0 {
            return Err(RingError::Unreduced {
                value,
                modulus: self.0,
            });
        }
        Ok(RingElement {
            value,
            modulus: self,
        })
    }

    #[inline]
    pub fn reduce(self, x: u64) -> u64 {
        x % self.0
    }

    /// Reduces a 128-bit value. Uses folding for the Mersenne modulus.
    #[inline]
    pub fn reduce_wide(self, x: u128) -> u64 {
        if self.0 == MERSENNE_61 {
            let m = MERSENNE_61 as u128;
            let s = (x & m) + (x >> 61);
            let s = (s & m) + (s >> 61);
            let mut r = s as u64;
            if r >= MERSENNE_61 {
                r -= MERSENNE_61;
            }
            r
        } else {
            (x % self.0 as u128) as u64
        }
    }

    #[inline]
    pub fn reduce_signed(self, x: i128) -> u64 {
        let q = self.0 as i128;
        x.rem_euclid(q) as u64
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.0 {
            s - self.0
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.0 - b
        }
    }

    #[inline]
    pub fn neg(self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.0 - a
        }
    }

    #[inline]
    pub fn mul(self, a: u64, b: u64) -> u64 {
        self.reduce_wide(a as u128 * b as u128)
    }

    /// Centered representative of `a` in `(-q/2, q/2]`.
    #[inline]
    pub fn lift(self, a: u64) -> i64 {
        if a <= self.half() {
            a as i64
        } else {
            a as i64 - self.0 as i64
        }
    }

    #[inline]
    pub fn from_signed(self, x: i64) -> u64 {
        self.reduce_signed(x as i128)
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> u64 {
        rng.gen_range(0..self.0)
    }

    /// Inner product of two equal-length slices.
    pub fn dot(self, a: &[u64], b: &[u64]) -> u64 {
        debug_assert_eq!(a.len(), b.len());
        let mut acc: u128 = 0;
        for (x, y) in a.iter().zip(b) {
            acc += self.mul(*x, *y) as u128;
        }
        self.reduce_wide(acc)
    }
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut r = 1u64;
        b %= n;
        while e > 0 {
            if e & 1 == 1 {
                r = mulmod(r, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        r
    };
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in BASES {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// A single residue together with its modulus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RingElement {
    value: u64,
    modulus: RingModulus,
}

impl RingElement {
    pub fn zero(modulus: RingModulus) -> Self {
        RingElement { value: 0, modulus }
    }

    /// Reduces `v` into the ring.
    pub fn from_u64(modulus: RingModulus, v: u64) -> Self {
        RingElement {
            value: modulus.reduce(v),
            modulus,
        }
    }

    pub fn one(modulus: RingModulus) -> Self {
        RingElement { value: 1, modulus }
    }

    pub fn value(self) -> u64 {
        self.value
    }

    pub fn modulus(self) -> RingModulus {
        self.modulus
    }

    fn check(self, other: RingElement) -> Result<RingModulus, RingError> {
        if self.modulus != other.modulus {
            return Err(RingError::ModulusMismatch {
                left: self.modulus.0,
                right: other.modulus.0,
            });
        }
        Ok(self.modulus)
    }

    pub fn add(self, other: RingElement) -> Result<RingElement, RingError> {
        let m = self.check(other)?;
        Ok(RingElement {
            value: m.add(self.value, other.value),
            modulus: m,
        })
    }

    pub fn sub(self, other: RingElement) -> Result<RingElement, RingError> {
        let m = self.check(other)?;
        Ok(RingElement {
            value: m.sub(self.value, other.value),
            modulus: m,
        })
    }

    pub fn mul(self, other: RingElement) -> Result<RingElement, RingError> {
        let m = self.check(other)?;
        Ok(RingElement {
            value: m.mul(self.value, other.value),
            modulus: m,
        })
    }

    pub fn neg(self) -> RingElement {
        RingElement {
            value: self.modulus.neg(self.value),
            modulus: self.modulus,
        }
    }

    pub fn centered_lift(self) -> i64 {
        self.modulus.lift(self.value)
    }
}

impl fmt::Display for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod {})", self.value, self.modulus.0)
    }
}

/// Dense row-major tensor of residues.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingTensor {
    modulus: RingModulus,
    shape: Vec<usize>,
    data: Vec<u64>,
}

impl RingTensor {
    pub fn new(modulus: RingModulus, shape: Vec<usize>, data: Vec<u64>) -> Result<Self, RingError> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(RingError::BadLength {
                shape,
                len: data.len(),
            });
        }
        if let Some(&value) = data.iter().find(|&&v| v >= modulus.0) {
            return Err(RingError::Unreduced {
                value,
                modulus: modulus.0,
            });
        }
        Ok(RingTensor {
            modulus,
            shape,
            data,
        })
    }

    pub fn zeros(modulus: RingModulus, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        RingTensor {
            modulus,
            shape,
            data: vec![0; len],
        }
    }

    pub fn scalar(e: RingElement) -> Self {
        RingTensor {
            modulus: e.modulus,
            shape: vec![1],
            data: vec![e.value],
        }
    }

    /// Row vector of shape `[1, n]`.
    pub fn row(modulus: RingModulus, data: Vec<u64>) -> Result<Self, RingError> {
        let n = data.len();
        RingTensor::new(modulus, vec![1, n], data)
    }

    pub fn random<R: Rng + ?Sized>(modulus: RingModulus, shape: Vec<usize>, rng: &mut R) -> Self {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| modulus.sample(rng)).collect();
        RingTensor {
            modulus,
            shape,
            data,
        }
    }

    pub fn modulus(&self) -> RingModulus {
        self.modulus
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> RingElement {
        RingElement {
            value: self.data[i],
            modulus: self.modulus,
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, RingError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(RingError::BadLength {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    fn check_same(&self, other: &RingTensor) -> Result<(), RingError> {
        if self.modulus != other.modulus {
            return Err(RingError::ModulusMismatch {
                left: self.modulus.0,
                right: other.modulus.0,
            });
        }
        if self.shape != other.shape {
            return Err(RingError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &RingTensor, f: impl Fn(u64, u64) -> u64) -> Result<Self, RingError> {
        self.check_same(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(RingTensor {
            modulus: self.modulus,
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &RingTensor) -> Result<Self, RingError> {
        let m = self.modulus;
        self.zip_with(other, |a, b| m.add(a, b))
    }

    pub fn sub(&self, other: &RingTensor) -> Result<Self, RingError> {
        let m = self.modulus;
        self.zip_with(other, |a, b| m.sub(a, b))
    }

    /// Element-wise (Hadamard) product.
    pub fn hadamard(&self, other: &RingTensor) -> Result<Self, RingError> {
        let m = self.modulus;
        self.zip_with(other, |a, b| m.mul(a, b))
    }

    pub fn neg(&self) -> Self {
        let m = self.modulus;
        self.map(|a| m.neg(a))
    }

    pub fn scale(&self, c: u64) -> Self {
        let m = self.modulus;
        let c = m.reduce(c);
        self.map(|a| m.mul(a, c))
    }

    pub fn map(&self, f: impl Fn(u64) -> u64) -> Self {
        RingTensor {
            modulus: self.modulus,
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    /// Matrix product of a `[p, r]` and an `[r, c]` tensor.
    pub fn matmul(&self, other: &RingTensor) -> Result<Self, RingError> {
        if self.modulus != other.modulus {
            return Err(RingError::ModulusMismatch {
                left: self.modulus.0,
                right: other.modulus.0,
            });
        }
        let (p, r, c) = match (self.shape.as_slice(), other.shape.as_slice()) {
            ([p, r1], [r2, c]) if r1 == r2 => (*p, *r1, *c),
            _ => {
                return Err(RingError::ShapeMismatch {
                    left: self.shape.clone(),
                    right: other.shape.clone(),
                })
            }
        };
        let m = self.modulus;
        let mut acc = vec![0u128; p * c];
        // Reduced products are below 2^63, so the u128 accumulator holds
        // 2^65 of them before it can overflow.
        for i in 0..p {
            let out = &mut acc[i * c..(i + 1) * c];
            for k in 0..r {
                let a = self.data[i * r + k];
                if a == 0 {
                    continue;
                }
                let row = &other.data[k * c..(k + 1) * c];
                for (o, &b) in out.iter_mut().zip(row) {
                    *o += m.mul(a, b) as u128;
                }
            }
        }
        Ok(RingTensor {
            modulus: m,
            shape: vec![p, c],
            data: acc.into_iter().map(|v| m.reduce_wide(v)).collect(),
        })
    }
}

/// Maps reals to ring elements by truncating `x * scale` toward zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    scale: u64,
    modulus: RingModulus,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec {
            scale: DEFAULT_SCALE,
            modulus: RingModulus::default(),
        }
    }
}

/// Window inside which `x * scale` is treated as landing exactly on an
/// integer, widened to a few ulps for large magnitudes. Absorbs binary representation error such as
/// `0.29 * 100 = 28.999999999999996`.
pub const GRID_SNAP: f64 = 1e-9;

impl FixedPointCodec {
    pub fn new(scale: u64, modulus: RingModulus) -> Result<Self, RingError> {
        if scale == 0 || (scale as u128) * (scale as u128) * 4 >= modulus.value() as u128 {
            return Err(RingError::InvalidScale(scale));
        }
        Ok(FixedPointCodec { scale, modulus })
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn modulus(&self) -> RingModulus {
        self.modulus
    }

    /// Exclusive bound on `|x|` accepted by [`encode`](Self::encode).
    pub fn max_abs(&self) -> f64 {
        self.modulus.half() as f64 / self.scale as f64
    }

    /// Integer grid point for `x`: truncation of `x * scale` toward zero.
    pub fn to_fixed(&self, x: f64) -> Result<i64, RingError> {
        let limit = self.max_abs();
        if !x.is_finite() || x.abs() >= limit {
            return Err(RingError::OutOfRange { value: x, limit });
        }
        let y = x * self.scale as f64;
        let nearest = y.round();
        let window = GRID_SNAP.max(4.0 * f64::EPSILON * y.abs());
        let fixed = if (y - nearest).abs() <= window {
            nearest
        } else {
            y.trunc()
        };
        Ok(fixed as i64)
    }

    pub fn encode(&self, x: f64) -> Result<RingElement, RingError> {
        let v = self.to_fixed(x)?;
        Ok(RingElement {
            value: self.modulus.from_signed(v),
            modulus: self.modulus,
        })
    }

    pub fn decode(&self, a: RingElement) -> f64 {
        self.modulus.lift(a.value) as f64 / self.scale as f64
    }

    pub fn decode_raw(&self, a: u64) -> f64 {
        self.modulus.lift(a) as f64 / self.scale as f64
    }

    pub fn encode_tensor(&self, shape: Vec<usize>, xs: &[f64]) -> Result<RingTensor, RingError> {
        let data = xs
            .iter()
            .map(|&x| self.encode(x).map(|e| e.value))
            .collect::<Result<Vec<_>, _>>()?;
        RingTensor::new(self.modulus, shape, data)
    }

    pub fn decode_tensor(&self, t: &RingTensor) -> Vec<f64> {
        t.data().iter().map(|&a| self.decode_raw(a)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn q251() -> RingModulus {
        RingModulus::new(251).unwrap()
    }

    #[test]
    fn rejects_composite_and_oversized_moduli() {
        assert!(RingModulus::new(250).is_err());
        assert!(RingModulus::new(1).is_err());
        assert!(RingModulus::new((1u64 << 63) + 29).is_err());
        assert!(RingModulus::new(MERSENNE_61).is_ok());
        assert!(RingModulus::new(2).is_ok());
    }

    #[test]
    fn primality_small_table() {
        let primes: Vec<u64> = (0..100).filter(|&n| is_prime(n)).collect();
        assert_eq!(
            primes,
            vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97]
        );
        // Carmichael numbers and a strong pseudoprime to several bases.
        for n in [561u64, 1105, 1729, 3215031751] {
            assert!(!is_prime(n), "{n}");
        }
    }

    #[test]
    fn add_examples() {
        let m = RingModulus::mersenne61();
        let top = m.element(m.value() - 1).unwrap();
        assert_eq!(top.add(RingElement::one(m)).unwrap().value(), 0);
        let x = m.element(123456789).unwrap();
        assert_eq!(RingElement::zero(m).add(x).unwrap(), x);
        let q = q251();
        let a = q.element(200).unwrap();
        let b = q.element(100).unwrap();
        assert_eq!(a.add(b).unwrap().value(), 49);
    }

    #[test]
    fn mul_examples() {
        let q = q251();
        let x = q.element(16).unwrap();
        assert_eq!(x.mul(x).unwrap().value(), 5);
        assert_eq!(x.mul(RingElement::one(q)).unwrap(), x);
        let m = RingModulus::mersenne61();
        let a = m.element(1 << 60).unwrap();
        let two = m.element(2).unwrap();
        assert_eq!(a.mul(two).unwrap().value(), 1);
    }

    #[test]
    fn modulus_mismatch_is_an_error() {
        let a = q251().element(3).unwrap();
        let b = RingModulus::mersenne61().element(3).unwrap();
        assert!(matches!(a.add(b), Err(RingError::ModulusMismatch { .. })));
        assert!(matches!(a.mul(b), Err(RingError::ModulusMismatch { .. })));
    }

    #[test]
    fn centered_lift_examples() {
        let q = q251();
        assert_eq!(q.element(0).unwrap().centered_lift(), 0);
        assert_eq!(q.element(250).unwrap().centered_lift(), -1);
        assert_eq!(q.element(130).unwrap().centered_lift(), -121);
        assert_eq!(q.element(125).unwrap().centered_lift(), 125);
    }

    #[test]
    fn centered_lift_is_a_bijection_on_small_ring() {
        let q = q251();
        let mut seen = std::collections::HashSet::new();
        for v in 0..251 {
            let l = q.lift(v);
            assert!(l > -126 && l <= 125);
            assert_eq!(q.from_signed(l), v);
            assert!(seen.insert(l));
        }
    }

    #[test]
    fn encode_examples() {
        let c = FixedPointCodec::default();
        let q = c.modulus().value();
        assert_eq!(c.encode(0.456).unwrap().value(), 45);
        assert_eq!(c.encode(0.0).unwrap().value(), 0);
        assert_eq!(c.encode(-0.456).unwrap().value(), q - 45);
        assert_eq!(c.encode(0.29).unwrap().value(), 29);
        assert_eq!(c.encode(-0.29).unwrap().value(), q - 29);
    }

    #[test]
    fn decode_examples() {
        let c = FixedPointCodec::default();
        let m = c.modulus();
        assert_eq!(c.decode(c.encode(0.45).unwrap()), 0.45);
        assert_eq!(c.decode(m.element(m.value() - 45).unwrap()), -0.45);
        assert_eq!(c.decode(m.element(45).unwrap()), 0.45);
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let c = FixedPointCodec::default();
        assert!(matches!(c.encode(1e17), Err(RingError::OutOfRange { .. })));
        assert!(c.encode(f64::NAN).is_err());
        assert!(c.encode(f64::INFINITY).is_err());
    }

    #[test]
    fn codec_rejects_scale_too_large_for_modulus() {
        assert!(FixedPointCodec::new(0, RingModulus::default()).is_err());
        assert!(FixedPointCodec::new(100, q251()).is_err());
        assert!(FixedPointCodec::new(7, q251()).is_ok());
    }

    #[test]
    fn matmul_matches_naive_small_ring() {
        let q = q251();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let a = RingTensor::random(q, vec![3, 4], &mut rng);
        let b = RingTensor::random(q, vec![4, 2], &mut rng);
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0u64;
                for k in 0..4 {
                    s += a.data()[i * 4 + k] * b.data()[k * 2 + j];
                }
                assert_eq!(c.data()[i * 2 + j], s % 251);
            }
        }
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn mersenne_fold_matches_generic_reduction() {
        let m = RingModulus::mersenne61();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let x: u128 = rng.gen();
            assert_eq!(m.reduce_wide(x), (x % MERSENNE_61 as u128) as u64);
        }
        assert_eq!(m.reduce_wide(u128::MAX), (u128::MAX % MERSENNE_61 as u128) as u64);
    }
}
