//! Arithmetic over `Z_p` (64-bit prime) and `Z_{2^k}`, with signed lifting
//! and fixed-point encoding.
//!
//! Elements are carried as raw `u128` words in the hot paths; the [`Ring`]
//! descriptor knows how to reduce them. [`RingElement`] pairs a value with its
//! descriptor for the checked, user-facing API.

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Largest prime below 2^64.
pub const DEFAULT_PRIME: u64 = u64::MAX - 58;
/// Ring exponent used for the power-of-two ring.
pub const DEFAULT_K: u32 = 72;
/// Default fixed-point fractional bits.
pub const DEFAULT_FRAC_BITS: u32 = 16;
/// Default bound on the bit length of signed plaintexts.
pub const DEFAULT_VALUE_BITS: u32 = 40;

#[derive(Debug, Error, PartialEq)]
pub enum RingError {
    #[error("descriptor mismatch: {0} vs {1}")]
    DescriptorMismatch(Ring, Ring),
    #[error("modulus {0} is not prime")]
    NotPrime(u128),
    #[error("invalid ring exponent k={0} (need 2 <= k <= 127)")]
    BadExponent(u128),
    #[error("invalid protocol parameters: {0}")]
    BadParams(String),
    #[error("fixed-point overflow: {value} does not fit in {bits} signed bits at f={frac}")]
    Overflow { value: f64, bits: u32, frac: u32 },
    #[error("element encoding: {0}")]
    Encoding(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RingKind {
    Prime64,
    Mod2k,
}

/// Ring descriptor: which structure, plus the protocol parameters that the
/// truncation and comparison protocols rely on.
///
/// `value_bits == 0` marks an arithmetic-only descriptor (small test fields).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ring {
    kind: RingKind,
    modulus_or_k: u128,
    frac_bits: u32,
    value_bits: u32,
    stat_sec: u32,
}

impl fmt::Debug for Ring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Ring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RingKind::Prime64 => write!(f, "Z_{}", self.modulus_or_k)?,
            RingKind::Mod2k => write!(f, "Z_2^{}", self.modulus_or_k)?,
        }
        if self.value_bits > 0 {
            write!(
                f,
                "(f={},l={},kappa={})",
                self.frac_bits, self.value_bits, self.stat_sec
            )?;
        }
        Ok(())
    }
}

impl Ring {
    /// `Z_p` with `p = 2^64 - 59`, `l = 40`, `kappa = 22`, `f = 16`.
    pub fn prime64() -> Ring {
        Ring::prime(DEFAULT_PRIME as u128)
            .and_then(|r| r.with_params(DEFAULT_FRAC_BITS, DEFAULT_VALUE_BITS, 22))
            .expect("default prime ring is valid")
    }

    /// `Z_{2^72}` with `l = 40`, `kappa = 31`, `f = 16`.
    pub fn mod2k72() -> Ring {
        Ring::mod2k(DEFAULT_K)
            .and_then(|r| r.with_params(DEFAULT_FRAC_BITS, DEFAULT_VALUE_BITS, 31))
            .expect("default 2^k ring is valid")
    }

    /// Arithmetic-only prime field. Use [`Ring::with_params`] to enable the
    /// interactive protocols.
    pub fn prime(p: u128) -> Result<Ring, RingError> {
        if p > u64::MAX as u128 || !is_prime_u64(p as u64) {
            return Err(RingError::NotPrime(p));
        }
        Ok(Ring {
            kind: RingKind::Prime64,
            modulus_or_k: p,
            frac_bits: 0,
            value_bits: 0,
            stat_sec: 0,
        })
    }

    pub fn mod2k(k: u32) -> Result<Ring, RingError> {
        if !(2..=127).contains(&k) {
            return Err(RingError::BadExponent(k as u128));
        }
        Ok(Ring {
            kind: RingKind::Mod2k,
            modulus_or_k: k as u128,
            frac_bits: 0,
            value_bits: 0,
            stat_sec: 0,
        })
    }

    /// Attach protocol parameters. Masked openings compute
    /// `x + 2^(l-1) + r` with `r < 2^(l+kappa)` and need the sum to stay below
    /// the modulus, hence `l + kappa <= bits - 2` for primes and `<= k - 1`
    /// for `Z_{2^k}`.
    pub fn with_params(
        mut self,
        frac_bits: u32,
        value_bits: u32,
        stat_sec: u32,
    ) -> Result<Ring, RingError> {
        if value_bits < 2 {
            return Err(RingError::BadParams(format!(
                "value bits {value_bits} must be at least 2"
            )));
        }
        if frac_bits >= value_bits {
            return Err(RingError::BadParams(format!(
                "f={frac_bits} must be below l={value_bits}"
            )));
        }
        let room = match self.kind {
            RingKind::Prime64 => self.bit_len().saturating_sub(2),
            RingKind::Mod2k => self.bit_len() - 1,
        };
        if value_bits + stat_sec > room {
            return Err(RingError::BadParams(format!(
                "l + kappa = {} exceeds {} for {}",
                value_bits + stat_sec,
                room,
                self
            )));
        }
        self.frac_bits = frac_bits;
        self.value_bits = value_bits;
        self.stat_sec = stat_sec;
        Ok(self)
    }

    pub fn kind(&self) -> RingKind {
        self.kind
    }

    /// The prime `p`, or the exponent `k`.
    pub fn modulus_or_k(&self) -> u128 {
        self.modulus_or_k
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn value_bits(&self) -> u32 {
        self.value_bits
    }

    pub fn stat_sec(&self) -> u32 {
        self.stat_sec
    }

    pub fn has_protocol_params(&self) -> bool {
        self.value_bits > 0
    }

    pub fn bit_len(&self) -> u32 {
        match self.kind {
            RingKind::Prime64 => 128 - self.modulus_or_k.leading_zeros(),
            RingKind::Mod2k => self.modulus_or_k as u32,
        }
    }

    #[inline]
    fn mask(&self) -> u128 {
        debug_assert_eq!(self.kind, RingKind::Mod2k);
        (1u128 << self.modulus_or_k) - 1
    }

    /// Bytes per serialized element: 8 for primes, 16 for `Z_{2^k}`.
    pub fn elem_bytes(&self) -> usize {
        match self.kind {
            RingKind::Prime64 => 8,
            RingKind::Mod2k => 16,
        }
    }

    /// Reduce an arbitrary 128-bit word.
    #[inline]
    pub fn reduce(&self, x: u128) -> u128 {
        match self.kind {
            RingKind::Mod2k => x & self.mask(),
            RingKind::Prime64 => {
                let p = self.modulus_or_k;
                let c = (1u128 << 64) - p;
                if c < (1 << 32) {
                    // p = 2^64 - c: fold the high word twice.
                    let x = (x >> 64) * c + (x & u64::MAX as u128);
                    let mut x = (x >> 64) * c + (x & u64::MAX as u128);
                    while x >= p {
                        x -= p;
                    }
                    x
                } else {
                    x % p
                }
            }
        }
    }

    #[inline]
    pub fn add(&self, a: u128, b: u128) -> u128 {
        match self.kind {
            RingKind::Mod2k => a.wrapping_add(b) & self.mask(),
            RingKind::Prime64 => {
                let s = a + b;
                if s >= self.modulus_or_k {
                    s - self.modulus_or_k
                } else {
                    s
                }
            }
        }
    }

    #[inline]
    pub fn sub(&self, a: u128, b: u128) -> u128 {
        match self.kind {
            RingKind::Mod2k => a.wrapping_sub(b) & self.mask(),
            RingKind::Prime64 => {
                if a >= b {
                    a - b
                } else {
                    a + self.modulus_or_k - b
                }
            }
        }
    }

    #[inline]
    pub fn neg(&self, a: u128) -> u128 {
        self.sub(0, a)
    }

    #[inline]
    pub fn mul(&self, a: u128, b: u128) -> u128 {
        match self.kind {
            RingKind::Mod2k => a.wrapping_mul(b) & self.mask(),
            RingKind::Prime64 => self.reduce(a * b),
        }
    }

    /// Encode a signed integer (must satisfy `|v| < q/2` to be liftable back).
    #[inline]
    pub fn from_i128(&self, v: i128) -> u128 {
        match self.kind {
            RingKind::Mod2k => (v as u128) & self.mask(),
            RingKind::Prime64 => {
                let p = self.modulus_or_k as i128;
                v.rem_euclid(p) as u128
            }
        }
    }

    #[inline]
    pub fn from_i64(&self, v: i64) -> u128 {
        self.from_i128(v as i128)
    }

    /// `a` if `a < q/2`, else `a - q`.
    #[inline]
    pub fn lift(&self, a: u128) -> i128 {
        match self.kind {
            RingKind::Mod2k => {
                let k = self.modulus_or_k as u32;
                if a >> (k - 1) == 0 {
                    a as i128
                } else {
                    a as i128 - (1i128 << (k - 1)) - (1i128 << (k - 1))
                }
            }
            RingKind::Prime64 => {
                let p = self.modulus_or_k;
                if a < p.div_ceil(2) {
                    a as i128
                } else {
                    a as i128 - p as i128
                }
            }
        }
    }

    /// `2^e` as a ring element.
    #[inline]
    pub fn pow2(&self, e: u32) -> u128 {
        self.reduce_big_pow2(e)
    }

    fn reduce_big_pow2(&self, e: u32) -> u128 {
        if e < 127 {
            self.reduce(1u128 << e)
        } else {
            let mut acc = 1u128;
            for _ in 0..e {
                acc = self.add(acc, acc);
            }
            acc
        }
    }

    /// Uniform element.
    pub fn random<R: RngCore + ?Sized>(&self, rng: &mut R) -> u128 {
        match self.kind {
            RingKind::Mod2k => {
                let mut b = [0u8; 16];
                rng.fill_bytes(&mut b);
                u128::from_le_bytes(b) & self.mask()
            }
            RingKind::Prime64 => {
                let p = self.modulus_or_k;
                let bits = self.bit_len();
                let m = if bits >= 64 {
                    u64::MAX
                } else {
                    (1u64 << bits) - 1
                };
                loop {
                    let v = (rng.next_u64() & m) as u128;
                    if v < p {
                        return v;
                    }
                }
            }
        }
    }

    /// Uniform integer in `[0, 2^bits)` embedded in the ring.
    pub fn random_bits<R: RngCore + ?Sized>(&self, rng: &mut R, bits: u32) -> u128 {
        debug_assert!(bits < 127);
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        let v = u128::from_le_bytes(b) & ((1u128 << bits) - 1);
        self.reduce(v)
    }

    /// Fixed-point encode: `round(v * 2^f) mod q`.
    pub fn fp_encode(&self, v: f64, f: u32) -> Result<u128, RingError> {
        let scaled = (v * (f as f64).exp2()).round();
        let bits = if self.value_bits > 0 {
            self.value_bits
        } else {
            self.bit_len() - 1
        };
        let bound = (bits as f64 - 1.0).exp2();
        if !scaled.is_finite() || scaled.abs() >= bound {
            return Err(RingError::Overflow {
                value: v,
                bits,
                frac: f,
            });
        }
        Ok(self.from_i128(scaled as i128))
    }

    pub fn fp_decode(&self, a: u128, f: u32) -> f64 {
        self.lift(a) as f64 / (f as f64).exp2()
    }

    pub fn write_elem(&self, a: u128, out: &mut Vec<u8>) {
        match self.kind {
            RingKind::Prime64 => out.extend_from_slice(&(a as u64).to_le_bytes()),
            RingKind::Mod2k => out.extend_from_slice(&a.to_le_bytes()),
        }
    }

    pub fn read_elem(&self, bytes: &[u8]) -> Result<u128, RingError> {
        if bytes.len() != self.elem_bytes() {
            return Err(RingError::Encoding(format!(
                "expected {} bytes, got {}",
                self.elem_bytes(),
                bytes.len()
            )));
        }
        let v = match self.kind {
            RingKind::Prime64 => {
                u64::from_le_bytes(bytes.try_into().expect("length checked")) as u128
            }
            RingKind::Mod2k => u128::from_le_bytes(bytes.try_into().expect("length checked")),
        };
        let ok = match self.kind {
            RingKind::Prime64 => v < self.modulus_or_k,
            RingKind::Mod2k => v & !self.mask() == 0,
        };
        if !ok {
            return Err(RingError::Encoding(format!("value out of range for {self}")));
        }
        Ok(v)
    }

    pub fn encode_vec(&self, xs: &[u128]) -> Vec<u8> {
        let mut out = Vec::with_capacity(xs.len() * self.elem_bytes());
        for &x in xs {
            self.write_elem(x, &mut out);
        }
        out
    }

    pub fn decode_vec(&self, bytes: &[u8]) -> Result<Vec<u128>, RingError> {
        let w = self.elem_bytes();
        if bytes.len() % w != 0 {
            return Err(RingError::Encoding(format!(
                "payload of {} bytes is not a multiple of {w}",
                bytes.len()
            )));
        }
        bytes.chunks_exact(w).map(|c| self.read_elem(c)).collect()
    }

    pub fn elem(&self, value: u128) -> RingElement {
        RingElement {
            value: self.reduce(value),
            ring: *self,
        }
    }

    /// Random element usable with any CSPRNG.
    pub fn random_elem<R: RngCore + CryptoRng>(&self, rng: &mut R) -> RingElement {
        RingElement {
            value: self.random(rng),
            ring: *self,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

/// A reduced value together with its descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RingElement {
    value: u128,
    ring: Ring,
}

impl RingElement {
    pub fn value(&self) -> u128 {
        self.value
    }

    pub fn ring(&self) -> Ring {
        self.ring
    }

    pub fn from_signed(ring: Ring, v: i128) -> RingElement {
        RingElement {
            value: ring.from_i128(v),
            ring,
        }
    }

    pub fn signed(&self) -> i128 {
        self.ring.lift(self.value)
    }

    pub fn arith(&self, other: &RingElement, op: ArithOp) -> Result<RingElement, RingError> {
        if self.ring != other.ring {
            return Err(RingError::DescriptorMismatch(self.ring, other.ring));
        }
        let r = self.ring;
        let value = match op {
            ArithOp::Add => r.add(self.value, other.value),
            ArithOp::Sub => r.sub(self.value, other.value),
            ArithOp::Mul => r.mul(self.value, other.value),
        };
        Ok(RingElement { value, ring: r })
    }

    pub fn try_add(&self, other: &RingElement) -> Result<RingElement, RingError> {
        self.arith(other, ArithOp::Add)
    }

    pub fn try_sub(&self, other: &RingElement) -> Result<RingElement, RingError> {
        self.arith(other, ArithOp::Sub)
    }

    pub fn try_mul(&self, other: &RingElement) -> Result<RingElement, RingError> {
        self.arith(other, ArithOp::Mul)
    }

    pub fn fp_decode(&self, f: u32) -> f64 {
        self.ring.fp_decode(self.value, f)
    }
}

fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn powmod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mulmod(acc, b, m);
        }
        b = mulmod(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'outer: for &a in &BASES {
        let mut x = powmod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn z7() -> Ring {
        Ring::prime(7).unwrap()
    }

    #[test]
    fn small_field_arith() {
        let r = z7();
        let a = r.elem(5);
        let b = r.elem(4);
        assert_eq!(a.try_add(&b).unwrap().value(), 2);
        assert_eq!(r.elem(3).try_mul(&r.elem(5)).unwrap().value(), 1);
    }

    #[test]
    fn mod2k_wraps() {
        let r = Ring::mod2k72();
        let top = r.elem((1u128 << 72) - 1);
        assert_eq!(top.try_add(&r.elem(1)).unwrap().value(), 0);
    }

    #[test]
    fn descriptor_mismatch_is_an_error() {
        let a = z7().elem(1);
        let b = Ring::prime(5).unwrap().elem(1);
        assert!(matches!(
            a.try_add(&b),
            Err(RingError::DescriptorMismatch(_, _))
        ));
    }

    #[test]
    fn signed_lift_examples() {
        let r = z7();
        assert_eq!(r.lift(6), -1);
        assert_eq!(r.lift(3), 3);
        let r = Ring::mod2k72();
        assert_eq!(r.lift((1u128 << 72) - 35), -35);
    }

    #[test]
    fn fixed_point_examples() {
        let r = Ring::prime64();
        assert_eq!(r.fp_encode(2.5, 2).unwrap(), 10);
        assert_eq!(
            r.fp_encode(-1.25, 2).unwrap(),
            DEFAULT_PRIME as u128 - 5
        );
        // round(65536 / 10) by exact integer arithmetic: floor((2*65536 + 10) / 20)
        let expected = (2 * 65536 + 10) / 20;
        assert_eq!(expected, 6554);
        let e = r.fp_encode(0.1, 16).unwrap();
        assert_eq!(e, expected);
        let back = r.fp_decode(e, 16);
        assert_eq!(back, 6554.0 / 65536.0);
        assert!((back - 0.1).abs() < 1.0 / 65536.0);
    }

    #[test]
    fn fixed_point_overflow() {
        let r = Ring::prime64();
        assert!(matches!(
            r.fp_encode(1e9, 16),
            Err(RingError::Overflow { .. })
        ));
    }

    #[test]
    fn default_prime_is_largest_64_bit_prime() {
        assert!(is_prime_u64(DEFAULT_PRIME));
        // independent check: every odd number above it is composite
        let mut n = DEFAULT_PRIME + 2;
        while n > DEFAULT_PRIME {
            assert!(!is_prime_u64(n), "{n}");
            n = n.wrapping_add(2);
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(Ring::prime(15).is_err());
        assert!(Ring::mod2k(128).is_err());
        let p = Ring::prime(DEFAULT_PRIME as u128).unwrap();
        assert!(p.with_params(16, 40, 23).is_err());
        assert!(p.with_params(40, 40, 0).is_err());
        let m = Ring::mod2k(72).unwrap();
        assert!(m.with_params(16, 40, 32).is_err());
        assert!(m.with_params(16, 40, 31).is_ok());
    }

    #[test]
    fn serialization_layout() {
        let r = Ring::mod2k72();
        let bytes = r.encode_vec(&[(1u128 << 72) - 1]);
        assert_eq!(bytes.len(), 16);
        assert!(bytes[9..].iter().all(|&b| b == 0));
        assert_eq!(r.decode_vec(&bytes).unwrap(), vec![(1u128 << 72) - 1]);
        let mut bad = bytes.clone();
        bad[15] = 1;
        assert!(r.decode_vec(&bad).is_err());
        let p = Ring::prime64();
        assert_eq!(p.encode_vec(&[1, 2]).len(), 16);
        assert!(p.decode_vec(&[0u8; 7]).is_err());
    }

    fn rings() -> [Ring; 2] {
        [Ring::prime64(), Ring::mod2k72()]
    }

    #[test]
    fn fast_reduction_matches_modulo() {
        let r = Ring::prime64();
        let p = DEFAULT_PRIME as u128;
        for x in [0u128, p - 1, p, p + 1, u128::MAX, (p - 1) * (p - 1), 1 << 100] {
            assert_eq!(r.reduce(x), x % p);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn ring_laws(a: u128, b: u128, c: u128, which: bool) {
            let r = rings()[which as usize];
            let (a, b, c) = (r.reduce(a), r.reduce(b), r.reduce(c));
            prop_assert_eq!(r.add(a, b), r.add(b, a));
            prop_assert_eq!(r.mul(a, b), r.mul(b, a));
            prop_assert_eq!(r.add(r.add(a, b), c), r.add(a, r.add(b, c)));
            prop_assert_eq!(r.mul(r.mul(a, b), c), r.mul(a, r.mul(b, c)));
            prop_assert_eq!(r.mul(a, r.add(b, c)), r.add(r.mul(a, b), r.mul(a, c)));
            prop_assert_eq!(r.sub(r.add(a, b), b), a);
        }

        #[test]
        fn signed_roundtrip(v in -(1i128 << 62)..(1i128 << 62), which: bool) {
            let r = rings()[which as usize];
            prop_assert_eq!(r.lift(r.from_i128(v)), v);
        }

        #[test]
        fn fixed_point_roundtrip(v in -1.0e5f64..1.0e5, which: bool) {
            let r = rings()[which as usize];
            let f = r.frac_bits();
            let e = r.fp_encode(v, f).unwrap();
            prop_assert!((r.fp_decode(e, f) - v).abs() < (-(f as f64)).exp2());
        }
    }
}
