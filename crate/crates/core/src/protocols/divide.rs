//! Division. Public divisors use a multiply-shift; secret divisors go through
//! a Goldschmidt reciprocal followed by an exact floor correction.

use super::Party;
use crate::error::{Error, Result};
use crate::scheme::TruncMode;
use crate::sharing::Share;

/// Linear initial approximation of `1/c` on `[0.5, 1)`: `RECIP_INIT - 2c`.
pub const RECIP_INIT: f64 = 2.9142;
/// `|1 - c w0| < 0.086`, so three squarings reach `0.086^8 < 2^-28`.
pub const GOLDSCHMIDT_ITERS: usize = 3;
/// Largest secret divisor supported by [`Party::reciprocal`].
pub const MAX_DIVISOR: u32 = 64;

impl Party {
    /// Fixed-point (`f` fractional bits) approximation of `1/den` for shared
    /// integers `den` in `[1, MAX_DIVISOR]`.
    pub fn reciprocal(&mut self, den: &[Share], f: u32) -> Result<Vec<Share>> {
        let ring = self.ring;
        let n = den.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let top = MAX_DIVISOR.ilog2() + 1;
        if f < top + 1 {
            return Err(Error::Invalid(format!("{f} fractional bits are too few")));
        }
        let mode = TruncMode::Prob;
        // g_j = [den >= 2^j] for j = 1..top-1.
        let mut probes = Vec::with_capacity(n * (top as usize - 1));
        for j in 1..top {
            for &d in den {
                probes.push(self.loc.add_const(d, ring.neg(ring.pow2(j))));
            }
        }
        let lt = self.ltz(&probes)?;
        let g = |p: &Party, j: u32, i: usize| -> Share {
            if j == 0 {
                p.constant(1)
            } else if j >= top {
                Share::default()
            } else {
                p.loc.const_sub(1, lt[(j as usize - 1) * n + i])
            }
        };
        // sh = 2^-(floor(log2 den) + 1), so den * sh lies in [0.5, 1).
        let sh: Vec<Share> = (0..n)
            .map(|i| {
                let mut acc = Share::default();
                for j in 0..top {
                    let h = self.loc.sub(g(self, j, i), g(self, j + 1, i));
                    acc = self.loc.add(acc, self.loc.scale(ring.pow2(f - j - 1), h));
                }
                acc
            })
            .collect();
        let c = self.mul(den, &sh)?;
        let init = ring.fp_encode(RECIP_INIT, f)?;
        let mut y: Vec<Share> = c
            .iter()
            .map(|&c| self.loc.const_sub(init, self.loc.scale(2, c)))
            .collect();
        let cy = self.mul(&c, &y)?;
        let cy = self.trunc(&cy, f, mode)?;
        let one = ring.pow2(f);
        let mut e: Vec<Share> = cy.iter().map(|&s| self.loc.const_sub(one, s)).collect();
        for it in 0..GOLDSCHMIDT_ITERS {
            let last = it + 1 == GOLDSCHMIDT_ITERS;
            let onee = self.add_const(&e, one);
            let (a, b) = if last {
                (y.clone(), onee)
            } else {
                let mut a = y.clone();
                a.extend_from_slice(&e);
                let mut b = onee;
                b.extend_from_slice(&e);
                (a, b)
            };
            let p = self.mul(&a, &b)?;
            let p = self.trunc(&p, f, mode)?;
            y = p[..n].to_vec();
            if !last {
                e = p[n..].to_vec();
            }
        }
        let r = self.mul(&y, &sh)?;
        self.trunc(&r, f, mode)
    }

    /// `floor(a / den)` for shared integers `|a| < 2^a_bits` and
    /// `den` in `[1, MAX_DIVISOR]`, given `recip` from [`Party::reciprocal`].
    pub fn div_floor(
        &mut self,
        a: &[Share],
        den: &[Share],
        recip: &[Share],
        f: u32,
        a_bits: u32,
    ) -> Result<Vec<Share>> {
        let n = a.len();
        if den.len() != n || recip.len() != n {
            return Err(Error::Invalid("division operands differ in length".into()));
        }
        if a_bits + f + 1 >= self.ring.value_bits() {
            return Err(Error::Invalid(format!(
                "dividend of {a_bits} bits overflows the value range"
            )));
        }
        let mode = TruncMode::Prob;
        let ar = self.mul(a, recip)?;
        let mut q = self.trunc(&ar, f, mode)?;
        let refinements = if a_bits <= 16 { 1 } else { 2 };
        for _ in 0..refinements {
            let qd = self.mul(&q, den)?;
            let r = self.sub(a, &qd);
            let rr = self.mul(&r, recip)?;
            let dq = self.trunc(&rr, f, mode)?;
            q = self.add(&q, &dq);
        }
        // q is now within 2 of the true quotient; fix it exactly.
        let qd = self.mul(&q, den)?;
        let r = self.sub(a, &qd);
        let mut probes = r.clone();
        probes.extend(self.add(&r, den));
        probes.extend(self.sub(&r, den));
        let two_den = self.scale(2, den);
        probes.extend(self.sub(&r, &two_den));
        let c = self.ltz(&probes)?;
        Ok((0..n)
            .map(|i| {
                let s = self.loc.sub(self.loc.sub(q[i], c[i]), c[n + i]);
                let s = self.loc.sub(s, c[2 * n + i]);
                let s = self.loc.sub(s, c[3 * n + i]);
                self.loc.add_const(s, 2)
            })
            .collect())
    }

    /// Fixed-point `floor(num / den)` for `|num| < 64` (encoded with `f`
    /// fractional bits) and shared integers `den` in `[1, MAX_DIVISOR]`.
    pub fn div_secret(&mut self, num: &[Share], den: &[Share], f: u32) -> Result<Vec<Share>> {
        let recip = self.reciprocal(den, f)?;
        self.div_floor(num, den, &recip, f, f + 6)
    }

    /// `floor(a / p)` for a public `p >= 1` and `0 <= a < 2^a_bits`.
    pub fn div_public_floor(&mut self, a: &[Share], p: u64, a_bits: u32) -> Result<Vec<Share>> {
        if p == 0 {
            return Err(Error::Invalid("division by zero".into()));
        }
        let l = self.ring.value_bits();
        let s = l - 1 - a_bits;
        let p_bits = 64 - p.leading_zeros();
        if a_bits + p_bits > s {
            return Err(Error::Invalid(format!(
                "{a_bits}-bit dividend by {p} is not exact in {l} bits"
            )));
        }
        let m = (1u128 << s).div_ceil(p as u128);
        let x = self.scale(self.ring.reduce(m), a);
        self.trunc_det(&x, s)
    }

    /// `x / p` in fixed point with `f` fractional bits, for a public `p`.
    pub fn mul_public_frac(&mut self, x: &[Share], p: u64, f: u32) -> Result<Vec<Share>> {
        if p == 0 {
            return Err(Error::Invalid("division by zero".into()));
        }
        let c = self.ring.fp_encode(1.0 / p as f64, f)?;
        let y = self.scale(c, x);
        self.trunc_det(&y, f)
    }
}
