//! Truncation by a public power of two.
//!
//! A pair `(hi, lo)` masks `x + 2^(l-1)` as `c = x + 2^(l-1) + 2^m hi + lo`.
//! Then `(c >> m) - 2^(l-1-m) - hi` is `floor(x / 2^m)` plus the carry out of
//! the low `m` bits. The probabilistic variant keeps the carry; the exact
//! variant removes it with a bitwise comparison `c mod 2^m < lo`.

use super::Party;
use crate::error::{Error, Result};
use crate::scheme::TruncMode;
use crate::sharing::Share;

impl Party {
    /// `floor(x / 2^m)` (exact) or that plus a carry bit (probabilistic).
    /// Inputs must satisfy `|x| < 2^(l-1)`.
    pub fn trunc(&mut self, x: &[Share], m: u32, mode: TruncMode) -> Result<Vec<Share>> {
        self.need_computing("trunc")?;
        let l = self.ring.value_bits();
        if m == 0 {
            return Ok(x.to_vec());
        }
        if m >= l {
            return Err(Error::Invalid(format!(
                "truncation by {m} bits exceeds the {l}-bit value range"
            )));
        }
        if x.is_empty() {
            return Ok(Vec::new());
        }
        self.ops.truncs += x.len() as u64;
        let ring = self.ring;
        let det = mode == TruncMode::Det;
        let pairs = self.pre.trunc_pairs(m, det, x.len())?;
        let off = ring.pow2(l - 1);
        let sm = ring.pow2(m);
        let masked: Vec<Share> = x
            .iter()
            .zip(&pairs)
            .map(|(&x, p)| {
                let lo = if det {
                    let terms: Vec<(u128, Share)> = p
                        .bits
                        .iter()
                        .enumerate()
                        .map(|(i, &b)| (ring.pow2(i as u32), b))
                        .collect();
                    self.loc.lincomb(&terms, 0)
                } else {
                    p.lo
                };
                let s = self.loc.add(x, self.loc.add(self.loc.scale(sm, p.hi), lo));
                self.loc.add_const(s, off)
            })
            .collect();
        let c = self.open(&masked)?;
        let low_mask = (1u128 << m) - 1;
        let shift = ring.pow2(l - 1 - m);
        let mut out: Vec<Share> = c
            .iter()
            .zip(&pairs)
            .map(|(&c, p)| {
                let q = ring.sub(c >> m, shift);
                self.loc.const_sub(q, p.hi)
            })
            .collect();
        if det {
            let lows: Vec<u128> = c.iter().map(|&c| c & low_mask).collect();
            let bits: Vec<&[Share]> = pairs.iter().map(|p| p.bits.as_slice()).collect();
            let carry = self.bit_lt(&lows, &bits)?;
            out = self.sub(&out, &carry);
        }
        Ok(out)
    }

    pub fn trunc_det(&mut self, x: &[Share], m: u32) -> Result<Vec<Share>> {
        self.trunc(x, m, TruncMode::Det)
    }

    pub fn trunc_prob(&mut self, x: &[Share], m: u32) -> Result<Vec<Share>> {
        self.trunc(x, m, TruncMode::Prob)
    }

    /// Truncation in the session's configured mode.
    pub fn trunc_session(&mut self, x: &[Share], m: u32) -> Result<Vec<Share>> {
        let mode = self.trunc_mode();
        self.trunc(x, m, mode)
    }

    /// `[c_j < r_j]` for public `c_j` and shared bits of `r_j` (least
    /// significant first), all of the same width.
    pub(crate) fn bit_lt(&mut self, c: &[u128], r: &[&[Share]]) -> Result<Vec<Share>> {
        let n = c.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let m = r[0].len();
        let one = |p: &Party, s: Share| p.loc.const_sub(1, s);
        // e_i = c_i XOR r_i, with c public.
        let mut f: Vec<Vec<Share>> = c
            .iter()
            .zip(r)
            .map(|(&c, bits)| {
                (0..m)
                    .map(|i| {
                        if (c >> i) & 1 == 1 {
                            one(self, bits[i])
                        } else {
                            bits[i]
                        }
                    })
                    .collect()
            })
            .collect();
        // Suffix OR: f_i = e_i | e_{i+1} | ... | e_{m-1}.
        let mut d = 1;
        while d < m {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for fj in &f {
                for i in 0..m - d {
                    a.push(fj[i]);
                    b.push(fj[i + d]);
                }
            }
            let ab = self.mul(&a, &b)?;
            let mut k = 0;
            for fj in f.iter_mut() {
                for i in 0..m - d {
                    let s = self.loc.add(a[k], b[k]);
                    fj[i] = self.loc.sub(s, ab[k]);
                    k += 1;
                }
            }
            d *= 2;
        }
        // The highest differing bit decides; c < r there iff c_i = 0.
        Ok(f
            .iter()
            .zip(c)
            .map(|(fj, &c)| {
                let mut acc = Share::default();
                for i in 0..m {
                    if (c >> i) & 1 == 0 {
                        let g = if i + 1 < m {
                            self.loc.sub(fj[i], fj[i + 1])
                        } else {
                            fj[i]
                        };
                        acc = self.loc.add(acc, g);
                    }
                }
                acc
            })
            .collect())
    }
}
