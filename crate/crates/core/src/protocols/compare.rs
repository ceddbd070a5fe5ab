//! Comparisons and selection built on exact truncation.

use super::Party;
use crate::error::{Error, Result};
use crate::sharing::Share;

impl Party {
    /// `[x < 0]` for `|x| < 2^(l-1)`.
    pub fn ltz(&mut self, x: &[Share]) -> Result<Vec<Share>> {
        self.ops.comparisons += x.len() as u64;
        let l = self.ring.value_bits();
        let t = self.trunc_det(x, l - 1)?;
        Ok(t.iter().map(|&s| self.loc.neg(s)).collect())
    }

    /// `[x < 0]` for `|x| < 2^k`, cheaper than [`Party::ltz`] when `k` is
    /// small.
    pub fn ltz_bounded(&mut self, x: &[Share], k: u32) -> Result<Vec<Share>> {
        self.ops.comparisons += x.len() as u64;
        let t = self.trunc_det(x, k)?;
        Ok(t.iter().map(|&s| self.loc.neg(s)).collect())
    }

    /// `[x == 0]` for `|x| < 2^(l-1)`.
    pub fn eqz(&mut self, x: &[Share]) -> Result<Vec<Share>> {
        self.need_computing("eqz")?;
        if x.is_empty() {
            return Ok(Vec::new());
        }
        self.ops.comparisons += x.len() as u64;
        let ring = self.ring;
        let l = ring.value_bits();
        let pairs = self.pre.trunc_pairs(l, true, x.len())?;
        let off = ring.pow2(l - 1);
        let sl = ring.pow2(l);
        let masked: Vec<Share> = x
            .iter()
            .zip(&pairs)
            .map(|(&x, p)| {
                let terms: Vec<(u128, Share)> = p
                    .bits
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| (ring.pow2(i as u32), b))
                    .collect();
                let lo = self.loc.lincomb(&terms, 0);
                let s = self.loc.add(x, self.loc.add(self.loc.scale(sl, p.hi), lo));
                self.loc.add_const(s, off)
            })
            .collect();
        let c = self.open(&masked)?;
        let low = (1u128 << l) - 1;
        // x = 0 exactly when (c - 2^(l-1)) mod 2^l equals lo bit for bit.
        let mut level: Vec<Vec<Share>> = c
            .iter()
            .zip(&pairs)
            .map(|(&c, p)| {
                let cs = c.wrapping_sub(1u128 << (l - 1)) & low;
                p.bits
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| {
                        if (cs >> i) & 1 == 1 {
                            b
                        } else {
                            self.loc.const_sub(1, b)
                        }
                    })
                    .collect()
            })
            .collect();
        while level[0].len() > 1 {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for v in &level {
                for i in 0..v.len() / 2 {
                    a.push(v[2 * i]);
                    b.push(v[2 * i + 1]);
                }
            }
            let ab = self.mul(&a, &b)?;
            let mut k = 0;
            for v in level.iter_mut() {
                let half = v.len() / 2;
                let mut next: Vec<Share> = ab[k..k + half].to_vec();
                k += half;
                if v.len() % 2 == 1 {
                    next.push(v[v.len() - 1]);
                }
                *v = next;
            }
        }
        Ok(level.into_iter().map(|v| v[0]).collect())
    }

    /// `b ? x : y` for shared bits `b`.
    pub fn select(&mut self, b: &[Share], x: &[Share], y: &[Share]) -> Result<Vec<Share>> {
        let d = self.sub(x, y);
        let bd = self.mul(b, &d)?;
        Ok(self.add(y, &bd))
    }

    /// `max(x, t)` for a public threshold `t`.
    pub fn relu_threshold(&mut self, x: &[Share], t: i128) -> Result<Vec<Share>> {
        let tc = self.ring.from_i128(t);
        let d = self.add_const(x, self.ring.neg(tc));
        let b = self.ltz(&d)?;
        let tv = vec![self.constant(tc); x.len()];
        self.select(&b, &tv, x)
    }

    /// Index of the largest element (lowest index among ties), and its value.
    pub fn argmax(&mut self, v: &[Share]) -> Result<(Share, Share)> {
        let k = self.ring.value_bits() - 1;
        self.argmax_bounded(v, k)
    }

    /// [`Party::argmax`] when all pairwise differences are below `2^k`.
    pub fn argmax_bounded(&mut self, v: &[Share], k: u32) -> Result<(Share, Share)> {
        if v.is_empty() {
            return Err(Error::Invalid("argmax of an empty vector".into()));
        }
        let mut vals = v.to_vec();
        let mut idx: Vec<Share> = (0..v.len()).map(|i| self.constant(i as u128)).collect();
        while vals.len() > 1 {
            let pairs = vals.len() / 2;
            let diff: Vec<Share> = (0..pairs)
                .map(|i| self.loc.sub(vals[2 * i], vals[2 * i + 1]))
                .collect();
            let b = self.ltz_bounded(&diff, k)?;
            let mut bb = b.clone();
            bb.extend_from_slice(&b);
            let mut d: Vec<Share> = (0..pairs)
                .map(|i| self.loc.sub(vals[2 * i + 1], vals[2 * i]))
                .collect();
            d.extend((0..pairs).map(|i| self.loc.sub(idx[2 * i + 1], idx[2 * i])));
            let p = self.mul(&bb, &d)?;
            let mut nv: Vec<Share> = (0..pairs)
                .map(|i| self.loc.add(vals[2 * i], p[i]))
                .collect();
            let mut ni: Vec<Share> = (0..pairs)
                .map(|i| self.loc.add(idx[2 * i], p[pairs + i]))
                .collect();
            if vals.len() % 2 == 1 {
                nv.push(vals[vals.len() - 1]);
                ni.push(idx[idx.len() - 1]);
            }
            vals = nv;
            idx = ni;
        }
        Ok((idx[0], vals[0]))
    }

    /// `2^(max_n - n)` for a shared `n` in `[0, max_n]`.
    pub fn secret_pow2(&mut self, n: Share, max_n: u32) -> Result<Share> {
        Ok(self.secret_pow2_many(&[n], max_n)?[0])
    }

    /// [`Party::secret_pow2`] for several exponents at once.
    pub fn secret_pow2_many(&mut self, ns: &[Share], max_n: u32) -> Result<Vec<Share>> {
        let ring = self.ring;
        let k = max_n as usize + 1;
        let diffs: Vec<Share> = ns
            .iter()
            .flat_map(|&n| (0..k).map(move |j| (n, j)))
            .map(|(n, j)| self.loc.add_const(n, ring.neg(j as u128)))
            .collect();
        let e = self.eqz(&diffs)?;
        Ok(e.chunks(k)
            .map(|e| {
                let terms: Vec<(u128, Share)> = e
                    .iter()
                    .enumerate()
                    .map(|(j, &s)| (ring.pow2(max_n - j as u32), s))
                    .collect();
                self.loc.lincomb(&terms, 0)
            })
            .collect())
    }
}
