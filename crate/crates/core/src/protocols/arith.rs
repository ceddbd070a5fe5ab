//! Multiplication: Beaver triples for the two-party schemes, local
//! cross-products plus resharing for replicated sharing, and Beaver over
//! sacrificed triples for the active three-server scheme.

use super::Party;
use crate::dealer::{matmul_plain, MatTriple, Triple};
use crate::error::{Error, Result};
use crate::ring::Ring;
use crate::scheme::Scheme;
use crate::sharing::Share;
use crate::transport::MsgType;

/// `P S` for public `P (m x k)` and shared `S (k x n)`.
pub(crate) fn mat_pub_share(ring: &Ring, p: &[u128], s: &[Share], m: usize, k: usize, n: usize) -> Vec<Share> {
    let v: Vec<u128> = s.iter().map(|x| x.val).collect();
    let a: Vec<u128> = s.iter().map(|x| x.aux).collect();
    let cv = matmul_plain(ring, p, &v, m, k, n);
    let ca = matmul_plain(ring, p, &a, m, k, n);
    cv.into_iter().zip(ca).map(|(val, aux)| Share { val, aux }).collect()
}

/// `S P` for shared `S (m x k)` and public `P (k x n)`.
pub(crate) fn mat_share_pub(ring: &Ring, s: &[Share], p: &[u128], m: usize, k: usize, n: usize) -> Vec<Share> {
    let v: Vec<u128> = s.iter().map(|x| x.val).collect();
    let a: Vec<u128> = s.iter().map(|x| x.aux).collect();
    let cv = matmul_plain(ring, &v, p, m, k, n);
    let ca = matmul_plain(ring, &a, p, m, k, n);
    cv.into_iter().zip(ca).map(|(val, aux)| Share { val, aux }).collect()
}

impl Party {
    /// Fresh additive sharing of zero among the three servers:
    /// `u_i = F(K_i) - F(K_{i+1})`.
    pub(crate) fn zero_shares(&mut self, n: usize) -> Vec<u128> {
        let ring = self.ring;
        let prf = self.prf.as_mut().expect("replicated session has PRF keys");
        (0..n)
            .map(|_| {
                let a = ring.random(&mut prf.zero[0]);
                let b = ring.random(&mut prf.zero[1]);
                ring.sub(a, b)
            })
            .collect()
    }

    /// Fresh random replicated sharings, without communication.
    pub(crate) fn random_shares(&mut self, n: usize) -> Vec<Share> {
        let ring = self.ring;
        let prf = self.prf.as_mut().expect("replicated session has PRF keys");
        (0..n)
            .map(|_| Share {
                val: ring.random(&mut prf.rand[0]),
                aux: ring.random(&mut prf.rand[1]),
            })
            .collect()
    }

    /// Send `z_i` to the previous server, receive `z_{i+1}` from the next.
    pub(crate) fn reshare(&mut self, z: Vec<u128>, ty: MsgType) -> Result<Vec<Share>> {
        let ring = self.ring;
        let (nx, pv) = (self.next(), self.prev());
        let n = z.len();
        let got = self
            .net
            .exchange_elems(&ring, ty, vec![(pv, &z)], &[(nx, n)])?
            .pop()
            .expect("one peer");
        Ok(z.into_iter()
            .zip(got)
            .map(|(val, aux)| Share { val, aux })
            .collect())
    }

    /// Semi-honest replicated product, one round.
    pub(crate) fn mul_replicated(&mut self, x: &[Share], y: &[Share], ty: MsgType) -> Result<Vec<Share>> {
        let ring = self.ring;
        let u = self.zero_shares(x.len());
        let z: Vec<u128> = x
            .iter()
            .zip(y)
            .zip(u)
            .map(|((a, b), u)| {
                let t = ring.add(
                    ring.mul(a.val, ring.add(b.val, b.aux)),
                    ring.mul(a.aux, b.val),
                );
                ring.add(t, u)
            })
            .collect();
        self.reshare(z, ty)
    }

    /// This party's additive share of `x y` (matrices), masked by a fresh
    /// zero sharing.
    pub(crate) fn matmul_local(&mut self, x: &[Share], y: &[Share], m: usize, k: usize, n: usize) -> Vec<u128> {
        let ring = self.ring;
        let xv: Vec<u128> = x.iter().map(|s| s.val).collect();
        let xa: Vec<u128> = x.iter().map(|s| s.aux).collect();
        let ysum: Vec<u128> = y.iter().map(|s| ring.add(s.val, s.aux)).collect();
        let yv: Vec<u128> = y.iter().map(|s| s.val).collect();
        let p1 = matmul_plain(&ring, &xv, &ysum, m, k, n);
        let p2 = matmul_plain(&ring, &xa, &yv, m, k, n);
        let u = self.zero_shares(m * n);
        p1.into_iter()
            .zip(p2)
            .zip(u)
            .map(|((a, b), u)| ring.add(ring.add(a, b), u))
            .collect()
    }

    /// Semi-honest replicated matrix product, one round.
    pub(crate) fn matmul_replicated(
        &mut self,
        x: &[Share],
        y: &[Share],
        m: usize,
        k: usize,
        n: usize,
        ty: MsgType,
    ) -> Result<Vec<Share>> {
        let z = self.matmul_local(x, y, m, k, n);
        self.reshare(z, ty)
    }

    /// Element-wise product.
    pub fn mul(&mut self, x: &[Share], y: &[Share]) -> Result<Vec<Share>> {
        self.need_computing("mul")?;
        if x.len() != y.len() {
            return Err(Error::Invalid(format!(
                "mul of {} by {} elements",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Ok(Vec::new());
        }
        self.ops.mults += x.len() as u64;
        match self.sid.scheme {
            Scheme::Semi3pc => self.mul_replicated(x, y, MsgType::Reshare),
            Scheme::Active3pc => {
                let ts = self.verified_triples(x.len())?;
                self.beaver(x, y, &ts)
            }
            Scheme::Semi2pc | Scheme::Active2pc => {
                let ts = self.pre.triples(x.len())?;
                self.beaver(x, y, &ts)
            }
        }
    }

    /// `z = c + d b + e a + d e` with `d = x - a`, `e = y - b` opened.
    fn beaver(&mut self, x: &[Share], y: &[Share], ts: &[Triple]) -> Result<Vec<Share>> {
        let ring = self.ring;
        let n = x.len();
        let mut de = Vec::with_capacity(2 * n);
        for (x, t) in x.iter().zip(ts) {
            de.push(self.loc.sub(*x, t.a));
        }
        for (y, t) in y.iter().zip(ts) {
            de.push(self.loc.sub(*y, t.b));
        }
        let opened = self.open_as(MsgType::Beaver, &de)?;
        let (d, e) = opened.split_at(n);
        Ok(ts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let z = self.loc.add(
                    t.c,
                    self.loc.add(self.loc.scale(d[i], t.b), self.loc.scale(e[i], t.a)),
                );
                self.loc.add_const(z, ring.mul(d[i], e[i]))
            })
            .collect())
    }

    /// Matrix product of shared `x (m x k)` and `y (k x n)`, row-major.
    pub fn matmul(&mut self, x: &[Share], y: &[Share], m: usize, k: usize, n: usize) -> Result<Vec<Share>> {
        self.need_computing("matmul")?;
        if x.len() != m * k || y.len() != k * n {
            return Err(Error::Invalid(format!(
                "matmul shapes {}x{} and {}x{} do not match {} and {} elements",
                m,
                k,
                k,
                n,
                x.len(),
                y.len()
            )));
        }
        self.ops.matmuls += 1;
        match self.sid.scheme {
            Scheme::Semi3pc => self.matmul_replicated(x, y, m, k, n, MsgType::Reshare),
            Scheme::Active3pc => {
                let t = self.verified_matrix_triple(m, k, n)?;
                self.beaver_matrix(x, y, &t)
            }
            Scheme::Semi2pc | Scheme::Active2pc => {
                let t = self.pre.matrix_triple(m, k, n)?;
                self.beaver_matrix(x, y, &t)
            }
        }
    }

    /// `Z = C + D B + A E + D E` with `D = X - A`, `E = Y - B` opened.
    fn beaver_matrix(&mut self, x: &[Share], y: &[Share], t: &MatTriple) -> Result<Vec<Share>> {
        let ring = self.ring;
        let (m, k, n) = t.shape;
        let mut de = self.sub(x, &t.a);
        de.extend(self.sub(y, &t.b));
        let opened = self.open_as(MsgType::Beaver, &de)?;
        let (d, e) = opened.split_at(m * k);
        let db = mat_pub_share(&ring, d, &t.b, m, k, n);
        let ae = mat_share_pub(&ring, &t.a, e, m, k, n);
        let dd = matmul_plain(&ring, d, e, m, k, n);
        Ok((0..m * n)
            .map(|i| {
                let z = self.loc.add(t.c[i], self.loc.add(db[i], ae[i]));
                self.loc.add_const(z, dd[i])
            })
            .collect())
    }

    /// Product with a single shared scalar broadcast over `x`.
    pub fn mul_scalar(&mut self, x: &[Share], s: Share) -> Result<Vec<Share>> {
        let y = vec![s; x.len()];
        self.mul(x, &y)
    }
}
