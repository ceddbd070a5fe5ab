//! Triple generation for the active three-server scheme.
//!
//! Two triples `(a, b, c)` and `(a', b', c')` are built from PRF randomness
//! and one resharing round. One is sacrificed to check the other: with a
//! public random `t`, open `rho = t a - a'` and `sigma = b - b'`, then
//! `t c - c' - sigma a' - rho b' - rho sigma` must open to zero. Openings are
//! cross-checked, so a single cheating server is caught either way.

use super::arith::{mat_pub_share, mat_share_pub};
use super::Party;
use crate::dealer::{matmul_plain, MatTriple, Triple};
use crate::error::{Error, Result};
use crate::sharing::Share;
use crate::transport::{MsgType, Phase};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

impl Party {
    pub(crate) fn verified_triples(&mut self, n: usize) -> Result<Vec<Triple>> {
        let old = self.net.set_phase(Phase::Offline);
        let r = self.sacrifice_triples(n);
        self.net.set_phase(old);
        r
    }

    pub(crate) fn verified_matrix_triple(&mut self, m: usize, k: usize, n: usize) -> Result<MatTriple> {
        let old = self.net.set_phase(Phase::Offline);
        let r = self.sacrifice_matrix(m, k, n);
        self.net.set_phase(old);
        r
    }

    fn check_zero(&mut self, z: &[Share]) -> Result<()> {
        let v = self.open_as(MsgType::Sacrifice, z)?;
        if v.iter().any(|&v| v != 0) {
            return Err(Error::Abort("triple verification failed".into()));
        }
        Ok(())
    }

    fn sacrifice_triples(&mut self, n: usize) -> Result<Vec<Triple>> {
        let ring = self.ring;
        let ab = self.random_shares(4 * n);
        let (x, y) = ab.split_at(2 * n);
        let c = self.mul_replicated(x, y, MsgType::Sacrifice)?;
        let (a, a2) = x.split_at(n);
        let (b, b2) = y.split_at(n);
        let (c, c2) = c.split_at(n);
        let mut prg = ChaCha20Rng::from_seed(self.joint_seed()?);
        let t: Vec<u128> = (0..n).map(|_| ring.random(&mut prg)).collect();
        let mut rs: Vec<Share> = (0..n)
            .map(|i| self.loc.sub(self.loc.scale(t[i], a[i]), a2[i]))
            .collect();
        rs.extend((0..n).map(|i| self.loc.sub(b[i], b2[i])));
        let opened = self.open_as(MsgType::Sacrifice, &rs)?;
        let (rho, sigma) = opened.split_at(n);
        let z: Vec<Share> = (0..n)
            .map(|i| {
                let mut s = self.loc.sub(self.loc.scale(t[i], c[i]), c2[i]);
                s = self.loc.sub(s, self.loc.scale(sigma[i], a2[i]));
                s = self.loc.sub(s, self.loc.scale(rho[i], b2[i]));
                self.loc.add_const(s, ring.neg(ring.mul(rho[i], sigma[i])))
            })
            .collect();
        self.check_zero(&z)?;
        Ok((0..n)
            .map(|i| Triple {
                a: a[i],
                b: b[i],
                c: c[i],
            })
            .collect())
    }

    fn sacrifice_matrix(&mut self, m: usize, k: usize, n: usize) -> Result<MatTriple> {
        let ring = self.ring;
        let (mk, kn) = (m * k, k * n);
        let a = self.random_shares(mk);
        let b = self.random_shares(kn);
        let a2 = self.random_shares(mk);
        let b2 = self.random_shares(kn);
        let mut z = self.matmul_local(&a, &b, m, k, n);
        z.extend(self.matmul_local(&a2, &b2, m, k, n));
        let cc = self.reshare(z, MsgType::Sacrifice)?;
        let (c, c2) = cc.split_at(m * n);
        let mut prg = ChaCha20Rng::from_seed(self.joint_seed()?);
        let t = ring.random(&mut prg);
        let mut rs: Vec<Share> = (0..mk)
            .map(|i| self.loc.sub(self.loc.scale(t, a[i]), a2[i]))
            .collect();
        rs.extend(self.sub(&b, &b2));
        let opened = self.open_as(MsgType::Sacrifice, &rs)?;
        let (rho, sigma) = opened.split_at(mk);
        let a2s = mat_share_pub(&ring, &a2, sigma, m, k, n);
        let rb2 = mat_pub_share(&ring, rho, &b2, m, k, n);
        let rs = matmul_plain(&ring, rho, sigma, m, k, n);
        let check: Vec<Share> = (0..m * n)
            .map(|i| {
                let mut s = self.loc.sub(self.loc.scale(t, c[i]), c2[i]);
                s = self.loc.sub(s, a2s[i]);
                s = self.loc.sub(s, rb2[i]);
                self.loc.add_const(s, ring.neg(rs[i]))
            })
            .collect();
        self.check_zero(&check)?;
        Ok(MatTriple {
            shape: (m, k, n),
            a,
            b,
            c: c.to_vec(),
        })
    }
}
