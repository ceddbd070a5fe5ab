//! Opening shared values, and the batched MAC check of the authenticated
//! scheme.

use super::Party;
use crate::error::{Error, Result};
use crate::sharing::{Share, ShareKind};
use crate::transport::{commit_reveal, MsgType};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MacCheckMode {
    /// Check after every opening (debugging aid).
    EveryOpen,
    /// Queue residues and check them together before outputs are released.
    #[default]
    Batched,
}

impl FromStr for MacCheckMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "every-open" => Ok(MacCheckMode::EveryOpen),
            "batched" => Ok(MacCheckMode::Batched),
            _ => Err(Error::Invalid(format!("unknown MAC check mode '{s}'"))),
        }
    }
}

impl Party {
    /// Reveal `xs` to all computing parties.
    pub fn open(&mut self, xs: &[Share]) -> Result<Vec<u128>> {
        self.open_as(MsgType::Open, xs)
    }

    pub(crate) fn open_as(&mut self, ty: MsgType, xs: &[Share]) -> Result<Vec<u128>> {
        self.need_computing("open")?;
        self.ops.opens += xs.len() as u64;
        let ring = self.ring;
        let n = xs.len();
        match self.kind() {
            ShareKind::Additive | ShareKind::Auth => {
                let o = self.other();
                let vals: Vec<u128> = xs.iter().map(|s| s.val).collect();
                let got = self
                    .net
                    .exchange_elems(&ring, ty, vec![(o, &vals)], &[(o, n)])?
                    .pop()
                    .expect("one peer");
                let out: Vec<u128> = vals.iter().zip(&got).map(|(&a, &b)| ring.add(a, b)).collect();
                if self.kind() == ShareKind::Auth {
                    self.pending
                        .extend(out.iter().zip(xs).map(|(&x, s)| (x, s.aux)));
                    if self.mac_mode == MacCheckMode::EveryOpen {
                        self.mac_check_flush()?;
                    }
                }
                Ok(out)
            }
            ShareKind::Replicated => {
                let (nx, pv) = (self.next(), self.prev());
                let active = self.sid.scheme.is_active();
                let aux: Vec<u128> = xs.iter().map(|s| s.aux).collect();
                let vals: Vec<u128> = xs.iter().map(|s| s.val).collect();
                let mut sends = vec![(pv, aux.as_slice())];
                let mut from = vec![(nx, n)];
                if active {
                    sends.push((nx, vals.as_slice()));
                    from.push((pv, n));
                }
                let got = self.net.exchange_elems(&ring, ty, sends, &from)?;
                if active && got[0] != got[1] {
                    return Err(Error::Abort(format!(
                        "inconsistent openings from parties {nx} and {pv}"
                    )));
                }
                Ok(xs
                    .iter()
                    .zip(&got[0])
                    .map(|(s, &m)| ring.add(ring.add(s.val, s.aux), m))
                    .collect())
            }
        }
    }

    /// Joint random seed: every computing party commits to 32 random bytes,
    /// all are revealed and hashed together.
    pub(crate) fn joint_seed(&mut self) -> Result<[u8; 32]> {
        let mut mine = [0u8; 32];
        self.rng.fill_bytes(&mut mine);
        let parties = self.computing();
        let all = commit_reveal(&mut self.net, &parties, &mine, &mut self.rng)?;
        let mut h = Sha256::new();
        for s in &all {
            if s.len() != 32 {
                return Err(Error::Abort("malformed seed contribution".into()));
            }
            h.update(s);
        }
        Ok(h.finalize().into())
    }

    /// Number of opened values whose MACs are not yet verified.
    pub fn pending_mac_checks(&self) -> usize {
        self.pending.len()
    }

    /// Verify every queued opening at once with a public random linear
    /// combination. No-op outside the authenticated scheme.
    pub fn mac_check_flush(&mut self) -> Result<()> {
        if self.kind() != ShareKind::Auth || self.pending.is_empty() {
            return Ok(());
        }
        self.ops.mac_checks += 1;
        let ring = self.ring;
        let seed = self.joint_seed()?;
        let mut prg = ChaCha20Rng::from_seed(seed);
        let alpha = self.loc.alpha;
        let mut sigma = 0u128;
        for &(x, m) in &self.pending {
            let chi = ring.random(&mut prg);
            sigma = ring.add(sigma, ring.mul(chi, ring.sub(m, ring.mul(x, alpha))));
        }
        self.pending.clear();
        let parties = self.computing();
        let all = commit_reveal(&mut self.net, &parties, &ring.encode_vec(&[sigma]), &mut self.rng)?;
        let mut total = 0u128;
        for s in &all {
            let v = ring
                .decode_vec(s)
                .ok()
                .filter(|v| v.len() == 1)
                .ok_or_else(|| Error::Abort("malformed MAC check value".into()))?;
            total = ring.add(total, v[0]);
        }
        if total != 0 {
            return Err(Error::Abort("MAC check failed".into()));
        }
        Ok(())
    }
}
