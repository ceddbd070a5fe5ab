//! Private inputs and outputs through single-use masks.

use super::Party;
use crate::error::{Error, Result};
use crate::sharing::Share;
use crate::transport::MsgType;
use sha2::{Digest, Sha256};

impl Party {
    /// Secret-share `n` values owned by party `owner`. The owner passes its
    /// plaintext values; everyone else passes `None`. Computing parties get
    /// shares back; a client owner gets an empty vector.
    pub fn input(&mut self, owner: usize, values: Option<&[u128]>, n: usize) -> Result<Vec<Share>> {
        let ring = self.ring;
        let computing = self.computing();
        let is_owner = self.me == owner;
        if is_owner != values.is_some() {
            return Err(Error::Invalid(format!(
                "party {} {} input values for owner {owner}",
                self.me,
                if is_owner { "lacks" } else { "was given" }
            )));
        }
        if !is_owner && !self.is_computing() {
            return Ok(Vec::new());
        }
        let masks = self.pre.masks(owner, n)?;
        let c: Vec<u128> = if let Some(v) = values {
            if v.len() != n {
                return Err(Error::Invalid(format!(
                    "expected {n} input values, got {}",
                    v.len()
                )));
            }
            let c: Vec<u128> = v
                .iter()
                .zip(&masks)
                .map(|(&v, m)| {
                    let r = m.plain.ok_or_else(|| Error::Protocol("mask without plaintext".into()))?;
                    Ok(ring.sub(ring.reduce(v), r))
                })
                .collect::<Result<_>>()?;
            let sends: Vec<(usize, &[u128])> = computing
                .iter()
                .filter(|&&p| p != self.me)
                .map(|&p| (p, c.as_slice()))
                .collect();
            self.net.exchange_elems(&ring, MsgType::Input, sends, &[])?;
            c
        } else {
            self
                .net
                .exchange_elems(&ring, MsgType::Input, vec![], &[(owner, n)])?
                .pop()
                .expect("one peer")
        };
        if !self.is_computing() {
            return Ok(Vec::new());
        }
        // With a client owner, the servers confirm they got the same values.
        if !self.topo.is_computing(owner) && computing.len() > 2 {
            let h: Vec<u8> = Sha256::digest(ring.encode_vec(&c)).to_vec();
            let peers: Vec<usize> = computing.iter().copied().filter(|&p| p != self.me).collect();
            let sends = peers.iter().map(|&p| (p, h.clone())).collect();
            let got = self.net.exchange(MsgType::InputCheck, sends, &peers)?;
            if got.iter().any(|g| *g != h) {
                return Err(Error::Abort(format!(
                    "input owner {owner} sent inconsistent values"
                )));
            }
        }
        masks
            .iter()
            .zip(&c)
            .map(|(m, &c)| {
                let s = m.share.ok_or_else(|| Error::Protocol("mask without share".into()))?;
                Ok(self.loc.add_const(s, c))
            })
            .collect()
    }

    /// Reveal `n` shared values to party `recipient` only. Computing parties
    /// pass their shares; a client recipient passes an empty slice. Returns the
    /// values at the recipient and `None` elsewhere. Pending MAC checks are
    /// settled before anything leaves the computing parties.
    pub fn output(&mut self, recipient: usize, xs: &[Share], n: usize) -> Result<Option<Vec<u128>>> {
        let ring = self.ring;
        let computing = self.computing();
        if !self.is_computing() && self.me != recipient {
            return Ok(None);
        }
        let masks = self.pre.masks(recipient, n)?;
        if self.is_computing() {
            if xs.len() != n {
                return Err(Error::Invalid(format!(
                    "expected {n} output shares, got {}",
                    xs.len()
                )));
            }
            let masked: Vec<Share> = xs
                .iter()
                .zip(&masks)
                .map(|(&x, m)| {
                    let s = m.share.ok_or_else(|| Error::Protocol("mask without share".into()))?;
                    Ok(self.loc.add(x, s))
                })
                .collect::<Result<_>>()?;
            let c = self.open_as(MsgType::Output, &masked)?;
            self.mac_check_flush()?;
            if self.me == recipient {
                return Ok(Some(unmask(&ring, &c, &masks)?));
            }
            if !self.topo.is_computing(recipient) {
                self.net
                    .exchange_elems(&ring, MsgType::Output, vec![(recipient, &c)], &[])?;
            }
            return Ok(None);
        }
        let from: Vec<(usize, usize)> = computing.iter().map(|&p| (p, n)).collect();
        let got = self.net.exchange_elems(&ring, MsgType::Output, vec![], &from)?;
        if got.iter().any(|g| *g != got[0]) {
            return Err(Error::Abort("computing parties sent different outputs".into()));
        }
        Ok(Some(unmask(&ring, &got[0], &masks)?))
    }

    /// Open to all computing parties and settle MAC checks first.
    pub fn reveal_all(&mut self, xs: &[Share]) -> Result<Vec<u128>> {
        let v = self.open(xs)?;
        self.mac_check_flush()?;
        Ok(v)
    }
}

fn unmask(ring: &crate::ring::Ring, c: &[u128], masks: &[crate::dealer::Mask]) -> Result<Vec<u128>> {
    c.iter()
        .zip(masks)
        .map(|(&c, m)| {
            let r = m.plain.ok_or_else(|| Error::Protocol("mask without plaintext".into()))?;
            Ok(ring.sub(c, r))
        })
        .collect()
}
