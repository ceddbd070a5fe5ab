//! Commit-then-reveal broadcast.
//!
//! Phase 1 sends `SHA-256(payload || nonce)` to every participant. With three
//! or more participants an echo round follows in which everyone sends a hash
//! of the full commitment vector it saw, so a party that sent different
//! commitments to different peers is caught. Phase 2 reveals payload and
//! nonce, checked against the commitment.

use super::{MsgType, Network};
use crate::error::{Error, Result};
use rand::RngCore;
use sha2::{Digest, Sha256};

pub const NONCE_LEN: usize = 32;

pub fn commitment(payload: &[u8], nonce: &[u8; NONCE_LEN]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(payload);
    h.update(nonce);
    h.finalize().into()
}

/// Returns every participant's payload, indexed like `parties` (which must
/// contain this party).
pub fn commit_reveal<R: RngCore + ?Sized>(
    net: &mut Network,
    parties: &[usize],
    payload: &[u8],
    rng: &mut R,
) -> Result<Vec<Vec<u8>>> {
    let me = net.me();
    let pos = parties
        .iter()
        .position(|&p| p == me)
        .ok_or_else(|| Error::Invalid("commit_reveal without own index".into()))?;
    let others: Vec<usize> = parties.iter().copied().filter(|&p| p != me).collect();

    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let mine = commitment(payload, &nonce);

    let got = net.exchange(
        MsgType::Commit,
        others.iter().map(|&p| (p, mine.to_vec())).collect(),
        &others,
    )?;
    let mut commits = Vec::with_capacity(parties.len());
    let mut it = got.into_iter();
    for (i, &p) in parties.iter().enumerate() {
        if i == pos {
            commits.push(mine);
            continue;
        }
        let c = it.next().expect("one commitment per peer");
        commits.push(c.try_into().map_err(|_| {
            Error::Abort(format!("malformed commitment from party {p}"))
        })?);
    }

    if parties.len() >= 3 {
        let mut h = Sha256::new();
        for c in &commits {
            h.update(c);
        }
        let view: [u8; 32] = h.finalize().into();
        let echoes = net.exchange(
            MsgType::Echo,
            others.iter().map(|&p| (p, view.to_vec())).collect(),
            &others,
        )?;
        for (e, &p) in echoes.iter().zip(&others) {
            if e.as_slice() != view {
                return Err(Error::Abort(format!(
                    "commitment views disagree with party {p}"
                )));
            }
        }
    }

    let mut opening = payload.to_vec();
    opening.extend_from_slice(&nonce);
    let reveals = net.exchange(
        MsgType::Reveal,
        others.iter().map(|&p| (p, opening.clone())).collect(),
        &others,
    )?;
    let mut out = Vec::with_capacity(parties.len());
    let mut it = reveals.into_iter();
    for (i, &p) in parties.iter().enumerate() {
        if i == pos {
            out.push(payload.to_vec());
            continue;
        }
        let r = it.next().expect("one reveal per peer");
        if r.len() < NONCE_LEN {
            return Err(Error::Abort(format!("short reveal from party {p}")));
        }
        let (body, n) = r.split_at(r.len() - NONCE_LEN);
        let n: [u8; NONCE_LEN] = n.try_into().expect("nonce length");
        if commitment(body, &n) != commits[i] {
            return Err(Error::Abort(format!(
                "party {p} opened a value that does not match its commitment"
            )));
        }
        out.push(body.to_vec());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::sim::SimHub;
    use crate::transport::Tamper;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::thread;

    fn run(n: usize, tampers: Vec<Option<Tamper>>) -> Vec<Result<Vec<Vec<u8>>>> {
        let links = SimHub::new(n).links();
        thread::scope(|s| {
            let hs: Vec<_> = links
                .into_iter()
                .zip(tampers)
                .enumerate()
                .map(|(i, (l, t))| {
                    s.spawn(move || {
                        let parties: Vec<usize> = (0..n).collect();
                        let peers = parties.iter().copied().filter(|&j| j != i).collect();
                        let mut net = Network::new(i, 1, peers, Box::new(l));
                        net.set_tamper(t);
                        let mut rng = ChaCha20Rng::seed_from_u64(i as u64);
                        commit_reveal(&mut net, &parties, &[i as u8; 8], &mut rng)
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        })
    }

    #[test]
    fn honest_parties_learn_everything() {
        for n in [2, 3] {
            let res = run(n, (0..n).map(|_| None).collect());
            for r in res {
                let r = r.unwrap();
                for (j, v) in r.iter().enumerate() {
                    assert_eq!(v, &vec![j as u8; 8]);
                }
            }
        }
    }

    #[test]
    fn substitution_after_commit_always_detected() {
        for trial in 0..1000u32 {
            let t: Tamper = Box::new(move |ty, _, buf: &mut Vec<u8>| {
                if ty == MsgType::Reveal {
                    let i = trial as usize % 8;
                    buf[i] = buf[i].wrapping_add(1 + (trial % 255) as u8);
                }
            });
            let res = run(2, vec![Some(t), None]);
            assert!(matches!(res[1], Err(Error::Abort(_))), "trial {trial}");
        }
    }

    #[test]
    fn equivocation_to_two_peers_is_caught() {
        // Party 0 sends a different commitment to party 2 than to party 1.
        // Every choice of victim must cause at least one abort.
        for victim in [1usize, 2] {
            let t: Tamper = Box::new(move |ty, to, buf: &mut Vec<u8>| {
                if ty == MsgType::Commit && to == victim {
                    buf[0] ^= 1;
                }
            });
            let res = run(3, vec![Some(t), None, None]);
            assert!(res.iter().any(|r| matches!(r, Err(Error::Abort(_)))));
            assert!(res[1].is_err() || res[2].is_err());
        }
    }
}
