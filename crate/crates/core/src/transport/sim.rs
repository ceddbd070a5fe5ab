//! In-process backend: one crossbeam channel per ordered party pair.

use super::Link;
use crate::error::{Error, Result};
use crossbeam_channel::{unbounded, Receiver, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Duration;

pub struct SimHub {
    n: usize,
    jitter: Option<(u64, u64)>,
    timeout: Option<Duration>,
}

impl SimHub {
    pub fn new(n: usize) -> SimHub {
        SimHub {
            n,
            jitter: None,
            timeout: None,
        }
    }

    /// Delay every send by a seeded random 0..=`max_micros` microseconds.
    /// Per-pair order is unaffected; only cross-pair timing changes.
    pub fn with_jitter(mut self, seed: u64, max_micros: u64) -> SimHub {
        self.jitter = Some((seed, max_micros));
        self
    }

    pub fn with_timeout(mut self, t: Duration) -> SimHub {
        self.timeout = Some(t);
        self
    }

    pub fn links(self) -> Vec<SimLink> {
        let n = self.n;
        let mut tx: Vec<Vec<Option<Sender<Vec<u8>>>>> = vec![vec![None; n]; n];
        let mut rx: Vec<Vec<Option<Receiver<Vec<u8>>>>> = (0..n).map(|_| vec![None; n]).collect();
        for (from, row) in tx.iter_mut().enumerate() {
            for (to, slot) in row.iter_mut().enumerate() {
                if from != to {
                    let (s, r) = unbounded();
                    *slot = Some(s);
                    rx[to][from] = Some(r);
                }
            }
        }
        tx.into_iter()
            .zip(rx)
            .enumerate()
            .map(|(i, (tx, rx))| SimLink {
                me: i,
                tx,
                rx,
                jitter: self
                    .jitter
                    .map(|(seed, max)| (ChaCha8Rng::seed_from_u64(seed ^ (i as u64) << 32), max)),
                timeout: self.timeout,
            })
            .collect()
    }
}

pub struct SimLink {
    me: usize,
    tx: Vec<Option<Sender<Vec<u8>>>>,
    rx: Vec<Option<Receiver<Vec<u8>>>>,
    jitter: Option<(ChaCha8Rng, u64)>,
    timeout: Option<Duration>,
}

impl SimLink {
    pub fn index(&self) -> usize {
        self.me
    }

    /// Drop every channel touching `peer`, as if the connection died.
    pub fn disconnect(&mut self, peer: usize) {
        if let Some(s) = self.tx.get_mut(peer) {
            *s = None;
        }
        if let Some(r) = self.rx.get_mut(peer) {
            *r = None;
        }
    }
}

impl Link for SimLink {
    fn send(&mut self, peer: usize, frame: Vec<u8>) -> Result<()> {
        if let Some((rng, max)) = self.jitter.as_mut() {
            let us = rng.gen_range(0..=*max);
            if us > 0 {
                std::thread::sleep(Duration::from_micros(us));
            }
        }
        let tx = self
            .tx
            .get(peer)
            .and_then(|s| s.as_ref())
            .ok_or_else(|| Error::Transport(format!("no channel to party {peer}")))?;
        tx.send(frame)
            .map_err(|_| Error::Transport(format!("party {peer} disconnected")))
    }

    fn recv(&mut self, peer: usize) -> Result<Vec<u8>> {
        let rx = self
            .rx
            .get(peer)
            .and_then(|r| r.as_ref())
            .ok_or_else(|| Error::Transport(format!("no channel from party {peer}")))?;
        match self.timeout {
            Some(t) => rx.recv_timeout(t).map_err(|e| {
                Error::Transport(format!("receive from party {peer}: {e}"))
            }),
            None => rx
                .recv()
                .map_err(|_| Error::Transport(format!("party {peer} disconnected"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{MsgType, Network};
    use std::thread;

    #[test]
    fn fifo_under_jitter_no_loss_or_duplication() {
        let links = SimHub::new(3).with_jitter(11, 50).links();
        let got = thread::scope(|s| {
            let hs: Vec<_> = links
                .into_iter()
                .map(|l| {
                    s.spawn(move || {
                        let me = l.index();
                        let peers: Vec<usize> = (0..3).filter(|&j| j != me).collect();
                        let mut net = Network::new(me, 5, peers.clone(), Box::new(l));
                        for k in 0..50u8 {
                            for &p in &peers {
                                net.send(p, MsgType::Data, vec![me as u8, k]).unwrap();
                            }
                        }
                        let mut seen = Vec::new();
                        for &p in &peers {
                            for _ in 0..50 {
                                seen.push(net.recv(p, MsgType::Data).unwrap());
                            }
                        }
                        (me, seen)
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect::<Vec<_>>()
        });
        for (me, seen) in got {
            let peers: Vec<usize> = (0..3).filter(|&j| j != me).collect();
            let want: Vec<Vec<u8>> = peers
                .iter()
                .flat_map(|&p| (0..50u8).map(move |k| vec![p as u8, k]))
                .collect();
            assert_eq!(seen, want);
        }
    }

    #[test]
    fn truncated_frame_is_rejected_without_delivery() {
        let mut links = SimHub::new(2).links().into_iter();
        let mut a = links.next().unwrap();
        let b = links.next().unwrap();
        let good = crate::transport::Frame {
            msg_type: MsgType::Data,
            session: 3,
            payload: vec![1, 2, 3, 4],
        }
        .encode();
        a.send(1, good[..good.len() - 2].to_vec()).unwrap();
        a.send(1, good.clone()).unwrap();
        let mut nb = Network::new(1, 3, vec![0], Box::new(b));
        assert!(matches!(
            nb.recv(0, MsgType::Data),
            Err(Error::Protocol(_))
        ));
        assert_eq!(nb.recv(0, MsgType::Data).unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn peer_disconnect_surfaces_as_transport_error() {
        let mut links = SimHub::new(2).links().into_iter();
        let a = links.next().unwrap();
        let mut b = links.next().unwrap();
        drop(a);
        assert!(matches!(b.recv(0), Err(Error::Transport(_))));
        assert!(matches!(b.send(0, vec![]), Err(Error::Transport(_))));
    }
}
