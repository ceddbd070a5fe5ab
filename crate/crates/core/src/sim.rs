//! Run a whole session in one process: one thread per party, in-memory
//! links, and an on-demand dealer.

use crate::dealer::{Generator, OnDemand, Plan, Preprocessing};
use crate::error::Result;
use crate::protocols::{MacCheckMode, OpCounts, Party};
use crate::scheme::SchemeId;
use crate::transport::sim::SimHub;
use crate::transport::{Hello, NetStats, Network, Tamper, Topology, PROTOCOL_VERSION};
use std::collections::HashMap;
use std::thread;
use std::time::Duration;

pub struct SimOptions {
    pub seed: u64,
    pub session: u64,
    pub mac_mode: MacCheckMode,
    /// Audit one in this many dealer records (0 disables).
    pub audit_every: u64,
    /// Seeded per-send delay of up to this many microseconds.
    pub jitter_us: Option<u64>,
    /// Parties taking part; defaults to every role of the topology.
    pub present: Option<Vec<usize>>,
    /// Message rewriting hooks, by party.
    pub tamper: HashMap<usize, Tamper>,
    pub timeout: Duration,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            seed: 1,
            session: 0x5eed,
            mac_mode: MacCheckMode::Batched,
            audit_every: 0,
            jitter_us: None,
            present: None,
            tamper: HashMap::new(),
            timeout: Duration::from_secs(60),
        }
    }
}

impl SimOptions {
    pub fn seed(seed: u64) -> SimOptions {
        SimOptions {
            seed,
            ..SimOptions::default()
        }
    }
}

pub struct PartyRun<T> {
    pub index: usize,
    pub result: Result<T>,
    pub stats: NetStats,
    pub ops: OpCounts,
    pub consumed: Plan,
}

pub struct SimRun<T> {
    /// One entry per present party, in index order.
    pub parties: Vec<PartyRun<T>>,
    pub audited: u64,
}

impl<T> SimRun<T> {
    pub fn get(&self, index: usize) -> &PartyRun<T> {
        self.parties
            .iter()
            .find(|p| p.index == index)
            .expect("party present in run")
    }

    /// Online rounds: the maximum over computing parties.
    pub fn rounds_online(&self) -> u64 {
        self.parties
            .iter()
            .map(|p| p.stats.rounds_online)
            .max()
            .unwrap_or(0)
    }
}

/// Run `f` as every present party of a session.
pub fn run<T, F>(sid: SchemeId, mut opts: SimOptions, f: F) -> SimRun<T>
where
    T: Send,
    F: Fn(&mut Party) -> Result<T> + Sync,
{
    let topo = Topology::for_scheme(sid.scheme);
    let n = topo.party_count();
    let present = opts.present.clone().unwrap_or_else(|| (0..n).collect());
    let dealer = OnDemand::new(Generator::new(sid.ring, sid.scheme, opts.seed ^ 0xdea1))
        .with_audit(opts.audit_every);
    let mut hub = SimHub::new(n).with_timeout(opts.timeout);
    if let Some(us) = opts.jitter_us {
        hub = hub.with_jitter(opts.seed, us);
    }
    let mut links: Vec<Option<_>> = hub.links().into_iter().map(Some).collect();
    let hello = Hello {
        version: PROTOCOL_VERSION,
        scheme: sid.scheme,
        trunc: sid.trunc,
        ring: sid.ring,
        session: opts.session,
    };
    let f = &f;
    let parties = thread::scope(|s| {
        let handles: Vec<_> = present
            .iter()
            .map(|&i| {
                let link = links[i].take().expect("party listed once");
                let mut net = Network::new(i, opts.session, topo.peers_of(i, &present), Box::new(link));
                net.set_tamper(opts.tamper.remove(&i));
                let pre: Box<dyn Preprocessing> = Box::new(dealer.handle(i));
                let seed = opts.seed;
                let mac_mode = opts.mac_mode;
                s.spawn(move || {
                    let mut p = Party::new(sid, i, net, pre, seed);
                    p.set_mac_mode(mac_mode);
                    let result = p.net.handshake(&hello).and_then(|_| f(&mut p));
                    PartyRun {
                        index: i,
                        result,
                        stats: p.net.stats().clone(),
                        ops: p.ops.clone(),
                        consumed: p.pre.consumed(),
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("party thread panicked"))
            .collect()
    });
    SimRun {
        parties,
        audited: dealer.audited(),
    }
}
