//! Ordered point-to-point channels between parties, with a TCP backend and an
//! in-process simulated backend, plus commit-then-reveal broadcast.
//!
//! Every message between a fixed ordered pair is delivered in send order.
//! Protocol code talks in rounds through [`Network::exchange`], which is what
//! the round counters measure.

mod commit;
mod frame;
pub mod sim;
pub mod tcp;

pub use commit::{commit_reveal, commitment};
pub use frame::{Frame, MsgType, HEADER_LEN};

use crate::error::{Error, Result};
use crate::ring::{Ring, RingKind};
use crate::scheme::{Scheme, TruncMode};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub const PROTOCOL_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Alice,
    Bob,
    Server1,
    Server2,
    Server3,
    Dealer,
    ThirdParty,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Alice => "alice",
            Role::Bob => "bob",
            Role::Server1 => "s1",
            Role::Server2 => "s2",
            Role::Server3 => "s3",
            Role::Dealer => "dealer",
            Role::ThirdParty => "third-party",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alice" => Role::Alice,
            "bob" => Role::Bob,
            "s1" => Role::Server1,
            "s2" => Role::Server2,
            "s3" => Role::Server3,
            "dealer" => Role::Dealer,
            "third-party" | "third" => Role::ThirdParty,
            _ => return Err(Error::Invalid(format!("unknown role '{s}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    TwoParty,
    ThreeParty,
}

impl Topology {
    pub fn for_scheme(s: Scheme) -> Topology {
        if s.is_replicated() {
            Topology::ThreeParty
        } else {
            Topology::TwoParty
        }
    }

    /// Roles in index order. Computing parties come first; the rest are
    /// clients that only talk to computing parties.
    pub fn roles(self) -> &'static [Role] {
        match self {
            Topology::TwoParty => &[Role::Alice, Role::Bob, Role::ThirdParty],
            Topology::ThreeParty => &[
                Role::Server1,
                Role::Server2,
                Role::Server3,
                Role::Alice,
                Role::Bob,
                Role::ThirdParty,
            ],
        }
    }

    pub fn computing(self) -> usize {
        match self {
            Topology::TwoParty => 2,
            Topology::ThreeParty => 3,
        }
    }

    pub fn party_count(self) -> usize {
        self.roles().len()
    }

    pub fn index_of(self, role: Role) -> Option<usize> {
        self.roles().iter().position(|&r| r == role)
    }

    pub fn party(self, index: usize) -> Result<PartyId> {
        self.roles()
            .get(index)
            .map(|&role| PartyId { index, role })
            .ok_or_else(|| Error::Invalid(format!("party index {index} out of range")))
    }

    pub fn id(self, role: Role) -> Result<PartyId> {
        self.index_of(role)
            .map(|index| PartyId { index, role })
            .ok_or_else(|| Error::Invalid(format!("role {role} not in {self:?}")))
    }

    pub fn is_computing(self, index: usize) -> bool {
        index < self.computing()
    }

    /// Default peer set: computing parties talk to everyone, clients only to
    /// computing parties.
    pub fn peers_of(self, index: usize, present: &[usize]) -> Vec<usize> {
        present
            .iter()
            .copied()
            .filter(|&j| j != index && (self.is_computing(index) || self.is_computing(j)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartyId {
    pub index: usize,
    pub role: Role,
}

/// Handshake contents; every field must agree between peers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hello {
    pub version: u8,
    pub scheme: Scheme,
    pub trunc: TruncMode,
    pub ring: Ring,
    pub session: u64,
}

impl Hello {
    fn encode(&self, sender: usize) -> Vec<u8> {
        let mut b = vec![self.version, self.scheme.id_byte(), self.trunc as u8];
        b.push(match self.ring.kind() {
            RingKind::Prime64 => 1,
            RingKind::Mod2k => 2,
        });
        b.extend_from_slice(&self.ring.modulus_or_k().to_le_bytes());
        b.extend_from_slice(&self.ring.frac_bits().to_le_bytes());
        b.extend_from_slice(&self.ring.value_bits().to_le_bytes());
        b.extend_from_slice(&self.ring.stat_sec().to_le_bytes());
        b.extend_from_slice(&self.session.to_le_bytes());
        b.extend_from_slice(&(sender as u32).to_le_bytes());
        b
    }

    /// Compare a peer's hello bytes against ours. Returns the sender index.
    fn check(&self, bytes: &[u8]) -> Result<usize> {
        if bytes.len() != 4 + 16 + 12 + 8 + 4 {
            return Err(Error::Handshake(format!(
                "hello of {} bytes",
                bytes.len()
            )));
        }
        if bytes[0] != self.version {
            return Err(Error::Handshake(format!(
                "version {} vs ours {}",
                bytes[0], self.version
            )));
        }
        if bytes[1] != self.scheme.id_byte() || bytes[2] != self.trunc as u8 {
            return Err(Error::Handshake(format!(
                "scheme/truncation mismatch (peer {}/{}, ours {}/{})",
                bytes[1],
                bytes[2],
                self.scheme.id_byte(),
                self.trunc as u8
            )));
        }
        let ours = self.encode(0);
        if bytes[3..32] != ours[3..32] {
            return Err(Error::Handshake(format!(
                "ring descriptor mismatch (ours {})",
                self.ring
            )));
        }
        if bytes[32..40] != ours[32..40] {
            return Err(Error::Handshake("session id mismatch".into()));
        }
        Ok(u32::from_le_bytes(bytes[40..44].try_into().expect("4 bytes")) as usize)
    }
}

/// Backend: moves complete frames between parties.
pub trait Link: Send {
    fn send(&mut self, peer: usize, frame: Vec<u8>) -> Result<()>;
    fn recv(&mut self, peer: usize) -> Result<Vec<u8>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Offline,
    Online,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerStats {
    pub sent_bytes: u64,
    pub recv_bytes: u64,
    pub sent_msgs: u64,
    pub recv_msgs: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub rounds_online: u64,
    pub rounds_offline: u64,
    pub per_peer: BTreeMap<usize, PeerStats>,
}

impl NetStats {
    pub fn bytes_sent(&self) -> u64 {
        self.per_peer.values().map(|p| p.sent_bytes).sum()
    }

    pub fn bytes_received(&self) -> u64 {
        self.per_peer.values().map(|p| p.recv_bytes).sum()
    }

    pub fn rounds(&self) -> u64 {
        self.rounds_online + self.rounds_offline
    }
}

/// Outgoing-payload hook used to script adversaries in tests.
pub type Tamper = Box<dyn FnMut(MsgType, usize, &mut Vec<u8>) + Send>;

pub struct Network {
    me: usize,
    session: u64,
    peers: Vec<usize>,
    link: Box<dyn Link>,
    stats: NetStats,
    phase: Phase,
    tamper: Option<Tamper>,
}

impl Network {
    pub fn new(me: usize, session: u64, peers: Vec<usize>, link: Box<dyn Link>) -> Network {
        Network {
            me,
            session,
            peers,
            link,
            stats: NetStats::default(),
            phase: Phase::Online,
            tamper: None,
        }
    }

    pub fn me(&self) -> usize {
        self.me
    }

    pub fn peers(&self) -> &[usize] {
        &self.peers
    }

    pub fn stats(&self) -> &NetStats {
        &self.stats
    }

    pub fn set_phase(&mut self, phase: Phase) -> Phase {
        std::mem::replace(&mut self.phase, phase)
    }

    pub fn set_tamper(&mut self, t: Option<Tamper>) {
        self.tamper = t;
    }

    /// Exchange hellos with every peer and verify agreement.
    pub fn handshake(&mut self, hello: &Hello) -> Result<()> {
        let mine = hello.encode(self.me);
        for &p in &self.peers.clone() {
            self.send(p, MsgType::Hello, mine.clone())?;
        }
        for &p in &self.peers.clone() {
            let bytes = self.recv(p, MsgType::Hello)?;
            let sender = hello.check(&bytes)?;
            if sender != p {
                return Err(Error::Handshake(format!(
                    "peer {p} identifies as {sender}"
                )));
            }
        }
        Ok(())
    }

    pub fn send(&mut self, to: usize, ty: MsgType, mut payload: Vec<u8>) -> Result<()> {
        if let Some(t) = self.tamper.as_mut() {
            t(ty, to, &mut payload);
        }
        let bytes = Frame {
            msg_type: ty,
            session: self.session,
            payload,
        }
        .encode();
        let s = self.stats.per_peer.entry(to).or_default();
        s.sent_bytes += bytes.len() as u64;
        s.sent_msgs += 1;
        self.link.send(to, bytes)
    }

    pub fn recv(&mut self, from: usize, ty: MsgType) -> Result<Vec<u8>> {
        let bytes = self.link.recv(from)?;
        let s = self.stats.per_peer.entry(from).or_default();
        s.recv_bytes += bytes.len() as u64;
        s.recv_msgs += 1;
        let frame = Frame::decode(&bytes)?;
        if frame.session != self.session {
            return Err(Error::Protocol(format!(
                "frame from {from} carries session {:#x}",
                frame.session
            )));
        }
        if frame.msg_type != ty {
            return Err(Error::Protocol(format!(
                "expected {ty:?} from party {from}, got {:?}",
                frame.msg_type
            )));
        }
        Ok(frame.payload)
    }

    /// One communication round: send everything, then receive from each
    /// listed peer in order.
    pub fn exchange(
        &mut self,
        ty: MsgType,
        sends: Vec<(usize, Vec<u8>)>,
        from: &[usize],
    ) -> Result<Vec<Vec<u8>>> {
        match self.phase {
            Phase::Online => self.stats.rounds_online += 1,
            Phase::Offline => self.stats.rounds_offline += 1,
        }
        for (to, payload) in sends {
            self.send(to, ty, payload)?;
        }
        from.iter().map(|&p| self.recv(p, ty)).collect()
    }

    /// Ring-element convenience over [`Network::exchange`].
    pub fn exchange_elems(
        &mut self,
        ring: &Ring,
        ty: MsgType,
        sends: Vec<(usize, &[u128])>,
        from: &[(usize, usize)],
    ) -> Result<Vec<Vec<u128>>> {
        let sends = sends
            .into_iter()
            .map(|(p, xs)| (p, ring.encode_vec(xs)))
            .collect();
        let peers: Vec<usize> = from.iter().map(|&(p, _)| p).collect();
        let got = self.exchange(ty, sends, &peers)?;
        got.into_iter()
            .zip(from)
            .map(|(bytes, &(p, n))| {
                let v = ring.decode_vec(&bytes)?;
                if v.len() != n {
                    return Err(Error::Protocol(format!(
                        "party {p} sent {} elements, expected {n}",
                        v.len()
                    )));
                }
                Ok(v)
            })
            .collect()
    }
}
