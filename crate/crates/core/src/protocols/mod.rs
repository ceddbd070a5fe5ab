//! Online-phase building blocks.
//!
//! Every operation is vectorized: it takes a slice of shares and spends the
//! same number of rounds regardless of its length. A [`Party`] is one
//! participant's view of a session; computing parties run the arithmetic,
//! clients (the data and model owners in the three-server setting, or a third
//! party receiving the output) only provide inputs or receive outputs.

mod arith;
mod compare;
mod divide;
mod io;
mod open;
mod trunc;
mod triplegen;

pub use divide::{GOLDSCHMIDT_ITERS, RECIP_INIT};
pub use open::MacCheckMode;

use crate::dealer::Preprocessing;
use crate::error::{Error, Result};
use crate::ring::Ring;
use crate::scheme::{SchemeId, TruncMode};
use crate::sharing::{Local, Share, ShareKind};
use crate::transport::{Network, Topology};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Operation counts, for reports.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct OpCounts {
    pub mults: u64,
    pub matmuls: u64,
    pub opens: u64,
    pub truncs: u64,
    pub comparisons: u64,
    pub mac_checks: u64,
}

pub struct Party {
    pub sid: SchemeId,
    pub ring: Ring,
    pub topo: Topology,
    /// Global party index.
    pub me: usize,
    pub net: Network,
    pub pre: Box<dyn Preprocessing>,
    pub rng: ChaCha20Rng,
    pub loc: Local,
    pub ops: OpCounts,
    mac_mode: MacCheckMode,
    pending: Vec<(u128, u128)>,
    prf: Option<Prf>,
}

/// Pairwise PRF streams of a replicated party: index 0 is keyed by `K_i`,
/// index 1 by `K_{i+1}`.
struct Prf {
    zero: [ChaCha20Rng; 2],
    rand: [ChaCha20Rng; 2],
}

fn stream(key: &[u8; 32], label: &[u8]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(key);
    h.update(label);
    ChaCha20Rng::from_seed(h.finalize().into())
}

impl Party {
    pub fn new(
        sid: SchemeId,
        me: usize,
        net: Network,
        pre: Box<dyn Preprocessing>,
        seed: u64,
    ) -> Party {
        let ring = sid.ring;
        let topo = Topology::for_scheme(sid.scheme);
        let kind = ShareKind::for_scheme(sid.scheme);
        let setup = pre.setup();
        let prf = setup.prf.map(|[a, b]| Prf {
            zero: [stream(&a, b"zero"), stream(&b, b"zero")],
            rand: [stream(&a, b"rand"), stream(&b, b"rand")],
        });
        let mut s = Sha256::new();
        s.update(seed.to_le_bytes());
        s.update((me as u64).to_le_bytes());
        Party {
            sid,
            ring,
            topo,
            me,
            net,
            pre,
            rng: ChaCha20Rng::from_seed(s.finalize().into()),
            loc: Local::new(ring, kind, me.min(topo.computing() - 1), setup.mac_key),
            ops: OpCounts::default(),
            mac_mode: MacCheckMode::Batched,
            pending: Vec::new(),
            prf,
        }
    }

    pub fn set_mac_mode(&mut self, m: MacCheckMode) {
        self.mac_mode = m;
    }

    pub fn trunc_mode(&self) -> TruncMode {
        self.sid.trunc
    }

    pub fn kind(&self) -> ShareKind {
        self.loc.kind
    }

    pub fn is_computing(&self) -> bool {
        self.topo.is_computing(self.me)
    }

    pub fn computing(&self) -> Vec<usize> {
        (0..self.topo.computing()).collect()
    }

    fn need_computing(&self, what: &str) -> Result<()> {
        if self.is_computing() {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "party {} is not a computing party and cannot run {what}",
                self.me
            )))
        }
    }

    fn next(&self) -> usize {
        (self.me + 1) % 3
    }

    fn prev(&self) -> usize {
        (self.me + 2) % 3
    }

    fn other(&self) -> usize {
        1 - self.me
    }

    /// Sharing of a public constant.
    pub fn constant(&self, c: u128) -> Share {
        self.loc.constant(c)
    }

    pub fn constant_i(&self, c: i128) -> Share {
        self.loc.constant(self.ring.from_i128(c))
    }

    pub fn constants(&self, cs: &[u128]) -> Vec<Share> {
        cs.iter().map(|&c| self.constant(c)).collect()
    }

    pub fn add(&self, a: &[Share], b: &[Share]) -> Vec<Share> {
        self.loc.add_vec(a, b)
    }

    pub fn sub(&self, a: &[Share], b: &[Share]) -> Vec<Share> {
        self.loc.sub_vec(a, b)
    }

    pub fn add_const(&self, a: &[Share], c: u128) -> Vec<Share> {
        a.iter().map(|&s| self.loc.add_const(s, c)).collect()
    }

    pub fn scale(&self, c: u128, a: &[Share]) -> Vec<Share> {
        a.iter().map(|&s| self.loc.scale(c, s)).collect()
    }
}
