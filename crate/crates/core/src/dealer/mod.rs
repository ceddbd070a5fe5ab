//! Trusted-dealer preprocessing.
//!
//! The online phase consumes correlated randomness through the
//! [`Preprocessing`] trait. Two sources implement it: [`OnDemand`], an
//! in-process dealer that generates material for every party as it is first
//! requested (and meters what was used), and [`FileStore`], a finite supply
//! read from a file written ahead of time. Requests carry only counts, shapes
//! and owners, never inputs.

mod file;

pub use file::{produce, read_store, write_party_file, FileStore, PREPROC_MAGIC};

use crate::error::{Error, Result};
use crate::ring::Ring;
use crate::scheme::Scheme;
use crate::sharing::{self, Share, ShareKind};
use crate::transport::Topology;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub a: Share,
    pub b: Share,
    pub c: Share,
}

/// Shares of `A (m x k)`, `B (k x n)` and `C = A B`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatTriple {
    pub shape: (usize, usize, usize),
    pub a: Vec<Share>,
    pub b: Vec<Share>,
    pub c: Vec<Share>,
}

/// Masking material for opening `x + 2^m r_hi + r_lo`, with
/// `r_lo < 2^m` and `r_hi < 2^(l+kappa-m)`. `bits` holds the bits of `r_lo`
/// (least significant first) when requested, and is empty otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncPair {
    pub hi: Share,
    pub lo: Share,
    pub bits: Vec<Share>,
}

/// A single-use mask `r`. Computing parties get a share; the owner gets the
/// plaintext.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Mask {
    pub share: Option<Share>,
    pub plain: Option<u128>,
}

/// Per-party session keys.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Setup {
    /// MAC key share `alpha_i` (authenticated scheme only).
    pub mac_key: u128,
    /// Replicated schemes: party `i` holds PRF keys `K_i` and `K_{i+1}`.
    pub prf: Option<[[u8; 32]; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Triple,
    Matrix(usize, usize, usize),
    Bit,
    Trunc { m: u32, bits: bool },
    Mask(usize),
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Triple => write!(f, "triple"),
            Kind::Matrix(m, k, n) => write!(f, "matrix:{m}x{k}x{n}"),
            Kind::Bit => write!(f, "bit"),
            Kind::Trunc { m, bits: true } => write!(f, "trunc:{m}:bits"),
            Kind::Trunc { m, bits: false } => write!(f, "trunc:{m}"),
            Kind::Mask(o) => write!(f, "mask:{o}"),
        }
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Kind> {
        let bad = || Error::Invalid(format!("unknown material kind '{s}'"));
        let mut it = s.split(':');
        let head = it.next().ok_or_else(bad)?;
        let rest: Vec<&str> = it.collect();
        Ok(match (head, rest.as_slice()) {
            ("triple", []) => Kind::Triple,
            ("bit", []) => Kind::Bit,
            ("matrix", [dims]) => {
                let d: Vec<usize> = dims
                    .split('x')
                    .map(|v| v.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                match d.as_slice() {
                    [m, k, n] => Kind::Matrix(*m, *k, *n),
                    _ => return Err(bad()),
                }
            }
            ("trunc", [m]) => Kind::Trunc {
                m: m.parse().map_err(|_| bad())?,
                bits: false,
            },
            ("trunc", [m, "bits"]) => Kind::Trunc {
                m: m.parse().map_err(|_| bad())?,
                bits: true,
            },
            ("mask", [o]) => Kind::Mask(o.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        })
    }
}

/// Material counts by kind. Serialized as a JSON object keyed by kind name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Plan(pub BTreeMap<Kind, u64>);

impl Plan {
    pub fn add(&mut self, k: Kind, n: u64) {
        *self.0.entry(k).or_default() += n;
    }

    pub fn get(&self, k: Kind) -> u64 {
        self.0.get(&k).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &Plan) {
        for (&k, &n) in &other.0 {
            self.add(k, n);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.values().all(|&n| n == 0)
    }

    /// Total ring elements a computing party stores for this plan.
    pub fn elements(&self, scheme: Scheme) -> u64 {
        let per = if scheme == Scheme::Semi2pc { 1 } else { 2 };
        self.0
            .iter()
            .map(|(k, &n)| {
                let e = match *k {
                    Kind::Triple => 3,
                    Kind::Matrix(m, kk, nn) => (m * kk + kk * nn + m * nn) as u64,
                    Kind::Bit => 1,
                    Kind::Trunc { m, bits } => 2 + if bits { m as u64 } else { 0 },
                    Kind::Mask(_) => 1,
                };
                e * n * per
            })
            .sum()
    }
}

impl Serialize for Plan {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m: BTreeMap<String, u64> = self.0.iter().map(|(k, &n)| (k.to_string(), n)).collect();
        m.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Plan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Plan, D::Error> {
        let m = BTreeMap::<String, u64>::deserialize(d)?;
        let mut p = Plan::default();
        for (k, n) in m {
            let k: Kind = k.parse().map_err(serde::de::Error::custom)?;
            p.add(k, n);
        }
        Ok(p)
    }
}

/// One issued record, as seen by one party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Item {
    Triple(Triple),
    Matrix(MatTriple),
    Bit(Share),
    Trunc(TruncPair),
    Mask(Mask),
}

/// The source of correlated randomness a party draws from.
pub trait Preprocessing: Send {
    fn setup(&self) -> Setup;
    fn take(&mut self, kind: Kind, n: usize) -> Result<Vec<Item>>;
    /// Everything this party has drawn so far.
    fn consumed(&self) -> Plan;

    fn triples(&mut self, n: usize) -> Result<Vec<Triple>> {
        self.take(Kind::Triple, n)?
            .into_iter()
            .map(|i| match i {
                Item::Triple(t) => Ok(t),
                _ => Err(mixed()),
            })
            .collect()
    }

    fn matrix_triple(&mut self, m: usize, k: usize, n: usize) -> Result<MatTriple> {
        match self.take(Kind::Matrix(m, k, n), 1)?.pop() {
            Some(Item::Matrix(t)) => Ok(t),
            _ => Err(mixed()),
        }
    }

    fn bits(&mut self, n: usize) -> Result<Vec<Share>> {
        self.take(Kind::Bit, n)?
            .into_iter()
            .map(|i| match i {
                Item::Bit(b) => Ok(b),
                _ => Err(mixed()),
            })
            .collect()
    }

    fn trunc_pairs(&mut self, m: u32, bits: bool, n: usize) -> Result<Vec<TruncPair>> {
        self.take(Kind::Trunc { m, bits }, n)?
            .into_iter()
            .map(|i| match i {
                Item::Trunc(t) => Ok(t),
                _ => Err(mixed()),
            })
            .collect()
    }

    fn masks(&mut self, owner: usize, n: usize) -> Result<Vec<Mask>> {
        self.take(Kind::Mask(owner), n)?
            .into_iter()
            .map(|i| match i {
                Item::Mask(m) => Ok(m),
                _ => Err(mixed()),
            })
            .collect()
    }
}

fn mixed() -> Error {
    Error::Protocol("preprocessing returned the wrong material kind".into())
}

/// Generates material for every party of a session. Holds the MAC key and
/// PRF keys; it never sees inputs.
pub struct Generator {
    ring: Ring,
    scheme: Scheme,
    kind: ShareKind,
    topo: Topology,
    alpha: u128,
    setups: Vec<Setup>,
    rng: ChaCha20Rng,
}

impl Generator {
    pub fn new(ring: Ring, scheme: Scheme, seed: u64) -> Generator {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let kind = ShareKind::for_scheme(scheme);
        let topo = Topology::for_scheme(scheme);
        let mut alpha = 0;
        let mut setups = vec![Setup::default(); topo.party_count()];
        match kind {
            ShareKind::Auth => {
                alpha = ring.random(&mut rng);
                let ks = sharing::share_key(&ring, alpha, &mut rng);
                setups[0].mac_key = ks[0];
                setups[1].mac_key = ks[1];
            }
            ShareKind::Replicated => {
                let mut keys = [[0u8; 32]; 3];
                for k in keys.iter_mut() {
                    rng.fill_bytes(k);
                }
                for (i, s) in setups.iter_mut().take(3).enumerate() {
                    s.prf = Some([keys[i], keys[(i + 1) % 3]]);
                }
            }
            ShareKind::Additive => {}
        }
        Generator {
            ring,
            scheme,
            kind,
            topo,
            alpha,
            setups,
            rng,
        }
    }

    pub fn ring(&self) -> Ring {
        self.ring
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn topology(&self) -> Topology {
        self.topo
    }

    pub fn setup(&self, party: usize) -> Setup {
        self.setups[party]
    }

    /// The full MAC key; used by audits and tests only.
    pub fn mac_key(&self) -> u128 {
        self.alpha
    }

    /// Which parties receive records of `kind`.
    pub fn recipients(&self, kind: Kind) -> Vec<usize> {
        let c = self.topo.computing();
        let mut v: Vec<usize> = (0..c).collect();
        if let Kind::Mask(o) = kind {
            if o >= c {
                v.push(o);
            }
        }
        v
    }

    fn share(&mut self, x: u128) -> Vec<Share> {
        sharing::share(&self.ring, self.kind, x, self.alpha, &mut self.rng)
    }

    fn share_vec(&mut self, xs: &[u128]) -> Vec<Vec<Share>> {
        let n = self.topo.computing();
        let mut out = vec![Vec::with_capacity(xs.len()); n];
        for &x in xs {
            for (p, s) in self.share(x).into_iter().enumerate() {
                out[p].push(s);
            }
        }
        out
    }

    /// Generate one record of `kind` for every recipient, indexed by global
    /// party index (`None` for parties that receive nothing).
    pub fn generate(&mut self, kind: Kind) -> Result<Vec<Option<Item>>> {
        let ring = self.ring;
        let parties = self.topo.party_count();
        let c = self.topo.computing();
        let mut out: Vec<Option<Item>> = vec![None; parties];
        match kind {
            Kind::Triple | Kind::Matrix(..) if self.kind == ShareKind::Replicated => {
                return Err(Error::Invalid(format!(
                    "{} does not use dealer triples",
                    self.scheme
                )))
            }
            Kind::Triple => {
                let a = ring.random(&mut self.rng);
                let b = ring.random(&mut self.rng);
                let (sa, sb, sc) = (self.share(a), self.share(b), self.share(ring.mul(a, b)));
                for p in 0..c {
                    out[p] = Some(Item::Triple(Triple {
                        a: sa[p],
                        b: sb[p],
                        c: sc[p],
                    }));
                }
            }
            Kind::Matrix(m, k, n) => {
                let a: Vec<u128> = (0..m * k).map(|_| ring.random(&mut self.rng)).collect();
                let b: Vec<u128> = (0..k * n).map(|_| ring.random(&mut self.rng)).collect();
                let cm = matmul_plain(&ring, &a, &b, m, k, n);
                let (sa, sb, sc) = (self.share_vec(&a), self.share_vec(&b), self.share_vec(&cm));
                for (p, ((a, b), c)) in sa.into_iter().zip(sb).zip(sc).enumerate() {
                    out[p] = Some(Item::Matrix(MatTriple {
                        shape: (m, k, n),
                        a,
                        b,
                        c,
                    }));
                }
            }
            Kind::Bit => {
                let b = self.rng.gen_range(0..2u128);
                for (p, s) in self.share(b).into_iter().enumerate() {
                    out[p] = Some(Item::Bit(s));
                }
            }
            Kind::Trunc { m, bits } => {
                let top = ring.value_bits() + ring.stat_sec();
                if m == 0 || m > ring.value_bits() || m >= top {
                    return Err(Error::Invalid(format!(
                        "truncation pair for m={m} under {ring}"
                    )));
                }
                let hi = ring.random_bits(&mut self.rng, top - m);
                let lo = ring.random_bits(&mut self.rng, m);
                let shi = self.share(hi);
                let slo = self.share(lo);
                let sbits: Vec<Vec<Share>> = if bits {
                    (0..m).map(|i| self.share((lo >> i) & 1)).collect()
                } else {
                    Vec::new()
                };
                for p in 0..c {
                    out[p] = Some(Item::Trunc(TruncPair {
                        hi: shi[p],
                        lo: slo[p],
                        bits: sbits.iter().map(|b| b[p]).collect(),
                    }));
                }
            }
            Kind::Mask(owner) => {
                if owner >= parties {
                    return Err(Error::Invalid(format!("mask owner {owner} out of range")));
                }
                let r = ring.random(&mut self.rng);
                let s = self.share(r);
                for p in 0..c {
                    out[p] = Some(Item::Mask(Mask {
                        share: Some(s[p]),
                        plain: (p == owner).then_some(r),
                    }));
                }
                if owner >= c {
                    out[owner] = Some(Item::Mask(Mask {
                        share: None,
                        plain: Some(r),
                    }));
                }
            }
        }
        Ok(out)
    }

    /// Check one record set against its invariant.
    pub fn audit(&self, kind: Kind, items: &[Option<Item>]) -> Result<()> {
        let ring = &self.ring;
        let c = self.topo.computing();
        let fail = |what: &str| Err(Error::Protocol(format!("audit of {kind}: {what}")));
        let rec = |ss: Vec<Share>| -> Result<u128> {
            if self.kind == ShareKind::Auth && !sharing::mac_holds(ring, &ss, self.alpha) {
                return Err(Error::Protocol(format!("audit of {kind}: MAC relation broken")));
            }
            sharing::reconstruct(ring, self.kind, &ss)
        };
        let get = |p: usize| items[p].as_ref().expect("computing party record");
        match kind {
            Kind::Triple => {
                let t: Vec<Triple> = (0..c)
                    .map(|p| match get(p) {
                        Item::Triple(t) => *t,
                        _ => unreachable!(),
                    })
                    .collect();
                let a = rec(t.iter().map(|t| t.a).collect())?;
                let b = rec(t.iter().map(|t| t.b).collect())?;
                let cc = rec(t.iter().map(|t| t.c).collect())?;
                if cc != ring.mul(a, b) {
                    return fail("c != a b");
                }
            }
            Kind::Matrix(m, k, n) => {
                let ts: Vec<&MatTriple> = (0..c)
                    .map(|p| match get(p) {
                        Item::Matrix(t) => t,
                        _ => unreachable!(),
                    })
                    .collect();
                let open = |f: &dyn Fn(&MatTriple) -> &Vec<Share>, len: usize| -> Result<Vec<u128>> {
                    (0..len)
                        .map(|i| rec(ts.iter().map(|t| f(t)[i]).collect()))
                        .collect()
                };
                let a = open(&|t| &t.a, m * k)?;
                let b = open(&|t| &t.b, k * n)?;
                let cc = open(&|t| &t.c, m * n)?;
                if cc != matmul_plain(ring, &a, &b, m, k, n) {
                    return fail("C != A B");
                }
            }
            Kind::Bit => {
                let b = rec((0..c)
                    .map(|p| match get(p) {
                        Item::Bit(s) => *s,
                        _ => unreachable!(),
                    })
                    .collect())?;
                if b > 1 {
                    return fail("not a bit");
                }
            }
            Kind::Trunc { m, .. } => {
                let ts: Vec<&TruncPair> = (0..c)
                    .map(|p| match get(p) {
                        Item::Trunc(t) => t,
                        _ => unreachable!(),
                    })
                    .collect();
                let lo = rec(ts.iter().map(|t| t.lo).collect())?;
                let hi = rec(ts.iter().map(|t| t.hi).collect())?;
                if lo >> m != 0 || hi >> (ring.value_bits() + ring.stat_sec() - m) != 0 {
                    return fail("component out of range");
                }
                if !ts[0].bits.is_empty() {
                    let mut acc = 0u128;
                    for i in 0..m as usize {
                        let b = rec(ts.iter().map(|t| t.bits[i]).collect())?;
                        if b > 1 {
                            return fail("bit share not a bit");
                        }
                        acc |= b << i;
                    }
                    if acc != lo {
                        return fail("bits do not compose r mod 2^m");
                    }
                }
            }
            Kind::Mask(owner) => {
                let r = rec((0..c)
                    .map(|p| match get(p) {
                        Item::Mask(mk) => mk.share.expect("share"),
                        _ => unreachable!(),
                    })
                    .collect())?;
                let plain = match items[owner].as_ref() {
                    Some(Item::Mask(mk)) => mk.plain,
                    _ => None,
                };
                if plain != Some(r) {
                    return fail("owner plaintext differs from shared mask");
                }
                for (p, it) in items.iter().enumerate() {
                    if p != owner {
                        if let Some(Item::Mask(mk)) = it {
                            if mk.plain.is_some() {
                                return fail("mask plaintext sent to a non-owner");
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn matmul_plain(ring: &Ring, a: &[u128], b: &[u128], m: usize, k: usize, n: usize) -> Vec<u128> {
    let mut c = vec![0u128; m * n];
    for i in 0..m {
        for l in 0..k {
            let x = a[i * k + l];
            if x == 0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] = ring.add(c[i * n + j], ring.mul(x, b[l * n + j]));
            }
        }
    }
    c
}

struct DealerState {
    gen: Generator,
    queues: HashMap<(usize, Kind), VecDeque<Item>>,
    consumed: Vec<Plan>,
    audit_every: u64,
    issued: u64,
    audited: u64,
}

/// In-process dealer shared by all parties of a session. Material is made
/// when first requested, for everyone at once, so every party sees the same
/// sequence.
#[derive(Clone)]
pub struct OnDemand {
    state: Arc<Mutex<DealerState>>,
}

impl OnDemand {
    pub fn new(gen: Generator) -> OnDemand {
        let parties = gen.topo.party_count();
        OnDemand {
            state: Arc::new(Mutex::new(DealerState {
                gen,
                queues: HashMap::new(),
                consumed: vec![Plan::default(); parties],
                audit_every: 0,
                issued: 0,
                audited: 0,
            })),
        }
    }

    /// Audit one in `every` generated records (0 disables).
    pub fn with_audit(self, every: u64) -> OnDemand {
        self.state.lock().expect("dealer lock").audit_every = every;
        self
    }

    pub fn handle(&self, party: usize) -> DealerHandle {
        DealerHandle {
            state: Arc::clone(&self.state),
            party,
        }
    }

    pub fn consumed(&self, party: usize) -> Plan {
        self.state.lock().expect("dealer lock").consumed[party].clone()
    }

    /// Records audited so far.
    pub fn audited(&self) -> u64 {
        self.state.lock().expect("dealer lock").audited
    }

    pub fn mac_key(&self) -> u128 {
        self.state.lock().expect("dealer lock").gen.alpha
    }
}

pub struct DealerHandle {
    state: Arc<Mutex<DealerState>>,
    party: usize,
}

impl Preprocessing for DealerHandle {
    fn setup(&self) -> Setup {
        self.state.lock().expect("dealer lock").gen.setup(self.party)
    }

    fn take(&mut self, kind: Kind, n: usize) -> Result<Vec<Item>> {
        let mut st = self.state.lock().expect("dealer lock");
        let st = &mut *st;
        if !st.gen.recipients(kind).contains(&self.party) {
            return Err(Error::Invalid(format!(
                "party {} does not receive {kind}",
                self.party
            )));
        }
        let have = st.queues.get(&(self.party, kind)).map_or(0, |q| q.len());
        for _ in have..n {
            let items = st.gen.generate(kind)?;
            st.issued += 1;
            if st.audit_every > 0 && st.issued % st.audit_every == 0 {
                st.gen.audit(kind, &items)?;
                st.audited += 1;
            }
            for (p, it) in items.into_iter().enumerate() {
                if let Some(it) = it {
                    st.queues.entry((p, kind)).or_default().push_back(it);
                }
            }
        }
        st.consumed[self.party].add(kind, n as u64);
        let q = st.queues.entry((self.party, kind)).or_default();
        Ok(q.drain(..n).collect())
    }

    fn consumed(&self) -> Plan {
        self.state.lock().expect("dealer lock").consumed[self.party].clone()
    }
}
