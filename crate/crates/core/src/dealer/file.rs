//! Preprocessing file: a header (ring descriptor, scheme, party, keys) and
//! one section per material kind holding packed records. Elements use the
//! transport serialization; a share is written as `val` then `aux`.
//!
//! ```text
//! "OBPP" | version u8 | scheme u8 | ring kind u8 | modulus u128 | f u32 | l u32 | kappa u32
//! party u32 | parties u32 | mac key elem | prf flag u8 [| K_i 32 | K_i+1 32]
//! sections u32 { name len u16 | name utf8 | count u64 | records }
//! ```
//! Integers are little-endian.

use super::{Generator, Item, Kind, Mask, MatTriple, Plan, Preprocessing, Setup, Triple, TruncPair};
use crate::error::{Error, Result};
use crate::ring::{Ring, RingKind};
use crate::scheme::Scheme;
use crate::sharing::Share;
use std::collections::{HashMap, VecDeque};

pub const PREPROC_MAGIC: &[u8; 4] = b"OBPP";
const VERSION: u8 = 1;

struct Writer<'a> {
    ring: &'a Ring,
    out: Vec<u8>,
}

impl Writer<'_> {
    fn elem(&mut self, v: u128) {
        self.ring.write_elem(v, &mut self.out);
    }

    fn share(&mut self, s: &Share) {
        self.elem(s.val);
        self.elem(s.aux);
    }

    fn shares(&mut self, ss: &[Share]) {
        for s in ss {
            self.share(s);
        }
    }

    fn item(&mut self, it: &Item) {
        match it {
            Item::Triple(t) => {
                self.share(&t.a);
                self.share(&t.b);
                self.share(&t.c);
            }
            Item::Matrix(t) => {
                self.shares(&t.a);
                self.shares(&t.b);
                self.shares(&t.c);
            }
            Item::Bit(s) => self.share(s),
            Item::Trunc(t) => {
                self.share(&t.hi);
                self.share(&t.lo);
                self.shares(&t.bits);
            }
            Item::Mask(m) => {
                self.out
                    .push(m.share.is_some() as u8 | (m.plain.is_some() as u8) << 1);
                if let Some(s) = &m.share {
                    self.share(s);
                }
                if let Some(p) = m.plain {
                    self.elem(p);
                }
            }
        }
    }
}

fn ring_header(ring: &Ring, out: &mut Vec<u8>) {
    out.push(match ring.kind() {
        RingKind::Prime64 => 1,
        RingKind::Mod2k => 2,
    });
    out.extend_from_slice(&ring.modulus_or_k().to_le_bytes());
    out.extend_from_slice(&ring.frac_bits().to_le_bytes());
    out.extend_from_slice(&ring.value_bits().to_le_bytes());
    out.extend_from_slice(&ring.stat_sec().to_le_bytes());
}

pub fn write_party_file(
    ring: &Ring,
    scheme: Scheme,
    party: usize,
    parties: usize,
    setup: &Setup,
    sections: &[(Kind, Vec<Item>)],
) -> Vec<u8> {
    let mut w = Writer {
        ring,
        out: Vec::new(),
    };
    w.out.extend_from_slice(PREPROC_MAGIC);
    w.out.push(VERSION);
    w.out.push(scheme.id_byte());
    ring_header(ring, &mut w.out);
    w.out.extend_from_slice(&(party as u32).to_le_bytes());
    w.out.extend_from_slice(&(parties as u32).to_le_bytes());
    w.elem(setup.mac_key);
    match &setup.prf {
        Some([a, b]) => {
            w.out.push(1);
            w.out.extend_from_slice(a);
            w.out.extend_from_slice(b);
        }
        None => w.out.push(0),
    }
    w.out
        .extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (kind, items) in sections {
        let name = kind.to_string();
        w.out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        w.out.extend_from_slice(name.as_bytes());
        w.out.extend_from_slice(&(items.len() as u64).to_le_bytes());
        for it in items {
            w.item(it);
        }
    }
    w.out
}

/// Generate `plan` for every party of `gen`'s session; returns one file
/// image per party (empty for parties that receive nothing).
pub fn produce(gen: &mut Generator, plan: &Plan) -> Result<Vec<Vec<u8>>> {
    let parties = gen.topology().party_count();
    let mut sections: Vec<Vec<(Kind, Vec<Item>)>> = vec![Vec::new(); parties];
    for (&kind, &n) in &plan.0 {
        let rec = gen.recipients(kind);
        let mut per: Vec<Vec<Item>> = vec![Vec::with_capacity(n as usize); parties];
        for _ in 0..n {
            for (p, it) in gen.generate(kind)?.into_iter().enumerate() {
                if let Some(it) = it {
                    per[p].push(it);
                }
            }
        }
        for p in rec {
            sections[p].push((kind, std::mem::take(&mut per[p])));
        }
    }
    let ring = gen.ring();
    Ok(sections
        .into_iter()
        .enumerate()
        .map(|(p, s)| {
            if s.is_empty() && p >= gen.topology().computing() {
                Vec::new()
            } else {
                write_party_file(&ring, gen.scheme(), p, parties, &gen.setup(p), &s)
            }
        })
        .collect())
}

struct Reader<'a> {
    ring: Ring,
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::Invalid(format!(
                "preprocessing file truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().expect("2")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8")))
    }

    fn elem(&mut self) -> Result<u128> {
        let w = self.ring.elem_bytes();
        let b = self.bytes(w)?;
        Ok(self.ring.read_elem(b)?)
    }

    fn share(&mut self) -> Result<Share> {
        Ok(Share {
            val: self.elem()?,
            aux: self.elem()?,
        })
    }

    fn shares(&mut self, n: usize) -> Result<Vec<Share>> {
        (0..n).map(|_| self.share()).collect()
    }

    fn item(&mut self, kind: Kind) -> Result<Item> {
        Ok(match kind {
            Kind::Triple => Item::Triple(Triple {
                a: self.share()?,
                b: self.share()?,
                c: self.share()?,
            }),
            Kind::Matrix(m, k, n) => Item::Matrix(MatTriple {
                shape: (m, k, n),
                a: self.shares(m * k)?,
                b: self.shares(k * n)?,
                c: self.shares(m * n)?,
            }),
            Kind::Bit => Item::Bit(self.share()?),
            Kind::Trunc { m, bits } => Item::Trunc(TruncPair {
                hi: self.share()?,
                lo: self.share()?,
                bits: self.shares(if bits { m as usize } else { 0 })?,
            }),
            Kind::Mask(_) => {
                let f = self.u8()?;
                if f > 3 {
                    return Err(Error::Invalid(format!("bad mask flags {f}")));
                }
                let share = if f & 1 != 0 { Some(self.share()?) } else { None };
                let plain = if f & 2 != 0 { Some(self.elem()?) } else { None };
                Item::Mask(Mask { share, plain })
            }
        })
    }
}

/// Finite preprocessing supply loaded from a file. Running out is an error;
/// records are never reused.
pub struct FileStore {
    pub ring: Ring,
    pub scheme: Scheme,
    pub party: usize,
    setup: Setup,
    queues: HashMap<Kind, VecDeque<Item>>,
    consumed: Plan,
}

impl FileStore {
    /// Material still available.
    pub fn remaining(&self) -> Plan {
        let mut p = Plan::default();
        for (&k, q) in &self.queues {
            p.add(k, q.len() as u64);
        }
        p
    }
}

pub fn read_store(bytes: &[u8]) -> Result<FileStore> {
    if bytes.len() < 6 || &bytes[..4] != PREPROC_MAGIC {
        return Err(Error::Invalid("not a preprocessing file".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Invalid(format!(
            "preprocessing file version {} unsupported",
            bytes[4]
        )));
    }
    let scheme = Scheme::from_id_byte(bytes[5])?;
    let mut r = Reader {
        ring: Ring::prime64(),
        b: bytes,
        pos: 6,
    };
    let kind = r.u8()?;
    let modulus = u128::from_le_bytes(r.bytes(16)?.try_into().expect("16"));
    let (f, l, kappa) = (r.u32()?, r.u32()?, r.u32()?);
    let base = match kind {
        1 => Ring::prime(modulus)?,
        2 => Ring::mod2k(modulus as u32)?,
        _ => return Err(Error::Invalid(format!("bad ring kind {kind}"))),
    };
    let ring = if l > 0 {
        base.with_params(f, l, kappa)?
    } else {
        base
    };
    r.ring = ring;
    let party = r.u32()? as usize;
    let _parties = r.u32()?;
    let mac_key = r.elem()?;
    let prf = match r.u8()? {
        0 => None,
        1 => Some([
            r.bytes(32)?.try_into().expect("32"),
            r.bytes(32)?.try_into().expect("32"),
        ]),
        x => return Err(Error::Invalid(format!("bad key flag {x}"))),
    };
    let mut queues: HashMap<Kind, VecDeque<Item>> = HashMap::new();
    for _ in 0..r.u32()? {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| Error::Invalid("section name is not utf-8".into()))?;
        let kind: Kind = name.parse()?;
        let n = r.u64()?;
        let q = queues.entry(kind).or_default();
        for _ in 0..n {
            q.push_back(r.item(kind)?);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Invalid(format!(
            "{} trailing bytes in preprocessing file",
            bytes.len() - r.pos
        )));
    }
    Ok(FileStore {
        ring,
        scheme,
        party,
        setup: Setup { mac_key, prf },
        queues,
        consumed: Plan::default(),
    })
}

impl Preprocessing for FileStore {
    fn setup(&self) -> Setup {
        self.setup
    }

    fn take(&mut self, kind: Kind, n: usize) -> Result<Vec<Item>> {
        let have = self.queues.get(&kind).map_or(0, |q| q.len());
        if have < n {
            return Err(Error::Exhausted(format!(
                "{kind}: need {n}, {have} left (party {})",
                self.party
            )));
        }
        self.consumed.add(kind, n as u64);
        Ok(self
            .queues
            .get_mut(&kind)
            .expect("checked")
            .drain(..n)
            .collect())
    }

    fn consumed(&self) -> Plan {
        self.consumed.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dealer::OnDemand;
    use crate::sharing::{self, ShareKind};

    #[test]
    fn file_roundtrip_matches_generator_and_exhausts_loudly() {
        for (scheme, ring) in [
            (Scheme::Active2pc, Ring::prime64()),
            (Scheme::Semi3pc, Ring::mod2k72()),
        ] {
            let mut plan = Plan::default();
            plan.add(Kind::Bit, 4);
            plan.add(Kind::Trunc { m: 5, bits: true }, 3);
            plan.add(Kind::Mask(1), 2);
            if !scheme.is_replicated() {
                plan.add(Kind::Triple, 6);
                plan.add(Kind::Matrix(2, 2, 3), 1);
            }
            let mut g = Generator::new(ring, scheme, 77);
            let files = produce(&mut g, &plan).unwrap();
            let mut stores: Vec<FileStore> = files
                .iter()
                .take(scheme.parties())
                .map(|f| read_store(f).unwrap())
                .collect();
            let kind = ShareKind::for_scheme(scheme);
            let bits: Vec<Vec<Share>> = stores.iter_mut().map(|s| s.bits(4).unwrap()).collect();
            for i in 0..4 {
                let v: Vec<Share> = bits.iter().map(|b| b[i]).collect();
                assert!(sharing::reconstruct(&ring, kind, &v).unwrap() <= 1);
            }
            assert!(matches!(stores[0].bits(1), Err(Error::Exhausted(_))));
            assert_eq!(stores[1].remaining().get(Kind::Mask(1)), 2);
            let m = stores[1].masks(1, 2).unwrap();
            assert!(m.iter().all(|m| m.plain.is_some()));
            let m0 = stores[0].masks(1, 2).unwrap();
            assert!(m0.iter().all(|m| m.plain.is_none()));
            assert_eq!(stores[0].setup(), g.setup(0));
        }
    }

    #[test]
    fn on_demand_consumption_replays_from_file() {
        let ring = Ring::prime64();
        let d = OnDemand::new(Generator::new(ring, Scheme::Semi2pc, 5));
        let mut h = d.handle(0);
        h.triples(3).unwrap();
        h.trunc_pairs(12, true, 2).unwrap();
        let plan = h.consumed();
        let files = produce(&mut Generator::new(ring, Scheme::Semi2pc, 6), &plan).unwrap();
        let mut s = read_store(&files[0]).unwrap();
        s.triples(3).unwrap();
        s.trunc_pairs(12, true, 2).unwrap();
        assert!(s.remaining().is_empty());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut g = Generator::new(Ring::prime64(), Scheme::Semi2pc, 1);
        let mut plan = Plan::default();
        plan.add(Kind::Triple, 2);
        let f = &produce(&mut g, &plan).unwrap()[0];
        for cut in 0..f.len() {
            assert!(read_store(&f[..cut]).is_err());
        }
        let mut long = f.clone();
        long.push(0);
        assert!(read_store(&long).is_err());
    }
}
