//! Additive, MAC-authenticated and replicated sharings, and the linear
//! algebra parties can do on them without talking.
//!
//! One [`Share`] layout serves all three kinds:
//! - additive: `val` is the fragment, `aux` is unused (zero);
//! - authenticated: `val` is the fragment `x_i`, `aux` the MAC fragment `m_i`
//!   with `sum m_i = x * alpha`;
//! - replicated: party `i` holds `(x_i, x_{i+1})`, indices mod 3.

use crate::error::{Error, Result};
use crate::ring::Ring;
use crate::scheme::Scheme;
use rand::RngCore;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Share {
    pub val: u128,
    pub aux: u128,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShareKind {
    Additive,
    Auth,
    Replicated,
}

impl ShareKind {
    pub fn for_scheme(s: Scheme) -> ShareKind {
        match s {
            Scheme::Semi2pc => ShareKind::Additive,
            Scheme::Active2pc => ShareKind::Auth,
            Scheme::Semi3pc | Scheme::Active3pc => ShareKind::Replicated,
        }
    }

    pub fn parties(self) -> usize {
        match self {
            ShareKind::Replicated => 3,
            _ => 2,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            ShareKind::Additive => 1,
            ShareKind::Auth => 2,
            ShareKind::Replicated => 3,
        }
    }

    pub fn from_tag(t: u8) -> Result<ShareKind> {
        Ok(match t {
            1 => ShareKind::Additive,
            2 => ShareKind::Auth,
            3 => ShareKind::Replicated,
            _ => return Err(Error::Protocol(format!("unknown share tag {t}"))),
        })
    }

    fn fields(self) -> usize {
        match self {
            ShareKind::Additive => 1,
            _ => 2,
        }
    }
}

/// Split `x` into one share per party. `alpha` is the full MAC key and is
/// only read for [`ShareKind::Auth`].
pub fn share<R: RngCore + ?Sized>(
    ring: &Ring,
    kind: ShareKind,
    x: u128,
    alpha: u128,
    rng: &mut R,
) -> Vec<Share> {
    match kind {
        ShareKind::Additive => {
            let x0 = ring.random(rng);
            vec![
                Share { val: x0, aux: 0 },
                Share {
                    val: ring.sub(x, x0),
                    aux: 0,
                },
            ]
        }
        ShareKind::Auth => {
            let x0 = ring.random(rng);
            let m = ring.mul(x, alpha);
            let m0 = ring.random(rng);
            vec![
                Share { val: x0, aux: m0 },
                Share {
                    val: ring.sub(x, x0),
                    aux: ring.sub(m, m0),
                },
            ]
        }
        ShareKind::Replicated => {
            let x0 = ring.random(rng);
            let x1 = ring.random(rng);
            let x2 = ring.sub(ring.sub(x, x0), x1);
            replicate(&[x0, x1, x2])
        }
    }
}

/// Lay out three summands as replicated pairs.
pub fn replicate(x: &[u128; 3]) -> Vec<Share> {
    (0..3)
        .map(|i| Share {
            val: x[i],
            aux: x[(i + 1) % 3],
        })
        .collect()
}

/// Split a MAC key into additive key shares.
pub fn share_key<R: RngCore + ?Sized>(ring: &Ring, alpha: u128, rng: &mut R) -> [u128; 2] {
    let a0 = ring.random(rng);
    [a0, ring.sub(alpha, a0)]
}

/// Recombine a full set of shares. Does not check MACs; replicated shares
/// are checked for adjacency.
pub fn reconstruct(ring: &Ring, kind: ShareKind, shares: &[Share]) -> Result<u128> {
    if shares.len() != kind.parties() {
        return Err(Error::Invalid(format!(
            "{} shares for a {}-party sharing",
            shares.len(),
            kind.parties()
        )));
    }
    if kind == ShareKind::Replicated {
        for i in 0..3 {
            if shares[i].aux != shares[(i + 1) % 3].val {
                return Err(Error::Invalid(format!(
                    "replicated shares {i} and {} disagree",
                    (i + 1) % 3
                )));
            }
        }
    }
    Ok(shares.iter().fold(0, |acc, s| ring.add(acc, s.val)))
}

/// `sum m_i == x * alpha` for a full authenticated sharing.
pub fn mac_holds(ring: &Ring, shares: &[Share], alpha: u128) -> bool {
    let x = shares.iter().fold(0, |a, s| ring.add(a, s.val));
    let m = shares.iter().fold(0, |a, s| ring.add(a, s.aux));
    m == ring.mul(x, alpha)
}

pub fn encode_shares(ring: &Ring, kind: ShareKind, shares: &[Share]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + shares.len() * kind.fields() * ring.elem_bytes());
    out.push(kind.tag());
    for s in shares {
        ring.write_elem(s.val, &mut out);
        if kind.fields() == 2 {
            ring.write_elem(s.aux, &mut out);
        }
    }
    out
}

pub fn decode_shares(ring: &Ring, bytes: &[u8]) -> Result<(ShareKind, Vec<Share>)> {
    let (&tag, rest) = bytes
        .split_first()
        .ok_or_else(|| Error::Protocol("empty share encoding".into()))?;
    let kind = ShareKind::from_tag(tag)?;
    let elems = ring.decode_vec(rest)?;
    if elems.len() % kind.fields() != 0 {
        return Err(Error::Protocol("share encoding has a dangling field".into()));
    }
    let shares = if kind.fields() == 1 {
        elems.into_iter().map(|v| Share { val: v, aux: 0 }).collect()
    } else {
        elems
            .chunks_exact(2)
            .map(|c| Share { val: c[0], aux: c[1] })
            .collect()
    };
    Ok((kind, shares))
}

/// One party's view: the local operations on its shares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Local {
    pub ring: Ring,
    pub kind: ShareKind,
    /// Index among the computing parties.
    pub party: usize,
    /// This party's MAC key share; zero unless authenticated.
    pub alpha: u128,
}

impl Local {
    pub fn new(ring: Ring, kind: ShareKind, party: usize, alpha: u128) -> Local {
        Local {
            ring,
            kind,
            party,
            alpha,
        }
    }

    #[inline]
    pub fn add(&self, a: Share, b: Share) -> Share {
        Share {
            val: self.ring.add(a.val, b.val),
            aux: self.ring.add(a.aux, b.aux),
        }
    }

    #[inline]
    pub fn sub(&self, a: Share, b: Share) -> Share {
        Share {
            val: self.ring.sub(a.val, b.val),
            aux: self.ring.sub(a.aux, b.aux),
        }
    }

    #[inline]
    pub fn neg(&self, a: Share) -> Share {
        self.sub(Share::default(), a)
    }

    #[inline]
    pub fn scale(&self, c: u128, a: Share) -> Share {
        Share {
            val: self.ring.mul(c, a.val),
            aux: self.ring.mul(c, a.aux),
        }
    }

    /// Add a public constant. Party 0 adds to its fragment; for MACs every
    /// party adds `alpha_i * c`; for replicated sharing the holder of `x_0`
    /// in the second slot (party 2) adds too.
    #[inline]
    pub fn add_const(&self, a: Share, c: u128) -> Share {
        let r = &self.ring;
        match self.kind {
            ShareKind::Additive => Share {
                val: if self.party == 0 { r.add(a.val, c) } else { a.val },
                aux: a.aux,
            },
            ShareKind::Auth => Share {
                val: if self.party == 0 { r.add(a.val, c) } else { a.val },
                aux: r.add(a.aux, r.mul(self.alpha, c)),
            },
            ShareKind::Replicated => Share {
                val: if self.party == 0 { r.add(a.val, c) } else { a.val },
                aux: if self.party == 2 { r.add(a.aux, c) } else { a.aux },
            },
        }
    }

    /// A sharing of the public value `c`.
    #[inline]
    pub fn constant(&self, c: u128) -> Share {
        self.add_const(Share::default(), c)
    }

    /// `sum c_j * x_j + offset`.
    pub fn lincomb(&self, terms: &[(u128, Share)], offset: u128) -> Share {
        let acc = terms
            .iter()
            .fold(Share::default(), |acc, &(c, s)| self.add(acc, self.scale(c, s)));
        self.add_const(acc, offset)
    }

    /// `c - a` for public `c`.
    #[inline]
    pub fn const_sub(&self, c: u128, a: Share) -> Share {
        self.add_const(self.neg(a), c)
    }

    pub fn add_vec(&self, a: &[Share], b: &[Share]) -> Vec<Share> {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(&x, &y)| self.add(x, y)).collect()
    }

    pub fn sub_vec(&self, a: &[Share], b: &[Share]) -> Vec<Share> {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(&x, &y)| self.sub(x, y)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn z(p: u128) -> Ring {
        Ring::prime(p).unwrap()
    }

    fn locals(ring: Ring, kind: ShareKind, alphas: &[u128]) -> Vec<Local> {
        (0..kind.parties())
            .map(|i| Local::new(ring, kind, i, alphas.get(i).copied().unwrap_or(0)))
            .collect()
    }

    #[test]
    fn additive_example() {
        let r = z(7);
        let s = [Share { val: 3, aux: 0 }, Share { val: 2, aux: 0 }];
        assert_eq!(reconstruct(&r, ShareKind::Additive, &s).unwrap(), 5);
        assert_eq!(r.sub(5, 3), 2);
    }

    #[test]
    fn replicated_layout_example() {
        let s = replicate(&[1, 3, 3]);
        assert_eq!(
            s,
            vec![
                Share { val: 1, aux: 3 },
                Share { val: 3, aux: 3 },
                Share { val: 3, aux: 1 }
            ]
        );
        assert_eq!(reconstruct(&z(5), ShareKind::Replicated, &s).unwrap(), 2);
    }

    #[test]
    fn mac_example() {
        let r = z(7);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let s = share(&r, ShareKind::Auth, 4, 3, &mut rng);
        assert_eq!(r.add(s[0].aux, s[1].aux), 5);
        assert!(mac_holds(&r, &s, 3));
    }

    #[test]
    fn lincomb_examples() {
        let r = z(7);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for kind in [ShareKind::Additive, ShareKind::Auth, ShareKind::Replicated] {
            let alpha = 3;
            let keys = share_key(&r, alpha, &mut rng);
            let ls = locals(r, kind, &keys);
            let x = share(&r, kind, 5, alpha, &mut rng);
            let plus4: Vec<Share> = ls.iter().zip(&x).map(|(l, &s)| l.add_const(s, 4)).collect();
            assert_eq!(reconstruct(&r, kind, &plus4).unwrap(), 2);

            let x = share(&r, kind, 2, alpha, &mut rng);
            let three: Vec<Share> = ls.iter().zip(&x).map(|(l, &s)| l.scale(3, s)).collect();
            assert_eq!(reconstruct(&r, kind, &three).unwrap(), 6);
            if kind == ShareKind::Auth {
                assert!(mac_holds(&r, &three, alpha));
                assert!(mac_holds(&r, &plus4, alpha));
            }

            let a = share(&r, kind, 3, alpha, &mut rng);
            let b = share(&r, kind, 6, alpha, &mut rng);
            let sum: Vec<Share> = (0..kind.parties()).map(|i| ls[i].add(a[i], b[i])).collect();
            assert_eq!(reconstruct(&r, kind, &sum).unwrap(), 2);
        }
    }

    #[test]
    fn roundtrip_all_kinds_both_rings() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for ring in [Ring::prime64(), Ring::mod2k72()] {
            for kind in [ShareKind::Additive, ShareKind::Auth, ShareKind::Replicated] {
                let alpha = ring.random(&mut rng);
                for _ in 0..10_000 {
                    let x = ring.random(&mut rng);
                    let s = share(&ring, kind, x, alpha, &mut rng);
                    assert_eq!(reconstruct(&ring, kind, &s).unwrap(), x);
                    if kind == ShareKind::Auth {
                        assert!(mac_holds(&ring, &s, alpha));
                    }
                    if kind == ShareKind::Replicated {
                        for i in 0..3 {
                            assert_eq!(s[i].aux, s[(i + 1) % 3].val);
                        }
                    }
                }
            }
        }
    }

    /// Chi-square statistic over Z_31 of `samples`.
    fn chi_square(samples: &[u128]) -> f64 {
        let mut counts = [0f64; 31];
        for &s in samples {
            counts[s as usize] += 1.0;
        }
        let e = samples.len() as f64 / 31.0;
        counts.iter().map(|c| (c - e) * (c - e) / e).sum()
    }

    #[test]
    fn single_shares_are_uniform() {
        // 0.99 quantile of chi-square with 30 degrees of freedom.
        const CRIT: f64 = 50.892;
        let r = z(31);
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let n = 100_000;
        let x = 17;
        for kind in [ShareKind::Additive, ShareKind::Auth, ShareKind::Replicated] {
            let parties = kind.parties();
            let mut per_party_val = vec![Vec::with_capacity(n); parties];
            let mut per_party_aux = vec![Vec::with_capacity(n); parties];
            for _ in 0..n {
                let s = share(&r, kind, x, 5, &mut rng);
                for i in 0..parties {
                    per_party_val[i].push(s[i].val);
                    per_party_aux[i].push(s[i].aux);
                }
            }
            for i in 0..parties {
                let c = chi_square(&per_party_val[i]);
                assert!(c < CRIT, "{kind:?} party {i} val chi2 {c}");
                if kind != ShareKind::Additive {
                    let c = chi_square(&per_party_aux[i]);
                    assert!(c < CRIT, "{kind:?} party {i} aux chi2 {c}");
                }
            }
        }
    }

    #[test]
    fn serialization_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for ring in [Ring::prime64(), Ring::mod2k72()] {
            for kind in [ShareKind::Additive, ShareKind::Auth, ShareKind::Replicated] {
                let s = share(&ring, kind, 99, 7, &mut rng);
                let b = encode_shares(&ring, kind, &s);
                assert_eq!(b[0], kind.tag());
                assert_eq!(b.len(), 1 + s.len() * kind.fields() * ring.elem_bytes());
                let (k2, s2) = decode_shares(&ring, &b).unwrap();
                assert_eq!(k2, kind);
                if kind == ShareKind::Additive {
                    assert_eq!(s2.iter().map(|s| s.val).collect::<Vec<_>>(), s.iter().map(|s| s.val).collect::<Vec<_>>());
                } else {
                    assert_eq!(s2, s);
                }
            }
        }
        assert!(decode_shares(&Ring::prime64(), &[9]).is_err());
    }

    #[derive(Clone, Debug)]
    enum Op {
        AddConst(u64),
        Scale(u64),
        AddFresh(u64),
        SubFresh(u64),
        Neg,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            any::<u64>().prop_map(Op::AddConst),
            any::<u64>().prop_map(Op::Scale),
            any::<u64>().prop_map(Op::AddFresh),
            any::<u64>().prop_map(Op::SubFresh),
            Just(Op::Neg),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn mac_relation_survives_lincomb_sequences(ops in prop::collection::vec(op(), 1..40), seed: u64) {
            let ring = Ring::prime64();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let alpha = ring.random(&mut rng);
            let keys = share_key(&ring, alpha, &mut rng);
            let ls = locals(ring, ShareKind::Auth, &keys);
            let mut plain = 11u128;
            let mut s = share(&ring, ShareKind::Auth, plain, alpha, &mut rng);
            for o in ops {
                match o {
                    Op::AddConst(c) => {
                        let c = ring.reduce(c as u128);
                        plain = ring.add(plain, c);
                        s = (0..2).map(|i| ls[i].add_const(s[i], c)).collect();
                    }
                    Op::Scale(c) => {
                        let c = ring.reduce(c as u128);
                        plain = ring.mul(plain, c);
                        s = (0..2).map(|i| ls[i].scale(c, s[i])).collect();
                    }
                    Op::AddFresh(v) | Op::SubFresh(v) => {
                        let v = ring.reduce(v as u128);
                        let t = share(&ring, ShareKind::Auth, v, alpha, &mut rng);
                        let add = matches!(o, Op::AddFresh(_));
                        plain = if add { ring.add(plain, v) } else { ring.sub(plain, v) };
                        s = (0..2).map(|i| if add { ls[i].add(s[i], t[i]) } else { ls[i].sub(s[i], t[i]) }).collect();
                    }
                    Op::Neg => {
                        plain = ring.neg(plain);
                        s = (0..2).map(|i| ls[i].neg(s[i])).collect();
                    }
                }
                prop_assert!(mac_holds(&ring, &s, alpha));
                prop_assert_eq!(reconstruct(&ring, ShareKind::Auth, &s).unwrap(), plain);
            }
        }
    }
}
