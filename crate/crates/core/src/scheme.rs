//! Scheme identifiers: topology x threat model x ring x truncation.

use crate::error::{Error, Result};
use crate::ring::{Ring, RingKind};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Additive sharing, dealer triples, passive security.
    Semi2pc,
    /// MAC-authenticated additive sharing, passive-to-active via MAC checks.
    Active2pc,
    /// Replicated sharing with local cross-products and PRF zero-sharing.
    Semi3pc,
    /// Replicated sharing, sacrificed triples, cross-checked openings.
    Active3pc,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Semi2pc,
        Scheme::Active2pc,
        Scheme::Semi3pc,
        Scheme::Active3pc,
    ];

    pub fn parties(self) -> usize {
        match self {
            Scheme::Semi2pc | Scheme::Active2pc => 2,
            Scheme::Semi3pc | Scheme::Active3pc => 3,
        }
    }

    pub fn is_active(self) -> bool {
        matches!(self, Scheme::Active2pc | Scheme::Active3pc)
    }

    pub fn is_replicated(self) -> bool {
        self.parties() == 3
    }

    pub fn id_byte(self) -> u8 {
        match self {
            Scheme::Semi2pc => 1,
            Scheme::Active2pc => 2,
            Scheme::Semi3pc => 3,
            Scheme::Active3pc => 4,
        }
    }

    pub fn from_id_byte(b: u8) -> Result<Scheme> {
        Ok(match b {
            1 => Scheme::Semi2pc,
            2 => Scheme::Active2pc,
            3 => Scheme::Semi3pc,
            4 => Scheme::Active3pc,
            _ => return Err(Error::Protocol(format!("unknown scheme id {b}"))),
        })
    }

    /// Active security is only offered over the prime field.
    pub fn supports(self, ring: RingKind) -> bool {
        !(self.is_active() && ring == RingKind::Mod2k)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Semi2pc => "semi-2pc",
            Scheme::Active2pc => "active-2pc",
            Scheme::Semi3pc => "semi-3pc",
            Scheme::Active3pc => "active-3pc",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "semi-2pc" => Scheme::Semi2pc,
            "active-2pc" => Scheme::Active2pc,
            "semi-3pc" => Scheme::Semi3pc,
            "active-3pc" => Scheme::Active3pc,
            _ => return Err(Error::Invalid(format!("unknown scheme '{s}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TruncMode {
    /// Exact floor division by a power of two.
    Det,
    /// Rounds up with probability proportional to the discarded remainder.
    Prob,
}

impl fmt::Display for TruncMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TruncMode::Det => "det",
            TruncMode::Prob => "prob",
        })
    }
}

impl FromStr for TruncMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det" => Ok(TruncMode::Det),
            "prob" => Ok(TruncMode::Prob),
            _ => Err(Error::Invalid(format!("unknown truncation mode '{s}'"))),
        }
    }
}

pub fn parse_ring(s: &str) -> Result<Ring> {
    match s {
        "prime64" => Ok(Ring::prime64()),
        "mod2k" => Ok(Ring::mod2k72()),
        _ => Err(Error::Invalid(format!("unknown ring '{s}'"))),
    }
}

pub fn ring_name(ring: &Ring) -> &'static str {
    match ring.kind() {
        RingKind::Prime64 => "prime64",
        RingKind::Mod2k => "mod2k",
    }
}

/// A full scheme selection. Construction rejects unsupported combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeId {
    pub scheme: Scheme,
    pub ring: Ring,
    pub trunc: TruncMode,
}

impl SchemeId {
    pub fn new(scheme: Scheme, ring: Ring, trunc: TruncMode) -> Result<SchemeId> {
        if !scheme.supports(ring.kind()) {
            return Err(Error::Invalid(format!(
                "{scheme} is not supported over {}",
                ring_name(&ring)
            )));
        }
        if !ring.has_protocol_params() {
            return Err(Error::Invalid(format!(
                "ring {ring} has no protocol parameters"
            )));
        }
        Ok(SchemeId {
            scheme,
            ring,
            trunc,
        })
    }

    /// The six supported (scheme, ring) pairs with the given truncation mode.
    pub fn all_supported(trunc: TruncMode) -> Vec<SchemeId> {
        let mut out = Vec::new();
        for scheme in Scheme::ALL {
            for ring in [Ring::prime64(), Ring::mod2k72()] {
                if let Ok(id) = SchemeId::new(scheme, ring, trunc) {
                    out.push(id);
                }
            }
        }
        out
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.scheme, ring_name(&self.ring), self.trunc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_supported_combinations() {
        assert_eq!(SchemeId::all_supported(TruncMode::Det).len(), 6);
        assert!(SchemeId::new(Scheme::Active2pc, Ring::mod2k72(), TruncMode::Det).is_err());
        assert!(SchemeId::new(Scheme::Active3pc, Ring::mod2k72(), TruncMode::Prob).is_err());
        assert!(SchemeId::new(Scheme::Semi3pc, Ring::mod2k72(), TruncMode::Det).is_ok());
    }

    #[test]
    fn names_roundtrip() {
        for s in Scheme::ALL {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
            assert_eq!(Scheme::from_id_byte(s.id_byte()).unwrap(), s);
        }
        assert!("semi-4pc".parse::<Scheme>().is_err());
    }
}
