//! Persistent artifact identifiers.
//!
//! Every artifact receives a kind-prefixed, zero-padded serial such as
//! `cid_000014`. Serials are allocated per kind and never handed out twice
//! within a run, including for artifacts that were later tombstoned.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ParseIdError;

/// The six artifact families tracked by the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Turn,
    Chunk,
    Quote,
    Code,
    Subtheme,
    Theme,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 6] = [
        ArtifactKind::Turn,
        ArtifactKind::Chunk,
        ArtifactKind::Quote,
        ArtifactKind::Code,
        ArtifactKind::Subtheme,
        ArtifactKind::Theme,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            ArtifactKind::Turn => "tid",
            ArtifactKind::Chunk => "chk",
            ArtifactKind::Quote => "qid",
            ArtifactKind::Code => "cid",
            ArtifactKind::Subtheme => "sid",
            ArtifactKind::Theme => "thm",
        }
    }

    fn from_prefix(prefix: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.prefix() == prefix)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Turn => "turn",
            ArtifactKind::Chunk => "chunk",
            ArtifactKind::Quote => "quote",
            ArtifactKind::Code => "code",
            ArtifactKind::Subtheme => "subtheme",
            ArtifactKind::Theme => "theme",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A persistent artifact identifier. Ordering is by kind, then serial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArtifactId {
    kind: ArtifactKind,
    serial: u32,
}

impl ArtifactId {
    /// Builds an id; serials start at 1.
    pub fn new(kind: ArtifactKind, serial: u32) -> Self {
        assert!(serial > 0, "artifact serials are positive");
        Self { kind, serial }
    }

    pub fn kind(self) -> ArtifactKind {
        self.kind
    }

    pub fn serial(self) -> u32 {
        self.serial
    }
}

impl fmt::Display for ArtifactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{:06}", self.kind.prefix(), self.serial)
    }
}

impl FromStr for ArtifactId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseIdError(s.to_string());
        let (prefix, digits) = s.split_once('_').ok_or_else(bad)?;
        let kind = ArtifactKind::from_prefix(prefix).ok_or_else(bad)?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let serial: u32 = digits.parse().map_err(|_| bad())?;
        if serial == 0 {
            return Err(bad());
        }
        Ok(Self { kind, serial })
    }
}

impl Serialize for ArtifactId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArtifactId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hands out fresh serials per kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdAllocator {
    last: BTreeMap<ArtifactKind, u32>,
}

impl IdAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next(&mut self, kind: ArtifactKind) -> ArtifactId {
        let slot = self.last.entry(kind).or_insert(0);
        *slot += 1;
        ArtifactId::new(kind, *slot)
    }

    /// Makes sure no future id collides with `id`.
    pub fn observe(&mut self, id: ArtifactId) {
        let slot = self.last.entry(id.kind()).or_insert(0);
        if *slot < id.serial() {
            *slot = id.serial();
        }
    }

    pub fn last(&self, kind: ArtifactKind) -> u32 {
        self.last.get(&kind).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_zero_padded() {
        let id = ArtifactId::new(ArtifactKind::Code, 14);
        assert_eq!(id.to_string(), "cid_000014");
        assert_eq!("cid_000014".parse::<ArtifactId>().unwrap(), id);
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "cid", "cid_", "xyz_000001", "cid_00a001", "cid_000000"] {
            assert!(bad.parse::<ArtifactId>().is_err(), "{bad}");
        }
    }

    #[test]
    fn wide_serials_round_trip() {
        let id = ArtifactId::new(ArtifactKind::Quote, 1_234_567);
        assert_eq!(id.to_string(), "qid_1234567");
        assert_eq!(id.to_string().parse::<ArtifactId>().unwrap(), id);
    }

    #[test]
    fn allocator_is_monotone_per_kind_and_never_reuses() {
        let mut ids = IdAllocator::new();
        let a = ids.next(ArtifactKind::Code);
        let b = ids.next(ArtifactKind::Code);
        let q = ids.next(ArtifactKind::Quote);
        assert!(a < b);
        assert_eq!(q.serial(), 1);
        ids.observe(ArtifactId::new(ArtifactKind::Code, 40));
        assert_eq!(ids.next(ArtifactKind::Code).serial(), 41);
        ids.observe(ArtifactId::new(ArtifactKind::Code, 3));
        assert_eq!(ids.next(ArtifactKind::Code).serial(), 42);
    }

    #[test]
    fn serde_uses_rendered_form() {
        let id = ArtifactId::new(ArtifactKind::Theme, 2);
        assert_eq!(serde_json::to_string(&id).unwrap(), "\"thm_000002\"");
    }
}
