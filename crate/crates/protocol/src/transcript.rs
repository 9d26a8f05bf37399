use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use held_he::HeBackend;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{ProtocolError, Result};
use crate::message::{parse_ack, Kind, Message, Party, FRAME_HEADER};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

/// Every message of a session in order, with per-phase wall-clock times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub messages: Vec<Message>,
    pub phases: Vec<Phase>,
    /// Frame bytes counted independently at B's end of the link.
    pub link_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptSummary {
    pub messages: usize,
    pub bytes_b_to_a: u64,
    pub bytes_a_to_b: u64,
    pub wire_bytes: u64,
    pub link_bytes: u64,
    pub per_kind: BTreeMap<String, (usize, u64)>,
    pub phases: Vec<Phase>,
    pub digest: String,
}

impl Transcript {
    pub(crate) fn phase(&mut self, name: &str, d: Duration) {
        self.phases.push(Phase {
            name: name.to_string(),
            seconds: d.as_secs_f64(),
        });
    }

    /// Sum of payload lengths sent by `from`.
    pub fn bytes_from(&self, from: Party) -> u64 {
        self.messages
            .iter()
            .filter(|m| m.sender() == from)
            .map(|m| m.byte_len() as u64)
            .sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.messages.iter().map(|m| m.byte_len() as u64).sum()
    }

    /// Payload plus frame headers.
    pub fn wire_bytes(&self) -> u64 {
        self.messages.iter().map(|m| m.wire_len() as u64).sum()
    }

    /// The byte accounting identity: what crossed the link is exactly the
    /// recorded messages plus their frame headers.
    pub fn accounting_exact(&self) -> bool {
        self.link_bytes == self.wire_bytes()
            && self.total_bytes() + (FRAME_HEADER * self.messages.len()) as u64 == self.link_bytes
    }

    pub fn count(&self, kind: Kind) -> usize {
        self.messages.iter().filter(|m| m.kind == kind).count()
    }

    /// Seqs strictly increasing.
    pub fn is_ordered(&self) -> bool {
        self.messages.windows(2).all(|w| w[0].seq < w[1].seq)
    }

    /// The frames back to back, as they crossed the wire.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_bytes() as usize);
        for m in &self.messages {
            out.extend_from_slice(&m.to_frame());
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). Phase timings are not kept.
    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let link_bytes = bytes.len() as u64;
        let mut messages = Vec::new();
        while !bytes.is_empty() {
            let (_, _, len) = Message::parse_header(bytes)?;
            if bytes.len() < FRAME_HEADER + len {
                return Err(ProtocolError::Frame("truncated transcript".into()));
            }
            messages.push(Message::from_frame(&bytes[..FRAME_HEADER + len])?);
            bytes = &bytes[FRAME_HEADER + len..];
        }
        Ok(Self {
            messages,
            phases: Vec::new(),
            link_bytes,
        })
    }

    /// Hex SHA-256 of [`to_bytes`](Self::to_bytes).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.messages {
            h.update(m.to_frame());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Kinds and payload sizes, ignoring payload contents.
    pub fn shape(&self) -> Vec<(u64, Kind, usize)> {
        self.messages.iter().map(|m| (m.seq, m.kind, m.byte_len())).collect()
    }

    pub fn summary(&self) -> TranscriptSummary {
        let mut per_kind: BTreeMap<String, (usize, u64)> = BTreeMap::new();
        for m in &self.messages {
            let e = per_kind.entry(m.kind.to_string()).or_default();
            e.0 += 1;
            e.1 += m.byte_len() as u64;
        }
        TranscriptSummary {
            messages: self.messages.len(),
            bytes_b_to_a: self.bytes_from(Party::B),
            bytes_a_to_b: self.bytes_from(Party::A),
            wire_bytes: self.wire_bytes(),
            link_bytes: self.link_bytes,
            per_kind,
            phases: self.phases.clone(),
            digest: self.digest(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyReport {
    pub messages: usize,
    /// Messages whose kind or payload does not fit the schema.
    pub schema_violations: Vec<String>,
    /// Distinct sensitive values searched for.
    pub needles: usize,
    /// Occurrences of a sensitive value's bytes inside any payload.
    pub payload_hits: usize,
    /// False for the mock backend, whose ciphertexts are cleartext slots by
    /// construction; the byte search is meaningless there.
    pub byte_scan: bool,
}

impl PrivacyReport {
    pub fn clean(&self) -> bool {
        self.schema_violations.is_empty() && self.payload_hits == 0
    }
}

/// Checks that every payload parses as the key material or ciphertext its
/// kind declares, and (for real encryption) that no sensitive `f64` value
/// appears verbatim at any byte offset of any payload.
pub fn privacy_scan(t: &Transcript, he: &HeBackend, sensitive: &[&[f64]]) -> PrivacyReport {
    let mut violations = Vec::new();
    for m in &t.messages {
        let ok = match m.kind {
            Kind::PubKey => he
                .deserialize_public_key(&m.payload)
                .map(|_| ())
                .map_err(|e| e.to_string()),
            Kind::RotKeys => he
                .deserialize_galois_keys(&m.payload)
                .map(|_| ())
                .map_err(|e| e.to_string()),
            Kind::Ack => parse_ack(&m.payload).map(|_| ()).map_err(|e| e.to_string()),
            k if k.is_ciphertext() => he.deserialize(&m.payload).map(|_| ()).map_err(|e| e.to_string()),
            _ => unreachable!(),
        };
        if let Err(e) = ok {
            violations.push(format!("seq {} {}: {e}", m.seq, m.kind));
        }
    }
    let needles: HashSet<u64> = sensitive
        .iter()
        .flat_map(|s| s.iter())
        .filter(|v| v.abs() > 1e-6 && v.is_finite())
        .map(|v| v.to_bits())
        .collect();
    let byte_scan = !he.is_mock();
    let payload_hits = if byte_scan {
        let scanner = Scanner::new(&needles);
        t.messages.iter().map(|m| scanner.hits(&m.payload)).sum()
    } else {
        0
    };
    PrivacyReport {
        messages: t.messages.len(),
        schema_violations: violations,
        needles: needles.len(),
        payload_hits,
        byte_scan,
    }
}

/// Sorted needles with a 16-bit prefilter on the high bytes.
struct Scanner {
    sorted: Vec<u64>,
    prefix: Vec<u64>,
}

impl Scanner {
    fn new(needles: &HashSet<u64>) -> Self {
        let mut sorted: Vec<u64> = needles.iter().copied().collect();
        sorted.sort_unstable();
        let mut prefix = vec![0u64; 1 << 10];
        for &n in &sorted {
            let p = (n >> 48) as usize;
            prefix[p >> 6] |= 1 << (p & 63);
        }
        Self { sorted, prefix }
    }

    fn hits(&self, payload: &[u8]) -> usize {
        if self.sorted.is_empty() || payload.len() < 8 {
            return 0;
        }
        payload
            .windows(8)
            .filter(|w| {
                let x = u64::from_le_bytes((*w).try_into().unwrap());
                let p = (x >> 48) as usize;
                self.prefix[p >> 6] >> (p & 63) & 1 == 1 && self.sorted.binary_search(&x).is_ok()
            })
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scanner_finds_unaligned_values() {
        let v = [0.123456789f64, -42.5];
        let needles: HashSet<u64> = v.iter().map(|x| x.to_bits()).collect();
        let s = Scanner::new(&needles);
        let mut payload = vec![0u8; 3];
        payload.extend_from_slice(&v[1].to_le_bytes());
        payload.extend_from_slice(&[9; 5]);
        assert_eq!(s.hits(&payload), 1);
        assert_eq!(s.hits(&[0u8; 64]), 0);
    }

    #[test]
    fn bytes_roundtrip() {
        let t = Transcript {
            messages: vec![
                Message {
                    seq: 1,
                    kind: Kind::PubKey,
                    payload: vec![1, 2, 3],
                },
                Message {
                    seq: 2,
                    kind: Kind::Ack,
                    payload: 5u64.to_le_bytes().to_vec(),
                },
            ],
            phases: vec![],
            link_bytes: 11 + 2 * FRAME_HEADER as u64,
        };
        let back = Transcript::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.total_bytes(), 11);
        assert_eq!(t.wire_bytes(), 11 + 2 * FRAME_HEADER as u64);
        assert!(t.accounting_exact());
        assert!(Transcript::from_bytes(&t.to_bytes()[..20]).is_err());
    }

    #[test]
    fn malformed_payload_is_a_violation() {
        let he = HeBackend::from_preset("mock").unwrap();
        let t = Transcript {
            messages: vec![Message {
                seq: 1,
                kind: Kind::EncQuery,
                payload: vec![0; 40],
            }],
            phases: vec![],
            link_bytes: 0,
        };
        let r = privacy_scan(&t, &he, &[]);
        assert_eq!(r.schema_violations.len(), 1);
        assert!(!r.clean());
    }
}
