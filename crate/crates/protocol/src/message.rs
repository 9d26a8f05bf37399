//! Message schema and framing.
//!
//! Frame layout, little-endian: `len:u32 | kind:u8 | seq:u64 | payload`,
//! where `len` is the payload length. The sender is implied by the kind.
//! Every payload is either serialized key material, a serialized
//! ciphertext, or (for [`Kind::Ack`]) a row count; the schema has no kind
//! that could carry plaintext embeddings or head parameters.

use std::fmt;

use serde::Serialize;

use crate::error::{ProtocolError, Result};

pub const FRAME_HEADER: usize = 4 + 1 + 8;
/// Largest payload accepted from a peer.
pub const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Party {
    A,
    B,
}

impl Party {
    pub fn peer(self) -> Party {
        match self {
            Party::A => Party::B,
            Party::B => Party::A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Kind {
    PubKey,
    RotKeys,
    EncMatrixRow,
    EncCrossCovRow,
    EncQuery,
    EncPrediction,
    Ack,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::PubKey,
        Kind::RotKeys,
        Kind::EncMatrixRow,
        Kind::EncCrossCovRow,
        Kind::EncQuery,
        Kind::EncPrediction,
        Kind::Ack,
    ];

    pub fn code(self) -> u8 {
        match self {
            Kind::PubKey => 1,
            Kind::RotKeys => 2,
            Kind::EncMatrixRow => 3,
            Kind::EncCrossCovRow => 4,
            Kind::EncQuery => 5,
            Kind::EncPrediction => 6,
            Kind::Ack => 7,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.code() == c)
            .ok_or_else(|| ProtocolError::Frame(format!("unknown kind {c}")))
    }

    pub fn sender(self) -> Party {
        match self {
            Kind::PubKey | Kind::RotKeys | Kind::EncMatrixRow | Kind::EncQuery => Party::B,
            Kind::EncCrossCovRow | Kind::EncPrediction | Kind::Ack => Party::A,
        }
    }

    pub fn is_ciphertext(self) -> bool {
        matches!(
            self,
            Kind::EncMatrixRow | Kind::EncCrossCovRow | Kind::EncQuery | Kind::EncPrediction
        )
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub seq: u64,
    pub kind: Kind,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn sender(&self) -> Party {
        self.kind.sender()
    }

    pub fn byte_len(&self) -> usize {
        self.payload.len()
    }

    pub fn wire_len(&self) -> usize {
        FRAME_HEADER + self.payload.len()
    }

    pub fn to_frame(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses the header; returns `(kind, seq, payload_len)`.
    pub fn parse_header(h: &[u8]) -> Result<(Kind, u64, usize)> {
        if h.len() < FRAME_HEADER {
            return Err(ProtocolError::Frame(format!("header of {} bytes", h.len())));
        }
        let len = u32::from_le_bytes(h[0..4].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(ProtocolError::Frame(format!("payload of {len} bytes")));
        }
        let kind = Kind::from_code(h[4])?;
        let seq = u64::from_le_bytes(h[5..13].try_into().unwrap());
        Ok((kind, seq, len))
    }

    pub fn from_frame(frame: &[u8]) -> Result<Self> {
        let (kind, seq, len) = Self::parse_header(frame)?;
        if frame.len() != FRAME_HEADER + len {
            return Err(ProtocolError::Frame(format!(
                "frame of {} bytes declares a {len}-byte payload",
                frame.len()
            )));
        }
        Ok(Message {
            seq,
            kind,
            payload: frame[FRAME_HEADER..].to_vec(),
        })
    }
}

pub fn ack_payload(rows: u64) -> Vec<u8> {
    rows.to_le_bytes().to_vec()
}

pub fn parse_ack(payload: &[u8]) -> Result<u64> {
    let b: [u8; 8] = payload
        .try_into()
        .map_err(|_| ProtocolError::Frame(format!("ack of {} bytes", payload.len())))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn directions() {
        let from_b: Vec<Kind> = Kind::ALL.into_iter().filter(|k| k.sender() == Party::B).collect();
        assert_eq!(
            from_b,
            vec![Kind::PubKey, Kind::RotKeys, Kind::EncMatrixRow, Kind::EncQuery]
        );
    }

    #[test]
    fn bad_frames() {
        assert!(Message::from_frame(&[0; 5]).is_err());
        let mut f = Message {
            seq: 1,
            kind: Kind::Ack,
            payload: ack_payload(3),
        }
        .to_frame();
        f[4] = 99;
        assert!(Message::from_frame(&f).is_err());
        let f = Message {
            seq: 1,
            kind: Kind::Ack,
            payload: ack_payload(3),
        }
        .to_frame();
        assert!(Message::from_frame(&f[..f.len() - 1]).is_err());
        assert!(parse_ack(&[1, 2]).is_err());
    }

    proptest! {
        #[test]
        fn frame_roundtrip(seq in any::<u64>(), k in 0usize..7, payload in proptest::collection::vec(any::<u8>(), 0..300)) {
            let m = Message { seq, kind: Kind::ALL[k], payload };
            let f = m.to_frame();
            prop_assert_eq!(f.len(), m.wire_len());
            prop_assert_eq!(Message::from_frame(&f).unwrap(), m);
        }
    }
}
