//! Byte layouts. All integers little-endian.
//!
//! Ciphertext: `version:u8 | params_hash:u64 | level:u8 | depth:u8 |
//! scale:f64 | c0 residues | c1 residues`, each residue `N` × u64.
//! Mock ciphertexts carry their slots as f64 followed by zero padding, so
//! both backends report the same size for the same parameters.
//!
//! Public key: `version | params_hash | key_id:u64 | b residues | a residues`.
//! Rotation keys: `version | params_hash | key_id | count:u32`, then per key
//! `step:u32` and `(b, a)` for every digit over data primes + special prime.

use std::collections::BTreeMap;

use crate::backend::{Ciphertext, CtData, HeBackend};
use crate::error::{HeError, Result};
use crate::keys::{GaloisKeys, Poly, PublicInner, PublicKey, SwitchKey};

pub const WIRE_VERSION: u8 = 1;
const CT_HEADER: usize = 1 + 8 + 1 + 1 + 8;
const KEY_HEADER: usize = 1 + 8 + 8;

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.at < n {
            return Err(HeError::Wire(format!("truncated at byte {}", self.at)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn residues(&mut self, count: usize, n: usize) -> Result<Poly> {
        (0..count)
            .map(|_| {
                let raw = self.take(n * 8)?;
                Ok(raw
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            })
            .collect()
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.buf.len() {
            return Err(HeError::Wire(format!("{} trailing bytes", self.buf.len() - self.at)));
        }
        Ok(())
    }
}

fn put_poly(out: &mut Vec<u8>, p: &Poly) {
    for r in p {
        for x in r {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

impl HeBackend {
    fn header(&self, out: &mut Vec<u8>) {
        out.push(WIRE_VERSION);
        out.extend_from_slice(&self.params().hash().to_le_bytes());
    }

    fn check_header(&self, r: &mut Reader) -> Result<()> {
        let v = r.u8()?;
        if v != WIRE_VERSION {
            return Err(HeError::Wire(format!("version {v}, expected {WIRE_VERSION}")));
        }
        let h = r.u64()?;
        if h != self.params().hash() {
            return Err(HeError::Wire(format!(
                "parameter hash {h:016x} does not match this backend"
            )));
        }
        Ok(())
    }

    /// Exact serialized length of a ciphertext at `level`.
    pub fn ciphertext_bytes(&self, level: usize) -> usize {
        CT_HEADER + 2 * (level + 1) * self.params().ring_degree * 8
    }

    pub fn byte_size(&self, ct: &Ciphertext) -> usize {
        self.ciphertext_bytes(ct.level)
    }

    pub fn serialize(&self, ct: &Ciphertext) -> Vec<u8> {
        let total = self.byte_size(ct);
        let mut out = Vec::with_capacity(total);
        self.header(&mut out);
        out.push(ct.level as u8);
        out.push(ct.depth as u8);
        out.extend_from_slice(&ct.scale.to_bits().to_le_bytes());
        match &ct.data {
            CtData::Rns { c0, c1 } => {
                put_poly(&mut out, c0);
                put_poly(&mut out, c1);
            }
            CtData::Clear(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_bits().to_le_bytes());
                }
                out.resize(total, 0);
            }
        }
        debug_assert_eq!(out.len(), total);
        out
    }

    pub fn deserialize(&self, bytes: &[u8]) -> Result<Ciphertext> {
        let mut r = Reader { buf: bytes, at: 0 };
        self.check_header(&mut r)?;
        let level = r.u8()? as usize;
        let depth = r.u8()? as usize;
        let scale = f64::from_bits(r.u64()?);
        if level > self.params().top_level() || depth > self.params().max_depth {
            return Err(HeError::Wire(format!(
                "level {level} / depth {depth} outside the parameters"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(HeError::Wire(format!("bad scale {scale}")));
        }
        let n = self.params().ring_degree;
        let data = if self.is_mock() {
            let slots = self.slot_count();
            let raw = r.take(slots * 8)?;
            let v = raw
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            r.take(2 * (level + 1) * n * 8 - slots * 8)?;
            CtData::Clear(v)
        } else {
            let c0 = r.residues(level + 1, n)?;
            let c1 = r.residues(level + 1, n)?;
            self.check_reduced(&c0)?;
            self.check_reduced(&c1)?;
            CtData::Rns { c0, c1 }
        };
        r.finish()?;
        Ok(Ciphertext {
            level,
            scale,
            depth,
            data,
        })
    }

    fn check_reduced(&self, p: &Poly) -> Result<()> {
        let primes = self.params().data_primes();
        for (r, &q) in p.iter().zip(primes) {
            if r.iter().any(|&x| x >= q) {
                return Err(HeError::Wire("residue not reduced".into()));
            }
        }
        Ok(())
    }

    pub fn public_key_bytes(&self) -> usize {
        KEY_HEADER + 2 * (self.params().top_level() + 1) * self.params().ring_degree * 8
    }

    pub fn serialize_public_key(&self, pk: &PublicKey) -> Vec<u8> {
        let total = self.public_key_bytes();
        let mut out = Vec::with_capacity(total);
        self.header(&mut out);
        out.extend_from_slice(&pk.key_id.to_le_bytes());
        if let PublicInner::Real { b, a } = &pk.inner {
            put_poly(&mut out, b);
            put_poly(&mut out, a);
        }
        out.resize(total, 0);
        out
    }

    pub fn deserialize_public_key(&self, bytes: &[u8]) -> Result<PublicKey> {
        let mut r = Reader { buf: bytes, at: 0 };
        self.check_header(&mut r)?;
        let key_id = r.u64()?;
        let count = self.params().top_level() + 1;
        let n = self.params().ring_degree;
        let inner = if self.is_mock() {
            r.take(2 * count * n * 8)?;
            PublicInner::Mock
        } else {
            let b = r.residues(count, n)?;
            let a = r.residues(count, n)?;
            self.check_reduced(&b)?;
            self.check_reduced(&a)?;
            PublicInner::Real { b, a }
        };
        r.finish()?;
        Ok(PublicKey { key_id, inner })
    }

    fn switch_key_bytes(&self) -> usize {
        let digits = self.params().top_level() + 1;
        4 + digits * 2 * (digits + 1) * self.params().ring_degree * 8
    }

    pub fn galois_keys_bytes(&self, count: usize) -> usize {
        KEY_HEADER + 4 + count * self.switch_key_bytes()
    }

    pub fn serialize_galois_keys(&self, gk: &GaloisKeys) -> Vec<u8> {
        let total = self.galois_keys_bytes(gk.keys.len());
        let mut out = Vec::with_capacity(total);
        self.header(&mut out);
        out.extend_from_slice(&gk.key_id.to_le_bytes());
        out.extend_from_slice(&(gk.keys.len() as u32).to_le_bytes());
        for (step, key) in &gk.keys {
            let start = out.len();
            out.extend_from_slice(&(*step as u32).to_le_bytes());
            if let SwitchKey::Real(digits) = key {
                for (b, a) in digits {
                    put_poly(&mut out, b);
                    put_poly(&mut out, a);
                }
            }
            out.resize(start + self.switch_key_bytes(), 0);
        }
        out
    }

    pub fn deserialize_galois_keys(&self, bytes: &[u8]) -> Result<GaloisKeys> {
        let mut r = Reader { buf: bytes, at: 0 };
        self.check_header(&mut r)?;
        let key_id = r.u64()?;
        let count = r.u32()? as usize;
        if count > self.slot_count() {
            return Err(HeError::Wire(format!("{count} rotation keys")));
        }
        let digits = self.params().top_level() + 1;
        let n = self.params().ring_degree;
        let mut keys = BTreeMap::new();
        for _ in 0..count {
            let step = r.u32()? as usize;
            if step == 0 || step >= self.slot_count() {
                return Err(HeError::Wire(format!("rotation step {step}")));
            }
            let key = if self.is_mock() {
                r.take(self.switch_key_bytes() - 4)?;
                SwitchKey::Mock
            } else {
                let mut ds = Vec::with_capacity(digits);
                for _ in 0..digits {
                    let b = r.residues(digits + 1, n)?;
                    let a = r.residues(digits + 1, n)?;
                    ds.push((b, a));
                }
                SwitchKey::Real(ds)
            };
            keys.insert(step, key);
        }
        r.finish()?;
        Ok(GaloisKeys { key_id, keys })
    }
}
