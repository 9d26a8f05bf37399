//! Party A: owns the target-space data and the frozen head. Holds public
//! key material only; nothing in this module can name a secret key.

use std::collections::BTreeSet;
use std::time::Instant;

use held_core::alignment::AffineMap;
use held_core::classifier_ood::LinearHead;
use held_core::{Matrix, Vector};
use held_he::{Ciphertext, GaloisKeys, HeBackend, MatvecPlan, PublicKey};

use crate::error::{ProtocolError, Result};
use crate::message::{ack_payload, Kind};
use crate::transport::Channel;

/// Rows of `Enc(Z_B)` between acknowledgements.
pub const ACK_EVERY: usize = 64;

pub struct PartyA {
    he: HeBackend,
    /// Key ids seen during training; inference refuses them.
    training_keys: BTreeSet<u64>,
}

impl PartyA {
    pub fn new(preset: &str) -> Result<Self> {
        Ok(Self {
            he: HeBackend::from_preset(preset)?,
            training_keys: BTreeSet::new(),
        })
    }

    pub fn backend(&self) -> &HeBackend {
        &self.he
    }

    /// Decryptions performed by A's backend instance. Always zero, since A
    /// never holds a secret key; reported as an audit value.
    pub fn decrypt_calls(&self) -> u64 {
        self.he.decrypt_count()
    }

    fn recv_public_key(&self, ch: &mut Channel) -> Result<PublicKey> {
        let m = ch.recv(Kind::PubKey)?;
        Ok(self.he.deserialize_public_key(&m.payload)?)
    }

    fn recv_ciphertext(&self, payload: &[u8]) -> Result<Ciphertext> {
        Ok(self.he.deserialize(payload)?)
    }

    /// Training, A side: folds each incoming `Enc(z_B,k ‖ 1)` into one
    /// accumulator per target dimension `i` with weight `Z_A[k, i]`, then
    /// returns `Enc(Z_A[:, i]ᵀ·[Z_B ‖ 1])` row by row.
    pub(crate) fn train(&mut self, ch: &mut Channel, z_a: &Matrix) -> Result<()> {
        let pk = self.recv_public_key(ch)?;
        self.training_keys.insert(pk.key_id());
        let (n, d_a) = z_a.shape();
        let mut acc: Vec<Option<Ciphertext>> = vec![None; d_a];
        for k in 0..n {
            let m = ch.recv(Kind::EncMatrixRow)?;
            let ct = self.recv_ciphertext(&m.payload)?;
            for (i, slot) in acc.iter_mut().enumerate() {
                *slot = Some(self.he.scalar_mul_accumulate(slot.take(), &ct, z_a[(k, i)])?);
            }
            if (k + 1) % ACK_EVERY == 0 || k + 1 == n {
                ch.send(Kind::Ack, ack_payload(k as u64 + 1))?;
            }
        }
        for slot in acc {
            let row = self.he.rescale(&slot.expect("n > 0"))?;
            ch.send(Kind::EncCrossCovRow, self.he.serialize(&row))?;
        }
        Ok(())
    }

    /// Inference, A side: evaluates the head (composed with `map` when A
    /// holds it) on each encrypted query until B closes the session.
    /// Returns the evaluation time of every query in seconds.
    pub(crate) fn serve(&mut self, ch: &mut Channel, head: &LinearHead, map: Option<&AffineMap>) -> Result<Vec<f64>> {
        let pk = self.recv_public_key(ch)?;
        if self.training_keys.contains(&pk.key_id()) {
            return Err(ProtocolError::StaleKeys(pk.key_id()));
        }
        let gk: GaloisKeys = self.he.deserialize_galois_keys(&ch.recv(Kind::RotKeys)?.payload)?;
        if gk.key_id() != pk.key_id() {
            return Err(ProtocolError::Unexpected(
                "rotation keys belong to a different key pair".into(),
            ));
        }
        let (v, c) = compose(head, map)?;
        let plan = MatvecPlan::new(v.nrows(), v.ncols(), self.he.slot_count())?;
        if let Some(&step) = plan.rotation_steps().iter().find(|&&s| !gk.has_step(s)) {
            return Err(held_he::HeError::MissingRotationKey(step).into());
        }
        let row_major: Vec<f64> = (0..v.nrows())
            .flat_map(|i| (0..v.ncols()).map(move |k| (i, k)))
            .map(|ik| v[ik])
            .collect();
        let enc = self.he.encode_matrix(plan, &row_major, c.as_slice())?;
        let mut times = Vec::new();
        while let Some(m) = ch.recv_any()? {
            if m.kind != Kind::EncQuery {
                return Err(ProtocolError::Unexpected(format!("expected EncQuery, got {}", m.kind)));
            }
            let t = Instant::now();
            let ct = self.recv_ciphertext(&m.payload)?;
            let out = self.he.matvec_ct_pt(&ct, &enc, &gk)?;
            let bytes = self.he.serialize(&out);
            times.push(t.elapsed().as_secs_f64());
            ch.send(Kind::EncPrediction, bytes)?;
        }
        Ok(times)
    }
}

/// `(V, c)`, or `(W·V, bᵀV + c)` when the map is applied on A's side. Both
/// matrices are plaintext to A, so the composition costs no depth.
pub fn compose(head: &LinearHead, map: Option<&AffineMap>) -> Result<(Matrix, Vector)> {
    match map {
        None => Ok((head.v.clone(), head.c.clone())),
        Some(m) => {
            if m.d_target() != head.dim() {
                return Err(ProtocolError::Dim(format!(
                    "map produces {} dims, head expects {}",
                    m.d_target(),
                    head.dim()
                )));
            }
            Ok((&m.w * &head.v, head.v.tr_mul(&m.b) + &head.c))
        }
    }
}
