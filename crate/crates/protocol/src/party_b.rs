//! Party B: owns the source-space data and every secret key, and ends up
//! with the learned map and the predictions.

use std::collections::BTreeSet;
use std::time::Instant;

use held_core::alignment::{solve, AffineMap, SolveOptions, SufficientStats};
use held_core::classifier_ood::argmax;
use held_core::{Matrix, Vector};
use held_he::{HeBackend, KeyMaterial, MatvecPlan};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{ProtocolError, Result};
use crate::message::{parse_ack, Kind};
use crate::party_a::ACK_EVERY;
use crate::transport::Channel;

/// Where inference keys come from.
#[derive(Debug, Clone, Default)]
pub enum KeyChoice {
    /// Fresh keys for this session.
    #[default]
    Fresh,
    /// Caller-supplied keys. Refused if they were used before.
    Reuse(KeyMaterial),
}

/// B-side timings of one query, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct BQueryTiming {
    pub align: f64,
    pub encrypt: f64,
    pub round_trip: f64,
    pub decrypt: f64,
}

pub(crate) struct BInference {
    pub predictions: Vec<usize>,
    pub logits: Matrix,
    pub timings: Vec<BQueryTiming>,
    pub key_id: u64,
    pub setup_seconds: f64,
}

pub struct PartyB {
    he: HeBackend,
    rng: ChaCha20Rng,
    /// Key ids already used in some session.
    retired: BTreeSet<u64>,
}

impl PartyB {
    /// `seed` fixes all of B's randomness (keys and encryption noise); OS
    /// entropy is used without it.
    pub fn new(preset: &str, seed: Option<u64>) -> Result<Self> {
        let rng = match seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s),
            None => ChaCha20Rng::from_os_rng(),
        };
        Ok(Self {
            he: HeBackend::from_preset(preset)?,
            rng,
            retired: BTreeSet::new(),
        })
    }

    pub fn backend(&self) -> &HeBackend {
        &self.he
    }

    /// Training, B side: streams `Enc(z_B,k ‖ 1)`, receives
    /// `C = Z_Aᵀ[Z_B ‖ 1]` encrypted, and solves from
    /// `(Z_BᵀZ_B, Cᵀ, Σz_B, ΣZ_A, n)`.
    pub(crate) fn train(
        &mut self,
        ch: &mut Channel,
        z_b: &Matrix,
        d_a: usize,
        lambda: f64,
    ) -> Result<(AffineMap, KeyMaterial)> {
        let (n, d_b) = z_b.shape();
        if n == 0 {
            return Err(ProtocolError::InvalidArgument("no training rows".into()));
        }
        if d_b + 1 > self.he.slot_count() {
            return Err(ProtocolError::Dim(format!(
                "{d_b} source dims exceed {} slots",
                self.he.slot_count()
            )));
        }
        let keys = self.he.keygen(&mut self.rng, &[])?;
        self.retired.insert(keys.key_id());
        ch.send(Kind::PubKey, self.he.serialize_public_key(&keys.public.public_key))?;

        let mut row = vec![1.0; d_b + 1];
        for k in 0..n {
            for j in 0..d_b {
                row[j] = z_b[(k, j)];
            }
            let ct = self.he.encrypt(&keys.public.public_key, &row, &mut self.rng)?;
            ch.send(Kind::EncMatrixRow, self.he.serialize(&ct))?;
            if (k + 1) % ACK_EVERY == 0 || k + 1 == n {
                let got = parse_ack(&ch.recv(Kind::Ack)?.payload)?;
                if got != k as u64 + 1 {
                    return Err(ProtocolError::Unexpected(format!("ack for {got} rows after {}", k + 1)));
                }
            }
        }

        let mut cross = Matrix::zeros(d_b, d_a);
        let mut sum_a = Vector::zeros(d_a);
        for i in 0..d_a {
            let ct = self.he.deserialize(&ch.recv(Kind::EncCrossCovRow)?.payload)?;
            let slots = self.he.decrypt(&keys.secret, &ct)?;
            for j in 0..d_b {
                cross[(j, i)] = slots[j];
            }
            sum_a[i] = slots[d_b];
        }
        let gram = z_b.tr_mul(z_b);
        let sum_b = Vector::from_iterator(d_b, z_b.column_iter().map(|c| c.sum()));
        let stats = SufficientStats::from_parts(gram, cross, sum_b, sum_a, n)?;
        let map = solve(&stats, SolveOptions::with_lambda(lambda))?;
        Ok((map, keys))
    }

    /// Inference, B side. With `map`, queries are aligned locally before
    /// encryption; without it A is expected to hold the map.
    pub(crate) fn infer(
        &mut self,
        ch: &mut Channel,
        queries: &Matrix,
        map: Option<&AffineMap>,
        n_classes: usize,
        keys: KeyChoice,
    ) -> Result<BInference> {
        let input_dim = match map {
            Some(m) => {
                if m.d_source() != queries.ncols() {
                    return Err(ProtocolError::Dim(format!(
                        "queries have {} dims, map expects {}",
                        queries.ncols(),
                        m.d_source()
                    )));
                }
                m.d_target()
            }
            None => queries.ncols(),
        };
        let plan = MatvecPlan::new(input_dim, n_classes, self.he.slot_count())?;
        let setup = Instant::now();
        let keys = match keys {
            KeyChoice::Fresh => self.he.keygen(&mut self.rng, &plan.rotation_steps())?,
            KeyChoice::Reuse(k) => {
                if self.retired.contains(&k.key_id()) {
                    return Err(ProtocolError::StaleKeys(k.key_id()));
                }
                k
            }
        };
        self.retired.insert(keys.key_id());
        ch.send(Kind::PubKey, self.he.serialize_public_key(&keys.public.public_key))?;
        ch.send(Kind::RotKeys, self.he.serialize_galois_keys(&keys.public.galois_keys))?;
        let setup_seconds = setup.elapsed().as_secs_f64();

        let n = queries.nrows();
        let mut logits = Matrix::zeros(n, n_classes);
        let mut predictions = Vec::with_capacity(n);
        let mut timings = Vec::with_capacity(n);
        for q in 0..n {
            let mut t = BQueryTiming::default();
            let clock = Instant::now();
            let raw: Vec<f64> = queries.row(q).iter().copied().collect();
            let input = match map {
                Some(m) => m.apply_one(&raw)?.as_slice().to_vec(),
                None => raw,
            };
            t.align = clock.elapsed().as_secs_f64();

            let clock = Instant::now();
            let ct = self
                .he
                .encrypt(&keys.public.public_key, &plan.pack_input(&input)?, &mut self.rng)?;
            let bytes = self.he.serialize(&ct);
            t.encrypt = clock.elapsed().as_secs_f64();

            let clock = Instant::now();
            ch.send(Kind::EncQuery, bytes)?;
            let reply = ch.recv(Kind::EncPrediction)?;
            t.round_trip = clock.elapsed().as_secs_f64();

            let clock = Instant::now();
            let out = self.he.deserialize(&reply.payload)?;
            let row = plan.unpack_output(&self.he.decrypt(&keys.secret, &out)?);
            predictions.push(argmax(&row));
            for (k, v) in row.into_iter().enumerate() {
                logits[(q, k)] = v;
            }
            t.decrypt = clock.elapsed().as_secs_f64();
            timings.push(t);
        }
        Ok(BInference {
            predictions,
            logits,
            timings,
            key_id: keys.key_id(),
            setup_seconds,
        })
    }
}
