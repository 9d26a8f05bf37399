//! Latency and communication measurements for encrypted inference.

use held_core::alignment::AffineMap;
use held_core::classifier_ood::LinearHead;
use held_core::linalg::gaussian_matrix;
use held_core::{Matrix, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{ProtocolError, Result};
use crate::message::{Kind, Party};
use crate::party_a::PartyA;
use crate::party_b::{KeyChoice, PartyB};
use crate::session::{run_inference, QueryTiming, Variant};
use crate::transport::TransportKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub median: f64,
    pub p95: f64,
    pub mean: f64,
}

impl Stat {
    /// Median (midpoint for even counts) and nearest-rank 95th percentile.
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat {
                median: f64::NAN,
                p95: f64::NAN,
                mean: f64::NAN,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Stat {
            median,
            p95: v[rank - 1],
            mean: v.iter().sum::<f64>() / n as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub preset: String,
    pub transport: TransportKind,
    /// `(d_A, K)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub queries: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub backend: String,
    pub transport: TransportKind,
    pub d_a: usize,
    pub k: usize,
    pub queries: usize,
    pub setup_seconds: f64,
    pub encrypt: Stat,
    pub transfer: Stat,
    pub evaluate: Stat,
    pub decrypt: Stat,
    /// Raw query in, predicted class out, as seen by B.
    pub end_to_end: Stat,
    /// `EncQuery` payload bytes per query.
    pub query_bytes_b_to_a: u64,
    /// `EncPrediction` payload bytes per query.
    pub query_bytes_a_to_b: u64,
    /// Both directions, payload plus frame headers, per query.
    pub query_wire_bytes: u64,
    /// Public and rotation keys, once per session.
    pub key_bytes: u64,
    pub transcript_bytes: u64,
    pub link_bytes: u64,
    pub accounting_exact: bool,
    pub a_decrypt_calls: u64,
}

fn per_query(t: &crate::transcript::Transcript, kind: Kind) -> Result<u64> {
    let sizes: Vec<usize> = t
        .messages
        .iter()
        .filter(|m| m.kind == kind)
        .map(|m| m.byte_len())
        .collect();
    match sizes.first() {
        Some(&s) if sizes.iter().all(|&x| x == s) => Ok(s as u64),
        Some(_) => Err(ProtocolError::Unexpected(format!(
            "{kind} sizes differ between queries"
        ))),
        None => Ok(0),
    }
}

/// Runs `queries` encrypted inferences with a random head for each size.
pub fn benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &(d_a, k) in &cfg.sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let v = gaussian_matrix(&mut rng, d_a, k) / (d_a as f64).sqrt();
        let head = LinearHead::new(v, Vector::from_fn(k, |i, _| 0.1 * i as f64))?;
        let queries: Matrix = gaussian_matrix(&mut rng, cfg.queries, d_a);
        let map = AffineMap::identity(d_a);
        let mut a = PartyA::new(&cfg.preset)?;
        let mut b = PartyB::new(&cfg.preset, Some(cfg.seed))?;
        let out = run_inference(
            &mut a,
            &mut b,
            &queries,
            &map,
            &head,
            Variant::LocalMap,
            KeyChoice::Fresh,
            cfg.transport,
        )?;
        let t = &out.transcript;
        let col = |f: fn(&QueryTiming) -> f64| Stat::of(&out.timings.iter().map(f).collect::<Vec<_>>());
        let q_ba = per_query(t, Kind::EncQuery)?;
        let q_ab = per_query(t, Kind::EncPrediction)?;
        let header = crate::message::FRAME_HEADER as u64;
        let key_bytes: u64 = t
            .messages
            .iter()
            .filter(|m| matches!(m.kind, Kind::PubKey | Kind::RotKeys))
            .map(|m| m.byte_len() as u64)
            .sum();
        debug_assert_eq!(t.bytes_from(Party::B), key_bytes + q_ba * cfg.queries as u64);
        rows.push(BenchRow {
            backend: cfg.preset.clone(),
            transport: cfg.transport,
            d_a,
            k,
            queries: cfg.queries,
            setup_seconds: out.setup_seconds,
            encrypt: col(|q| q.encrypt),
            transfer: col(|q| q.transfer),
            evaluate: col(|q| q.evaluate),
            decrypt: col(|q| q.decrypt),
            end_to_end: col(|q| q.total),
            query_bytes_b_to_a: q_ba,
            query_bytes_a_to_b: q_ab,
            query_wire_bytes: q_ba + q_ab + 2 * header,
            key_bytes,
            transcript_bytes: t.total_bytes(),
            link_bytes: t.link_bytes,
            accounting_exact: t.accounting_exact(),
            a_decrypt_calls: out.a_decrypt_calls,
        });
    }
    Ok(rows)
}
