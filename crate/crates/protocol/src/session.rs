use std::str::FromStr;
use std::time::Instant;

use held_core::alignment::AffineMap;
use held_core::classifier_ood::LinearHead;
use held_core::Matrix;
use held_he::KeyMaterial;
use serde::Serialize;

use crate::error::{ProtocolError, Result};
use crate::message::Party;
use crate::party_a::PartyA;
use crate::party_b::{KeyChoice, PartyB};
use crate::transcript::Transcript;
use crate::transport::{link_pair, Channel, TransportKind};

/// Where the affine map is applied during inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// B maps its query locally and encrypts the aligned embedding.
    #[default]
    LocalMap,
    /// A holds the map and evaluates `z_B·(W·V) + (bᵀV + c)` on the
    /// encrypted raw query.
    Composed,
}

impl FromStr for Variant {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local-map" => Ok(Variant::LocalMap),
            "composed" => Ok(Variant::Composed),
            other => Err(ProtocolError::InvalidArgument(format!("unknown variant {other:?}"))),
        }
    }
}

/// Runs A on a worker thread and B on the caller's, each with its own end
/// of a fresh link. If both fail, the error that is not a consequence of
/// the other side hanging up wins.
fn run_pair<RA, RB, FA, FB>(transport: TransportKind, fa: FA, fb: FB) -> Result<(RA, RB)>
where
    RA: Send,
    FA: FnOnce(&mut Channel) -> Result<RA> + Send,
    FB: FnOnce(&mut Channel) -> Result<RB>,
{
    let (link_a, link_b) = link_pair(transport)?;
    std::thread::scope(|s| {
        let handle = s.spawn(move || {
            let mut ch = Channel::new(link_a, Party::A);
            fa(&mut ch)
        });
        let rb = {
            let mut ch = Channel::new(link_b, Party::B).recording();
            fb(&mut ch)
        };
        let ra = handle
            .join()
            .map_err(|_| ProtocolError::Transport("party A panicked".into()))?;
        match (ra, rb) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            (Err(e), Ok(_)) | (Ok(_), Err(e)) => Err(e),
            (Err(ea), Err(eb)) => Err(if matches!(eb, ProtocolError::Closed | ProtocolError::Transport(_)) {
                ea
            } else {
                eb
            }),
        }
    })
}

pub struct TrainingOutcome {
    /// B's output.
    pub map: AffineMap,
    /// B's training keys; kept so that reuse can be refused later.
    pub keys: KeyMaterial,
    pub transcript: Transcript,
    pub a_decrypt_calls: u64,
}

/// Secure training of the affine map `z_B ↦ z_A`. A contributes `z_a`, B
/// contributes `z_b`; rows must be paired in the same order.
pub fn run_training(
    a: &mut PartyA,
    b: &mut PartyB,
    z_a: &Matrix,
    z_b: &Matrix,
    lambda: f64,
    transport: TransportKind,
) -> Result<TrainingOutcome> {
    if z_a.nrows() != z_b.nrows() {
        return Err(ProtocolError::Dim(format!(
            "{} target rows vs {} source rows",
            z_a.nrows(),
            z_b.nrows()
        )));
    }
    if a.backend().params() != b.backend().params() {
        return Err(ProtocolError::InvalidArgument(
            "parties use different parameters".into(),
        ));
    }
    let d_a = z_a.ncols();
    let start = Instant::now();
    let ((), (map, keys, (log, link_bytes))) = run_pair(
        transport,
        |ch| a.train(ch, z_a),
        |ch| {
            let (m, k) = b.train(ch, z_b, d_a, lambda)?;
            Ok((m, k, (ch.take_log(), ch.link_bytes())))
        },
    )?;
    let mut transcript = Transcript {
        messages: log,
        phases: Vec::new(),
        link_bytes,
    };
    transcript.phase("training", start.elapsed());
    Ok(TrainingOutcome {
        map,
        keys,
        transcript,
        a_decrypt_calls: a.decrypt_calls(),
    })
}

/// Per-query phase times in seconds. `transfer` is B's round trip minus
/// A's evaluation; `total` is everything B waits for from its raw query
/// to the predicted class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryTiming {
    pub align: f64,
    pub encrypt: f64,
    pub transfer: f64,
    pub evaluate: f64,
    pub decrypt: f64,
    pub total: f64,
}

pub struct InferenceOutcome {
    /// B's outputs.
    pub predictions: Vec<usize>,
    pub logits: Matrix,
    pub transcript: Transcript,
    pub timings: Vec<QueryTiming>,
    pub key_id: u64,
    /// Key generation and key transfer, once per session.
    pub setup_seconds: f64,
    pub a_decrypt_calls: u64,
}

/// Encrypted inference for every row of `queries` (B's raw source-space
/// embeddings). Under [`Variant::LocalMap`] the map stays with B; under
/// [`Variant::Composed`] it is handed to A.
#[allow(clippy::too_many_arguments)]
pub fn run_inference(
    a: &mut PartyA,
    b: &mut PartyB,
    queries: &Matrix,
    map: &AffineMap,
    head: &LinearHead,
    variant: Variant,
    keys: KeyChoice,
    transport: TransportKind,
) -> Result<InferenceOutcome> {
    if map.d_target() != head.dim() {
        return Err(ProtocolError::Dim(format!(
            "map produces {} dims, head expects {}",
            map.d_target(),
            head.dim()
        )));
    }
    if a.backend().params() != b.backend().params() {
        return Err(ProtocolError::InvalidArgument(
            "parties use different parameters".into(),
        ));
    }
    let (map_a, map_b) = match variant {
        Variant::LocalMap => (None, Some(map)),
        Variant::Composed => (Some(map), None),
    };
    let k = head.n_classes();
    let start = Instant::now();
    let (eval_times, (res, (log, link_bytes))) = run_pair(
        transport,
        |ch| a.serve(ch, head, map_a),
        |ch| {
            let r = b.infer(ch, queries, map_b, k, keys)?;
            Ok((r, (ch.take_log(), ch.link_bytes())))
        },
    )?;
    let elapsed = start.elapsed();
    if eval_times.len() != res.timings.len() {
        return Err(ProtocolError::Unexpected(
            "A and B disagree on the number of queries".into(),
        ));
    }
    let timings = res
        .timings
        .iter()
        .zip(&eval_times)
        .map(|(t, &e)| QueryTiming {
            align: t.align,
            encrypt: t.encrypt,
            transfer: (t.round_trip - e).max(0.0),
            evaluate: e,
            decrypt: t.decrypt,
            total: t.align + t.encrypt + t.round_trip + t.decrypt,
        })
        .collect();
    let mut transcript = Transcript {
        messages: log,
        phases: Vec::new(),
        link_bytes,
    };
    transcript.phase("setup", std::time::Duration::from_secs_f64(res.setup_seconds));
    transcript.phase("inference", elapsed);
    Ok(InferenceOutcome {
        predictions: res.predictions,
        logits: res.logits,
        transcript,
        timings,
        key_id: res.key_id,
        setup_seconds: res.setup_seconds,
        a_decrypt_calls: a.decrypt_calls(),
    })
}
