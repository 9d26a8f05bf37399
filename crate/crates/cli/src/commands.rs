use std::fs;
use std::path::Path;

use held_core::alignment::{apply, fit, mse, sweep_training_size, AffineMap, SolveOptions};
use held_core::classifier_ood::{
    accuracy, l2_normalize_rows, logits, ood_eval, predict, train_head, HeadConfig, LinearHead,
};
use held_core::linalg::{frob, select_rows};
use held_core::privacy_eval::{shadow_experiment, shadow_features, MiaConfig, PairedPool};
use held_core::similarity::{linear_cka, svcca, SvccaConfig};
use held_core::tensor_store::{
    write_matrix, DatasetManifest, EmbeddingDataset, Role, Split, SyntheticPair, SyntheticSpec, SyntheticWorld,
};
use held_core::tokenizer_compat::{corpus_exact_match, read_records, vocab_jaccard, IngestOptions, VocabSet};
use held_core::Matrix;
use held_protocol::bench::{benchmark, BenchConfig, Stat};
use held_protocol::message::{Kind, Party};
use held_protocol::pipeline::{run_pipeline, PipelineConfig, PipelineData, SyntheticSizes};
use held_protocol::transcript::{privacy_scan, Transcript};
use held_protocol::{run_inference, run_training, KeyChoice, PartyA, PartyB};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{Cli, Cmd, DataArgs, HeadArgs, SynthArgs};
use crate::error::{invalid, Result};
use crate::report::{parse_size, Report};

pub fn run(cli: &Cli) -> Result<Report> {
    let seed = cli.common.seed;
    match &cli.cmd {
        Cmd::Synth { out_dir, synth } => cmd_synth(out_dir, synth, seed),
        Cmd::Align {
            data,
            split,
            lambda,
            no_bias,
            few_shot,
            map_out,
        } => {
            let m = open(data)?;
            let (t, s) = load_split(&m, *split, data)?;
            let (z_a, z_b) = with_few_shot(&m, data, &t, &s, *few_shot)?;
            let opts = SolveOptions {
                lambda: *lambda,
                bias: !*no_bias,
            };
            let (mut map, rep) = fit(&z_b, &z_a, opts)?;
            map.source_model_id = s.model_id.clone();
            map.target_model_id = t.model_id.clone();
            let holdout_mse = match load_split(&m, Split::Test, data) {
                Ok((ht, hs)) => Some(mse(&map, &hs.embeddings, &ht.embeddings)?),
                Err(_) => None,
            };
            if let Some(p) = map_out {
                map.save(p)?;
            }
            Report::one(json!({
                "dataset": t.dataset_id,
                "split": split.to_string(),
                "source_model": s.model_id,
                "target_model": t.model_id,
                "n_train": rep.n_train,
                "few_shot_n": few_shot,
                "d_source": map.d_source(),
                "d_target": map.d_target(),
                "lambda": lambda,
                "bias": !no_bias,
                "train_mse": rep.train_mse,
                "test_mse": holdout_mse,
            }))
        }
        Cmd::Sweep {
            data,
            split,
            sizes,
            holdout,
            lambda,
        } => {
            let m = open(data)?;
            let (t, s) = load_split(&m, *split, data)?;
            let reps = sweep_training_size(
                &s.embeddings,
                &t.embeddings,
                SolveOptions::with_lambda(*lambda),
                sizes,
                *holdout,
            )?;
            Report::rows(reps)
        }
        Cmd::Classify { data, map, head } => {
            let m = open(data)?;
            let h = obtain_head(&m, data, head)?;
            let (t, s) = load_split(&m, Split::Test, data)?;
            let y = labels(&t, &s)?;
            let baseline = accuracy(&predict(&h, &prep(&t.embeddings, head.normalize))?, &y)?;
            let mapped = match map {
                Some(p) => {
                    let map = AffineMap::load(p)?;
                    Some(accuracy(
                        &predict(&h, &prep(&apply(&map, &s.embeddings)?, head.normalize))?,
                        &y,
                    )?)
                }
                None => None,
            };
            Report::one(json!({
                "party_a": t.model_id,
                "party_b": s.model_id,
                "dataset": t.dataset_id,
                "n_test": y.len(),
                "baseline_acc": baseline,
                "mapped_acc": mapped,
            }))
        }
        Cmd::Ood { data, map, head } => {
            let m = open(data)?;
            let h = obtain_head(&m, data, head)?;
            let map = AffineMap::load(map)?;
            let (t, s) = load_split(&m, Split::Test, data)?;
            let (to, so) = load_split(&m, Split::Ood, data)?;
            let n = head.normalize;
            let base = ood_eval(&h, &prep(&t.embeddings, n), &prep(&to.embeddings, n))?;
            let mapped = ood_eval(
                &h,
                &prep(&apply(&map, &s.embeddings)?, n),
                &prep(&apply(&map, &so.embeddings)?, n),
            )?;
            Report::one(json!({
                "party_a": t.model_id,
                "party_b": s.model_id,
                "dataset": t.dataset_id,
                "n_id": base.n_id,
                "n_ood": base.n_ood,
                "auroc_baseline": base.auroc,
                "auroc_mapped": mapped.auroc,
                "fpr95_baseline": base.fpr_at_95_tpr,
                "fpr95_mapped": mapped.fpr_at_95_tpr,
            }))
        }
        Cmd::Cka { data, split } => {
            let m = open(data)?;
            let (t, s) = load_split(&m, *split, data)?;
            Report::one(json!({
                "cka": linear_cka(&t.embeddings, &s.embeddings)?,
                "dataset": t.dataset_id,
                "split": split.to_string(),
                "n": t.len(),
            }))
        }
        Cmd::Svcca {
            data,
            split,
            components,
            repeats,
            eval_fraction,
        } => {
            let m = open(data)?;
            let (t, s) = load_split(&m, *split, data)?;
            let cfg = SvccaConfig {
                n_components: *components,
                n_repeats: *repeats,
                seed,
                eval_fraction: *eval_fraction,
            };
            let rep = svcca(&t.embeddings, &s.embeddings, &cfg)?;
            let mut v = json!({"dataset": t.dataset_id, "split": split.to_string(), "n": t.len()});
            extend(&mut v, &rep)?;
            Ok(Report::One(v))
        }
        Cmd::Tokcompat {
            records_a,
            records_b,
            vocab_a,
            vocab_b,
            keep_specials,
        } => {
            let mut v = json!({});
            let opts = if *keep_specials {
                IngestOptions::default()
            } else {
                IngestOptions::with_common_specials()
            };
            match (records_a, records_b) {
                (Some(a), Some(b)) => {
                    let (ra, rb) = (read_records(a, &opts)?, read_records(b, &opts)?);
                    v["texts"] = json!(ra.len());
                    v["tokens_a"] = json!(ra.iter().map(|r| r.len()).sum::<usize>());
                    v["tokens_b"] = json!(rb.iter().map(|r| r.len()).sum::<usize>());
                    v["exact_match_rate"] = json!(corpus_exact_match(&ra, &rb)?);
                }
                (None, None) => {}
                _ => return Err(invalid("--records-a and --records-b go together")),
            }
            match (vocab_a, vocab_b) {
                (Some(a), Some(b)) => {
                    let va = VocabSet::read(stem(a), a)?;
                    let vb = VocabSet::read(stem(b), b)?;
                    v["vocab_a"] = json!(va.len());
                    v["vocab_b"] = json!(vb.len());
                    v["vocab_jaccard"] = json!(vocab_jaccard(&va, &vb));
                }
                (None, None) => {}
                _ => return Err(invalid("--vocab-a and --vocab-b go together")),
            }
            if v.as_object().is_some_and(|o| o.is_empty()) {
                return Err(invalid("give token records and/or vocabularies"));
            }
            Ok(Report::One(v))
        }
        Cmd::ProtocolTrain {
            data,
            split,
            few_shot,
            proto,
            lambda,
            map_out,
            transcript_out,
        } => {
            let m = open(data)?;
            let (t, s) = load_split(&m, *split, data)?;
            let (z_a, z_b) = with_few_shot(&m, data, &t, &s, *few_shot)?;
            let mut a = PartyA::new(&proto.backend)?;
            let mut b = PartyB::new(&proto.backend, Some(seed))?;
            let out = run_training(&mut a, &mut b, &z_a, &z_b, *lambda, proto.transport)?;
            let mut map = out.map;
            map.source_model_id = s.model_id.clone();
            map.target_model_id = t.model_id.clone();
            let (plain, _) = fit(&z_b, &z_a, SolveOptions::with_lambda(*lambda))?;
            let scan = privacy_scan(
                &out.transcript,
                a.backend(),
                &[z_a.as_slice(), z_b.as_slice(), map.w.as_slice()],
            );
            if let Some(p) = map_out {
                map.save(p)?;
            }
            if let Some(p) = transcript_out {
                fs::write(p, out.transcript.to_bytes())?;
            }
            let mut v = json!({
                "dataset": t.dataset_id,
                "source_model": s.model_id,
                "target_model": t.model_id,
                "backend": proto.backend,
                "transport": proto.transport,
                "n_train": z_a.nrows(),
                "few_shot_n": few_shot,
                "d_source": map.d_source(),
                "d_target": map.d_target(),
                "lambda": lambda,
                "map_rel_error": frob(&(&map.w - &plain.w)) / frob(&plain.w).max(f64::MIN_POSITIVE),
            });
            extend(&mut v, &transcript_fields(&out.transcript))?;
            v["a_decrypt_calls"] = json!(out.a_decrypt_calls);
            v["privacy_clean"] = json!(scan.clean());
            v["byte_scan"] = json!(scan.byte_scan);
            Ok(Report::One(v))
        }
        Cmd::ProtocolInfer {
            data,
            split,
            map,
            head,
            proto,
            variant,
            limit,
            timings,
            transcript_out,
        } => {
            if head.normalize {
                return Err(invalid("--normalize is not available under encryption"));
            }
            let m = open(data)?;
            let h = obtain_head(&m, data, head)?;
            let map = AffineMap::load(map)?;
            let (t, s) = load_split(&m, *split, data)?;
            let n = limit.unwrap_or(s.len()).min(s.len());
            let queries = s.embeddings.rows(0, n).into_owned();
            let y = s.labels.as_ref().or(t.labels.as_ref()).map(|l| l[..n].to_vec());
            let mut a = PartyA::new(&proto.backend)?;
            let mut b = PartyB::new(&proto.backend, Some(seed))?;
            let out = run_inference(
                &mut a,
                &mut b,
                &queries,
                &map,
                &h,
                *variant,
                KeyChoice::Fresh,
                proto.transport,
            )?;
            let mapped = apply(&map, &queries)?;
            let want = logits(&h, &mapped)?;
            let plain = predict(&h, &mapped)?;
            let scan = privacy_scan(
                &out.transcript,
                a.backend(),
                &[queries.as_slice(), mapped.as_slice(), want.as_slice(), h.v.as_slice()],
            );
            if let Some(p) = transcript_out {
                fs::write(p, out.transcript.to_bytes())?;
            }
            let tr = &out.transcript;
            let per = |k: Kind| tr.messages.iter().find(|m| m.kind == k).map_or(0, |m| m.byte_len());
            let mut v = json!({
                "dataset": t.dataset_id,
                "party_a": t.model_id,
                "party_b": s.model_id,
                "backend": proto.backend,
                "transport": proto.transport,
                "variant": variant,
                "n_queries": n,
                "accuracy": y.as_ref().map(|y| accuracy(&out.predictions, y)).transpose()?,
                "plaintext_accuracy": y.as_ref().map(|y| accuracy(&plain, y)).transpose()?,
                "agreement": accuracy(&out.predictions, &plain)?,
                "max_logit_error": (&out.logits - &want).amax(),
                "query_bytes_b_to_a": per(Kind::EncQuery),
                "query_bytes_a_to_b": per(Kind::EncPrediction),
                "key_bytes": per(Kind::PubKey) + per(Kind::RotKeys),
            });
            extend(&mut v, &transcript_fields(tr))?;
            v["a_decrypt_calls"] = json!(out.a_decrypt_calls);
            v["privacy_clean"] = json!(scan.clean());
            v["byte_scan"] = json!(scan.byte_scan);
            if *timings {
                let col = |f: fn(&held_protocol::QueryTiming) -> f64| {
                    Stat::of(&out.timings.iter().map(f).collect::<Vec<_>>())
                };
                v["setup_seconds"] = json!(out.setup_seconds);
                v["encrypt"] = serde_json::to_value(col(|q| q.encrypt))?;
                v["transfer"] = serde_json::to_value(col(|q| q.transfer))?;
                v["evaluate"] = serde_json::to_value(col(|q| q.evaluate))?;
                v["decrypt"] = serde_json::to_value(col(|q| q.decrypt))?;
                v["end_to_end"] = serde_json::to_value(col(|q| q.total))?;
            }
            Ok(Report::One(v))
        }
        Cmd::ProtocolBench { proto, sizes, queries } => {
            let sizes = sizes.iter().map(|s| parse_size(s)).collect::<Result<Vec<_>>>()?;
            let rows = benchmark(&BenchConfig {
                preset: proto.backend.clone(),
                transport: proto.transport,
                sizes,
                queries: *queries,
                seed,
            })?;
            Report::rows(rows)
        }
        Cmd::Pipeline {
            data,
            synthetic,
            synth,
            few_shot,
            seeds,
            proto,
            variant,
            lambda,
        } => {
            let seeds = if seeds.is_empty() { vec![seed] } else { seeds.clone() };
            let from_manifest = if *synthetic {
                None
            } else {
                Some(PipelineData::from_manifest(&open(data)?, data.dataset.as_deref())?)
            };
            let mut rows = Vec::new();
            for &sd in &seeds {
                let pd = match &from_manifest {
                    Some(d) => d.clone(),
                    None => {
                        let world = SyntheticWorld::new(&spec(synth, sd))?;
                        let sizes = SyntheticSizes {
                            public: synth.n_public,
                            train: synth.n_train,
                            test: synth.n_test,
                        };
                        PipelineData::synthetic(&world, sizes, synth.shift_degrees)
                    }
                };
                for &fs_n in few_shot {
                    let cfg = PipelineConfig {
                        preset: proto.backend.clone(),
                        transport: proto.transport,
                        variant: *variant,
                        lambda: *lambda,
                        few_shot_n: fs_n,
                        head: HeadConfig::default(),
                        seed: Some(sd),
                    };
                    let (row, _, _) = run_pipeline(&pd, &cfg)?;
                    let mut v = serde_json::to_value(row)?;
                    v["seed"] = json!(sd);
                    rows.push(v);
                }
            }
            Ok(Report::Rows(rows))
        }
        Cmd::Mia {
            data,
            synthetic,
            synth,
            n_shadow_in,
            n_shadow_out,
            id_subset,
            target_index,
            folds,
            lambda,
            null,
            seeds,
            features_out,
        } => {
            let seeds = if seeds.is_empty() { vec![seed] } else { seeds.clone() };
            let pools = |sd: u64| -> Result<(PairedPool, PairedPool)> {
                if *synthetic {
                    let world = SyntheticWorld::new(&spec(synth, sd))?;
                    let p = world.draw_shifted(synth.n_public, 1, synth.shift_degrees);
                    let i = world.draw(synth.n_train, 2);
                    Ok((PairedPool::new(p.z_b, p.z_a)?, PairedPool::new(i.z_b, i.z_a)?))
                } else {
                    let m = open(data)?;
                    let (pt, ps) = load_split(&m, Split::Public, data)?;
                    let (it, is) = load_split(&m, Split::Train, data)?;
                    Ok((
                        PairedPool::new(ps.embeddings, pt.embeddings)?,
                        PairedPool::new(is.embeddings, it.embeddings)?,
                    ))
                }
            };
            let mut rows = Vec::new();
            for (i, &sd) in seeds.iter().enumerate() {
                let cfg = MiaConfig {
                    n_shadow_in: *n_shadow_in,
                    n_shadow_out: *n_shadow_out,
                    id_subset_size: *id_subset,
                    target_index: *target_index,
                    lambda: *lambda,
                    folds: *folds,
                    seed: sd,
                    null: *null,
                };
                let (public, id) = pools(sd)?;
                if i == 0 {
                    if let Some(p) = features_out {
                        write_matrix(p, &shadow_features(&cfg, &public, &id)?.0)?;
                    }
                }
                let mut v = json!({"seed": sd});
                extend(&mut v, &shadow_experiment(&cfg, &public, &id)?)?;
                rows.push(v);
            }
            Ok(Report::Rows(rows))
        }
    }
}

fn spec(s: &SynthArgs, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n: s.n_public,
        latent_dim: s.latent_dim,
        d_a: s.d_a,
        d_b: s.d_b,
        noise_std: s.noise,
        n_classes: s.classes,
        seed,
        maps: s.maps,
    }
}

fn cmd_synth(out_dir: &Path, s: &SynthArgs, seed: u64) -> Result<Report> {
    let world = SyntheticWorld::new(&spec(s, seed))?;
    fs::create_dir_all(out_dir)?;
    let mut m = DatasetManifest::new(out_dir);
    let mut splits: Vec<(Split, SyntheticPair)> = vec![
        (Split::Public, world.draw_shifted(s.n_public, 1, s.shift_degrees)),
        (Split::Train, world.draw(s.n_train, 2)),
        (Split::Test, world.draw(s.n_test, 3)),
    ];
    if s.n_ood > 0 {
        splits.push((Split::Ood, world.draw_ood(s.n_ood, 4, s.ood_scale)));
    }
    for (split, pair) in splits {
        let order = Some(format!("synthetic:{seed}:{split}"));
        for (role, model, z) in [
            (Role::Target, "synthetic-a", pair.z_a),
            (Role::Source, "synthetic-b", pair.z_b),
        ] {
            let ds = EmbeddingDataset {
                embeddings: z,
                labels: Some(pair.labels.clone()),
                split,
                model_id: model.into(),
                dataset_id: "synthetic".into(),
            };
            let stem = format!("{}_{split}", if role == Role::Target { "target" } else { "source" });
            m.add_dataset(role, &stem, &ds, order.clone())?;
        }
    }
    m.save(out_dir.join("manifest.json"))?;
    Report::rows(m.entries.iter().map(|e| {
        json!({
            "role": e.role,
            "split": e.split,
            "model_id": e.model_id,
            "dataset_id": e.dataset_id,
            "n_samples": e.n_samples,
            "path": e.path,
        })
    }))
}

fn open(data: &DataArgs) -> Result<DatasetManifest> {
    let p = data
        .manifest
        .as_ref()
        .ok_or_else(|| invalid("--manifest is required"))?;
    let m = DatasetManifest::load(p)?;
    m.validate_pairing()?;
    Ok(m)
}

/// The public split is shared across tasks and looked up without a
/// dataset id.
fn load_split(m: &DatasetManifest, split: Split, data: &DataArgs) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    let id = if split == Split::Public {
        None
    } else {
        data.dataset.as_deref()
    };
    Ok(m.load_pair(split, id)?)
}

fn labels(t: &EmbeddingDataset, s: &EmbeddingDataset) -> Result<Vec<usize>> {
    t.labels
        .clone()
        .or_else(|| s.labels.clone())
        .ok_or_else(|| invalid(format!("{} split of {} has no labels", t.split, t.dataset_id)))
}

/// `(Z_A, Z_B)` of a split with the first `n` train pairs appended.
fn with_few_shot(
    m: &DatasetManifest,
    data: &DataArgs,
    t: &EmbeddingDataset,
    s: &EmbeddingDataset,
    n: usize,
) -> Result<(Matrix, Matrix)> {
    if n == 0 {
        return Ok((t.embeddings.clone(), s.embeddings.clone()));
    }
    let (tt, ts) = load_split(m, Split::Train, data)?;
    if n > tt.len() {
        return Err(invalid(format!("few-shot {n} exceeds the {} train pairs", tt.len())));
    }
    let idx: Vec<usize> = (0..n).collect();
    let stack = |a: &Matrix, b: &Matrix| -> Result<Matrix> {
        if a.ncols() != b.ncols() {
            return Err(invalid(format!("{} vs {} columns", a.ncols(), b.ncols())));
        }
        let mut out = Matrix::zeros(a.nrows() + b.nrows(), a.ncols());
        out.rows_mut(0, a.nrows()).copy_from(a);
        out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
        Ok(out)
    };
    Ok((
        stack(&t.embeddings, &select_rows(&tt.embeddings, &idx))?,
        stack(&s.embeddings, &select_rows(&ts.embeddings, &idx))?,
    ))
}

fn prep(z: &Matrix, normalize: bool) -> Matrix {
    if normalize {
        l2_normalize_rows(z)
    } else {
        z.clone()
    }
}

fn obtain_head(m: &DatasetManifest, data: &DataArgs, args: &HeadArgs) -> Result<LinearHead> {
    let head = match &args.head {
        Some(p) => LinearHead::load(p)?,
        None => {
            let (t, s) = load_split(m, Split::Train, data)?;
            let y = labels(&t, &s)?;
            let k = y.iter().max().map_or(0, |m| m + 1);
            let mut h = train_head(&prep(&t.embeddings, args.normalize), &y, k, &HeadConfig::default())?;
            h.model_id = t.model_id.clone();
            h.dataset_id = t.dataset_id.clone();
            h
        }
    };
    if let Some(p) = &args.head_out {
        head.save(p)?;
    }
    Ok(head)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Appends the fields of `extra` (an object) to `v`.
fn extend(v: &mut Value, extra: &impl Serialize) -> Result<()> {
    if let (Value::Object(dst), Value::Object(src)) = (v, serde_json::to_value(extra)?) {
        dst.extend(src);
    }
    Ok(())
}

#[derive(Serialize)]
struct TranscriptFields {
    messages: usize,
    bytes_b_to_a: u64,
    bytes_a_to_b: u64,
    wire_bytes: u64,
    link_bytes: u64,
    accounting_exact: bool,
    ordered: bool,
    transcript_digest: String,
}

fn transcript_fields(t: &Transcript) -> TranscriptFields {
    TranscriptFields {
        messages: t.messages.len(),
        bytes_b_to_a: t.bytes_from(Party::B),
        bytes_a_to_b: t.bytes_from(Party::A),
        wire_bytes: t.wire_bytes(),
        link_bytes: t.link_bytes,
        accounting_exact: t.accounting_exact(),
        ordered: t.is_ordered(),
        transcript_digest: t.digest(),
    }
}
