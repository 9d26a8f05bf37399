//! Cross-silo evaluation: train the map securely on public pairs (plus an
//! optional few-shot sample of in-distribution pairs), then classify B's
//! test embeddings through encrypted inference against A's frozen head.

use held_core::alignment::{apply, AffineMap};
use held_core::classifier_ood::{accuracy, predict, train_head, HeadConfig, LinearHead};
use held_core::linalg::select_rows;
use held_core::tensor_store::{DatasetManifest, EmbeddingDataset, Split, SyntheticWorld};
use held_core::Matrix;
use serde::Serialize;

use crate::error::{ProtocolError, Result};
use crate::party_a::PartyA;
use crate::party_b::{KeyChoice, PartyB};
use crate::session::{run_inference, run_training, Variant};
use crate::transport::TransportKind;

/// Paired splits as seen by the two parties. `*_a` rows belong to A
/// (target model), `*_b` rows to B (source model).
#[derive(Debug, Clone)]
pub struct PipelineData {
    pub public_a: Matrix,
    pub public_b: Matrix,
    pub train_a: Matrix,
    pub train_b: Matrix,
    pub train_labels: Vec<usize>,
    pub test_a: Matrix,
    pub test_b: Matrix,
    pub test_labels: Vec<usize>,
    pub n_classes: usize,
    pub party_a: String,
    pub party_b: String,
    pub dataset: String,
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSizes {
    pub public: usize,
    pub train: usize,
    pub test: usize,
}

impl PipelineData {
    /// Public pairs drawn with the source view rotated by `shift_degrees`;
    /// train and test pairs in distribution.
    pub fn synthetic(world: &SyntheticWorld, sizes: SyntheticSizes, shift_degrees: f64) -> Self {
        let public = world.draw_shifted(sizes.public, 1, shift_degrees);
        let train = world.draw(sizes.train, 2);
        let test = world.draw(sizes.test, 3);
        Self {
            public_a: public.z_a,
            public_b: public.z_b,
            train_a: train.z_a,
            train_b: train.z_b,
            train_labels: train.labels,
            test_a: test.z_a,
            test_b: test.z_b,
            test_labels: test.labels,
            n_classes: world.spec().n_classes,
            party_a: "synthetic-a".into(),
            party_b: "synthetic-b".into(),
            dataset: "synthetic".into(),
        }
    }

    /// Loads public, train and test pairs of one dataset from a manifest.
    /// Labels come from the target side, falling back to the source side.
    pub fn from_manifest(manifest: &DatasetManifest, dataset_id: Option<&str>) -> Result<Self> {
        manifest.validate_pairing()?;
        let (test_a, test_b) = manifest.load_pair(Split::Test, dataset_id)?;
        let dataset = test_a.dataset_id.clone();
        let (public_a, public_b) = manifest.load_pair(Split::Public, None)?;
        let (train_a, train_b) = manifest.load_pair(Split::Train, Some(&dataset))?;
        let labels = |t: &EmbeddingDataset, s: &EmbeddingDataset| -> Result<Vec<usize>> {
            t.labels
                .clone()
                .or_else(|| s.labels.clone())
                .ok_or_else(|| ProtocolError::InvalidArgument(format!("{} split has no labels", t.split)))
        };
        let train_labels = labels(&train_a, &train_b)?;
        let test_labels = labels(&test_a, &test_b)?;
        let n_classes = train_labels.iter().chain(&test_labels).max().map_or(0, |m| m + 1);
        Ok(Self {
            party_a: test_a.model_id.clone(),
            party_b: test_b.model_id.clone(),
            dataset,
            public_a: public_a.embeddings,
            public_b: public_b.embeddings,
            train_a: train_a.embeddings,
            train_b: train_b.embeddings,
            train_labels,
            test_a: test_a.embeddings,
            test_b: test_b.embeddings,
            test_labels,
            n_classes,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub preset: String,
    pub transport: TransportKind,
    pub variant: Variant,
    pub lambda: f64,
    pub few_shot_n: usize,
    pub head: HeadConfig,
    pub seed: Option<u64>,
}

/// One row of a baseline-vs-mapped table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineRow {
    pub party_a: String,
    pub party_b: String,
    pub dataset: String,
    /// `public` or `public+N`.
    pub train_data: String,
    pub few_shot_n: usize,
    pub n_map_train: usize,
    pub n_test: usize,
    /// A's head on A's own test embeddings.
    pub baseline_acc: f64,
    /// A's head on B's test embeddings, through encrypted inference.
    pub mapped_acc: f64,
    /// The same map and head evaluated in plaintext.
    pub plaintext_mapped_acc: f64,
    /// Fraction of encrypted predictions equal to the plaintext ones.
    pub agreement: f64,
    pub backend: String,
    pub a_decrypt_calls: u64,
}

fn stack(top: &Matrix, bottom: &Matrix) -> Result<Matrix> {
    if top.ncols() != bottom.ncols() {
        return Err(ProtocolError::Dim(format!(
            "{} vs {} columns",
            top.ncols(),
            bottom.ncols()
        )));
    }
    let mut m = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    m.rows_mut(0, top.nrows()).copy_from(top);
    m.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    Ok(m)
}

/// Trains A's head, the map, and evaluates. Returns the row together with
/// the map and head for further use.
pub fn run_pipeline(data: &PipelineData, cfg: &PipelineConfig) -> Result<(PipelineRow, AffineMap, LinearHead)> {
    if cfg.few_shot_n > data.train_a.nrows() {
        return Err(ProtocolError::InvalidArgument(format!(
            "few_shot_n {} exceeds the {} in-distribution training pairs",
            cfg.few_shot_n,
            data.train_a.nrows()
        )));
    }
    let head = train_head(&data.train_a, &data.train_labels, data.n_classes, &cfg.head)?;
    let baseline_acc = accuracy(&predict(&head, &data.test_a)?, &data.test_labels)?;

    let few: Vec<usize> = (0..cfg.few_shot_n).collect();
    let map_a = stack(&data.public_a, &select_rows(&data.train_a, &few))?;
    let map_b = stack(&data.public_b, &select_rows(&data.train_b, &few))?;

    let mut a = PartyA::new(&cfg.preset)?;
    let mut b = PartyB::new(&cfg.preset, cfg.seed)?;
    let trained = run_training(&mut a, &mut b, &map_a, &map_b, cfg.lambda, cfg.transport)?;
    let mut map = trained.map;
    map.source_model_id = data.party_b.clone();
    map.target_model_id = data.party_a.clone();

    let out = run_inference(
        &mut a,
        &mut b,
        &data.test_b,
        &map,
        &head,
        cfg.variant,
        KeyChoice::Fresh,
        cfg.transport,
    )?;
    let mapped_acc = accuracy(&out.predictions, &data.test_labels)?;
    let plain = predict(&head, &apply(&map, &data.test_b)?)?;
    let plaintext_mapped_acc = accuracy(&plain, &data.test_labels)?;
    let agreement = accuracy(&out.predictions, &plain)?;
    let row = PipelineRow {
        party_a: data.party_a.clone(),
        party_b: data.party_b.clone(),
        dataset: data.dataset.clone(),
        train_data: if cfg.few_shot_n == 0 {
            "public".into()
        } else {
            format!("public+{}", cfg.few_shot_n)
        },
        few_shot_n: cfg.few_shot_n,
        n_map_train: map_a.nrows(),
        n_test: data.test_labels.len(),
        baseline_acc,
        mapped_acc,
        plaintext_mapped_acc,
        agreement,
        backend: cfg.preset.clone(),
        a_decrypt_calls: a.decrypt_calls(),
    };
    Ok((row, map, head))
}

/// [`run_pipeline`] on the splits named in a manifest.
pub fn run_cross_silo_pipeline(
    manifest: &DatasetManifest,
    dataset_id: Option<&str>,
    cfg: &PipelineConfig,
) -> Result<PipelineRow> {
    let data = PipelineData::from_manifest(manifest, dataset_id)?;
    Ok(run_pipeline(&data, cfg)?.0)
}
