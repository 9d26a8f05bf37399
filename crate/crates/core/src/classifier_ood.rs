//! Frozen linear heads `f(z) = z·V + c`, transfer evaluation through an
//! affine map, and energy-score OOD detection.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{apply, suffixed, AffineMap};
use crate::error::{dim_err, Error, Result};
use crate::tensor_store::{read_matrix, read_vector, write_matrix, write_vector};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            l2: 1e-2,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `d × K`.
    pub v: Matrix,
    /// Length `K`.
    pub c: Vector,
    pub l2: f64,
    pub model_id: String,
    pub dataset_id: String,
    pub converged: bool,
    pub iterations: usize,
}

impl LinearHead {
    pub fn new(v: Matrix, c: Vector) -> Result<Self> {
        let head = Self {
            v,
            c,
            l2: 0.0,
            model_id: String::new(),
            dataset_id: String::new(),
            converged: true,
            iterations: 0,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn n_classes(&self) -> usize {
        self.v.ncols()
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a head needs K >= 2, got {}",
                self.n_classes()
            )));
        }
        if self.c.len() != self.n_classes() {
            return Err(dim_err!("bias length {} vs V {:?}", self.c.len(), self.v.shape()));
        }
        if self.v.iter().chain(self.c.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("linear head"));
        }
        Ok(())
    }

    pub fn save(&self, base: impl AsRef<Path>) -> Result<()> {
        let base = base.as_ref();
        self.validate()?;
        write_matrix(suffixed(base, "v.tns"), &self.v)?;
        write_vector(suffixed(base, "c.tns"), &self.c)?;
        let meta = HeadMeta {
            kind: "linear_head".into(),
            l2: self.l2,
            model_id: self.model_id.clone(),
            dataset_id: self.dataset_id.clone(),
            dim: self.dim(),
            n_classes: self.n_classes(),
            converged: self.converged,
            iterations: self.iterations,
        };
        let path = suffixed(base, "json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(base: impl AsRef<Path>) -> Result<Self> {
        let base = base.as_ref();
        let path = suffixed(base, "json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: HeadMeta = serde_json::from_str(&text)?;
        if meta.kind != "linear_head" {
            return Err(Error::Malformed(format!(
                "{} is a {:?}, not a linear head",
                path.display(),
                meta.kind
            )));
        }
        let v = read_matrix(suffixed(base, "v.tns"))?;
        let c = read_vector(suffixed(base, "c.tns"))?;
        if v.shape() != (meta.dim, meta.n_classes) {
            return Err(dim_err!(
                "V is {:?}, sidecar declares ({}, {})",
                v.shape(),
                meta.dim,
                meta.n_classes
            ));
        }
        let head = Self {
            v,
            c,
            l2: meta.l2,
            model_id: meta.model_id,
            dataset_id: meta.dataset_id,
            converged: meta.converged,
            iterations: meta.iterations,
        };
        head.validate()?;
        Ok(head)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadMeta {
    kind: String,
    l2: f64,
    model_id: String,
    dataset_id: String,
    dim: usize,
    n_classes: usize,
    converged: bool,
    iterations: usize,
}

/// Scales every row to unit Euclidean norm (zero rows stay zero).
pub fn l2_normalize_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

fn log_sum_exp(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = row.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax probabilities of `logits`.
fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|x| *x = (*x - max).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

struct Objective<'a> {
    z: &'a Matrix,
    y: &'a [usize],
    l2: f64,
}

impl Objective<'_> {
    fn loss(&self, v: &Matrix, c: &Vector) -> f64 {
        let logits = raw_logits(self.z, v, c);
        let n = self.z.nrows() as f64;
        let mut ce = 0.0;
        for (i, row) in logits.row_iter().enumerate() {
            ce += log_sum_exp(row.iter().copied()) - row[self.y[i]];
        }
        ce / n + 0.5 * self.l2 * v.norm_squared()
    }

    fn grad(&self, v: &Matrix, c: &Vector) -> (Matrix, Vector) {
        let n = self.z.nrows() as f64;
        let mut resid = softmax_rows(&raw_logits(self.z, v, c));
        for (i, &y) in self.y.iter().enumerate() {
            resid[(i, y)] -= 1.0;
        }
        let gv = self.z.tr_mul(&resid) / n + v * self.l2;
        let gc = Vector::from_iterator(resid.ncols(), resid.column_iter().map(|col| col.sum() / n));
        (gv, gc)
    }
}

fn raw_logits(z: &Matrix, v: &Matrix, c: &Vector) -> Matrix {
    let mut out = z * v;
    for mut row in out.row_iter_mut() {
        row += c.transpose();
    }
    out
}

/// Multinomial logistic regression by full-batch gradient descent with
/// Armijo backtracking. Minimizes mean cross-entropy + `(l2/2)‖V‖²_F`; the
/// bias is unregularized. Starts from zero, so training is deterministic.
pub fn train_head(z: &Matrix, y: &[usize], n_classes: usize, cfg: &HeadConfig) -> Result<LinearHead> {
    if z.nrows() != y.len() {
        return Err(dim_err!("{} samples but {} labels", z.nrows(), y.len()));
    }
    if n_classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    if z.nrows() < n_classes {
        return Err(Error::InvalidArgument(format!(
            "{} samples for {n_classes} classes",
            z.nrows()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training embeddings"));
    }
    let mut present = vec![false; n_classes];
    for &label in y {
        if label >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} outside [0, {n_classes})"
            )));
        }
        present[label] = true;
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::InvalidArgument(format!(
            "class {missing} has no training samples"
        )));
    }

    let obj = Objective { z, y, l2: cfg.l2 };
    let d = z.ncols();
    let mut v = Matrix::zeros(d, n_classes);
    let mut c = Vector::zeros(n_classes);
    let mut loss = obj.loss(&v, &c);
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let (gv, gc) = obj.grad(&v, &c);
        let gnorm2 = gv.norm_squared() + gc.norm_squared();
        if gnorm2.sqrt() <= cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;
        // Let the step grow back after a run of accepted iterations.
        step *= 2.0;
        loop {
            let v_new = &v - &gv * step;
            let c_new = &c - &gc * step;
            let loss_new = obj.loss(&v_new, &c_new);
            if loss_new <= loss - 0.5 * step * gnorm2 {
                v = v_new;
                c = c_new;
                loss = loss_new;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::Numerical("line search failed to make progress".into()));
            }
        }
    }
    if !converged {
        let (gv, gc) = obj.grad(&v, &c);
        converged = (gv.norm_squared() + gc.norm_squared()).sqrt() <= cfg.tol;
    }
    Ok(LinearHead {
        v,
        c,
        l2: cfg.l2,
        model_id: String::new(),
        dataset_id: String::new(),
        converged,
        iterations,
    })
}

/// `Z·V + 1cᵀ`.
pub fn logits(head: &LinearHead, z: &Matrix) -> Result<Matrix> {
    if z.ncols() != head.dim() {
        return Err(dim_err!("input has {} dims, head expects {}", z.ncols(), head.dim()));
    }
    Ok(raw_logits(z, &head.v, &head.c))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = j;
        }
    }
    best
}

pub fn predict(head: &LinearHead, z: &Matrix) -> Result<Vec<usize>> {
    let l = logits(head, z)?;
    Ok(l.row_iter()
        .map(|r| argmax(&r.iter().copied().collect::<Vec<_>>()))
        .collect())
}

/// Energy `E(z) = −log Σ_k exp(f(z)_k)` of each row of a logit matrix.
pub fn energy_from_logits(logits: &Matrix) -> Vector {
    Vector::from_iterator(
        logits.nrows(),
        logits.row_iter().map(|r| -log_sum_exp(r.iter().copied())),
    )
}

pub fn energy(head: &LinearHead, z: &Matrix) -> Result<Vector> {
    Ok(energy_from_logits(&logits(head, z)?))
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(dim_err!("{} predictions for {} labels", predicted.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub auroc: f64,
    pub fpr_at_95_tpr: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// `P(score_ood > score_id) + ½·P(tie)` by the rank-sum statistic.
/// Exact: the count is kept as an integer (doubled to absorb half-credits).
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::InvalidArgument("AUROC needs scores on both sides".into()));
    }
    if id_scores.iter().chain(ood_scores).any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut twice_u: u128 = 0;
    let mut id_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut n_ood, mut n_id) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                n_ood += 1;
            } else {
                n_id += 1;
            }
            j += 1;
        }
        twice_u += 2 * n_ood * id_below + n_ood * n_id;
        id_below += n_id;
        i = j;
    }
    let denom = 2 * id_scores.len() as u128 * ood_scores.len() as u128;
    Ok(twice_u as f64 / denom as f64)
}

/// Fraction of ID scores at or above the largest threshold that still
/// flags at least `tpr` of the OOD scores.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<f64> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::InvalidArgument("FPR needs scores on both sides".into()));
    }
    let mut ood: Vec<f64> = ood_scores.to_vec();
    ood.sort_by(|a, b| b.total_cmp(a));
    let need = ((tpr * ood.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let threshold = ood[need.min(ood.len()) - 1];
    let above = id_scores.iter().filter(|&&s| s >= threshold).count();
    Ok(above as f64 / id_scores.len() as f64)
}

/// Scores both sets by energy (higher means more OOD-like).
pub fn ood_eval(head: &LinearHead, z_id: &Matrix, z_ood: &Matrix) -> Result<OodReport> {
    if z_id.nrows() < 2 || z_ood.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "OOD evaluation needs at least two samples per side".into(),
        ));
    }
    let s_id: Vec<f64> = energy(head, z_id)?.iter().copied().collect();
    let s_ood: Vec<f64> = energy(head, z_ood)?.iter().copied().collect();
    Ok(OodReport {
        auroc: auroc(&s_id, &s_ood)?,
        fpr_at_95_tpr: fpr_at_tpr(&s_id, &s_ood, 0.95)?,
        n_id: s_id.len(),
        n_ood: s_ood.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub accuracy: f64,
    pub ood: Option<OodReport>,
}

/// Evaluates the frozen head on source embeddings mapped into its space.
pub fn transfer_eval(
    head: &LinearHead,
    map: &AffineMap,
    z_b_test: &Matrix,
    y_test: &[usize],
    z_b_ood: Option<&Matrix>,
) -> Result<TransferResult> {
    if map.d_target() != head.dim() {
        return Err(dim_err!(
            "map produces {} dims, head expects {}",
            map.d_target(),
            head.dim()
        ));
    }
    let mapped = apply(map, z_b_test)?;
    let acc = accuracy(&predict(head, &mapped)?, y_test)?;
    let ood = match z_b_ood {
        Some(z_ood) => Some(ood_eval(head, &mapped, &apply(map, z_ood)?)?),
        None => None,
    };
    Ok(TransferResult { accuracy: acc, ood })
}

/// One row of a baseline-vs-mapped transfer table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub party_a: String,
    pub party_b: String,
    pub dataset: String,
    pub baseline_acc: f64,
    pub mapped_acc: f64,
    pub auroc_baseline: Option<f64>,
    pub auroc_mapped: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn head(v: Matrix, c: &[f64]) -> LinearHead {
        LinearHead::new(v, Vector::from_row_slice(c)).unwrap()
    }

    fn blobs(seed: u64, n: usize) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = gaussian_matrix(&mut rng, n, 2) * 0.5;
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        for i in 0..n {
            let shift = if y[i] == 0 { -3.0 } else { 3.0 };
            z[(i, 0)] += shift;
        }
        (z, y)
    }

    #[test]
    fn separable_blobs_train_accurately() {
        let (z, y) = blobs(1, 200);
        let h = train_head(&z, &y, 2, &HeadConfig::default()).unwrap();
        // Perceptron-style check that the data is separable at all.
        assert!((0..200).all(|i| (z[(i, 0)] > 0.0) == (y[i] == 1)));
        let acc = accuracy(&predict(&h, &z).unwrap(), &y).unwrap();
        assert!(acc >= 0.99, "{acc}");
    }

    #[test]
    fn random_labels_stay_near_chance() {
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let z = gaussian_matrix(&mut rng, 400, 5);
            let y: Vec<usize> = (0..400).map(|_| rng.random_range(0..4)).collect();
            let h = train_head(&z, &y, 4, &HeadConfig::default()).unwrap();
            worst = worst.max(accuracy(&predict(&h, &z).unwrap(), &y).unwrap());
        }
        assert!(worst <= 0.45, "{worst}");
    }

    #[test]
    fn duplicating_samples_gives_same_head() {
        let (z, y) = blobs(2, 60);
        let h1 = train_head(&z, &y, 2, &HeadConfig::default()).unwrap();
        let mut z2 = Matrix::zeros(120, 2);
        let mut y2 = Vec::new();
        for i in 0..60 {
            z2.set_row(2 * i, &z.row(i));
            z2.set_row(2 * i + 1, &z.row(i));
            y2.push(y[i]);
            y2.push(y[i]);
        }
        let h2 = train_head(&z2, &y2, 2, &HeadConfig::default()).unwrap();
        assert!((&h1.v - &h2.v).norm() <= 1e-6);
        assert!((&h1.c - &h2.c).norm() <= 1e-6);
    }

    #[test]
    fn training_errors() {
        let (z, y) = blobs(3, 20);
        let only_zero = vec![0; 20];
        assert!(train_head(&z, &only_zero, 2, &HeadConfig::default()).is_err());
        let mut bad = z.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(train_head(&bad, &y, 2, &HeadConfig::default()).is_err());
        assert!(train_head(&z, &y[..10], 2, &HeadConfig::default()).is_err());
    }

    #[test]
    fn predict_cases() {
        let h = head(Matrix::zeros(3, 2), &[2.0, 1.0]);
        let z = gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(4), 5, 3);
        assert_eq!(predict(&h, &z).unwrap(), vec![0; 5]);
        let tie = head(Matrix::zeros(1, 3), &[1.0, 1.0, 1.0]);
        assert_eq!(predict(&tie, &Matrix::zeros(2, 1)).unwrap(), vec![0, 0]);
        assert!(predict(&h, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn logits_hand_case() {
        let v = Matrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 2.0]);
        let h = head(v.clone(), &[0.1, -0.2]);
        let z = Matrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.0, 0.5, 0.5]);
        let l = logits(&h, &z).unwrap();
        for i in 0..3 {
            for k in 0..2 {
                let expected = z[(i, 0)] * v[(0, k)] + z[(i, 1)] * v[(1, k)] + h.c[k];
                assert!((l[(i, k)] - expected).abs() < 1e-15);
            }
        }
        assert_eq!(predict(&h, &z).unwrap(), vec![1, 1, 0]);
    }

    #[test]
    fn energy_cases() {
        let e = energy_from_logits(&Matrix::from_row_slice(1, 2, &[0.0, 0.0]));
        assert!((e[0] + 2f64.ln()).abs() < 1e-15);
        let e = energy_from_logits(&Matrix::from_row_slice(1, 2, &[1000.0, 1000.0]));
        assert!(e[0].is_finite());
        assert!((e[0] - (-1000.0 - 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.0, 1.0, 2.0], &[5.0, 6.0]).unwrap(), 1.0);
        assert_eq!(fpr_at_tpr(&[0.0, 1.0, 2.0], &[5.0, 6.0], 0.95).unwrap(), 0.0);
        assert_eq!(auroc(&[1.0, 1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn auroc_hand_scores_match_pair_count() {
        let id = [0.1, 0.4, 0.35, 0.8, 0.2, 0.5];
        let ood = [0.9, 0.4, 0.6, 0.75, 0.3, 0.5];
        let mut twice = 0u64;
        for &o in &ood {
            for &i in &id {
                twice += if o > i {
                    2
                } else if o == i {
                    1
                } else {
                    0
                };
            }
        }
        let expected = twice as f64 / (2.0 * 36.0);
        assert_eq!(auroc(&id, &ood).unwrap(), expected);
        assert_eq!(expected, 52.0 / 72.0);
    }

    #[test]
    fn fpr_counts_id_above_threshold() {
        // 20 OOD scores 1..=20: 95% TPR keeps the top 19, threshold 2.
        let ood: Vec<f64> = (1..=20).map(f64::from).collect();
        let id = [0.0, 1.5, 2.0, 3.0];
        assert_eq!(fpr_at_tpr(&id, &ood, 0.95).unwrap(), 0.5);
    }

    #[test]
    fn transfer_identity_equals_baseline() {
        let (z, y) = blobs(5, 100);
        let h = train_head(&z, &y, 2, &HeadConfig::default()).unwrap();
        let base = accuracy(&predict(&h, &z).unwrap(), &y).unwrap();
        let t = transfer_eval(&h, &AffineMap::identity(2), &z, &y, None).unwrap();
        assert_eq!(t.accuracy, base);
        assert!(transfer_eval(&h, &AffineMap::identity(3), &Matrix::zeros(1, 3), &[0], None).is_err());
    }

    #[test]
    fn head_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let (z, y) = blobs(6, 40);
        let h = train_head(&z, &y, 2, &HeadConfig::default()).unwrap();
        let base = dir.path().join("head");
        h.save(&base).unwrap();
        assert_eq!(LinearHead::load(&base).unwrap(), h);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn logit_shift_invariance(seed in 0u64..10_000, shift in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = gaussian_matrix(&mut rng, 6, 4) * 3.0;
            let shifted = l.add_scalar(shift);
            let e0 = energy_from_logits(&l);
            let e1 = energy_from_logits(&shifted);
            for i in 0..6 {
                prop_assert!((e1[i] - (e0[i] - shift)).abs() < 1e-9);
                let r0: Vec<f64> = l.row(i).iter().copied().collect();
                let r1: Vec<f64> = shifted.row(i).iter().copied().collect();
                prop_assert_eq!(argmax(&r0), argmax(&r1));
            }
        }

        #[test]
        fn energy_stable_at_large_magnitude(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = Matrix::from_fn(3, 5, |_, _| rng.random_range(-1e4..1e4));
            prop_assert!(energy_from_logits(&l).iter().all(|e| e.is_finite()));
        }

        #[test]
        fn auroc_complement(id in prop::collection::vec(-100.0f64..100.0, 1..20),
                            ood in prop::collection::vec(-100.0f64..100.0, 1..20)) {
            prop_assume!(id.iter().all(|a| ood.iter().all(|b| a != b)));
            let ab = auroc(&id, &ood).unwrap();
            let ba = auroc(&ood, &id).unwrap();
            prop_assert!((ab + ba - 1.0).abs() < 1e-12);
        }
    }
}
