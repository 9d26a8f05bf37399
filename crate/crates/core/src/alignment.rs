//! Ridge-regression affine maps `ẑ_A = z_B·W + b` between representation
//! spaces.
//!
//! Everything the solve needs is carried by [`SufficientStats`]: the source
//! Gram matrix, the source/target cross products, both column sums and the
//! row count. Statistics can be filled batch by batch, merged across
//! workers, or assembled from parts computed elsewhere (the encrypted
//! training protocol delivers the cross products this way).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor_store::{read_matrix, read_vector, write_matrix, write_vector};
use crate::{Matrix, Vector};

/// Ridge coefficient used when none is given.
pub const DEFAULT_LAMBDA: f64 = 1e-4;

/// Rows folded into the statistics per batch by [`fit`].
const FIT_BATCH: usize = 1024;

/// Accumulated `Z_BᵀZ_B`, `Z_BᵀZ_A`, column sums and count.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    gram: Matrix,
    cross: Matrix,
    sum_b: Vector,
    sum_a: Vector,
    count: usize,
}

impl SufficientStats {
    pub fn new(d_b: usize, d_a: usize) -> Self {
        Self {
            gram: Matrix::zeros(d_b, d_b),
            cross: Matrix::zeros(d_b, d_a),
            sum_b: Vector::zeros(d_b),
            sum_a: Vector::zeros(d_a),
            count: 0,
        }
    }

    /// Assembles statistics from separately computed parts.
    pub fn from_parts(gram: Matrix, cross: Matrix, sum_b: Vector, sum_a: Vector, count: usize) -> Result<Self> {
        let d_b = gram.nrows();
        if gram.ncols() != d_b || cross.nrows() != d_b || sum_b.len() != d_b || sum_a.len() != cross.ncols() {
            return Err(dim_err!(
                "gram {:?}, cross {:?}, sum_b {}, sum_a {}",
                gram.shape(),
                cross.shape(),
                sum_b.len(),
                sum_a.len()
            ));
        }
        Ok(Self {
            gram,
            cross,
            sum_b,
            sum_a,
            count,
        })
    }

    pub fn d_source(&self) -> usize {
        self.gram.nrows()
    }

    pub fn d_target(&self) -> usize {
        self.cross.ncols()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn cross(&self) -> &Matrix {
        &self.cross
    }

    pub fn sum_source(&self) -> &Vector {
        &self.sum_b
    }

    pub fn sum_target(&self) -> &Vector {
        &self.sum_a
    }

    /// Folds a batch of row-paired samples into the statistics.
    pub fn accumulate(&mut self, batch_b: &Matrix, batch_a: &Matrix) -> Result<()> {
        if batch_b.nrows() != batch_a.nrows() {
            return Err(dim_err!(
                "batch row counts differ: source {}, target {}",
                batch_b.nrows(),
                batch_a.nrows()
            ));
        }
        if batch_b.ncols() != self.d_source() || batch_a.ncols() != self.d_target() {
            return Err(dim_err!(
                "batch dims ({}, {}) do not match stats ({}, {})",
                batch_b.ncols(),
                batch_a.ncols(),
                self.d_source(),
                self.d_target()
            ));
        }
        if batch_b.nrows() == 0 {
            return Ok(());
        }
        self.gram.gemm_tr(1.0, batch_b, batch_b, 1.0);
        self.cross.gemm_tr(1.0, batch_b, batch_a, 1.0);
        for row in batch_b.row_iter() {
            self.sum_b += row.transpose();
        }
        for row in batch_a.row_iter() {
            self.sum_a += row.transpose();
        }
        self.count += batch_b.nrows();
        Ok(())
    }

    /// Combines statistics computed over disjoint row sets.
    pub fn merge(&mut self, other: &SufficientStats) -> Result<()> {
        if other.d_source() != self.d_source() || other.d_target() != self.d_target() {
            return Err(dim_err!("cannot merge stats of different dimensions"));
        }
        self.gram += &other.gram;
        self.cross += &other.cross;
        self.sum_b += &other.sum_b;
        self.sum_a += &other.sum_a;
        self.count += other.count;
        Ok(())
    }

    /// Removes rows previously folded in with [`accumulate`](Self::accumulate).
    pub fn retract(&mut self, batch_b: &Matrix, batch_a: &Matrix) -> Result<()> {
        if batch_b.nrows() > self.count {
            return Err(Error::InvalidArgument(format!(
                "cannot retract {} rows from {}",
                batch_b.nrows(),
                self.count
            )));
        }
        let mut neg = SufficientStats::new(self.d_source(), self.d_target());
        neg.accumulate(batch_b, batch_a)?;
        self.gram -= &neg.gram;
        self.cross -= &neg.cross;
        self.sum_b -= &neg.sum_b;
        self.sum_a -= &neg.sum_a;
        self.count -= neg.count;
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.gram
            .iter()
            .chain(self.cross.iter())
            .chain(self.sum_a.iter())
            .chain(self.sum_b.iter())
            .all(|v| v.is_finite())
    }
}

/// Options for [`solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub lambda: f64,
    /// Fit an intercept through mean-centering. When false, `b = 0` and the
    /// uncentered normal equations are solved.
    pub bias: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            bias: true,
        }
    }
}

impl SolveOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }
}

/// `(W, b)` mapping the source space into the target space.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    /// `d_source × d_target`.
    pub w: Matrix,
    /// Length `d_target`.
    pub b: Vector,
    pub lambda: f64,
    pub n_train: usize,
    pub source_model_id: String,
    pub target_model_id: String,
}

impl AffineMap {
    pub fn identity(d: usize) -> Self {
        Self {
            w: Matrix::identity(d, d),
            b: Vector::zeros(d),
            lambda: 0.0,
            n_train: 0,
            source_model_id: String::new(),
            target_model_id: String::new(),
        }
    }

    pub fn d_source(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_target(&self) -> usize {
        self.w.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.b.len() != self.w.ncols() {
            return Err(dim_err!("bias length {} vs W {:?}", self.b.len(), self.w.shape()));
        }
        if self.w.iter().chain(self.b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine map"));
        }
        Ok(())
    }

    /// Maps a single source vector.
    pub fn apply_one(&self, z: &[f64]) -> Result<Vector> {
        if z.len() != self.d_source() {
            return Err(dim_err!("input has {} dims, map expects {}", z.len(), self.d_source()));
        }
        let row = nalgebra::DVectorView::from_slice(z, z.len());
        Ok(self.w.tr_mul(&row) + &self.b)
    }

    /// Writes `<base>.w.tns`, `<base>.b.tns` and the `<base>.json` sidecar.
    pub fn save(&self, base: impl AsRef<Path>) -> Result<()> {
        let base = base.as_ref();
        self.validate()?;
        write_matrix(suffixed(base, "w.tns"), &self.w)?;
        write_vector(suffixed(base, "b.tns"), &self.b)?;
        let meta = MapMeta {
            kind: "affine_map".into(),
            lambda: self.lambda,
            n_train: self.n_train,
            source_model_id: self.source_model_id.clone(),
            target_model_id: self.target_model_id.clone(),
            d_source: self.d_source(),
            d_target: self.d_target(),
        };
        let path = suffixed(base, "json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(base: impl AsRef<Path>) -> Result<Self> {
        let base = base.as_ref();
        let path = suffixed(base, "json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: MapMeta = serde_json::from_str(&text)?;
        if meta.kind != "affine_map" {
            return Err(Error::Malformed(format!(
                "{} is a {:?}, not an affine map",
                path.display(),
                meta.kind
            )));
        }
        let w = read_matrix(suffixed(base, "w.tns"))?;
        let b = read_vector(suffixed(base, "b.tns"))?;
        if w.shape() != (meta.d_source, meta.d_target) {
            return Err(dim_err!(
                "W is {:?}, sidecar declares ({}, {})",
                w.shape(),
                meta.d_source,
                meta.d_target
            ));
        }
        let map = Self {
            w,
            b,
            lambda: meta.lambda,
            n_train: meta.n_train,
            source_model_id: meta.source_model_id,
            target_model_id: meta.target_model_id,
        };
        map.validate()?;
        Ok(map)
    }
}

/// JSON sidecar stored next to a map's tensors.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapMeta {
    kind: String,
    lambda: f64,
    n_train: usize,
    source_model_id: String,
    target_model_id: String,
    d_source: usize,
    d_target: usize,
}

/// `base` with `.suffix` appended to its file name.
pub fn suffixed(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_mse: f64,
    pub holdout_mse: Option<f64>,
    pub n_train: usize,
}

/// Solves the ridge problem
/// `min ‖Z_B·W + 1bᵀ − Z_A‖²_F + λ‖W‖²_F` from accumulated statistics.
///
/// With `bias`, the centered normal equations `(Ĝ + λI)·W = Ĉ` are solved
/// and `b = mean_A − Wᵀ·mean_B`. The system matrix is factored by Cholesky.
pub fn solve(stats: &SufficientStats, opts: SolveOptions) -> Result<AffineMap> {
    if !(opts.lambda > 0.0) || !opts.lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be > 0, got {}",
            opts.lambda
        )));
    }
    if stats.count == 0 {
        return Err(Error::InvalidArgument("cannot solve from zero samples".into()));
    }
    if !stats.is_finite() {
        return Err(Error::NonFinite("sufficient statistics"));
    }
    let n = stats.count as f64;
    let (mut system, rhs, mean_b, mean_a) = if opts.bias {
        let mean_b = &stats.sum_b / n;
        let mean_a = &stats.sum_a / n;
        let g = &stats.gram - (&mean_b * mean_b.transpose()) * n;
        let c = &stats.cross - (&mean_b * mean_a.transpose()) * n;
        (g, c, Some(mean_b), Some(mean_a))
    } else {
        (stats.gram.clone(), stats.cross.clone(), None, None)
    };
    // Symmetrize away rounding from the rank-one downdate.
    system = (&system + system.transpose()) * 0.5;
    for i in 0..system.nrows() {
        system[(i, i)] += opts.lambda;
    }
    let chol = Cholesky::new(system).ok_or_else(|| Error::Numerical("ridge system is not positive definite".into()))?;
    let w = chol.solve(&rhs);
    let b = match (mean_b, mean_a) {
        (Some(mb), Some(ma)) => ma - w.tr_mul(&mb),
        _ => Vector::zeros(stats.d_target()),
    };
    let map = AffineMap {
        w,
        b,
        lambda: opts.lambda,
        n_train: stats.count,
        source_model_id: String::new(),
        target_model_id: String::new(),
    };
    if map.w.iter().chain(map.b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("solution has non-finite entries".into()));
    }
    Ok(map)
}

/// Row-wise `Z·W + 1bᵀ`.
pub fn apply(map: &AffineMap, z: &Matrix) -> Result<Matrix> {
    if z.ncols() != map.d_source() {
        return Err(dim_err!(
            "input has {} columns, map expects {}",
            z.ncols(),
            map.d_source()
        ));
    }
    let mut out = z * &map.w;
    for mut row in out.row_iter_mut() {
        row += map.b.transpose();
    }
    Ok(out)
}

/// Mean squared error per entry of `apply(map, z_b)` against `z_a`.
pub fn mse(map: &AffineMap, z_b: &Matrix, z_a: &Matrix) -> Result<f64> {
    if z_b.nrows() != z_a.nrows() {
        return Err(dim_err!("row counts differ: {} vs {}", z_b.nrows(), z_a.nrows()));
    }
    if z_a.ncols() != map.d_target() {
        return Err(dim_err!(
            "target has {} columns, map produces {}",
            z_a.ncols(),
            map.d_target()
        ));
    }
    if z_a.is_empty() {
        return Ok(0.0);
    }
    let resid = apply(map, z_b)? - z_a;
    Ok(resid.norm_squared() / (z_a.nrows() * z_a.ncols()) as f64)
}

/// Accumulates every row in batches and solves.
pub fn fit(z_b: &Matrix, z_a: &Matrix, opts: SolveOptions) -> Result<(AffineMap, FitReport)> {
    if z_b.nrows() != z_a.nrows() {
        return Err(dim_err!(
            "row counts differ: source {}, target {}",
            z_b.nrows(),
            z_a.nrows()
        ));
    }
    let mut stats = SufficientStats::new(z_b.ncols(), z_a.ncols());
    let n = z_b.nrows();
    let mut start = 0;
    while start < n {
        let len = FIT_BATCH.min(n - start);
        stats.accumulate(&z_b.rows(start, len).into_owned(), &z_a.rows(start, len).into_owned())?;
        start += len;
    }
    let map = solve(&stats, opts)?;
    let report = FitReport {
        train_mse: mse(&map, z_b, z_a)?,
        holdout_mse: None,
        n_train: n,
    };
    Ok((map, report))
}

/// Fits one map per training-prefix size against a fixed holdout made of
/// the last `ceil(holdout_fraction · n)` rows. Reports come back ordered by
/// size.
pub fn sweep_training_size(
    z_b: &Matrix,
    z_a: &Matrix,
    opts: SolveOptions,
    sizes: &[usize],
    holdout_fraction: f64,
) -> Result<Vec<FitReport>> {
    if z_b.nrows() != z_a.nrows() {
        return Err(dim_err!(
            "row counts differ: source {}, target {}",
            z_b.nrows(),
            z_a.nrows()
        ));
    }
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {holdout_fraction} not in [0, 1)"
        )));
    }
    let n = z_b.nrows();
    let n_hold = (holdout_fraction * n as f64).ceil() as usize;
    let n_avail = n - n_hold;
    let mut sorted: Vec<usize> = sizes.to_vec();
    sorted.sort_unstable();
    if let Some(&too_big) = sorted.iter().find(|&&s| s > n_avail) {
        return Err(Error::InvalidArgument(format!(
            "training size {too_big} exceeds the {n_avail} rows available outside the holdout"
        )));
    }
    let hold_b = z_b.rows(n_avail, n_hold).into_owned();
    let hold_a = z_a.rows(n_avail, n_hold).into_owned();

    let mut stats = SufficientStats::new(z_b.ncols(), z_a.ncols());
    let mut reports = Vec::with_capacity(sorted.len());
    for size in sorted {
        let have = stats.count;
        if size > have {
            stats.accumulate(
                &z_b.rows(have, size - have).into_owned(),
                &z_a.rows(have, size - have).into_owned(),
            )?;
        }
        let map = solve(&stats, opts)?;
        let train_b = z_b.rows(0, size).into_owned();
        let train_a = z_a.rows(0, size).into_owned();
        reports.push(FitReport {
            train_mse: mse(&map, &train_b, &train_a)?,
            holdout_mse: (n_hold > 0).then(|| mse(&map, &hold_b, &hold_a)).transpose()?,
            n_train: size,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use crate::tensor_store::{synth_paired, MapKind, SyntheticSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_pair(seed: u64, n: usize, db: usize, da: usize) -> (Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zb = gaussian_matrix(&mut rng, n, db);
        let w = gaussian_matrix(&mut rng, db, da);
        let noise = gaussian_matrix(&mut rng, n, da) * 0.1;
        let za = &zb * w + noise;
        (zb, za)
    }

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn empty_batch_leaves_stats_unchanged() {
        let (zb, za) = rand_pair(1, 10, 3, 2);
        let mut s = SufficientStats::new(3, 2);
        s.accumulate(&zb, &za).unwrap();
        let before = s.clone();
        s.accumulate(&Matrix::zeros(0, 3), &Matrix::zeros(0, 2)).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn row_by_row_matches_single_batch() {
        let (zb, za) = rand_pair(2, 60, 5, 4);
        let mut one = SufficientStats::new(5, 4);
        one.accumulate(&zb, &za).unwrap();
        let mut many = SufficientStats::new(5, 4);
        for i in 0..60 {
            many.accumulate(&zb.rows(i, 1).into_owned(), &za.rows(i, 1).into_owned())
                .unwrap();
        }
        // Dense oracle.
        let gram = zb.transpose() * &zb;
        assert!(rel(&one.gram, &gram) < 1e-12);
        assert!(rel(&many.gram, &one.gram) < 1e-9);
        assert!(rel(&many.cross, &one.cross) < 1e-9);
        assert_eq!(many.count, 60);
    }

    #[test]
    fn merged_halves_equal_full() {
        let (zb, za) = rand_pair(3, 41, 4, 3);
        let mut full = SufficientStats::new(4, 3);
        full.accumulate(&zb, &za).unwrap();
        let mut h1 = SufficientStats::new(4, 3);
        h1.accumulate(&zb.rows(0, 20).into_owned(), &za.rows(0, 20).into_owned())
            .unwrap();
        let mut h2 = SufficientStats::new(4, 3);
        h2.accumulate(&zb.rows(20, 21).into_owned(), &za.rows(20, 21).into_owned())
            .unwrap();
        let mut m12 = h1.clone();
        m12.merge(&h2).unwrap();
        let mut m21 = h2.clone();
        m21.merge(&h1).unwrap();
        assert!(rel(&m12.gram, &full.gram) < 1e-12);
        assert!(rel(&m21.cross, &full.cross) < 1e-12);
        assert_eq!(m12.count, 41);
    }

    #[test]
    fn accumulate_dim_mismatch() {
        let mut s = SufficientStats::new(3, 2);
        assert!(s.accumulate(&Matrix::zeros(4, 3), &Matrix::zeros(5, 2)).is_err());
        assert!(s.accumulate(&Matrix::zeros(4, 2), &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn self_alignment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = gaussian_matrix(&mut rng, 80, 6);
        let (map, _) = fit(&z, &z, SolveOptions::with_lambda(1e-12)).unwrap();
        assert!((&map.w - Matrix::identity(6, 6)).norm() <= 1e-6);
        assert!(map.b.norm() <= 1e-6);
    }

    #[test]
    fn planted_map_recovered() {
        let spec = SyntheticSpec {
            n: 300,
            latent_dim: 5,
            d_a: 8,
            d_b: 7,
            noise_std: 0.0,
            n_classes: 3,
            seed: 5,
            maps: MapKind::Random,
        };
        let (p, _) = synth_paired(&spec).unwrap();
        let (map, report) = fit(&p.z_b, &p.z_a, SolveOptions::with_lambda(1e-9)).unwrap();
        let pred = apply(&map, &p.z_b).unwrap();
        assert!(rel(&pred, &p.z_a) <= 1e-6);
        assert!(report.train_mse <= 1e-12);
    }

    #[test]
    fn huge_lambda_shrinks_to_mean() {
        let (zb, mut za) = rand_pair(6, 100, 4, 3);
        for mut row in za.row_iter_mut() {
            row.add_scalar_mut(2.0);
        }
        let (map, _) = fit(&zb, &za, SolveOptions::with_lambda(1e9)).unwrap();
        assert!(map.w.norm() <= 1e-6);
        let mean_a = crate::linalg::column_means(&za);
        assert!((&map.b - mean_a).norm() <= 1e-6);
    }

    #[test]
    fn rejects_bad_lambda_and_empty() {
        let s = SufficientStats::new(2, 2);
        assert!(solve(&s, SolveOptions::with_lambda(1.0)).is_err());
        let (zb, za) = rand_pair(7, 5, 2, 2);
        let mut s = SufficientStats::new(2, 2);
        s.accumulate(&zb, &za).unwrap();
        assert!(solve(&s, SolveOptions::with_lambda(0.0)).is_err());
        assert!(solve(&s, SolveOptions::with_lambda(-1.0)).is_err());
    }

    #[test]
    fn non_finite_stats_rejected() {
        let mut s = SufficientStats::new(2, 1);
        s.accumulate(&Matrix::from_element(1, 2, 1.0), &Matrix::from_element(1, 1, 1.0))
            .unwrap();
        s.sum_a[0] = f64::INFINITY;
        assert!(matches!(solve(&s, SolveOptions::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn underdetermined_is_fine() {
        let (zb, za) = rand_pair(8, 3, 10, 4);
        let (map, _) = fit(&zb, &za, SolveOptions::default()).unwrap();
        assert!(map.validate().is_ok());
    }

    #[test]
    fn apply_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = gaussian_matrix(&mut rng, 4, 3);
        let id = AffineMap::identity(3);
        assert_eq!(apply(&id, &z).unwrap(), z);
        let v = Vector::from_vec(vec![1.0, -2.0]);
        let constant = AffineMap {
            w: Matrix::zeros(3, 2),
            b: v.clone(),
            ..AffineMap::identity(0)
        };
        let out = apply(&constant, &z).unwrap();
        for row in out.row_iter() {
            assert_eq!(row.transpose(), v);
        }
    }

    #[test]
    fn apply_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let map = AffineMap {
            w: gaussian_matrix(&mut rng, 5, 3),
            b: Vector::from_vec(vec![0.5, -0.25, 2.0]),
            ..AffineMap::identity(0)
        };
        let z = gaussian_matrix(&mut rng, 4, 5);
        let out = apply(&map, &z).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut acc = map.b[j];
                for k in 0..5 {
                    acc += z[(i, k)] * map.w[(k, j)];
                }
                assert!((out[(i, j)] - acc).abs() <= 1e-12);
            }
        }
        assert!(apply(&map, &Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn no_bias_option_solves_uncentered() {
        let (zb, za) = rand_pair(11, 50, 3, 2);
        let lambda = 0.5;
        let (map, _) = fit(&zb, &za, SolveOptions { lambda, bias: false }).unwrap();
        let direct = (zb.transpose() * &zb + Matrix::identity(3, 3) * lambda)
            .lu()
            .solve(&(zb.transpose() * &za))
            .unwrap();
        assert!(rel(&map.w, &direct) < 1e-10);
        assert_eq!(map.b.norm(), 0.0);
    }

    #[test]
    fn map_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (zb, za) = rand_pair(12, 30, 4, 3);
        let (mut map, _) = fit(&zb, &za, SolveOptions::default()).unwrap();
        map.source_model_id = "B".into();
        map.target_model_id = "A".into();
        let base = dir.path().join("out.map");
        map.save(&base).unwrap();
        assert!(dir.path().join("out.map.w.tns").exists());
        let back = AffineMap::load(&base).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn sweep_single_size_equals_fit() {
        let (zb, za) = rand_pair(13, 70, 4, 3);
        let reports = sweep_training_size(&zb, &za, SolveOptions::default(), &[70], 0.0).unwrap();
        let (_, full) = fit(&zb, &za, SolveOptions::default()).unwrap();
        assert_eq!(reports.len(), 1);
        assert!((reports[0].train_mse - full.train_mse).abs() <= 1e-12);
        assert!(reports[0].holdout_mse.is_none());
    }

    #[test]
    fn sweep_rejects_oversized() {
        let (zb, za) = rand_pair(14, 20, 2, 2);
        assert!(sweep_training_size(&zb, &za, SolveOptions::default(), &[5, 19], 0.2).is_err());
    }

    #[test]
    fn sweep_exact_recovery_noiseless() {
        let spec = SyntheticSpec {
            n: 400,
            latent_dim: 4,
            d_a: 6,
            d_b: 6,
            noise_std: 0.0,
            n_classes: 2,
            seed: 15,
            maps: MapKind::Random,
        };
        let (p, _) = synth_paired(&spec).unwrap();
        let sizes = [8, 16, 50, 200];
        let reports = sweep_training_size(&p.z_b, &p.z_a, SolveOptions::with_lambda(1e-9), &sizes, 0.25).unwrap();
        for r in &reports {
            assert!(
                r.holdout_mse.unwrap() <= 1e-9,
                "size {} mse {:?}",
                r.n_train,
                r.holdout_mse
            );
        }
        let got: Vec<usize> = reports.iter().map(|r| r.n_train).collect();
        assert_eq!(got, sizes);
    }

    #[test]
    fn sweep_noisy_holdout_roughly_monotone() {
        // Average over seeds so sampling noise stays well inside the 2x band.
        let sizes = [20, 40, 80, 160, 320];
        let mut mean = vec![0.0; sizes.len()];
        for seed in 0..8 {
            let spec = SyntheticSpec {
                n: 800,
                latent_dim: 6,
                d_a: 10,
                d_b: 10,
                noise_std: 0.5,
                n_classes: 2,
                seed: 100 + seed,
                maps: MapKind::Random,
            };
            let (p, _) = synth_paired(&spec).unwrap();
            let r = sweep_training_size(&p.z_b, &p.z_a, SolveOptions::default(), &sizes, 0.5).unwrap();
            for (m, rep) in mean.iter_mut().zip(&r) {
                *m += rep.holdout_mse.unwrap() / 8.0;
            }
        }
        for w in mean.windows(2) {
            assert!(w[1] <= 2.0 * w[0], "{mean:?}");
        }
        assert!(mean[sizes.len() - 1] < mean[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn shrinkage_is_monotone(seed in 0u64..1000, l1 in 1e-3f64..10.0, factor in 1.01f64..100.0) {
            let (zb, za) = rand_pair(seed, 40, 5, 3);
            let (m1, _) = fit(&zb, &za, SolveOptions::with_lambda(l1)).unwrap();
            let (m2, _) = fit(&zb, &za, SolveOptions::with_lambda(l1 * factor)).unwrap();
            prop_assert!(m1.w.norm() >= m2.w.norm() - 1e-12);
        }

        #[test]
        fn any_batching_matches_dense(seed in 0u64..1000, cut1 in 0usize..50, cut2 in 0usize..50) {
            let (zb, za) = rand_pair(seed, 50, 4, 3);
            let (a, b) = (cut1.min(cut2), cut1.max(cut2));
            let mut s = SufficientStats::new(4, 3);
            for (start, len) in [(0, a), (a, b - a), (b, 50 - b)] {
                s.accumulate(&zb.rows(start, len).into_owned(), &za.rows(start, len).into_owned()).unwrap();
            }
            let streamed = solve(&s, SolveOptions::with_lambda(0.1)).unwrap();
            let (dense, _) = fit(&zb, &za, SolveOptions::with_lambda(0.1)).unwrap();
            prop_assert!(rel(&streamed.w, &dense.w) < 1e-8);
        }
    }
}
