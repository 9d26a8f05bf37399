//! Representational similarity: linear CKA, SVCCA and mean pooling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{center_columns, column_means, select_rows, sorted_symmetric_eigen};
use crate::{Matrix, Vector};

/// Ridge added to covariance diagonals before whitening.
pub const CCA_RIDGE: f64 = 1e-8;
/// Eigenvalues below this fraction of the largest count as rank-deficient.
const RANK_TOL: f64 = 1e-10;

/// Arithmetic mean over token states (rows).
pub fn mean_pool(token_states: &Matrix) -> Result<Vector> {
    if token_states.nrows() == 0 {
        return Err(Error::InvalidArgument("cannot pool an empty sequence".into()));
    }
    Ok(column_means(token_states))
}

/// Linear CKA `‖AᵀB‖²_F / (‖AᵀA‖_F ‖BᵀB‖_F)` on column-centered inputs.
pub fn linear_cka(z_a: &Matrix, z_b: &Matrix) -> Result<f64> {
    if z_a.nrows() != z_b.nrows() {
        return Err(dim_err!("CKA inputs have {} and {} rows", z_a.nrows(), z_b.nrows()));
    }
    if z_a.nrows() < 2 {
        return Err(Error::InvalidArgument("CKA needs at least two samples".into()));
    }
    let a = center_columns(z_a);
    let b = center_columns(z_b);
    let cross = a.tr_mul(&b).norm_squared();
    let norm_a = a.tr_mul(&a).norm();
    let norm_b = b.tr_mul(&b).norm();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::Numerical("CKA undefined: a centered input is all zero".into()));
    }
    Ok((cross / (norm_a * norm_b)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvccaConfig {
    pub n_components: usize,
    pub n_repeats: usize,
    pub seed: u64,
    /// Fraction of rows held out for evaluation. `0.0` fits and evaluates on
    /// the same rows.
    pub eval_fraction: f64,
}

impl Default for SvccaConfig {
    fn default() -> Self {
        Self {
            n_components: 64,
            n_repeats: 3,
            seed: 0,
            eval_fraction: 1.0 / 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvccaReport {
    pub n_components: usize,
    /// Components actually used (smaller when either side is rank-deficient).
    pub retained_components: usize,
    pub rank_deficient: bool,
    /// Non-increasing, averaged over repeats.
    pub per_component_corrs: Vec<f64>,
    pub mean_corr: f64,
    pub median_corr: f64,
    pub shuffled_baseline_mean: f64,
}

struct Pca {
    mean: Vector,
    /// `d × c` projection.
    basis: Matrix,
    rank: usize,
}

fn fit_pca(x: &Matrix, n_components: usize) -> Pca {
    let mean = column_means(x);
    let xc = center_columns(x);
    let denom = (x.nrows().max(2) - 1) as f64;
    let cov = xc.tr_mul(&xc) / denom;
    let (vals, vecs) = sorted_symmetric_eigen(&cov);
    let top = vals.get(0).copied().unwrap_or(0.0).max(0.0);
    let rank = vals.iter().filter(|&&v| top > 0.0 && v > RANK_TOL * top).count();
    let c = n_components.min(vecs.ncols());
    Pca {
        mean,
        basis: vecs.columns(0, c).into_owned(),
        rank,
    }
}

impl Pca {
    fn project(&self, x: &Matrix, c: usize) -> Matrix {
        let mut xc = x.clone();
        for j in 0..xc.ncols() {
            xc.column_mut(j).add_scalar_mut(-self.mean[j]);
        }
        xc * self.basis.columns(0, c)
    }
}

/// `Σ^{-1/2}` of a symmetric positive-definite matrix.
fn inv_sqrt(sym: &Matrix) -> Matrix {
    let (vals, vecs) = sorted_symmetric_eigen(sym);
    let d = Vector::from_iterator(vals.len(), vals.iter().map(|&v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt()));
    &vecs * Matrix::from_diagonal(&d) * vecs.transpose()
}

/// Canonical directions `(a, b)` fitted on `x`, `y` (both `n × c`).
fn fit_cca(x: &Matrix, y: &Matrix) -> (Matrix, Matrix) {
    let xc = center_columns(x);
    let yc = center_columns(y);
    let denom = (x.nrows().max(2) - 1) as f64;
    let mut sxx = xc.tr_mul(&xc) / denom;
    let mut syy = yc.tr_mul(&yc) / denom;
    let sxy = xc.tr_mul(&yc) / denom;
    for i in 0..sxx.nrows() {
        sxx[(i, i)] += CCA_RIDGE;
    }
    for i in 0..syy.nrows() {
        syy[(i, i)] += CCA_RIDGE;
    }
    let wx = inv_sqrt(&sxx);
    let wy = inv_sqrt(&syy);
    let m = &wx * sxy * &wy;
    let svd = m.svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let c = order.len();
    let mut a = Matrix::zeros(wx.nrows(), c);
    let mut b = Matrix::zeros(wy.nrows(), c);
    let dir_a = &wx * &u;
    let dir_b = &wy * vt.transpose();
    for (dst, &src) in order.iter().enumerate() {
        a.set_column(dst, &dir_a.column(src));
        b.set_column(dst, &dir_b.column(src));
    }
    (a, b)
}

fn column_corr(u: &Matrix, v: &Matrix, j: usize) -> f64 {
    let n = u.nrows() as f64;
    let mu = u.column(j).sum() / n;
    let mv = v.column(j).sum() / n;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for i in 0..u.nrows() {
        let du = u[(i, j)] - mu;
        let dv = v[(i, j)] - mv;
        suv += du * dv;
        suu += du * du;
        svv += dv * dv;
    }
    if suu == 0.0 || svv == 0.0 {
        return 0.0;
    }
    (suv / (suu * svv).sqrt()).clamp(-1.0, 1.0)
}

struct SingleRun {
    corrs: Vec<f64>,
    retained: usize,
}

fn svcca_once(z_a: &Matrix, z_b: &Matrix, train: &[usize], eval: &[usize], n_components: usize) -> SingleRun {
    let a_tr = select_rows(z_a, train);
    let b_tr = select_rows(z_b, train);
    let pca_a = fit_pca(&a_tr, n_components);
    let pca_b = fit_pca(&b_tr, n_components);
    let c = n_components.min(pca_a.rank).min(pca_b.rank);
    if c == 0 {
        return SingleRun {
            corrs: Vec::new(),
            retained: 0,
        };
    }
    let x_tr = pca_a.project(&a_tr, c);
    let y_tr = pca_b.project(&b_tr, c);
    let (dir_a, dir_b) = fit_cca(&x_tr, &y_tr);
    let x_ev = pca_a.project(&select_rows(z_a, eval), c);
    let y_ev = pca_b.project(&select_rows(z_b, eval), c);
    let u = x_ev * dir_a;
    let v = y_ev * dir_b;
    // Canonical pairs are defined up to a joint sign flip.
    let mut corrs: Vec<f64> = (0..c).map(|j| column_corr(&u, &v, j).abs()).collect();
    corrs.sort_by(|a, b| b.total_cmp(a));
    SingleRun { corrs, retained: c }
}

fn median(sorted_desc: &[f64]) -> f64 {
    let n = sorted_desc.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted_desc[n / 2]
    } else {
        0.5 * (sorted_desc[n / 2 - 1] + sorted_desc[n / 2])
    }
}

/// SVCCA: per-side PCA to `n_components`, then CCA on the reduced features,
/// with correlations measured on held-out rows. The shuffled baseline runs
/// the same procedure after permuting the rows of `z_b`.
pub fn svcca(z_a: &Matrix, z_b: &Matrix, cfg: &SvccaConfig) -> Result<SvccaReport> {
    let n = z_a.nrows();
    if z_b.nrows() != n {
        return Err(dim_err!("SVCCA inputs have {} and {} rows", n, z_b.nrows()));
    }
    if cfg.n_components == 0 || cfg.n_repeats == 0 {
        return Err(Error::InvalidArgument(
            "n_components and n_repeats must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.eval_fraction) {
        return Err(Error::InvalidArgument(format!(
            "eval_fraction {} not in [0, 1)",
            cfg.eval_fraction
        )));
    }
    let n_eval = if cfg.eval_fraction == 0.0 {
        0
    } else {
        ((n as f64) * cfg.eval_fraction).round() as usize
    };
    let n_train = n - n_eval;
    if n_train < cfg.n_components + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n_train} training rows cannot support {} components",
            cfg.n_components
        )));
    }
    if n_eval > 0 && n_eval < 3 {
        return Err(Error::InvalidArgument("evaluation split needs at least 3 rows".into()));
    }

    let mut sum_corrs: Vec<f64> = Vec::new();
    let mut retained = usize::MAX;
    let mut shuffled_sum = 0.0;
    for r in 0..cfg.n_repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let (train, eval) = if n_eval == 0 {
            (perm.as_slice(), perm.as_slice())
        } else {
            perm.split_at(n_train)
        };
        let run = svcca_once(z_a, z_b, train, eval, cfg.n_components);

        let mut shuffle: Vec<usize> = (0..n).collect();
        shuffle.shuffle(&mut rng);
        let z_b_shuffled = select_rows(z_b, &shuffle);
        let null = svcca_once(z_a, &z_b_shuffled, train, eval, cfg.n_components);
        shuffled_sum += if null.corrs.is_empty() {
            0.0
        } else {
            null.corrs.iter().sum::<f64>() / null.corrs.len() as f64
        };

        retained = retained.min(run.retained);
        if sum_corrs.len() < run.corrs.len() {
            sum_corrs.resize(run.corrs.len(), 0.0);
        }
        for (s, c) in sum_corrs.iter_mut().zip(&run.corrs) {
            *s += c;
        }
    }
    sum_corrs.truncate(retained);
    if retained == 0 {
        return Err(Error::Numerical("both inputs must have non-zero variance".into()));
    }
    let reps = cfg.n_repeats as f64;
    let mut per_component: Vec<f64> = sum_corrs.iter().map(|s| s / reps).collect();
    per_component.sort_by(|a, b| b.total_cmp(a));
    let mean_corr = per_component.iter().sum::<f64>() / per_component.len() as f64;
    Ok(SvccaReport {
        n_components: cfg.n_components,
        retained_components: retained,
        rank_deficient: retained < cfg.n_components,
        median_corr: median(&per_component),
        per_component_corrs: per_component,
        mean_corr,
        shuffled_baseline_mean: shuffled_sum / reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, random_orthogonal};
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn mean_pool_cases() {
        let v = Matrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert_eq!(mean_pool(&v).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        let copies = Matrix::from_row_slice(3, 2, &[4.0, -1.0, 4.0, -1.0, 4.0, -1.0]);
        assert_eq!(mean_pool(&copies).unwrap().as_slice(), &[4.0, -1.0]);
        let e = Matrix::identity(2, 2);
        assert_eq!(mean_pool(&e).unwrap().as_slice(), &[0.5, 0.5]);
        assert!(mean_pool(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn cka_self_is_one() {
        let z = gaussian_matrix(&mut rng(1), 50, 7);
        assert!((linear_cka(&z, &z).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn cka_hand_case_matches_scalar_formula() {
        let a = Matrix::from_row_slice(4, 2, &[1.0, 2.0, 0.0, 1.0, 3.0, -1.0, 2.0, 0.5]);
        let b = Matrix::from_row_slice(4, 2, &[0.5, 1.0, -1.0, 2.0, 1.0, 0.0, 4.0, 1.0]);
        // Scalar-loop oracle.
        let center = |m: &Matrix| {
            let mut out = [[0.0f64; 2]; 4];
            for j in 0..2 {
                let mu: f64 = (0..4).map(|i| m[(i, j)]).sum::<f64>() / 4.0;
                for (i, row) in out.iter_mut().enumerate() {
                    row[j] = m[(i, j)] - mu;
                }
            }
            out
        };
        let (ca, cb) = (center(&a), center(&b));
        let gram = |x: &[[f64; 2]; 4], y: &[[f64; 2]; 4]| {
            let mut s = 0.0;
            for p in 0..2 {
                for q in 0..2 {
                    let mut e = 0.0;
                    for i in 0..4 {
                        e += x[i][p] * y[i][q];
                    }
                    s += e * e;
                }
            }
            s
        };
        let expected = gram(&ca, &cb) / (gram(&ca, &ca).sqrt() * gram(&cb, &cb).sqrt());
        assert!((linear_cka(&a, &b).unwrap() - expected).abs() <= 1e-12);
    }

    #[test]
    fn cka_errors() {
        let z = Matrix::from_element(5, 2, 3.0);
        let w = gaussian_matrix(&mut rng(2), 5, 2);
        assert!(matches!(linear_cka(&z, &w), Err(Error::Numerical(_))));
        assert!(linear_cka(&w, &Matrix::zeros(4, 2)).is_err());
        assert!(linear_cka(&w.rows(0, 1).into_owned(), &w.rows(0, 1).into_owned()).is_err());
    }

    #[test]
    fn svcca_identical_is_one() {
        let z = gaussian_matrix(&mut rng(3), 200, 6);
        let cfg = SvccaConfig {
            n_components: 4,
            n_repeats: 2,
            seed: 1,
            eval_fraction: 0.25,
        };
        let rep = svcca(&z, &z, &cfg).unwrap();
        assert_eq!(rep.per_component_corrs.len(), 4);
        for c in &rep.per_component_corrs {
            assert!((c - 1.0).abs() <= 1e-6, "{c}");
        }
        assert!(rep.shuffled_baseline_mean < 0.5);
    }

    #[test]
    fn svcca_invertible_map_invariance() {
        let z = gaussian_matrix(&mut rng(4), 300, 5);
        // Well-conditioned invertible R: identity plus a small perturbation.
        let r = Matrix::identity(5, 5) + gaussian_matrix(&mut rng(5), 5, 5) * 0.2;
        let sv = crate::linalg::singular_values(&r);
        assert!(sv[0] / sv[4] < 10.0, "R conditioning {sv:?}");
        let cfg = SvccaConfig {
            n_components: 5,
            n_repeats: 1,
            seed: 2,
            eval_fraction: 0.2,
        };
        let rep = svcca(&z, &(&z * r), &cfg).unwrap();
        assert!((rep.mean_corr - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn svcca_rank_deficiency_flagged() {
        let base = gaussian_matrix(&mut rng(6), 100, 3);
        // Six columns spanning only three directions.
        let lift = gaussian_matrix(&mut rng(7), 3, 6);
        let z = &base * lift;
        let cfg = SvccaConfig {
            n_components: 5,
            n_repeats: 1,
            seed: 0,
            eval_fraction: 0.0,
        };
        let rep = svcca(&z, &z, &cfg).unwrap();
        assert!(rep.rank_deficient);
        assert_eq!(rep.retained_components, 3);
    }

    #[test]
    fn svcca_too_few_rows() {
        let z = gaussian_matrix(&mut rng(8), 10, 3);
        let cfg = SvccaConfig {
            n_components: 64,
            ..SvccaConfig::default()
        };
        assert!(svcca(&z, &z, &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cka_symmetric_and_invariant(seed in 0u64..10_000, scale in 0.01f64..100.0) {
            let mut r = rng(seed);
            let a = gaussian_matrix(&mut r, 30, 4);
            let b = gaussian_matrix(&mut r, 30, 6);
            let ab = linear_cka(&a, &b).unwrap();
            let ba = linear_cka(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            let q = random_orthogonal(&mut r, 4);
            let rotated = (&a * q) * scale;
            prop_assert!((linear_cka(&rotated, &a).unwrap() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn svcca_corrs_sorted_in_unit_interval(seed in 0u64..1000) {
            let mut r = rng(seed);
            let a = gaussian_matrix(&mut r, 80, 5);
            let b = &a * gaussian_matrix(&mut r, 5, 4) + gaussian_matrix(&mut r, 80, 4);
            let cfg = SvccaConfig { n_components: 3, n_repeats: 2, seed, eval_fraction: 0.25 };
            let rep = svcca(&a, &b, &cfg).unwrap();
            for w in rep.per_component_corrs.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            for c in &rep.per_component_corrs {
                prop_assert!((0.0..=1.0).contains(c));
            }
        }
    }
}
