//! Membership inference against a released map, using shadow mappers.
//!
//! Feature layout of [`wstar_features`] (76 entries):
//!
//! | index  | feature                                        |
//! |--------|------------------------------------------------|
//! | 0      | ‖W‖_F                                          |
//! | 1      | spectral norm (power iteration)                |
//! | 2, 3   | mean, std of the per-row means                 |
//! | 4, 5   | mean, std of the per-row stds                  |
//! | 6, 7   | mean, std of the per-column means              |
//! | 8, 9   | mean, std of the per-column stds               |
//! | 10..74 | top 64 singular values, zero-padded            |
//! | 74     | effective rank                                 |
//! | 75     | ‖b‖₂                                           |

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{solve, AffineMap, SolveOptions, SufficientStats, DEFAULT_LAMBDA};
use crate::classifier_ood::{accuracy, predict, train_head, HeadConfig};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{gaussian_matrix, select_rows, singular_values};
use crate::tensor_store::SyntheticWorld;
use crate::{Matrix, Vector};

pub const N_SINGULAR: usize = 64;
pub const N_FEATURES: usize = 12 + N_SINGULAR;

const POWER_ITERS: usize = 200;
const POWER_TOL: f64 = 1e-8;

/// Largest singular value by power iteration on `WᵀW`.
pub fn spectral_norm(w: &Matrix) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = gaussian_matrix(&mut rng, w.ncols(), 1).column(0).into_owned();
    let n = v.norm();
    v /= n;
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERS {
        let u = w * &v;
        let next = (&u).norm();
        let mut v_new = w.tr_mul(&u);
        let vn = v_new.norm();
        if vn == 0.0 {
            return 0.0;
        }
        v_new /= vn;
        v = v_new;
        let done = (next - sigma).abs() <= POWER_TOL * next;
        sigma = next;
        if done {
            break;
        }
    }
    sigma.max((w * &v).norm())
}

/// `exp(−Σ pᵢ log pᵢ)` with `pᵢ = σᵢ / Σσ`; zero for the zero matrix.
pub fn effective_rank(singular: &[f64]) -> f64 {
    let total: f64 = singular.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = singular
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn wstar_features(map: &AffineMap) -> Vec<f64> {
    let w = &map.w;
    let mut f = Vec::with_capacity(N_FEATURES);
    f.push(w.norm());
    f.push(spectral_norm(w));
    let rows: Vec<(f64, f64)> = w.row_iter().map(|r| mean_std(r.iter().copied())).collect();
    let cols: Vec<(f64, f64)> = w.column_iter().map(|c| mean_std(c.iter().copied())).collect();
    for stats in [&rows, &cols] {
        let (a, b) = mean_std(stats.iter().map(|s| s.0));
        let (c, d) = mean_std(stats.iter().map(|s| s.1));
        f.extend([a, b, c, d]);
    }
    let sv = singular_values(w);
    f.extend((0..N_SINGULAR).map(|i| sv.get(i).copied().unwrap_or(0.0)));
    f.push(effective_rank(&sv));
    f.push(map.b.norm());
    debug_assert_eq!(f.len(), N_FEATURES);
    f
}

/// Advantage bound `√(d_A·d_B)/N` (constant 1). For (1024, 1152, 67000)
/// the implied best attack accuracy is about 0.516.
pub fn theoretical_bound(d_a: usize, d_b: usize, n: usize) -> f64 {
    ((d_a as f64) * (d_b as f64)).sqrt() / n as f64
}

/// Best achievable accuracy implied by [`theoretical_bound`].
pub fn max_attack_accuracy(d_a: usize, d_b: usize, n: usize) -> f64 {
    (0.5 + theoretical_bound(d_a, d_b, n)).min(1.0)
}

/// Paired samples from one party's point of view: source rows and target rows.
#[derive(Debug, Clone)]
pub struct PairedPool {
    pub z_b: Matrix,
    pub z_a: Matrix,
}

impl PairedPool {
    pub fn new(z_b: Matrix, z_a: Matrix) -> Result<Self> {
        if z_b.nrows() != z_a.nrows() {
            return Err(dim_err!("pool rows differ: {} vs {}", z_b.nrows(), z_a.nrows()));
        }
        Ok(Self { z_b, z_a })
    }

    pub fn len(&self) -> usize {
        self.z_b.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiaConfig {
    pub n_shadow_in: usize,
    pub n_shadow_out: usize,
    pub id_subset_size: usize,
    /// Row of the ID pool whose membership is attacked.
    pub target_index: usize,
    pub lambda: f64,
    pub folds: usize,
    pub seed: u64,
    /// Never place the target in any shadow set; IN/OUT labels become
    /// meaningless and the attack should sit at chance.
    #[serde(default)]
    pub null: bool,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self {
            n_shadow_in: 100,
            n_shadow_out: 100,
            id_subset_size: 128,
            target_index: 0,
            lambda: DEFAULT_LAMBDA,
            folds: 5,
            seed: 0,
            null: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub fold_accuracies: Vec<f64>,
    /// Advantage bound for the shadow training-set size.
    pub theoretical_bound: f64,
    pub max_accuracy_bound: f64,
    pub feature_importances: Vec<f64>,
    pub n_train_per_shadow: usize,
}

fn draw_subset(rng: &mut ChaCha8Rng, pool_len: usize, target: usize, size: usize, include: bool) -> Vec<usize> {
    let mut others: Vec<usize> = (0..pool_len).filter(|&i| i != target).collect();
    others.shuffle(rng);
    let take = if include { size - 1 } else { size };
    let mut idx: Vec<usize> = others[..take].to_vec();
    if include {
        idx.push(target);
    }
    idx
}

/// Trains the shadow maps and returns `(features, labels)`, one row per
/// shadow (label 1 = target included).
pub fn shadow_features(cfg: &MiaConfig, public: &PairedPool, id: &PairedPool) -> Result<(Matrix, Vec<usize>)> {
    if cfg.id_subset_size == 0 || id.len() < cfg.id_subset_size + 1 {
        return Err(Error::InvalidArgument(format!(
            "ID pool of {} rows cannot supply subsets of {} that exclude the target",
            id.len(),
            cfg.id_subset_size
        )));
    }
    if cfg.target_index >= id.len() {
        return Err(Error::InvalidArgument(format!(
            "target index {} outside the ID pool",
            cfg.target_index
        )));
    }
    if public.z_b.ncols() != id.z_b.ncols() || public.z_a.ncols() != id.z_a.ncols() {
        return Err(dim_err!("public and ID pools have different dimensions"));
    }
    let mut base = SufficientStats::new(public.z_b.ncols(), public.z_a.ncols());
    base.accumulate(&public.z_b, &public.z_a)?;
    let opts = SolveOptions::with_lambda(cfg.lambda);
    let total = cfg.n_shadow_in + cfg.n_shadow_out;
    let mut feats = Matrix::zeros(total, N_FEATURES);
    let mut labels = Vec::with_capacity(total);
    for s in 0..total {
        let member = s < cfg.n_shadow_in;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s as u64);
        let idx = draw_subset(
            &mut rng,
            id.len(),
            cfg.target_index,
            cfg.id_subset_size,
            member && !cfg.null,
        );
        let mut stats = base.clone();
        stats.accumulate(&select_rows(&id.z_b, &idx), &select_rows(&id.z_a, &idx))?;
        let f = wstar_features(&solve(&stats, opts)?);
        feats.set_row(s, &nalgebra::RowDVector::from_vec(f));
        labels.push(member as usize);
    }
    Ok((feats, labels))
}

fn zscore_params(x: &Matrix) -> (Vector, Vector) {
    let n = x.nrows() as f64;
    let mut mean = Vector::zeros(x.ncols());
    let mut std = Vector::zeros(x.ncols());
    for (j, col) in x.column_iter().enumerate() {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[j] = m;
        std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    (mean, std)
}

fn zscore(x: &Matrix, mean: &Vector, std: &Vector) -> Matrix {
    Matrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - mean[j]) / std[j])
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0; labels.len()];
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    for class in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assign[i] = pos % folds;
        }
    }
    assign
}

/// Cross-validated logistic attack on shadow features.
pub fn attack(features: &Matrix, labels: &[usize], folds: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    for class in 0..2 {
        let count = labels.iter().filter(|&&l| l == class).count();
        if count < folds {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {count} shadows for {folds} folds"
            )));
        }
    }
    let assign = stratified_folds(labels, folds, seed ^ 0xf01d);
    let cfg = HeadConfig::default();
    let mut accs = Vec::with_capacity(folds);
    for k in 0..folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| assign[i] != k).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| assign[i] == k).collect();
        let xtr = select_rows(features, &train);
        let (mean, std) = zscore_params(&xtr);
        let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let head = train_head(&zscore(&xtr, &mean, &std), &ytr, 2, &cfg)?;
        let xte = zscore(&select_rows(features, &test), &mean, &std);
        let yte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        accs.push(accuracy(&predict(&head, &xte)?, &yte)?);
    }
    let (mean, std) = zscore_params(features);
    let head = train_head(&zscore(features, &mean, &std), labels, 2, &cfg)?;
    let importances = head.v.row_iter().map(|r| (r[1] - r[0]).abs()).collect();
    Ok((accs, importances))
}

pub fn shadow_experiment(cfg: &MiaConfig, public: &PairedPool, id: &PairedPool) -> Result<MiaReport> {
    if cfg.folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    let (feats, labels) = shadow_features(cfg, public, id)?;
    let (accs, importances) = attack(&feats, &labels, cfg.folds, cfg.seed)?;
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let std = (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let n_train = public.len() + cfg.id_subset_size;
    let (d_b, d_a) = (public.z_b.ncols(), public.z_a.ncols());
    Ok(MiaReport {
        accuracy_mean: mean,
        accuracy_std: std,
        fold_accuracies: accs,
        theoretical_bound: theoretical_bound(d_a, d_b, n_train),
        max_accuracy_bound: max_attack_accuracy(d_a, d_b, n_train),
        feature_importances: importances,
        n_train_per_shadow: n_train,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluencePoint {
    pub n: usize,
    pub mean_influence: f64,
    /// `mean_influence · √n`.
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub points: Vec<InfluencePoint>,
    /// Slope of log(influence) against log(n).
    pub fitted_exponent: f64,
    /// Largest relative deviation of a scaled value from their mean.
    pub max_relative_deviation: f64,
}

/// Leave-one-out change `‖W_with − W_without‖_F`, averaged over random
/// removals, for each training size.
pub fn influence_scaling(
    world: &SyntheticWorld,
    sizes: &[usize],
    removals: usize,
    lambda: f64,
    seed: u64,
) -> Result<InfluenceReport> {
    if sizes.len() < 2 || removals == 0 {
        return Err(Error::InvalidArgument("need at least two sizes and one removal".into()));
    }
    let opts = SolveOptions::with_lambda(lambda);
    let mut points = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let pair = world.draw(n, n as u64);
        let mut stats = SufficientStats::new(pair.z_b.ncols(), pair.z_a.ncols());
        stats.accumulate(&pair.z_b, &pair.z_a)?;
        let full = solve(&stats, opts)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in order.iter().take(removals) {
            let (rb, ra) = (select_rows(&pair.z_b, &[i]), select_rows(&pair.z_a, &[i]));
            let mut loo = stats.clone();
            loo.retract(&rb, &ra)?;
            total += (&full.w - solve(&loo, opts)?.w).norm();
        }
        let mean = total / removals.min(n) as f64;
        points.push(InfluencePoint {
            n,
            mean_influence: mean,
            scaled: mean * (n as f64).sqrt(),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_influence.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let c_mean = points.iter().map(|p| p.scaled).sum::<f64>() / points.len() as f64;
    let max_dev = points
        .iter()
        .map(|p| (p.scaled - c_mean).abs() / c_mean)
        .fold(0.0, f64::max);
    Ok(InfluenceReport {
        points,
        fitted_exponent: sxy / sxx,
        max_relative_deviation: max_dev,
    })
}
