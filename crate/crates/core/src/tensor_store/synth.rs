use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, random_orthonormal_rows};
use crate::Matrix;

/// How the latent-to-embedding maps are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    /// Haar-random orthonormal rows.
    #[default]
    Random,
    /// The first `k` rows of the identity.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub latent_dim: usize,
    pub d_a: usize,
    pub d_b: usize,
    pub noise_std: f64,
    pub n_classes: usize,
    pub seed: u64,
    #[serde(default)]
    pub maps: MapKind,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.latent_dim > self.d_a.min(self.d_b) {
            return Err(Error::InvalidArgument(format!(
                "latent_dim {} must be in [1, min(d_a, d_b) = {}]",
                self.latent_dim,
                self.d_a.min(self.d_b)
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_std {} must be >= 0",
                self.noise_std
            )));
        }
        if self.n_classes == 0 {
            return Err(Error::InvalidArgument("n_classes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Planted structure: `Z_A = L·m_a + ε`, `Z_B = L·m_b + ε`,
/// labels `argmax(L·teacher)`. `m_a` and `m_b` are `k × d` with
/// orthonormal rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub m_a: Matrix,
    pub m_b: Matrix,
    pub teacher: Matrix,
}

impl GroundTruth {
    /// The exact noiseless source-to-target map `m_b⁺ m_a`.
    pub fn planted_map(&self) -> Matrix {
        // Orthonormal rows: the pseudoinverse is the transpose.
        self.m_b.transpose() * &self.m_a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub z_a: Matrix,
    pub z_b: Matrix,
    pub labels: Vec<usize>,
    pub latent: Matrix,
}

/// Fixed ground truth from which any number of independent splits can be
/// drawn. Each draw uses its own ChaCha stream, so splits do not depend on
/// the order they are generated in.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    spec: SyntheticSpec,
    truth: GroundTruth,
}

const TRUTH_STREAM: u64 = u64::MAX;

impl SyntheticWorld {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(TRUTH_STREAM);
        let k = spec.latent_dim;
        let (m_a, m_b) = match spec.maps {
            MapKind::Random => (
                random_orthonormal_rows(&mut rng, k, spec.d_a),
                random_orthonormal_rows(&mut rng, k, spec.d_b),
            ),
            MapKind::Identity => (Matrix::identity(k, spec.d_a), Matrix::identity(k, spec.d_b)),
        };
        let teacher = gaussian_matrix(&mut rng, k, spec.n_classes);
        Ok(Self {
            spec: spec.clone(),
            truth: GroundTruth { m_a, m_b, teacher },
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(stream);
        rng
    }

    fn noise(&self, rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let s = self.spec.noise_std;
        if s == 0.0 {
            return Matrix::zeros(rows, cols);
        }
        Matrix::from_fn(rows, cols, |_, _| s * rng.sample::<f64, _>(StandardNormal))
    }

    fn labels_for(&self, latent: &Matrix) -> Vec<usize> {
        let logits = latent * &self.truth.teacher;
        (0..logits.nrows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Draws `n` in-distribution pairs from `stream`.
    pub fn draw(&self, n: usize, stream: u64) -> SyntheticPair {
        self.draw_shifted(n, stream, 0.0)
    }

    /// Draws pairs whose source-side view is rotated by `degrees` in every
    /// consecutive latent coordinate plane. The target side and labels are
    /// unaffected, so a map fitted on such data is biased for unshifted data.
    pub fn draw_shifted(&self, n: usize, stream: u64, degrees: f64) -> SyntheticPair {
        let mut rng = self.rng(stream);
        let k = self.spec.latent_dim;
        let latent = gaussian_matrix(&mut rng, n, k);
        let eps_a = self.noise(&mut rng, n, self.spec.d_a);
        let eps_b = self.noise(&mut rng, n, self.spec.d_b);
        let z_a = &latent * &self.truth.m_a + eps_a;
        let src_latent = if degrees == 0.0 {
            latent.clone()
        } else {
            &latent * plane_rotation(k, degrees.to_radians())
        };
        let z_b = src_latent * &self.truth.m_b + eps_b;
        let labels = self.labels_for(&latent);
        SyntheticPair {
            z_a,
            z_b,
            labels,
            latent,
        }
    }

    /// Low-evidence inputs: latent scaled towards the origin by `scale`, so
    /// class logits are small and the energy score is high.
    pub fn draw_ood(&self, n: usize, stream: u64, scale: f64) -> SyntheticPair {
        let mut p = self.draw(n, stream);
        let mut rng = self.rng(stream ^ 0x00d0_00d0);
        let latent = p.latent.scale(scale);
        p.z_a = &latent * &self.truth.m_a + self.noise(&mut rng, n, self.spec.d_a);
        p.z_b = &latent * &self.truth.m_b + self.noise(&mut rng, n, self.spec.d_b);
        p.labels = self.labels_for(&latent);
        p.latent = latent;
        p
    }
}

/// Block-diagonal Givens rotation acting on coordinate planes (0,1), (2,3), …
fn plane_rotation(k: usize, theta: f64) -> Matrix {
    let mut r = Matrix::identity(k, k);
    let (s, c) = theta.sin_cos();
    for p in (0..k.saturating_sub(1)).step_by(2) {
        r[(p, p)] = c;
        r[(p, p + 1)] = s;
        r[(p + 1, p)] = -s;
        r[(p + 1, p + 1)] = c;
    }
    r
}

/// Generates `spec.n` pairs along with the ground truth.
pub fn synth_paired(spec: &SyntheticSpec) -> Result<(SyntheticPair, GroundTruth)> {
    let world = SyntheticWorld::new(spec)?;
    let pair = world.draw(spec.n, 0);
    Ok((pair, world.truth.clone()))
}
