use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::arith::{automorphism_index, Modulus, NttTable};
use crate::encoding::Encoder;
use crate::error::{HeError, Result};
use crate::keys::{
    GaloisKeys, KeyMaterial, Poly, PublicInner, PublicKey, PublicMaterial, SecretInner, SecretKey, SwitchKey,
};
use crate::params::EncryptionParams;

pub const ERROR_STD: f64 = 3.2;
const ERROR_BOUND: f64 = 6.0 * ERROR_STD;

/// Relative tolerance when matching operand scales.
const SCALE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CtData {
    Rns { c0: Poly, c1: Poly },
    Clear(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ciphertext {
    pub(crate) level: usize,
    pub(crate) scale: f64,
    /// Plaintext multiplications applied so far.
    pub(crate) depth: usize,
    pub(crate) data: CtData,
}

impl Ciphertext {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.data, CtData::Clear(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum PtData {
    Rns(Poly),
    Clear(Vec<f64>),
}

/// An encoded (unencrypted) vector at a given level and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Plaintext {
    pub(crate) level: usize,
    pub(crate) scale: f64,
    pub(crate) len: usize,
    pub(crate) data: PtData,
}

impl Plaintext {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Length of the vector that was encoded.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Encoder, key generator, encryptor and evaluator for one parameter set.
///
/// With [`SecurityLevel::Mock`](crate::SecurityLevel::Mock) parameters the
/// same API holds cleartext slots while tracking level, scale and depth
/// exactly as the lattice scheme does.
#[derive(Debug)]
pub struct HeBackend {
    params: EncryptionParams,
    /// Data primes bottom-up, then the special prime.
    tables: Vec<NttTable>,
    encoder: Encoder,
    /// `garner[i][j] = q_j⁻¹ mod q_i` for `j < i`.
    garner: Vec<Vec<u64>>,
    decrypts: AtomicU64,
}

impl HeBackend {
    pub fn new(params: EncryptionParams) -> Self {
        let n = params.ring_degree;
        let mut primes = params.data_primes().to_vec();
        primes.push(params.special_prime());
        let tables: Vec<NttTable> = primes.iter().map(|&q| NttTable::new(q, n)).collect();
        let garner = (0..primes.len() - 1)
            .map(|i| (0..i).map(|j| tables[i].modulus.inv(primes[j] % primes[i])).collect())
            .collect();
        Self {
            encoder: Encoder::new(n),
            params,
            tables,
            garner,
            decrypts: AtomicU64::new(0),
        }
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        Ok(Self::new(EncryptionParams::preset(name)?))
    }

    pub fn params(&self) -> &EncryptionParams {
        &self.params
    }

    pub fn slot_count(&self) -> usize {
        self.params.slot_count()
    }

    pub fn is_mock(&self) -> bool {
        self.params.is_mock()
    }

    /// Number of successful [`decrypt`](Self::decrypt) calls on this instance.
    pub fn decrypt_count(&self) -> u64 {
        self.decrypts.load(Ordering::Relaxed)
    }

    fn n(&self) -> usize {
        self.params.ring_degree
    }

    fn special(&self) -> usize {
        self.tables.len() - 1
    }

    fn modulus(&self, i: usize) -> &Modulus {
        &self.tables[i].modulus
    }

    /// `{1, 2, 4, …, slots/2}`.
    pub fn power_of_two_rotations(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut k = 1;
        while k < self.slot_count() {
            out.push(k);
            k *= 2;
        }
        out
    }

    // ---- sampling -------------------------------------------------------

    fn sample_ternary<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i64> {
        (0..self.n()).map(|_| rng.random_range(-1..=1)).collect()
    }

    fn sample_error<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i64> {
        let normal = Normal::new(0.0, ERROR_STD).unwrap();
        (0..self.n())
            .map(|_| normal.sample(rng).clamp(-ERROR_BOUND, ERROR_BOUND).round() as i64)
            .collect()
    }

    fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, primes: &[usize]) -> Poly {
        primes
            .iter()
            .map(|&i| {
                let q = self.modulus(i).value();
                (0..self.n()).map(|_| rng.random_range(0..q)).collect()
            })
            .collect()
    }

    /// NTT form of a small signed polynomial over the given primes.
    fn small_to_ntt(&self, coeffs: &[i64], primes: &[usize]) -> Poly {
        primes
            .iter()
            .map(|&i| {
                let m = self.modulus(i);
                let mut r: Vec<u64> = coeffs.iter().map(|&c| m.from_i64(c)).collect();
                self.tables[i].forward(&mut r);
                r
            })
            .collect()
    }

    // ---- keys -----------------------------------------------------------

    /// Generates a key set with rotation keys for `rotations` (left steps).
    pub fn keygen<R: Rng + ?Sized>(&self, rng: &mut R, rotations: &[usize]) -> Result<KeyMaterial> {
        let key_id: u64 = rng.random();
        let steps: Vec<usize> = rotations
            .iter()
            .map(|&k| k % self.slot_count())
            .filter(|&k| k != 0)
            .collect();
        if self.is_mock() {
            let keys = steps.into_iter().map(|k| (k, SwitchKey::Mock)).collect();
            return Ok(KeyMaterial {
                secret: SecretKey {
                    key_id,
                    inner: SecretInner::Mock,
                },
                public: PublicMaterial {
                    public_key: PublicKey {
                        key_id,
                        inner: PublicInner::Mock,
                    },
                    galois_keys: GaloisKeys { key_id, keys },
                },
            });
        }
        let all: Vec<usize> = (0..self.tables.len()).collect();
        let data: Vec<usize> = (0..self.special()).collect();
        let s_coeffs = self.sample_ternary(rng);
        let s_ntt = self.small_to_ntt(&s_coeffs, &all);

        let a = self.sample_uniform(rng, &data);
        let e = self.small_to_ntt(&self.sample_error(rng), &data);
        let b = self.neg_a_s_plus_e(&a, &s_ntt, &e, &data);

        let mut keys = BTreeMap::new();
        for k in steps {
            let g = self.encoder.galois_element(k);
            let rotated = self.automorphism_coeffs(&s_coeffs, g);
            let target = self.small_to_ntt(&rotated, &all);
            keys.insert(k, self.switch_key(rng, &s_ntt, &target));
        }
        Ok(KeyMaterial {
            secret: SecretKey {
                key_id,
                inner: SecretInner::Real { ntt: s_ntt },
            },
            public: PublicMaterial {
                public_key: PublicKey {
                    key_id,
                    inner: PublicInner::Real { b, a },
                },
                galois_keys: GaloisKeys { key_id, keys },
            },
        })
    }

    /// Deterministic keys for a fixed seed, OS entropy otherwise.
    pub fn keygen_seeded(&self, seed: Option<u64>, rotations: &[usize]) -> Result<KeyMaterial> {
        let mut rng = match seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s),
            None => ChaCha20Rng::from_os_rng(),
        };
        self.keygen(&mut rng, rotations)
    }

    fn neg_a_s_plus_e(&self, a: &Poly, s: &Poly, e: &Poly, primes: &[usize]) -> Poly {
        primes
            .iter()
            .enumerate()
            .map(|(r, &i)| {
                let m = self.modulus(i);
                (0..self.n()).map(|k| m.sub(e[r][k], m.mul(a[r][k], s[i][k]))).collect()
            })
            .collect()
    }

    fn switch_key<R: Rng + ?Sized>(&self, rng: &mut R, s: &Poly, target: &Poly) -> SwitchKey {
        let all: Vec<usize> = (0..self.tables.len()).collect();
        let p = self.params.special_prime();
        let digits = (0..self.special())
            .map(|d| {
                let a = self.sample_uniform(rng, &all);
                let e = self.small_to_ntt(&self.sample_error(rng), &all);
                let mut b = self.neg_a_s_plus_e(&a, s, &e, &all);
                let m = self.modulus(d);
                let pf = m.reduce(p);
                for k in 0..self.n() {
                    b[d][k] = m.add(b[d][k], m.mul(pf, target[d][k]));
                }
                (b, a)
            })
            .collect();
        SwitchKey::Real(digits)
    }

    // ---- encoding -------------------------------------------------------

    fn check_values(&self, values: &[f64]) -> Result<()> {
        if values.len() > self.slot_count() {
            return Err(HeError::Capacity {
                len: values.len(),
                slots: self.slot_count(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HeError::InvalidArgument("non-finite value".into()));
        }
        Ok(())
    }

    fn level_bits(&self, level: usize) -> f64 {
        self.params.data_primes()[..=level]
            .iter()
            .map(|&q| (q as f64).log2())
            .sum()
    }

    /// Encodes `values` at `level` and `scale`.
    pub fn encode(&self, values: &[f64], level: usize, scale: f64) -> Result<Plaintext> {
        self.check_values(values)?;
        if level > self.params.top_level() {
            return Err(HeError::InvalidArgument(format!("level {level} above the chain")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(HeError::InvalidArgument(format!("scale {scale}")));
        }
        let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs())) * scale;
        if peak > 0.0 && peak.log2() >= self.level_bits(level) - 2.0 {
            return Err(HeError::Overflow(peak));
        }
        let data = if self.is_mock() {
            let mut v = values.to_vec();
            v.resize(self.slot_count(), 0.0);
            PtData::Clear(v)
        } else {
            let coeffs = self.encoder.embed_inverse(values, scale);
            PtData::Rns(self.coeffs_to_ntt(&coeffs, level))
        };
        Ok(Plaintext {
            level,
            scale,
            len: values.len(),
            data,
        })
    }

    /// Encodes at the default scale and the top level.
    pub fn encode_default(&self, values: &[f64]) -> Result<Plaintext> {
        self.encode(values, self.params.top_level(), self.params.scale())
    }

    fn coeffs_to_ntt(&self, coeffs: &[f64], level: usize) -> Poly {
        (0..=level)
            .map(|i| {
                let m = self.modulus(i);
                let mut r: Vec<u64> = coeffs.iter().map(|&c| f64_residue(c.round(), m)).collect();
                self.tables[i].forward(&mut r);
                r
            })
            .collect()
    }

    /// Slot values of an encoded vector, truncated to its original length.
    pub fn decode(&self, pt: &Plaintext) -> Vec<f64> {
        let mut out = match &pt.data {
            PtData::Clear(v) => v.clone(),
            PtData::Rns(poly) => {
                let coeffs = self.crt_coeffs(poly.clone(), pt.level);
                self.encoder.embed(&coeffs, pt.scale)
            }
        };
        out.truncate(pt.len);
        out
    }

    /// Centered integer coefficients (as f64) of an NTT-form polynomial.
    fn crt_coeffs(&self, mut poly: Poly, level: usize) -> Vec<f64> {
        for (i, r) in poly.iter_mut().enumerate().take(level + 1) {
            self.tables[i].inverse(r);
        }
        let primes = self.params.data_primes();
        let mut out = vec![0.0; self.n()];
        let mut digits = vec![0i64; level + 1];
        for (k, o) in out.iter_mut().enumerate() {
            for i in 0..=level {
                let m = self.modulus(i);
                let mut y = poly[i][k];
                for j in 0..i {
                    y = m.mul(m.sub(y, m.from_i64(digits[j])), self.garner[i][j]);
                }
                digits[i] = m.center(y);
            }
            let mut acc = 0.0;
            let mut radix = 1.0;
            for i in 0..=level {
                acc += digits[i] as f64 * radix;
                radix *= primes[i] as f64;
            }
            *o = acc;
        }
        out
    }

    // ---- encryption -----------------------------------------------------

    pub fn encrypt<R: Rng + ?Sized>(&self, pk: &PublicKey, values: &[f64], rng: &mut R) -> Result<Ciphertext> {
        let pt = self.encode_default(values)?;
        self.encrypt_plain(pk, &pt, rng)
    }

    pub fn encrypt_plain<R: Rng + ?Sized>(&self, pk: &PublicKey, pt: &Plaintext, rng: &mut R) -> Result<Ciphertext> {
        if pt.level != self.params.top_level() {
            return Err(HeError::Mismatch("only top-level plaintexts can be encrypted".into()));
        }
        let data = match (&pk.inner, &pt.data) {
            (PublicInner::Mock, PtData::Clear(v)) => CtData::Clear(v.clone()),
            (PublicInner::Real { b, a }, PtData::Rns(m)) => {
                let primes: Vec<usize> = (0..=pt.level).collect();
                let u = self.small_to_ntt(&self.sample_ternary(rng), &primes);
                let e0 = self.small_to_ntt(&self.sample_error(rng), &primes);
                let e1 = self.small_to_ntt(&self.sample_error(rng), &primes);
                let mut c0 = Vec::with_capacity(primes.len());
                let mut c1 = Vec::with_capacity(primes.len());
                for i in primes {
                    let md = self.modulus(i);
                    c0.push(
                        (0..self.n())
                            .map(|k| md.add(md.add(md.mul(b[i][k], u[i][k]), e0[i][k]), m[i][k]))
                            .collect(),
                    );
                    c1.push(
                        (0..self.n())
                            .map(|k| md.add(md.mul(a[i][k], u[i][k]), e1[i][k]))
                            .collect(),
                    );
                }
                CtData::Rns { c0, c1 }
            }
            _ => {
                return Err(HeError::Backend(
                    "key and plaintext belong to different backends".into(),
                ))
            }
        };
        Ok(Ciphertext {
            level: pt.level,
            scale: pt.scale,
            depth: 0,
            data,
        })
    }

    /// Decrypts every slot.
    pub fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Vec<f64>> {
        let out = match (&sk.inner, &ct.data) {
            (SecretInner::Mock, CtData::Clear(v)) => v.clone(),
            (SecretInner::Real { ntt: s, .. }, CtData::Rns { c0, c1 }) => {
                let m: Poly = (0..=ct.level)
                    .map(|i| {
                        let md = self.modulus(i);
                        (0..self.n())
                            .map(|k| md.add(c0[i][k], md.mul(c1[i][k], s[i][k])))
                            .collect()
                    })
                    .collect();
                let coeffs = self.crt_coeffs(m, ct.level);
                self.encoder.embed(&coeffs, ct.scale)
            }
            _ => {
                return Err(HeError::Backend(
                    "key and ciphertext belong to different backends".into(),
                ))
            }
        };
        self.decrypts.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }

    // ---- evaluation -----------------------------------------------------

    fn check_scales(&self, a: f64, b: f64) -> Result<()> {
        if ((a - b) / a).abs() > SCALE_TOL {
            return Err(HeError::Mismatch(format!("scales {a:e} and {b:e} differ")));
        }
        Ok(())
    }

    /// Drops residues down to `level` (no change in value or scale).
    pub fn drop_to_level(&self, ct: &Ciphertext, level: usize) -> Result<Ciphertext> {
        if level > ct.level {
            return Err(HeError::Mismatch(format!("cannot raise level {} to {level}", ct.level)));
        }
        let mut out = ct.clone();
        out.level = level;
        if let CtData::Rns { c0, c1 } = &mut out.data {
            c0.truncate(level + 1);
            c1.truncate(level + 1);
        }
        Ok(out)
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check_scales(a.scale, b.scale)?;
        let level = a.level.min(b.level);
        let (a, b) = (self.drop_to_level(a, level)?, self.drop_to_level(b, level)?);
        let data = match (a.data, b.data) {
            (CtData::Clear(x), CtData::Clear(y)) => CtData::Clear(x.iter().zip(&y).map(|(p, q)| p + q).collect()),
            (CtData::Rns { c0: mut a0, c1: mut a1 }, CtData::Rns { c0: b0, c1: b1 }) => {
                for i in 0..=level {
                    let m = *self.modulus(i);
                    for (x, y) in a0[i].iter_mut().zip(&b0[i]) {
                        *x = m.add(*x, *y);
                    }
                    for (x, y) in a1[i].iter_mut().zip(&b1[i]) {
                        *x = m.add(*x, *y);
                    }
                }
                CtData::Rns { c0: a0, c1: a1 }
            }
            _ => return Err(HeError::Backend("mixed mock and real ciphertexts".into())),
        };
        Ok(Ciphertext {
            level,
            scale: a.scale,
            depth: a.depth.max(b.depth),
            data,
        })
    }

    /// Adds an encoded plaintext (must match level and scale).
    pub fn add_plain(&self, ct: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
        self.check_scales(ct.scale, pt.scale)?;
        if pt.level < ct.level {
            return Err(HeError::Mismatch(format!(
                "plaintext level {} below ciphertext {}",
                pt.level, ct.level
            )));
        }
        let mut out = ct.clone();
        match (&mut out.data, &pt.data) {
            (CtData::Clear(x), PtData::Clear(y)) => {
                for (a, b) in x.iter_mut().zip(y) {
                    *a += b;
                }
            }
            (CtData::Rns { c0, .. }, PtData::Rns(p)) => {
                for i in 0..=ct.level {
                    let m = *self.modulus(i);
                    for (x, y) in c0[i].iter_mut().zip(&p[i]) {
                        *x = m.add(*x, *y);
                    }
                }
            }
            _ => return Err(HeError::Backend("mixed mock and real operands".into())),
        }
        Ok(out)
    }

    /// Encodes `values` at the ciphertext's level and scale and adds them.
    pub fn add_values(&self, ct: &Ciphertext, values: &[f64]) -> Result<Ciphertext> {
        let pt = self.encode(values, ct.level, ct.scale)?;
        self.add_plain(ct, &pt)
    }

    fn check_depth(&self, ct: &Ciphertext) -> Result<()> {
        if ct.depth >= self.params.max_depth {
            return Err(HeError::DepthExhausted(self.params.max_depth));
        }
        Ok(())
    }

    /// Slotwise product without rescaling; the scales multiply.
    pub fn mul_plain_raw(&self, ct: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
        self.check_depth(ct)?;
        if pt.level < ct.level {
            return Err(HeError::Mismatch(format!(
                "plaintext level {} below ciphertext {}",
                pt.level, ct.level
            )));
        }
        let data = match (&ct.data, &pt.data) {
            (CtData::Clear(x), PtData::Clear(y)) => CtData::Clear(x.iter().zip(y).map(|(a, b)| a * b).collect()),
            (CtData::Rns { c0, c1 }, PtData::Rns(p)) => {
                let mul = |c: &Poly| -> Poly {
                    (0..=ct.level)
                        .map(|i| {
                            let m = self.modulus(i);
                            c[i].iter().zip(&p[i]).map(|(&x, &y)| m.mul(x, y)).collect()
                        })
                        .collect()
                };
                CtData::Rns {
                    c0: mul(c0),
                    c1: mul(c1),
                }
            }
            _ => return Err(HeError::Backend("mixed mock and real operands".into())),
        };
        Ok(Ciphertext {
            level: ct.level,
            scale: ct.scale * pt.scale,
            depth: ct.depth + 1,
            data,
        })
    }

    /// Plaintext scale that makes a multiply-then-rescale scale-preserving.
    pub fn rescale_factor(&self, level: usize) -> f64 {
        self.params.data_primes()[level] as f64
    }

    /// Encodes `p` at the ciphertext's level, multiplies and rescales.
    /// The output scale equals the input scale.
    pub fn mul_plain(&self, ct: &Ciphertext, p: &[f64]) -> Result<Ciphertext> {
        let pt = self.encode(p, ct.level, self.rescale_factor(ct.level))?;
        self.rescale(&self.mul_plain_raw(ct, &pt)?)
    }

    /// Divides by the top prime of the ciphertext's level.
    pub fn rescale(&self, ct: &Ciphertext) -> Result<Ciphertext> {
        if ct.level <= self.params.min_level() {
            return Err(HeError::DepthExhausted(self.params.max_depth));
        }
        let l = ct.level;
        let q_l = self.params.data_primes()[l];
        let data = match &ct.data {
            CtData::Clear(v) => CtData::Clear(v.clone()),
            CtData::Rns { c0, c1 } => CtData::Rns {
                c0: self.divide_by_last(c0, l),
                c1: self.divide_by_last(c1, l),
            },
        };
        Ok(Ciphertext {
            level: l - 1,
            scale: ct.scale / q_l as f64,
            depth: ct.depth,
            data,
        })
    }

    /// `round(c / q_l)` over primes `0..l`, given `c` over `0..=l`.
    fn divide_by_last(&self, c: &Poly, l: usize) -> Poly {
        let mut last = c[l].clone();
        self.tables[l].inverse(&mut last);
        let ml = *self.modulus(l);
        let centered: Vec<i64> = last.iter().map(|&x| ml.center(x)).collect();
        (0..l)
            .map(|j| {
                let m = *self.modulus(j);
                let inv = m.inv(ml.value() % m.value());
                let inv_s = m.shoup(inv);
                let mut t: Vec<u64> = centered.iter().map(|&x| m.from_i64(x)).collect();
                self.tables[j].forward(&mut t);
                c[j].iter()
                    .zip(&t)
                    .map(|(&x, &y)| m.mul_shoup(m.sub(x, y), inv, inv_s))
                    .collect()
            })
            .collect()
    }

    /// Adds `s·ct` into `acc` without rescaling. `s` is encoded as the
    /// integer `round(s·q_l)`, so a later [`rescale`](Self::rescale) brings the
    /// sum back to the input scale.
    pub fn scalar_mul_accumulate(&self, acc: Option<Ciphertext>, ct: &Ciphertext, s: f64) -> Result<Ciphertext> {
        if !s.is_finite() {
            return Err(HeError::InvalidArgument("non-finite scalar".into()));
        }
        self.check_depth(ct)?;
        let level = ct.level;
        let factor = self.rescale_factor(level);
        let out_scale = ct.scale * factor;
        let mut acc = match acc {
            Some(a) => {
                if a.level != level || a.depth != ct.depth + 1 {
                    return Err(HeError::Mismatch("accumulator level or depth differs".into()));
                }
                self.check_scales(a.scale, out_scale)?;
                a
            }
            None => self.zero_like(ct, out_scale)?,
        };
        let c = (s * factor).round();
        match (&mut acc.data, &ct.data) {
            (CtData::Clear(x), CtData::Clear(y)) => {
                for (a, b) in x.iter_mut().zip(y) {
                    *a += s * b;
                }
            }
            (CtData::Rns { c0: a0, c1: a1 }, CtData::Rns { c0, c1 }) => {
                for i in 0..=level {
                    let m = *self.modulus(i);
                    let w = f64_residue(c, &m);
                    let ws = m.shoup(w);
                    for (x, &y) in a0[i].iter_mut().zip(&c0[i]) {
                        *x = m.add(*x, m.mul_shoup(y, w, ws));
                    }
                    for (x, &y) in a1[i].iter_mut().zip(&c1[i]) {
                        *x = m.add(*x, m.mul_shoup(y, w, ws));
                    }
                }
            }
            _ => return Err(HeError::Backend("mixed mock and real operands".into())),
        }
        Ok(acc)
    }

    fn zero_like(&self, ct: &Ciphertext, scale: f64) -> Result<Ciphertext> {
        let data = match &ct.data {
            CtData::Clear(v) => CtData::Clear(vec![0.0; v.len()]),
            CtData::Rns { .. } => {
                let z: Poly = vec![vec![0; self.n()]; ct.level + 1];
                CtData::Rns { c0: z.clone(), c1: z }
            }
        };
        Ok(Ciphertext {
            level: ct.level,
            scale,
            depth: ct.depth + 1,
            data,
        })
    }

    // ---- rotation -------------------------------------------------------

    fn automorphism_coeffs(&self, a: &[i64], g: usize) -> Vec<i64> {
        let n = self.n();
        let mut out = vec![0; n];
        for (i, &c) in a.iter().enumerate() {
            let k = i * g % (2 * n);
            if k < n {
                out[k] = c;
            } else {
                out[k - n] = -c;
            }
        }
        out
    }

    fn automorphism_ntt(&self, poly: &Poly, g: usize) -> Poly {
        let map = automorphism_index(self.n(), g);
        poly.iter().map(|r| map.iter().map(|&j| r[j]).collect()).collect()
    }

    /// Returns `(k0, k1)` with `k0 + k1·s ≈ d·s'` for the key's `s'`.
    fn key_switch(&self, d: &Poly, level: usize, key: &[(Poly, Poly)]) -> (Poly, Poly) {
        let n = self.n();
        let sp = self.special();
        let targets: Vec<usize> = (0..=level).chain([sp]).collect();
        let mut acc0: Poly = vec![vec![0; n]; targets.len()];
        let mut acc1: Poly = vec![vec![0; n]; targets.len()];
        for (i, (kb, ka)) in key.iter().enumerate().take(level + 1) {
            let mut digit = d[i].clone();
            self.tables[i].inverse(&mut digit);
            for (r, &t) in targets.iter().enumerate() {
                let m = *self.modulus(t);
                let dt: Vec<u64> = if t == i {
                    d[i].clone()
                } else {
                    let mut v: Vec<u64> = digit.iter().map(|&x| m.reduce(x)).collect();
                    self.tables[t].forward(&mut v);
                    v
                };
                for k in 0..n {
                    acc0[r][k] = m.add(acc0[r][k], m.mul(dt[k], kb[t][k]));
                    acc1[r][k] = m.add(acc1[r][k], m.mul(dt[k], ka[t][k]));
                }
            }
        }
        let (r0, r1) = (acc0, acc1);
        (self.mod_down(&r0, level), self.mod_down(&r1, level))
    }

    /// `round(x / P)` from residues over `0..=level` plus the special prime.
    fn mod_down(&self, x: &Poly, level: usize) -> Poly {
        let sp = self.special();
        let mp = *self.modulus(sp);
        let mut last = x[level + 1].clone();
        self.tables[sp].inverse(&mut last);
        let centered: Vec<i64> = last.iter().map(|&v| mp.center(v)).collect();
        (0..=level)
            .map(|j| {
                let m = *self.modulus(j);
                let inv = m.inv(mp.value() % m.value());
                let inv_s = m.shoup(inv);
                let mut t: Vec<u64> = centered.iter().map(|&v| m.from_i64(v)).collect();
                self.tables[j].forward(&mut t);
                x[j].iter()
                    .zip(&t)
                    .map(|(&a, &b)| m.mul_shoup(m.sub(a, b), inv, inv_s))
                    .collect()
            })
            .collect()
    }

    fn rotate_once(&self, ct: &Ciphertext, k: usize, key: &SwitchKey) -> Result<Ciphertext> {
        let data = match (&ct.data, key) {
            (CtData::Clear(v), SwitchKey::Mock) => {
                let s = v.len();
                CtData::Clear((0..s).map(|j| v[(j + k) % s]).collect())
            }
            (CtData::Rns { c0, c1 }, SwitchKey::Real(digits)) => {
                let g = self.encoder.galois_element(k);
                let mut r0 = self.automorphism_ntt(c0, g);
                let r1 = self.automorphism_ntt(c1, g);
                let (k0, k1) = self.key_switch(&r1, ct.level, digits);
                for i in 0..=ct.level {
                    let m = *self.modulus(i);
                    for (x, y) in r0[i].iter_mut().zip(&k0[i]) {
                        *x = m.add(*x, *y);
                    }
                }
                CtData::Rns { c0: r0, c1: k1 }
            }
            _ => {
                return Err(HeError::Backend(
                    "rotation key and ciphertext belong to different backends".into(),
                ))
            }
        };
        Ok(Ciphertext { data, ..ct.clone() })
    }

    /// Cyclic left rotation of the slots by `k`. Uses the key for `k` when
    /// present, otherwise composes power-of-two steps.
    pub fn rotate(&self, ct: &Ciphertext, k: usize, gk: &GaloisKeys) -> Result<Ciphertext> {
        let k = k % self.slot_count();
        if k == 0 {
            return Ok(ct.clone());
        }
        if let Some(key) = gk.keys.get(&k) {
            return self.rotate_once(ct, k, key);
        }
        let mut bits = Vec::new();
        let mut rest = k;
        while rest > 0 {
            let b = 1 << rest.trailing_zeros();
            if !gk.keys.contains_key(&b) {
                return Err(HeError::MissingRotationKey(k));
            }
            bits.push(b);
            rest -= b;
        }
        let mut out = ct.clone();
        for b in bits {
            out = self.rotate_once(&out, b, &gk.keys[&b])?;
        }
        Ok(out)
    }
}

/// `[x]_q` for an integral f64 of any magnitude.
pub(crate) fn f64_residue(x: f64, m: &Modulus) -> u64 {
    if x.abs() < 9.0e18 {
        return m.from_i64(x as i64);
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64 - 1075;
    let mant = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
    let r = m.mul(m.reduce(mant), m.pow(2, exp as u64));
    if x < 0.0 {
        m.neg(r)
    } else {
        r
    }
}
