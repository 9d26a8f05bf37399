use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::arith::ntt_primes;
use crate::error::{HeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SecurityLevel {
    /// Cleartext stand-in with the same bookkeeping and wire sizes.
    Mock,
    Bits128,
}

impl fmt::Display for SecurityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SecurityLevel::Mock => "mock",
            SecurityLevel::Bits128 => "bits128",
        })
    }
}

/// Largest total modulus (bits) per ring degree at 128-bit classical
/// security for ternary secrets, from the community HE security tables.
const MAX_BITS_128: [(usize, u32); 6] = [
    (1024, 27),
    (2048, 54),
    (4096, 109),
    (8192, 218),
    (16384, 438),
    (32768, 881),
];

pub const PRESET_MOCK: &str = "mock";
pub const PRESET_DEFAULT: &str = "ckks-8192-depth1";

/// Scheme parameters. `modulus_bits` lists the data primes from the bottom
/// of the chain upward, followed by one special prime for key switching.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptionParams {
    pub ring_degree: usize,
    pub modulus_bits: Vec<u32>,
    pub scale_bits: u32,
    pub security: SecurityLevel,
    /// Rescales allowed on a fresh ciphertext.
    pub max_depth: usize,
    primes: Vec<u64>,
}

impl EncryptionParams {
    pub fn new(
        ring_degree: usize,
        modulus_bits: Vec<u32>,
        scale_bits: u32,
        security: SecurityLevel,
        max_depth: usize,
    ) -> Result<Self> {
        if !ring_degree.is_power_of_two() || ring_degree < 8 {
            return Err(HeError::Params(format!(
                "ring degree {ring_degree} is not a power of two >= 8"
            )));
        }
        if modulus_bits.len() < 3 {
            return Err(HeError::Params(
                "the chain needs at least two data primes and a special prime".into(),
            ));
        }
        if let Some(b) = modulus_bits.iter().find(|&&b| !(20..=61).contains(&b)) {
            return Err(HeError::Params(format!("prime size {b} outside [20, 61] bits")));
        }
        let data = modulus_bits.len() - 1;
        if max_depth == 0 || max_depth >= data {
            return Err(HeError::Params(format!(
                "depth {max_depth} needs more than {data} data primes"
            )));
        }
        if scale_bits == 0 || scale_bits >= modulus_bits[0] {
            return Err(HeError::Params(format!(
                "scale 2^{scale_bits} must sit below the base prime of {} bits",
                modulus_bits[0]
            )));
        }
        let total: u32 = modulus_bits.iter().sum();
        if security == SecurityLevel::Bits128 {
            let limit = MAX_BITS_128.iter().find(|(n, _)| *n == ring_degree).map(|&(_, b)| b);
            match limit {
                Some(limit) if total <= limit => {}
                Some(limit) => {
                    return Err(HeError::Params(format!(
                        "{total} modulus bits exceed the 128-bit limit of {limit} for N = {ring_degree}"
                    )))
                }
                None => {
                    return Err(HeError::Params(format!(
                        "no 128-bit security entry for N = {ring_degree}"
                    )))
                }
            }
        }
        let primes = select_primes(&modulus_bits, ring_degree)?;
        Ok(Self {
            ring_degree,
            modulus_bits,
            scale_bits,
            security,
            max_depth,
            primes,
        })
    }

    /// `"ckks-8192-depth1"`: N = 8192, chain {60, 40, 40, 60}, scale 2^40.
    /// `"mock"`: the same shape with cleartext ciphertexts.
    pub fn preset(name: &str) -> Result<Self> {
        let security = match name {
            PRESET_DEFAULT => SecurityLevel::Bits128,
            PRESET_MOCK => SecurityLevel::Mock,
            other => {
                return Err(HeError::Params(format!(
                    "unknown preset {other:?} (expected {PRESET_MOCK:?} or {PRESET_DEFAULT:?})"
                )))
            }
        };
        Self::new(8192, vec![60, 40, 40, 60], 40, security, 1)
    }

    pub fn slot_count(&self) -> usize {
        self.ring_degree / 2
    }

    pub fn scale(&self) -> f64 {
        (self.scale_bits as f64).exp2()
    }

    pub fn is_mock(&self) -> bool {
        self.security == SecurityLevel::Mock
    }

    /// Data primes, bottom first.
    pub fn data_primes(&self) -> &[u64] {
        &self.primes[..self.primes.len() - 1]
    }

    pub fn special_prime(&self) -> u64 {
        *self.primes.last().unwrap()
    }

    /// Level of a fresh ciphertext (index of its top data prime).
    pub fn top_level(&self) -> usize {
        self.primes.len() - 2
    }

    /// Lowest level reachable within the depth budget.
    pub fn min_level(&self) -> usize {
        self.top_level() - self.max_depth
    }

    pub fn total_modulus_bits(&self) -> u32 {
        self.modulus_bits.iter().sum()
    }

    /// Stable 64-bit identifier written into every serialized object.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"held-he-params-v1");
        h.update(self.security.to_string().as_bytes());
        h.update((self.ring_degree as u64).to_le_bytes());
        h.update(self.scale_bits.to_le_bytes());
        h.update((self.max_depth as u64).to_le_bytes());
        for p in &self.primes {
            h.update(p.to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}

impl FromStr for EncryptionParams {
    type Err = HeError;

    fn from_str(s: &str) -> Result<Self> {
        Self::preset(s)
    }
}

fn select_primes(bits: &[u32], n: usize) -> Result<Vec<u64>> {
    let mut chosen: Vec<u64> = Vec::with_capacity(bits.len());
    for &b in bits {
        let p = ntt_primes(b, n, 1, &chosen)
            .ok_or_else(|| HeError::Params(format!("not enough {b}-bit primes congruent to 1 mod {}", 2 * n)))?;
        chosen.push(p[0]);
    }
    Ok(chosen)
}
