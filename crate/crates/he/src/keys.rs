use std::collections::BTreeMap;

/// Residues of one polynomial, one `Vec` per prime, in NTT form.
pub(crate) type Poly = Vec<Vec<u64>>;

/// Secret key. Deliberately neither serializable nor part of
/// [`PublicMaterial`].
#[derive(Clone)]
pub struct SecretKey {
    pub(crate) key_id: u64,
    pub(crate) inner: SecretInner,
}

#[derive(Clone)]
pub(crate) enum SecretInner {
    Real {
        /// Ternary secret in NTT form over every prime including the special one.
        ntt: Poly,
    },
    Mock,
}

impl SecretKey {
    pub fn key_id(&self) -> u64 {
        self.key_id
    }
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SecretKey({:016x})", self.key_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PublicKey {
    pub(crate) key_id: u64,
    pub(crate) inner: PublicInner,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum PublicInner {
    /// `(b, a)` with `b = −a·s + e`, over the data primes.
    Real {
        b: Poly,
        a: Poly,
    },
    Mock,
}

impl PublicKey {
    pub fn key_id(&self) -> u64 {
        self.key_id
    }
}

/// Key-switching key from some `s'` back to `s`: one `(b, a)` pair per data
/// prime digit, each over the data primes plus the special prime.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SwitchKey {
    Real(Vec<(Poly, Poly)>),
    Mock,
}

/// Rotation keys indexed by left-rotation step.
#[derive(Debug, Clone, PartialEq)]
pub struct GaloisKeys {
    pub(crate) key_id: u64,
    pub(crate) keys: BTreeMap<usize, SwitchKey>,
}

impl GaloisKeys {
    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub fn steps(&self) -> Vec<usize> {
        self.keys.keys().copied().collect()
    }

    pub fn has_step(&self, step: usize) -> bool {
        self.keys.contains_key(&step)
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Everything a party may share with its peer.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicMaterial {
    pub public_key: PublicKey,
    pub galois_keys: GaloisKeys,
}

impl PublicMaterial {
    pub fn key_id(&self) -> u64 {
        self.public_key.key_id
    }
}

#[derive(Debug, Clone)]
pub struct KeyMaterial {
    pub secret: SecretKey,
    pub public: PublicMaterial,
}

impl KeyMaterial {
    pub fn key_id(&self) -> u64 {
        self.public.key_id()
    }
}
