//! Approximate homomorphic encryption over `Z[X]/(X^N + 1)` in RNS form,
//! limited to what linear models need: encode, encrypt, add, plaintext
//! multiply with one rescale, slot rotation, decrypt.
//!
//! A [`HeBackend`] built from mock parameters runs the same API on
//! cleartext slots, with identical level/scale bookkeeping and wire sizes.

mod arith;
mod backend;
mod encoding;
mod error;
mod keys;
mod linear;
mod params;
mod wire;

pub use backend::{Ciphertext, HeBackend, Plaintext, ERROR_STD};
pub use error::{HeError, Result};
pub use keys::{GaloisKeys, KeyMaterial, PublicKey, PublicMaterial, SecretKey};
pub use linear::{EncodedMatrix, MatvecPlan};
pub use params::{EncryptionParams, SecurityLevel, PRESET_DEFAULT, PRESET_MOCK};
pub use wire::WIRE_VERSION;
