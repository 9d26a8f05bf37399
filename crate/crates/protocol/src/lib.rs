//! Two-party protocols over [`held_he`]:
//!
//! - training: B streams its encrypted embeddings, A folds them against
//!   its own into encrypted cross products, B decrypts and solves the
//!   ridge problem for the affine map;
//! - inference: B sends an encrypted (aligned) query, A evaluates its
//!   linear head homomorphically, B decrypts the logits.
//!
//! Each party owns its own backend instance and talks only through a
//! [`transport::Channel`]; B records the transcript.

pub mod bench;
mod error;
pub mod message;
mod party_a;
mod party_b;
pub mod pipeline;
mod session;
pub mod transcript;
pub mod transport;

pub use error::{ProtocolError, Result};
pub use party_a::{compose, PartyA, ACK_EVERY};
pub use party_b::{KeyChoice, PartyB};
pub use session::{run_inference, run_training, InferenceOutcome, QueryTiming, TrainingOutcome, Variant};
