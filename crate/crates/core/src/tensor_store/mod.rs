//! Tensor container format, dataset manifests and the synthetic paired
//! generator.
//!
//! Container layout (all little-endian):
//!
//! | offset | size        | field                                   |
//! |--------|-------------|-----------------------------------------|
//! | 0      | 8           | magic `HELDTNS1`                        |
//! | 8      | 4           | dtype (`u32`: 0 = float32, 1 = float64) |
//! | 12     | 4           | rank (`u32`)                            |
//! | 16     | 8 × rank    | dims (`u64` each)                       |
//! | …      | width × ∏dims | payload, row-major IEEE-754            |

mod container;
mod manifest;
mod synth;

pub use container::{
    read_matrix, read_tensor, read_vector, write_matrix, write_tensor, write_vector, DType, Tensor, MAGIC,
};
pub use manifest::{file_checksum, DatasetManifest, EmbeddingDataset, ManifestEntry, Role, Split};
pub use synth::{synth_paired, GroundTruth, MapKind, SyntheticPair, SyntheticSpec, SyntheticWorld};
