//! Patch-based image classification engine with noisy-label refinement.
//!
//! The crate is organized around six subsystems:
//!
//! - [`tensor`]: dense tensors with reverse-mode automatic differentiation,
//! - [`nn`]: the neural operators (dilated convolution, pooling, batch
//!   normalization, PReLU, channel concatenation, softmax cross-entropy),
//! - [`model`]: network assembly (RefineNet, atrous dense blocks, the full
//!   atrous DenseNet), parameter initialization and checkpointing,
//! - [`data`]: slide rasters, overlapping patch cropping, rotation/mirror
//!   augmentation, RoI binarization, manifests, and a synthetic noisy-label
//!   corpus generator with exact planted ground truth,
//! - [`ral`]: the reversed-active-learning loop that removes low-confidence
//!   and group-condemned patches and fine-tunes between passes,
//! - [`train`]: SGD training with a staged learning-rate schedule, metrics,
//!   slide-level voting fusion, and penultimate-feature export.
//!
//! Everything is deterministic given explicit seeds; the engine runs
//! single-threaded so repeated runs are bit-identical.

pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod ral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Intra-op parallelism cap from `PATCHFORGE_THREADS`.
///
/// The current engine always executes operators sequentially (the
/// deterministic mode all tests run in), so the returned cap is the number
/// of threads the engine is *allowed* to use, clamped to what it supports.
pub fn intra_op_threads() -> usize {
    static THREADS: std::sync::OnceLock<usize> = std::sync::OnceLock::new();
    *THREADS.get_or_init(|| {
        std::env::var("PATCHFORGE_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .map(|n| n.max(1))
            .unwrap_or(1)
    })
}
