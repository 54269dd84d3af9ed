//! Neural operators the networks are assembled from.

pub mod activation;
pub mod concat;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{prelu, PRELU_INIT_SLOPE};
pub use concat::concat_channels;
pub use conv::{conv2d, receptive_extent, ConvSpec, Padding};
pub use linear::linear;
pub use loss::{softmax_cross_entropy, softmax_rows, LossReport};
pub use norm::{batch_norm, BnConfig, BnRunning, Mode};
pub use pool::{global_avg_pool, pool2d, PoolMode};
