//! Single-pass randomized interpolative decomposition for streaming snapshot
//! matrices.
//!
//! The library compresses a matrix of time-ordered solution snapshots into a
//! selected column basis plus a coefficient matrix in exactly one forward
//! traversal of the data. Column selection uses streaming ridge-leverage-score
//! sampling over a random-projection sketch; coefficients are computed by four
//! competing sketched updates with an on-the-fly stochastic error estimator
//! picking the winner each epoch. Optional gradient awareness improves the
//! reconstruction of derived gradient fields.

pub mod baselines;
pub mod bench;
pub mod coefficients;
pub mod column_select;
pub mod compress;
pub mod config;
pub mod error;
pub mod error_estimate;
pub mod gradient_aug;
pub mod linalg;
pub mod rng;
pub mod sketching;
pub mod stream_io;

pub use config::{GcvConfig, GradientMode, GridSpec, RunConfig, Scaling, SplitFractions};
pub use error::{Error, Result};
pub use stream_io::{ColumnSource, ColumnStream, CountingStream, IDModel, MemoryColumns};
