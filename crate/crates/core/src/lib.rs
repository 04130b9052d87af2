//! Variable selection for kernel two-sample testing.
//!
//! A selection is a unit vector `z` with at most `d` nonzeros that weights
//! the coordinates inside the kernel. It is chosen to maximize the squared
//! MMD statistic on a training split and then used in a permutation test on
//! the held-out split.

pub mod bench;
pub mod data;
pub mod error;
pub mod gauss;
pub mod linear;
pub mod mmd;
pub mod quad;
pub mod rng;
pub mod spectra;
pub mod testing;
pub mod trs;

pub use data::{load_two_sample, split_train_test, SelectionVector, TwoSampleData};
pub use error::{Error, Result};
pub use mmd::KernelSpec;
pub use rng::RandomSource;
