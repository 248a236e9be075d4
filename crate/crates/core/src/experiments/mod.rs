//! Synthetic data, training and timing.

mod bench;
mod data;
mod train;

pub use bench::{bench_forward, TimingRecord, WARMUP};
pub use data::{generate, Dataset, DatasetSpec, PatternFamily, Split};
pub use train::{train, write_epoch_log, Augmentation, EpochRecord, TrainConfig};
