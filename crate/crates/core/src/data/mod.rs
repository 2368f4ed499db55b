//! Dataset ingestion, checkpoints and metrics.

pub mod checkpoint;
pub mod csv01;
pub mod dataset;
pub mod metrics;
pub mod mnist;
pub mod synth;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint,
    CheckpointHeader, CheckpointMeta,
};
pub use csv01::{load_csv01, parse_csv01, Delimiter};
pub use dataset::{DiscreteDataset, Split};
pub use metrics::{write_metrics, MetricsWriter};
pub use mnist::{load_idx_labels, load_mnist_binarized, DEFAULT_THRESHOLD};
pub use synth::synth_teacher;
