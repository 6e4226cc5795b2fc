//! Datasets (CIFAR-10 binary and synthetic), batching and Dirichlet partitioning.

mod batches;
mod cifar;
mod dataset;
mod partition;
mod synth;

pub use batches::{batches, Batches};
pub use cifar::{
    encode_records, load_cifar10, load_cifar10_file, parse_records, write_records, CIFAR_CLASSES,
    CIFAR_RECORD_BYTES, CIFAR_SIDE,
};
pub use dataset::{Dataset, Normalization, Split};
pub use partition::{
    chi_square, class_histogram, dirichlet_partition, mean_chi_square, sample_dirichlet, sample_gamma,
    PartitionSpec, MAX_REDRAWS,
};
pub use synth::{prototypes, synth_dataset, synth_train_test, PROTOTYPE_AMPLITUDE};
