//! Synthetic data: a procedurally generated face basis and a sampler that
//! produces (observation, groundtruth) pairs, so the pipeline is trainable
//! and its trends checkable without real capture data.

mod basis_gen;
mod dataset;
mod visibility;

pub use basis_gen::make_synthetic_basis;
pub use dataset::{
    bbox_size_2d, read_dataset, read_dataset_from, sample_dataset, write_dataset,
    write_dataset_to, write_manifest, Dataset, DatasetManifest, SynthConfig, SynthSample,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use visibility::visible_landmarks;
