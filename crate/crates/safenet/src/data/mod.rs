//! Dataset plumbing: manifest + delimited-text recording I/O, the
//! deterministic synthetic gait cohort, and feature-dump export.

pub mod export;
pub mod manifest;
pub mod synth;

pub use export::export_features;
pub use manifest::{
    load_manifest, load_recording, read_table, save_manifest, save_recording,
    write_table, DatasetManifest, ManifestEntry,
};
pub use synth::{generate_synthetic_cohort, mixing_matrix, SynthSpec};
