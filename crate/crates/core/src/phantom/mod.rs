//! Synthetic volumetric phantoms with closed-form morphometric targets.
//!
//! Each phantom is a spherical shell cut into four quadrant parcels of
//! different thickness, enclosing four spherical blobs. Targets are blob
//! volumes, quadrant thicknesses and quadrant mid-surface curvatures.

mod augment;
mod dataset;
mod params;
mod scaler;
mod volume;

pub use augment::{
    add_noise, augment, clips_foreground, rotate, translate, AugmentConfig, Interpolation,
};
pub use dataset::{
    prepare_output_dir, sample_rng, split_counts, split_subjects, Dataset, DatasetConfig, DatasetMeta, Manifest,
    ManifestRow, Split, MANIFEST_FILE, METADATA_FILE,
};
pub use params::{
    generate_phantom, phantom_measurements, quadrant_of, sphere_volume, PhantomParams, PhantomRanges, Structure,
    TargetVector, N_BLOBS, N_QUADRANTS,
};
pub use scaler::Scaler;
pub use volume::Volume3D;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("phantom rejected: {0}")]
    Containment(String),
    #[error("volume: {0}")]
    Volume(String),
    #[error("targets: {0}")]
    Targets(String),
    #[error("measurement {0:?} is constant over the training split")]
    DegenerateMeasurement(String),
    #[error("split: {0}")]
    Split(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("output directory {0} is not empty (use --force to overwrite)")]
    OutputExists(PathBuf),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
