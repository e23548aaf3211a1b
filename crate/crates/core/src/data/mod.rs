//! Feature files, manifests, ground truth and the synthetic benchmark.

mod features;
mod manifest;
mod synthetic;

pub use features::{decode_features, encode_features, load_features, write_features, FEATURE_MAGIC};
pub use manifest::{
    Dataset, DatasetManifest, FeaturePaths, GroundTruth, LabeledSegment, ManifestVideo, Modality,
    Video,
};
pub(crate) use manifest::write_json;
pub use synthetic::{
    class_names, generate_synthetic, synthesize, PlantedBlock, SyntheticDataset, SyntheticPaths,
    SyntheticSpec, SyntheticVideo,
};
