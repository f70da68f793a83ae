//! Masks, images, annotated samples and dataset manifests.

pub mod manifest;
pub mod mask;
pub mod raster;
pub mod rng;

pub use manifest::{group_split, load_manifest, load_manifest_with_split, DatasetManifest, ManifestEntry, Split};
pub use mask::Mask;
pub use raster::{AnnotationPair, Annotator, Image, ImageSample};
