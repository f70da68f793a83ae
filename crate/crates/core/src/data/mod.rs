//! Patch tiling, augmentation, resizing and the synthetic dataset generator.

pub mod augment;
pub mod patches;
pub mod resize;
pub mod synthetic;

pub use augment::{augment, AugmentConfig};
pub use patches::{content_fraction, extract_patches, ContentMode, PatchSpec};
pub use resize::{resize_image, resize_mask, resize_sample};
pub use synthetic::{generate_synthetic, render_sample, render_synthetic, Intensity, SyntheticSample, SyntheticSpec, Texture};
