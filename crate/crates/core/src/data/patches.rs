//! Overlapping patch grids with a content-fraction filter.

use serde::{Deserialize, Serialize};

use crate::domain::{AnnotationPair, Image, ImageSample, Mask};
use crate::error::{Error, Result};

/// How a pixel is judged to contain content (tissue or foreground signal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ContentMode {
    /// Stained tissue: not near-white, i.e. luminance below `max_luminance`
    /// and HSV saturation above `min_saturation`.
    Stain { max_luminance: f32, min_saturation: f32 },
    /// Mean channel intensity above `threshold`.
    Intensity { threshold: f32 },
}

impl Default for ContentMode {
    fn default() -> Self {
        ContentMode::Stain {
            max_luminance: 0.9,
            min_saturation: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSpec {
    pub patch_size: usize,
    /// Fraction of a patch shared with its neighbour.
    pub overlap: f64,
    /// Minimum content fraction for a patch to be kept.
    pub content_threshold: f64,
    pub content_mode: ContentMode,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            patch_size: 512,
            overlap: 0.5,
            content_threshold: 0.35,
            content_mode: ContentMode::default(),
        }
    }
}

impl PatchSpec {
    pub fn stride(&self) -> usize {
        (self.patch_size as f64 * (1.0 - self.overlap)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::Config("patch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap {} must be in [0, 1)", self.overlap)));
        }
        if !(0.0..=1.0).contains(&self.content_threshold) {
            return Err(Error::Config(format!(
                "content_threshold {} must be in [0, 1]",
                self.content_threshold
            )));
        }
        if self.stride() < 1 {
            return Err(Error::Config("overlap leaves a stride below one pixel".into()));
        }
        Ok(())
    }
}

/// Patch origins along one axis: every `stride` from 0, plus one patch
/// anchored to the far edge when the regular grid falls short of it.
pub fn anchors(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    assert!(dim >= patch && stride > 0);
    let mut out: Vec<usize> = (0..=(dim - patch) / stride).map(|i| i * stride).collect();
    if *out.last().unwrap() + patch < dim {
        out.push(dim - patch);
    }
    out
}

/// Fraction of pixels judged as content under `mode`.
pub fn content_fraction(patch: &Image, mode: ContentMode) -> f64 {
    let (w, h) = patch.dims();
    let mut hits = 0usize;
    for y in 0..h {
        for x in 0..w {
            let is_content = match mode {
                ContentMode::Stain {
                    max_luminance,
                    min_saturation,
                } => {
                    let (r, g, b) = if patch.channels() == 3 {
                        (patch.get(0, x, y), patch.get(1, x, y), patch.get(2, x, y))
                    } else {
                        let v = patch.get(0, x, y);
                        (v, v, v)
                    };
                    let lum = 0.299 * r + 0.587 * g + 0.114 * b;
                    let max = r.max(g).max(b);
                    let min = r.min(g).min(b);
                    let sat = if max > 0.0 { (max - min) / max } else { 0.0 };
                    lum < max_luminance && sat > min_saturation
                }
                ContentMode::Intensity { threshold } => {
                    let mean = (0..patch.channels()).map(|c| patch.get(c, x, y)).sum::<f32>() / patch.channels() as f32;
                    mean > threshold
                }
            };
            hits += is_content as usize;
        }
    }
    hits as f64 / (w * h) as f64
}

/// Tiles `image` and both `masks` on the same grid and keeps patches with
/// enough content. Patches inherit `group_id` and record their origin.
pub fn extract_patches(image: &Image, masks: &[Mask], spec: &PatchSpec, group_id: &str) -> Result<Vec<AnnotationPair>> {
    spec.validate()?;
    if masks.len() != 2 {
        return Err(Error::Data(format!("expected two annotations, got {}", masks.len())));
    }
    for m in masks {
        image.check_matches(m)?;
    }
    let (w, h) = image.dims();
    let p = spec.patch_size;
    if w < p || h < p {
        return Err(Error::Data(format!("image {w}x{h} is smaller than patch size {p}")));
    }
    let stride = spec.stride();
    let mut out = Vec::new();
    for &y0 in &anchors(h, p, stride) {
        for &x0 in &anchors(w, p, stride) {
            let patch = image.crop(x0, y0, p, p);
            if content_fraction(&patch, spec.content_mode) < spec.content_threshold {
                continue;
            }
            let sample = ImageSample::new(patch, group_id, (y0, x0))?;
            out.push(AnnotationPair::new(
                sample,
                masks[0].crop(x0, y0, p, p),
                masks[1].crop(x0, y0, p, p),
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pink(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |c, _, _| [0.8, 0.5, 0.7][c])
    }

    #[test]
    fn nine_patches_on_a_1024_grid() {
        assert_eq!(anchors(1024, 512, 256), vec![0, 256, 512]);
        let img = pink(1024, 1024);
        let m = Mask::empty(1024, 1024);
        let patches = extract_patches(&img, &[m.clone(), m], &PatchSpec::default(), "s").unwrap();
        assert_eq!(patches.len(), 9);
        assert_eq!(patches[4].sample.source_offset, (256, 256));
    }

    #[test]
    fn white_image_yields_no_patches() {
        let img = Image::filled(1024, 1024, 3, 1.0);
        let m = Mask::empty(1024, 1024);
        assert!(extract_patches(&img, &[m.clone(), m], &PatchSpec::default(), "s").unwrap().is_empty());
    }

    #[test]
    fn single_patch_is_the_input() {
        let img = Image::from_fn(512, 512, 3, |c, x, y| ((x + y + c) % 7) as f32 / 10.0 + 0.1);
        let m1 = Mask::from_fn(512, 512, |x, _| x < 100);
        let m2 = Mask::from_fn(512, 512, |_, y| y < 100);
        let spec = PatchSpec {
            content_threshold: 0.0,
            ..Default::default()
        };
        let patches = extract_patches(&img, &[m1.clone(), m2.clone()], &spec, "s").unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].sample.image, img);
        assert_eq!(patches[0].mask_1, m1);
        assert_eq!(patches[0].mask_2, m2);
    }

    #[test]
    fn small_image_is_an_error() {
        let img = pink(100, 600);
        let m = Mask::empty(100, 600);
        assert!(extract_patches(&img, &[m.clone(), m], &PatchSpec::default(), "s").is_err());
    }

    #[test]
    fn edge_anchor_added_when_grid_falls_short() {
        assert_eq!(anchors(1000, 512, 256), vec![0, 256, 488]);
        assert_eq!(anchors(512, 512, 256), vec![0]);
    }

    #[test]
    fn content_fraction_examples() {
        let stain = ContentMode::default();
        assert_eq!(content_fraction(&Image::filled(8, 8, 3, 1.0), stain), 0.0);
        let half = Image::from_fn(8, 8, 3, |c, x, _| if x < 4 { [0.8, 0.5, 0.7][c] } else { 1.0 });
        assert_eq!(content_fraction(&half, stain), 0.5);
        let gray = Image::filled(8, 8, 1, 0.5);
        assert_eq!(content_fraction(&gray, ContentMode::Intensity { threshold: 0.35 }), 1.0);
    }
}
