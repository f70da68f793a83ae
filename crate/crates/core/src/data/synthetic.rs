//! Synthetic two-annotator disk dataset.
//!
//! Each sample has hidden base disks `B`. Annotator `k` traces every disk
//! with radius `r + δk` plus independent radial noise at evenly spaced
//! contour vertices; the contour is linearly interpolated in angle and
//! rasterized at pixel centers. The image is a noisy textured rendering of `B`.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::rng::stream;
use crate::domain::{AnnotationPair, DatasetManifest, Image, ImageSample, ManifestEntry, Mask, Split};
use crate::error::{Error, Result};

const PURPOSE_SYNTH: u64 = 0x5359_4e54;

/// Mean and standard deviation of pixel intensity in one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensity {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Texture {
    pub background: Intensity,
    pub foreground: Intensity,
    /// Amplitude of a smooth random sinusoidal pattern added everywhere.
    pub pattern_amplitude: f64,
}

impl Default for Texture {
    fn default() -> Self {
        Texture {
            background: Intensity { mean: 0.3, std: 0.08 },
            foreground: Intensity { mean: 0.6, std: 0.08 },
            pattern_amplitude: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub disks_per_image: (usize, usize),
    pub radius: (f64, f64),
    /// Signed radial offset per annotator; positive dilates, negative erodes.
    pub annotator_bias: (f64, f64),
    pub jitter_std: f64,
    pub contour_vertices: usize,
    pub texture: Texture,
    pub n_images: usize,
    /// The last `test_images` samples are marked as the test split.
    pub test_images: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            image_size: 128,
            disks_per_image: (1, 1),
            radius: (16.0, 28.0),
            annotator_bias: (3.0, -3.0),
            jitter_std: 1.0,
            contour_vertices: 24,
            texture: Texture::default(),
            n_images: 250,
            test_images: 50,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn max_extent(&self) -> f64 {
        let bias = self.annotator_bias.0.max(self.annotator_bias.1).max(0.0);
        self.radius.1 + bias + 3.0 * self.jitter_std + 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.n_images == 0 {
            return bad("image_size and n_images must be positive".into());
        }
        if self.test_images > self.n_images {
            return bad(format!("test_images {} exceeds n_images {}", self.test_images, self.n_images));
        }
        let (dlo, dhi) = self.disks_per_image;
        if dlo == 0 || dlo > dhi {
            return bad(format!("disks_per_image ({dlo}, {dhi}) must be an ordered range starting at 1 or more"));
        }
        if !(self.radius.0 > 0.0 && self.radius.0 <= self.radius.1) {
            return bad(format!("radius {:?} must be a positive ordered range", self.radius));
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return bad(format!("jitter_std {} must be non-negative", self.jitter_std));
        }
        for d in [self.annotator_bias.0, self.annotator_bias.1] {
            if self.radius.0 <= d.abs() + 3.0 * self.jitter_std {
                return bad(format!(
                    "radius minimum {} must exceed |bias| {} + 3 * jitter_std {}",
                    self.radius.0,
                    d.abs(),
                    self.jitter_std
                ));
            }
        }
        if self.contour_vertices < 3 {
            return bad("contour_vertices must be at least 3".into());
        }
        if 2.0 * self.max_extent() >= self.image_size as f64 {
            return bad(format!(
                "image_size {} cannot hold a disk of extent {:.1}",
                self.image_size,
                self.max_extent()
            ));
        }
        for (name, i) in [("background", self.texture.background), ("foreground", self.texture.foreground)] {
            if !(i.std >= 0.0 && i.mean.is_finite()) {
                return bad(format!("texture {name} intensity is invalid"));
            }
        }
        Ok(())
    }
}

/// One generated sample with its hidden base mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub pair: AnnotationPair,
    pub base: Mask,
    pub split: Split,
}

struct Disk {
    cx: f64,
    cy: f64,
    /// Contour radius at each vertex, per tracing (base, annotator 1, annotator 2).
    contours: [Vec<f64>; 3],
}

fn contour_radius(vertices: &[f64], angle: f64) -> f64 {
    let n = vertices.len();
    let t = angle.rem_euclid(TAU) / TAU * n as f64;
    let i = (t.floor() as usize).min(n - 1);
    let f = t - i as f64;
    vertices[i] * (1.0 - f) + vertices[(i + 1) % n] * f
}

fn rasterize(size: usize, disks: &[Disk], which: usize) -> Mask {
    Mask::from_fn(size, size, |x, y| {
        disks.iter().any(|d| {
            let (dx, dy) = (x as f64 - d.cx, y as f64 - d.cy);
            let rho = dx.hypot(dy);
            rho <= contour_radius(&d.contours[which], dy.atan2(dx))
        })
    })
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    }
}

/// Renders sample `index` of `spec` in memory. Image values are quantized to
/// 8 bits so the result equals what [`generate_synthetic`] writes to disk.
pub fn render_sample(spec: &SyntheticSpec, index: usize) -> Result<SyntheticSample> {
    let mut rng = stream(spec.seed, PURPOSE_SYNTH, index as u64);
    let size = spec.image_size;
    let margin = spec.max_extent();
    let n_disks = rng.random_range(spec.disks_per_image.0..=spec.disks_per_image.1);
    let nv = spec.contour_vertices;
    let disks: Vec<Disk> = (0..n_disks)
        .map(|_| {
            let cx = rng.random_range(margin..=size as f64 - 1.0 - margin);
            let cy = rng.random_range(margin..=size as f64 - 1.0 - margin);
            let r = rng.random_range(spec.radius.0..=spec.radius.1);
            let mut trace = |bias: f64, jitter: f64| -> Vec<f64> {
                (0..nv).map(|_| r + bias + normal(&mut rng, jitter)).collect()
            };
            let base = trace(0.0, 0.0);
            let a1 = trace(spec.annotator_bias.0, spec.jitter_std);
            let a2 = trace(spec.annotator_bias.1, spec.jitter_std);
            Disk {
                cx,
                cy,
                contours: [base, a1, a2],
            }
        })
        .collect();

    let base = rasterize(size, &disks, 0);
    let mask_1 = rasterize(size, &disks, 1);
    let mask_2 = rasterize(size, &disks, 2);

    let tex = &spec.texture;
    let (fx, fy) = (rng.random_range(0.05..0.25), rng.random_range(0.05..0.25));
    let (px, py) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    let image = Image::from_fn(size, size, 1, |_, x, y| {
        let region = if base.get(x, y) { tex.foreground } else { tex.background };
        let pattern = tex.pattern_amplitude * (fx * x as f64 + px).sin() * (fy * y as f64 + py).sin();
        let v = (region.mean + normal(&mut rng, region.std) + pattern).clamp(0.0, 1.0);
        ((v * 255.0).round() / 255.0) as f32
    });

    let split = if index >= spec.n_images - spec.test_images {
        Split::Test
    } else {
        Split::Train
    };
    let sample = ImageSample::new(image, group_name(index), (0, 0))?;
    Ok(SyntheticSample {
        pair: AnnotationPair::new(sample, mask_1, mask_2)?,
        base,
        split,
    })
}

fn group_name(index: usize) -> String {
    format!("synth-{index:04}")
}

/// Renders every sample of `spec` in memory.
pub fn render_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    (0..spec.n_images).map(|i| render_sample(spec, i)).collect()
}

/// Writes the dataset under `out_dir`:
/// `images/`, `masks1/`, `masks2/`, `base/`, `manifest.jsonl` and `spec.json`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    for sub in ["images", "masks1", "masks2", "base"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(spec.n_images);
    for i in 0..spec.n_images {
        let s = render_sample(spec, i)?;
        let name = format!("{i:04}.png");
        let rel = |sub: &str| PathBuf::from(sub).join(&name);
        s.pair.image().save_png(&out_dir.join(rel("images")))?;
        s.pair.mask_1.save_png(&out_dir.join(rel("masks1")))?;
        s.pair.mask_2.save_png(&out_dir.join(rel("masks2")))?;
        s.base.save_png(&out_dir.join(rel("base")))?;
        entries.push(ManifestEntry {
            image: rel("images"),
            mask1: rel("masks1"),
            mask2: rel("masks2"),
            group: group_name(i),
            base: Some(rel("base")),
            split: Some(s.split),
        });
    }
    let split = entries.iter().filter_map(|e| Some((e.group.clone(), e.split?))).collect();
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
        split: Some(split),
    };
    manifest.write_jsonl(&out_dir.join("manifest.jsonl"))?;
    let spec_path = out_dir.join("spec.json");
    let json = serde_json::to_string_pretty(spec).map_err(|e| Error::Json {
        context: "synthetic spec".into(),
        source: e,
    })?;
    fs::write(&spec_path, json + "\n").map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{agreement_report, dice};

    fn one_disk(bias: (f64, f64), jitter: f64) -> SyntheticSpec {
        SyntheticSpec {
            radius: (20.0, 20.0),
            annotator_bias: bias,
            jitter_std: jitter,
            n_images: 4,
            test_images: 1,
            ..Default::default()
        }
    }

    #[test]
    fn no_bias_no_jitter_reproduces_base() {
        let samples = render_synthetic(&one_disk((0.0, 0.0), 0.0)).unwrap();
        for s in &samples {
            assert_eq!(s.pair.mask_1, s.base);
            assert_eq!(s.pair.mask_2, s.base);
        }
        let pairs: Vec<_> = samples.into_iter().map(|s| s.pair).collect();
        let r = agreement_report(&pairs).unwrap();
        assert_eq!((r.dice.mean, r.iou.mean), (1.0, 1.0));
    }

    #[test]
    fn dilation_and_erosion_order_areas() {
        let s = render_sample(&one_disk((3.0, -3.0), 0.0), 0).unwrap();
        assert!(s.pair.mask_1.area() > s.base.area());
        assert!(s.base.area() > s.pair.mask_2.area());
        // the eroded trace lies inside the base, the base inside the dilated trace
        for i in 0..s.base.data().len() {
            assert!(s.pair.mask_2.data()[i] <= s.base.data()[i]);
            assert!(s.base.data()[i] <= s.pair.mask_1.data()[i]);
        }
    }

    #[test]
    fn agreement_drops_with_bias() {
        let mut last = f64::INFINITY;
        for d in 0..=4 {
            let s = render_sample(&one_disk((d as f64, -(d as f64)), 0.0), 0).unwrap();
            let v = dice(&s.pair.mask_1, &s.pair.mask_2).unwrap();
            assert!(v < last || d == 0);
            last = v;
        }
    }

    #[test]
    fn rejects_vanishing_annotations() {
        let spec = SyntheticSpec {
            radius: (5.0, 10.0),
            annotator_bias: (3.0, -3.0),
            jitter_std: 1.0,
            ..Default::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn split_marks_the_tail() {
        let spec = one_disk((3.0, -3.0), 1.0);
        let splits: Vec<_> = render_synthetic(&spec).unwrap().iter().map(|s| s.split).collect();
        assert_eq!(splits, vec![Split::Train, Split::Train, Split::Train, Split::Test]);
    }

    #[test]
    fn disk_files_match_memory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = one_disk((3.0, -3.0), 1.0);
        let manifest = generate_synthetic(&spec, dir.path()).unwrap();
        let loaded = manifest.load_pairs(None).unwrap();
        let mem = render_synthetic(&spec).unwrap();
        for (a, b) in loaded.iter().zip(&mem) {
            assert_eq!(a, &b.pair);
        }
    }
}
