//! Paired augmentation: one geometric draw moves the image and both masks
//! together; photometric changes touch the image only.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AnnotationPair, Image, ImageSample, Mask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Rotation angle range in degrees, drawn uniformly.
    pub rotation_degrees: (f64, f64),
    /// Probability of each of the horizontal and vertical flips.
    pub flip_prob: f64,
    pub crop_resize_prob: f64,
    /// Side of the crop as a fraction of the input side.
    pub crop_scale: (f64, f64),
    /// Multiplicative brightness range; `None` disables it.
    pub brightness_range: Option<(f64, f64)>,
    /// Stain-style hue shift and contrast jitter (three-channel images only).
    pub hue_contrast_jitter: bool,
    pub hue_shift: f64,
    pub contrast_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_degrees: (-180.0, 180.0),
            flip_prob: 0.5,
            crop_resize_prob: 0.5,
            crop_scale: (0.75, 1.0),
            brightness_range: Some((0.4, 1.6)),
            hue_contrast_jitter: false,
            hue_shift: 0.05,
            contrast_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    /// A configuration that leaves every sample untouched.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_degrees: (0.0, 0.0),
            flip_prob: 0.0,
            crop_resize_prob: 0.0,
            brightness_range: None,
            hue_contrast_jitter: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} {p} must be in [0, 1]")))
            }
        };
        prob("flip_prob", self.flip_prob)?;
        prob("crop_resize_prob", self.crop_resize_prob)?;
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo <= hi && lo.is_finite() && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} ({lo}, {hi}) is not an ordered range")))
            }
        };
        ordered("rotation_degrees", self.rotation_degrees)?;
        ordered("crop_scale", self.crop_scale)?;
        ordered("contrast_range", self.contrast_range)?;
        if self.crop_scale.0 <= 0.0 || self.crop_scale.1 > 1.0 {
            return Err(Error::Config("crop_scale must lie in (0, 1]".into()));
        }
        if let Some(b) = self.brightness_range {
            ordered("brightness_range", b)?;
            if b.0 < 0.0 {
                return Err(Error::Config("brightness_range must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// One sampled geometric transform, expressed as an output-to-source map.
struct Geometry {
    width: f64,
    height: f64,
    angle: f64,
    flip_x: bool,
    flip_y: bool,
    /// `(x0, y0, side_x, side_y)` of the crop in rotated/flipped coordinates.
    crop: Option<(f64, f64, f64, f64)>,
}

impl Geometry {
    fn is_identity(&self) -> bool {
        self.angle == 0.0 && !self.flip_x && !self.flip_y && self.crop.is_none()
    }

    /// Source coordinate for output pixel center `(x, y)`.
    fn source(&self, x: usize, y: usize) -> (f64, f64) {
        let (mut u, mut v) = (x as f64, y as f64);
        if let Some((x0, y0, sx, sy)) = self.crop {
            u = x0 + (u + 0.5) * sx / self.width - 0.5;
            v = y0 + (v + 0.5) * sy / self.height - 0.5;
        }
        if self.flip_x {
            u = self.width - 1.0 - u;
        }
        if self.flip_y {
            v = self.height - 1.0 - v;
        }
        if self.angle != 0.0 {
            let (cx, cy) = ((self.width - 1.0) / 2.0, (self.height - 1.0) / 2.0);
            let (s, c) = (-self.angle).sin_cos();
            let (du, dv) = (u - cx, v - cy);
            u = cx + c * du - s * dv;
            v = cy + s * du + c * dv;
        }
        (u, v)
    }

    fn inside(&self, u: f64, v: f64) -> bool {
        u > -0.5 && v > -0.5 && u < self.width - 0.5 && v < self.height - 0.5
    }

    fn warp_image(&self, img: &Image) -> Image {
        Image::from_fn(img.width(), img.height(), img.channels(), |ch, x, y| {
            let (u, v) = self.source(x, y);
            if self.inside(u, v) {
                img.sample_bilinear(ch, u, v)
            } else {
                0.0
            }
        })
    }

    fn warp_mask(&self, m: &Mask) -> Mask {
        Mask::from_fn(m.width(), m.height(), |x, y| {
            let (u, v) = self.source(x, y);
            if !self.inside(u, v) {
                return false;
            }
            let xi = (u.round().max(0.0) as usize).min(m.width() - 1);
            let yi = (v.round().max(0.0) as usize).min(m.height() - 1);
            m.get(xi, yi)
        })
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max > 0.0 { d / max } else { 0.0 };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Applies one random draw of `cfg` to `pair`.
///
/// Random numbers are drawn in a fixed order whatever the probabilities, so
/// changing one probability does not reshuffle the other draws.
pub fn augment(pair: &AnnotationPair, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> AnnotationPair {
    let angle_deg = uniform(rng, cfg.rotation_degrees);
    let flip_x = rng.random::<f64>() < cfg.flip_prob;
    let flip_y = rng.random::<f64>() < cfg.flip_prob;
    let do_crop = rng.random::<f64>() < cfg.crop_resize_prob;
    let scale = uniform(rng, cfg.crop_scale);
    let (cx, cy) = (rng.random::<f64>(), rng.random::<f64>());
    let brightness = cfg.brightness_range.map(|r| uniform(rng, r) as f32);
    let hue = uniform(rng, (-cfg.hue_shift, cfg.hue_shift)) as f32;
    let contrast = uniform(rng, cfg.contrast_range) as f32;

    let (w, h) = pair.image().dims();
    let (wf, hf) = (w as f64, h as f64);
    let geo = Geometry {
        width: wf,
        height: hf,
        angle: angle_deg.to_radians(),
        flip_x,
        flip_y,
        crop: (do_crop && scale < 1.0).then(|| {
            let (sx, sy) = (wf * scale, hf * scale);
            ((wf - sx) * cx, (hf - sy) * cy, sx, sy)
        }),
    };

    let (mut image, mask_1, mask_2) = if geo.is_identity() {
        (pair.image().clone(), pair.mask_1.clone(), pair.mask_2.clone())
    } else {
        (geo.warp_image(pair.image()), geo.warp_mask(&pair.mask_1), geo.warp_mask(&pair.mask_2))
    };

    if let Some(b) = brightness {
        if b != 1.0 {
            image.map_in_place(|_, v| (v * b).clamp(0.0, 1.0));
        }
    }
    if cfg.hue_contrast_jitter && image.channels() == 3 {
        let n = w * h;
        let mut means = [0f32; 3];
        for (c, m) in means.iter_mut().enumerate() {
            *m = image.data()[c * n..(c + 1) * n].iter().sum::<f32>() / n as f32;
        }
        for y in 0..h {
            for x in 0..w {
                let (hh, s, v) = rgb_to_hsv(image.get(0, x, y), image.get(1, x, y), image.get(2, x, y));
                let (r, g, b) = hsv_to_rgb(hh + hue, s, v);
                for (c, val) in [r, g, b].into_iter().enumerate() {
                    let out = (val - means[c]) * contrast + means[c];
                    image.set(c, x, y, out.clamp(0.0, 1.0));
                }
            }
        }
    }

    AnnotationPair {
        sample: ImageSample {
            image,
            group_id: pair.sample.group_id.clone(),
            source_offset: pair.sample.source_offset,
        },
        mask_1,
        mask_2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::rng::stream;

    fn sample() -> AnnotationPair {
        let img = Image::from_fn(9, 7, 1, |_, x, y| (x * 7 + y) as f32 / 70.0);
        let m1 = Mask::from_fn(9, 7, |x, y| x < 3 && y < 2);
        let m2 = Mask::from_fn(9, 7, |x, _| x == 8);
        AnnotationPair::new(ImageSample::new(img, "g", (0, 0)).unwrap(), m1, m2).unwrap()
    }

    #[test]
    fn identity_config_is_identity() {
        let p = sample();
        let mut rng = stream(1, 0, 0);
        assert_eq!(augment(&p, &AugmentConfig::identity(), &mut rng), p);
    }

    #[test]
    fn half_turn_reverses_indices() {
        let p = sample();
        let cfg = AugmentConfig {
            rotation_degrees: (180.0, 180.0),
            ..AugmentConfig::identity()
        };
        let out = augment(&p, &cfg, &mut stream(3, 0, 0));
        for k in 1..=2 {
            let expect = Mask::from_fn(9, 7, |x, y| p.mask(k).get(8 - x, 6 - y));
            assert_eq!(out.mask(k), &expect);
        }
        assert!((out.image().get(0, 0, 0) - p.image().get(0, 8, 6)).abs() < 1e-5);
    }

    #[test]
    fn masks_stay_binary_and_aligned() {
        let p = sample();
        for i in 0..20 {
            let out = augment(&p, &AugmentConfig::default(), &mut stream(5, 1, i));
            assert_eq!(out.mask_1.dims(), (9, 7));
            assert!(out.mask_1.data().iter().all(|&v| v <= 1));
            assert!(out.image().data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn brightness_only_touches_image() {
        let p = sample();
        let cfg = AugmentConfig {
            brightness_range: Some((0.5, 0.5)),
            ..AugmentConfig::identity()
        };
        let out = augment(&p, &cfg, &mut stream(0, 0, 0));
        assert_eq!(out.mask_1, p.mask_1);
        assert!((out.image().get(0, 4, 4) - 0.5 * p.image().get(0, 4, 4)).abs() < 1e-7);
    }

    #[test]
    fn hsv_roundtrip() {
        for &(r, g, b) in &[(0.8, 0.5, 0.7), (0.1, 0.9, 0.3), (0.2, 0.2, 0.9), (0.5, 0.5, 0.5)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-5 && (g - g2).abs() < 1e-5 && (b - b2).abs() < 1e-5);
        }
    }
}
