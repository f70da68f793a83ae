use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::mask::Mask;
use crate::error::{Error, Result};

/// Channel-planar image with values in `[0, 1]`. One channel for
/// ultrasound-style data, three for stained tissue.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!("image must be nonempty, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Data(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Data("image data length does not match its dimensions".into()));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("image values must lie in [0, 1]".into()));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Image::new(width, height, channels, vec![value; width * height * channels])
            .expect("valid constant image")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, x, y).clamp(0.0, 1.0));
                }
            }
        }
        Image::new(width, height, channels, data).expect("valid generated image")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Planar data: channel-major, then rows.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn map_in_place(&mut self, mut f: impl FnMut(usize, f32) -> f32) {
        let plane = self.width * self.height;
        for (i, v) in self.data.iter_mut().enumerate() {
            *v = f(i / plane, *v).clamp(0.0, 1.0);
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Image {
        assert!(x0 + width <= self.width && y0 + height <= self.height, "crop out of bounds");
        Image::from_fn(width, height, self.channels, |c, x, y| self.get(c, x0 + x, y0 + y))
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at integers),
    /// clamped to the border.
    pub fn sample_bilinear(&self, c: usize, fx: f64, fy: f64) -> f32 {
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (lx, ly) = ((fx - x0 as f64) as f32, (fy - y0 as f64) as f32);
        let top = self.get(c, x0, y0) * (1.0 - lx) + self.get(c, x1, y0) * lx;
        let bot = self.get(c, x0, y1) * (1.0 - lx) + self.get(c, x1, y1) * lx;
        top * (1.0 - ly) + bot * ly
    }

    pub fn check_matches(&self, mask: &Mask) -> Result<()> {
        if self.dims() != mask.dims() {
            return Err(Error::Shape(format!(
                "image is {}x{} but mask is {}x{}",
                self.width,
                self.height,
                mask.width(),
                mask.height()
            )));
        }
        Ok(())
    }

    /// Reads an 8- or 16-bit PNG, normalizing by the maximum representable value.
    /// Alpha is dropped; anything with color becomes three channels.
    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Image::from_dynamic(img))
    }

    pub fn from_dynamic(img: DynamicImage) -> Image {
        let color = img.color();
        let wide = color.bytes_per_pixel() / color.channel_count() > 1;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let interleaved: (Vec<f32>, usize) = match (color.has_color(), wide) {
            (false, false) => (img.into_luma8().into_raw().iter().map(|&v| v as f32 / 255.0).collect(), 1),
            (false, true) => (img.into_luma16().into_raw().iter().map(|&v| v as f32 / 65535.0).collect(), 1),
            (true, false) => (img.into_rgb8().into_raw().iter().map(|&v| v as f32 / 255.0).collect(), 3),
            (true, true) => (img.into_rgb16().into_raw().iter().map(|&v| v as f32 / 65535.0).collect(), 3),
        };
        let (src, ch) = interleaved;
        let mut data = vec![0.0; w * h * ch];
        for (i, px) in src.chunks(ch).enumerate() {
            for (c, v) in px.iter().enumerate() {
                data[c * w * h + i] = *v;
            }
        }
        Image::new(w, h, ch, data).expect("decoded PNG is a valid image")
    }

    /// Writes an 8-bit PNG (gray or RGB).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let q = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let res = if self.channels == 1 {
            GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
                image::Luma([q(self.get(0, x as usize, y as usize))])
            })
            .save(path)
        } else {
            RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                image::Rgb([q(self.get(0, x, y)), q(self.get(1, x, y)), q(self.get(2, x, y))])
            })
            .save(path)
        };
        res.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// An image plus provenance used for group-aware splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub image: Image,
    pub group_id: String,
    /// `(row, col)` of the patch origin in the parent image.
    pub source_offset: (usize, usize),
}

impl ImageSample {
    pub fn new(image: Image, group_id: impl Into<String>, source_offset: (usize, usize)) -> Result<Self> {
        let group_id = group_id.into();
        if group_id.is_empty() {
            return Err(Error::Data("group id must be nonempty".into()));
        }
        Ok(ImageSample {
            image,
            group_id,
            source_offset,
        })
    }
}

/// One image annotated independently by two experts.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationPair {
    pub sample: ImageSample,
    pub mask_1: Mask,
    pub mask_2: Mask,
}

impl AnnotationPair {
    pub fn new(sample: ImageSample, mask_1: Mask, mask_2: Mask) -> Result<Self> {
        sample.image.check_matches(&mask_1)?;
        sample.image.check_matches(&mask_2)?;
        Ok(AnnotationPair { sample, mask_1, mask_2 })
    }

    pub fn image(&self) -> &Image {
        &self.sample.image
    }

    /// Annotation by expert `k` (1-based).
    pub fn mask(&self, k: usize) -> &Mask {
        match k {
            1 => &self.mask_1,
            2 => &self.mask_2,
            _ => panic!("annotations are numbered 1 and 2, got {k}"),
        }
    }
}

/// Which expert's annotation a report refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Annotator {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Annotator {
    pub fn index(self) -> usize {
        match self {
            Annotator::One => 1,
            Annotator::Two => 2,
        }
    }

    pub fn from_index(k: usize) -> Option<Self> {
        match k {
            1 => Some(Annotator::One),
            2 => Some(Annotator::Two),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_rejects_mismatched_dims() {
        let s = ImageSample::new(Image::filled(4, 4, 1, 0.5), "g", (0, 0)).unwrap();
        assert!(AnnotationPair::new(s.clone(), Mask::empty(4, 4), Mask::empty(4, 3)).is_err());
        assert!(AnnotationPair::new(s, Mask::empty(4, 4), Mask::empty(4, 4)).is_ok());
    }

    #[test]
    fn empty_group_id_is_rejected() {
        assert!(ImageSample::new(Image::filled(2, 2, 1, 0.0), "", (0, 0)).is_err());
    }

    #[test]
    fn bilinear_sample_interpolates_between_pixels() {
        let img = Image::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert!((img.sample_bilinear(0, 0.25, 0.0) - 0.25).abs() < 1e-6);
        assert_eq!(img.sample_bilinear(0, 5.0, 0.0), 1.0);
    }
}
