use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};

/// Binary per-pixel annotation; 1 marks the region of interest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!("mask must be nonempty, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Data(format!(
                "mask data has {} pixels, expected {width}x{height}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("mask pixel value {v} is not 0 or 1")));
        }
        Ok(Mask { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask must be nonempty");
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Mask::empty(width, height);
        m.data.iter_mut().for_each(|v| *v = 1);
        m
    }

    /// Builds a mask from a predicate over `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Mask::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y) as u8;
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn has_foreground(&self) -> bool {
        self.data.contains(&1)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Mask {
        assert!(x0 + width <= self.width && y0 + height <= self.height, "crop out of bounds");
        Mask::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Foreground centroid `(x, y)`, or `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Reads a PNG; any nonzero luminance is foreground.
    pub fn load_png(path: &Path) -> Result<Mask> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let luma = img.into_luma16();
        let (w, h) = luma.dimensions();
        let data = luma.as_raw().iter().map(|&v| (v != 0) as u8).collect();
        Mask::new(w as usize, h as usize, data)
    }

    /// Writes an 8-bit single-channel PNG with foreground stored as 255.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        });
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary_values_and_zero_dims() {
        assert!(Mask::new(2, 1, vec![0, 2]).is_err());
        assert!(Mask::new(0, 1, vec![]).is_err());
        assert!(Mask::new(2, 2, vec![0, 1, 1]).is_err());
        assert!(Mask::new(2, 2, vec![0, 1, 1, 0]).is_ok());
    }

    #[test]
    fn crop_and_centroid() {
        let m = Mask::from_fn(4, 4, |x, y| x >= 2 && y >= 2);
        assert_eq!(m.area(), 4);
        assert_eq!(m.centroid(), Some((2.5, 2.5)));
        let c = m.crop(1, 1, 2, 2);
        assert_eq!(c.data(), &[0, 0, 0, 1]);
        assert_eq!(Mask::empty(3, 3).centroid(), None);
    }
}
