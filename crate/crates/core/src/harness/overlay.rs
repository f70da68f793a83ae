//! Side-by-side panels: input, each expert's contour, each model's contour.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::domain::{AnnotationPair, Image, Mask};
use crate::error::{Error, Result};

const GAP: u32 = 2;
const ANNOTATION_COLORS: [[u8; 3]; 2] = [[40, 200, 60], [40, 110, 240]];
const MODEL_COLORS: [[u8; 3]; 4] = [[240, 60, 40], [250, 200, 30], [230, 60, 220], [30, 220, 220]];

fn gray_panel(img: &Image) -> RgbImage {
    let (w, h) = img.dims();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (img.get(c, x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        if img.channels() == 3 {
            Rgb([px(0), px(1), px(2)])
        } else {
            let v = px(0);
            Rgb([v, v, v])
        }
    })
}

/// Foreground pixels with a 4-neighbour outside the mask or on the border.
pub fn contour(mask: &Mask) -> Mask {
    let (w, h) = mask.dims();
    Mask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1))
    })
}

fn draw_contour(panel: &mut RgbImage, mask: &Mask, color: [u8; 3]) {
    let edge = contour(mask);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if edge.get(x, y) {
                panel.put_pixel(x as u32, y as u32, Rgb(color));
            }
        }
    }
}

/// Panels left to right: input, expert 1, expert 2, then one per prediction.
pub fn render_overlay(pair: &AnnotationPair, predictions: &[&Mask]) -> Result<RgbImage> {
    let (w, h) = pair.image().dims();
    for p in predictions {
        pair.image().check_matches(p)?;
    }
    let base = gray_panel(pair.image());
    let mut panels = vec![base.clone()];
    for (k, color) in ANNOTATION_COLORS.iter().enumerate() {
        let mut p = base.clone();
        draw_contour(&mut p, pair.mask(k + 1), *color);
        panels.push(p);
    }
    for (i, m) in predictions.iter().enumerate() {
        let mut p = base.clone();
        draw_contour(&mut p, m, MODEL_COLORS[i % MODEL_COLORS.len()]);
        panels.push(p);
    }
    let n = panels.len() as u32;
    let mut out = RgbImage::from_pixel(n * w as u32 + (n - 1) * GAP, h as u32, Rgb([255, 255, 255]));
    for (i, p) in panels.iter().enumerate() {
        image::imageops::replace(&mut out, p, (i as u32 * (w as u32 + GAP)) as i64, 0);
    }
    Ok(out)
}

pub fn save_overlay(path: &Path, pair: &AnnotationPair, predictions: &[&Mask]) -> Result<()> {
    let img = render_overlay(pair, predictions)?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ImageSample;

    #[test]
    fn contour_of_square_is_its_rim() {
        let m = Mask::from_fn(6, 6, |x, y| (1..5).contains(&x) && (1..5).contains(&y));
        let c = contour(&m);
        assert_eq!(c.area(), 12);
        assert!(!c.get(2, 2));
    }

    #[test]
    fn panel_layout() {
        let m = Mask::from_fn(8, 8, |x, _| x < 4);
        let pair = AnnotationPair::new(ImageSample::new(Image::filled(8, 8, 1, 0.5), "g", (0, 0)).unwrap(), m.clone(), m.clone()).unwrap();
        let img = render_overlay(&pair, &[&m, &m]).unwrap();
        assert_eq!(img.dimensions(), (5 * 8 + 4 * GAP, 8));
        assert_eq!(img.get_pixel(0, 0), &Rgb([128, 128, 128]));
        assert_eq!(img.get_pixel(8 + GAP, 0), &Rgb(ANNOTATION_COLORS[0]));
    }
}
