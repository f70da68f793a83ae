use crate::domain::{AnnotationPair, Image, ImageSample, Mask};

/// Source coordinate of output index `o` under half-pixel-center mapping.
fn source_coord(o: usize, out_len: usize, in_len: usize) -> f64 {
    (o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5
}

/// Bilinear resampling with half-pixel centers.
pub fn resize_image(img: &Image, width: usize, height: usize) -> Image {
    if img.dims() == (width, height) {
        return img.clone();
    }
    let (iw, ih) = img.dims();
    Image::from_fn(width, height, img.channels(), |c, x, y| {
        img.sample_bilinear(c, source_coord(x, width, iw), source_coord(y, height, ih))
    })
}

/// Nearest-neighbour resampling at pixel centers: output `i` reads input
/// `floor((i + 0.5) · in / out)`.
pub fn resize_mask(mask: &Mask, width: usize, height: usize) -> Mask {
    if mask.dims() == (width, height) {
        return mask.clone();
    }
    let (iw, ih) = mask.dims();
    let pick = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
    Mask::from_fn(width, height, |x, y| mask.get(pick(x, width, iw), pick(y, height, ih)))
}

/// Square resize: bilinear image, nearest-neighbour masks.
pub fn resize_sample(pair: &AnnotationPair, size: usize) -> AnnotationPair {
    assert!(size > 0, "resize target must be positive");
    AnnotationPair {
        sample: ImageSample {
            image: resize_image(&pair.sample.image, size, size),
            group_id: pair.sample.group_id.clone(),
            source_offset: pair.sample.source_offset,
        },
        mask_1: resize_mask(&pair.mask_1, size, size),
        mask_2: resize_mask(&pair.mask_2, size, size),
    }
}
