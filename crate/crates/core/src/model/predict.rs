use super::network::DecoderOutputs;
use crate::domain::Mask;
use crate::error::{Error, Result};

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} must lie in (0, 1)")));
    }
    Ok(())
}

/// Binarizes the aggregate foreground probability of batch item `item`:
/// a pixel is foreground iff its probability is at least `threshold`.
pub fn predict_mask(outputs: &DecoderOutputs, item: usize, threshold: f64) -> Result<Mask> {
    check_threshold(threshold)?;
    let agg = &outputs.aggregate;
    let fg = outputs.foreground(item);
    let data = fg.iter().map(|&p| (p as f64 >= threshold) as u8).collect();
    Mask::new(agg.w, agg.h, data)
}

/// Like [`predict_mask`], but first resamples the foreground probability
/// bilinearly (half-pixel centers) to `width × height`, so predictions made
/// at the network's input size can be scored against native-size masks.
pub fn predict_mask_at(
    outputs: &DecoderOutputs,
    item: usize,
    threshold: f64,
    width: usize,
    height: usize,
) -> Result<Mask> {
    check_threshold(threshold)?;
    let agg = &outputs.aggregate;
    if (agg.w, agg.h) == (width, height) {
        return predict_mask(outputs, item, threshold);
    }
    let fg = outputs.foreground(item);
    let (sw, sh) = (agg.w, agg.h);
    let src = |o: usize, out: usize, inp: usize| {
        let s = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(inp - 1), s - i0 as f64)
    };
    Ok(Mask::from_fn(width, height, |x, y| {
        let (x0, x1, lx) = src(x, width, sw);
        let (y0, y1, ly) = src(y, height, sh);
        let at = |xx: usize, yy: usize| fg[yy * sw + xx] as f64;
        let top = at(x0, y0) * (1.0 - lx) + at(x1, y0) * lx;
        let bot = at(x0, y1) * (1.0 - lx) + at(x1, y1) * lx;
        top * (1.0 - ly) + bot * ly >= threshold
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor;

    fn outputs_from_fg(w: usize, h: usize, fg: &[f32]) -> DecoderOutputs {
        let mut data: Vec<f32> = fg.iter().map(|p| 1.0 - p).collect();
        data.extend_from_slice(fg);
        let agg = Tensor::from_vec(1, 2, h, w, data);
        DecoderOutputs {
            logits: vec![agg.clone()],
            aggregate: agg,
        }
    }

    #[test]
    fn elementwise_threshold() {
        let out = outputs_from_fg(2, 2, &[0.9, 0.4, 0.5, 0.1]);
        assert_eq!(predict_mask(&out, 0, 0.5).unwrap().data(), &[1, 0, 1, 0]);
    }

    #[test]
    fn uniform_maps() {
        let bg = outputs_from_fg(3, 3, &[0.0; 9]);
        assert!(!predict_mask(&bg, 0, 0.5).unwrap().has_foreground());
        let fg = outputs_from_fg(3, 3, &[0.6; 9]);
        assert_eq!(predict_mask(&fg, 0, 0.5).unwrap(), Mask::full(3, 3));
    }

    #[test]
    fn threshold_must_be_open_unit_interval() {
        let out = outputs_from_fg(1, 1, &[0.5]);
        assert!(predict_mask(&out, 0, 0.0).is_err());
        assert!(predict_mask(&out, 0, 1.0).is_err());
    }

    #[test]
    fn upsampled_prediction_keeps_uniform_maps() {
        let fg = outputs_from_fg(2, 2, &[0.7; 4]);
        assert_eq!(predict_mask_at(&fg, 0, 0.5, 8, 8).unwrap(), Mask::full(8, 8));
        let half = outputs_from_fg(2, 1, &[0.0, 1.0]);
        let m = predict_mask_at(&half, 0, 0.5, 4, 1).unwrap();
        assert_eq!(m.data(), &[0, 0, 1, 1]);
    }
}
