//! Hybrid losses over the aggregated prediction and two experts' masks.
//!
//! With `CE_k` the mean per-pixel cross-entropy of the aggregate prediction
//! `p` against annotation `k`:
//!
//! * hybrid CE:    `w·CE_1 + (1−w)·CE_2`
//! * hybrid focal: `w·cw·(1−e^{−CE_1})^γ·CE_1 + (1−w)·cw·(1−e^{−CE_2})^γ·CE_2`
//!
//! Both are computed once per image on the aggregate, so a single backward
//! pass carries both experts' terms into every decoder and the shared encoder.

use serde::{Deserialize, Serialize};

use crate::domain::Mask;
use crate::error::{Error, Result};
use crate::metrics;

/// Smallest probability fed to the logarithm.
const PROB_FLOOR: f64 = 1e-12;

/// Floors `p` at [`PROB_FLOOR`] but lets NaN through so divergence stays visible.
fn floored(p: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        p.max(PROB_FLOOR)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    HybridCe,
    HybridFocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightSchedule {
    /// `w` stays at its configured value.
    #[default]
    Fixed,
    /// `w` from [`init_weight`] on the training set, then fixed.
    AgreementInit,
    /// `w` re-estimated every epoch by [`adaptive_weight`].
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of expert 1's term.
    pub w: f64,
    /// Positive-class weight scaling each focal term.
    pub cw: f64,
    /// Focusing exponent.
    pub gamma: f64,
    pub mode: LossMode,
    pub schedule: WeightSchedule,
    pub w_clip: (f64, f64),
    /// Gain on disagreement for [`init_weight`]; 0 keeps `w = 0.5`.
    pub beta: f64,
    /// Gain on the Dice gap for [`adaptive_weight`].
    pub kappa: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w: 0.5,
            cw: 0.25,
            gamma: 2.0,
            mode: LossMode::HybridCe,
            schedule: WeightSchedule::Fixed,
            w_clip: (0.25, 0.75),
            beta: 0.0,
            kappa: 4.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("loss: {m}")));
        if !(0.0..=1.0).contains(&self.w) {
            return bad(format!("w = {} outside [0, 1]", self.w));
        }
        if !(self.w_clip.0 < self.w_clip.1) || self.w_clip.0 < 0.0 || self.w_clip.1 > 1.0 {
            return bad(format!("w_clip {:?} must satisfy 0 <= low < high <= 1", self.w_clip));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma = {} must be >= 0", self.gamma));
        }
        if !(self.cw > 0.0) || !self.cw.is_finite() {
            return bad(format!("cw = {} must be > 0", self.cw));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return bad(format!("kappa = {} must be > 0", self.kappa));
        }
        if !self.beta.is_finite() {
            return bad("beta must be finite".into());
        }
        Ok(())
    }
}

/// Per-pixel class probabilities, class-planar (`[class][y][x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ProbMap {
    /// Validates shape, range and per-pixel normalization (within 1e-6).
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || classes < 2 || data.len() != width * height * classes {
            return Err(Error::Shape(format!(
                "probability map {width}x{height}x{classes} does not match {} values",
                data.len()
            )));
        }
        let plane = width * height;
        for px in 0..plane {
            let mut s = 0.0;
            for c in 0..classes {
                let v = data[c * plane + px];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Data(format!("probability {v} at pixel {px} outside [0, 1]")));
                }
                s += v;
            }
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Data(format!("probabilities at pixel {px} sum to {s}, not 1")));
            }
        }
        Ok(ProbMap {
            width,
            height,
            classes,
            data,
        })
    }

    /// Softmax over class-planar logits.
    pub fn from_logits(width: usize, height: usize, classes: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != width * height * classes || classes < 2 {
            return Err(Error::Shape("logit buffer does not match map dimensions".into()));
        }
        let plane = width * height;
        let mut data = vec![0.0; logits.len()];
        let mut z = vec![0.0; classes];
        for px in 0..plane {
            for c in 0..classes {
                z[c] = logits[c * plane + px];
            }
            crate::model::network::softmax_in_place(&mut z);
            for c in 0..classes {
                data[c * plane + px] = z[c];
            }
        }
        Ok(ProbMap {
            width,
            height,
            classes,
            data,
        })
    }

    /// Two-class map from foreground probabilities.
    pub fn from_foreground(width: usize, height: usize, fg: &[f64]) -> Result<Self> {
        let mut data: Vec<f64> = fg.iter().map(|p| 1.0 - p).collect();
        data.extend_from_slice(fg);
        ProbMap::new(width, height, 2, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn prob(&self, class: usize, px: usize) -> f64 {
        self.data[class * self.width * self.height + px]
    }

    fn check_mask(&self, a: &Mask) -> Result<()> {
        if a.dims() != (self.width, self.height) {
            return Err(Error::Shape(format!(
                "prediction is {}x{} but annotation is {}x{}",
                self.width,
                self.height,
                a.width(),
                a.height()
            )));
        }
        Ok(())
    }
}

/// Loss components for one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub ce_1: f64,
    pub ce_2: f64,
    pub w_used: f64,
}

impl LossValue {
    /// Recomputes `total` from the components under `mode`.
    pub fn reconstruct(&self, mode: LossMode, cw: f64, gamma: f64) -> f64 {
        let w = self.w_used;
        match mode {
            LossMode::HybridCe => w * self.ce_1 + (1.0 - w) * self.ce_2,
            LossMode::HybridFocal => w * focal_term(self.ce_1, cw, gamma) + (1.0 - w) * focal_term(self.ce_2, cw, gamma),
        }
    }
}

/// Mean per-pixel cross-entropy of `p` against the binary annotation `a`.
pub fn cross_entropy(p: &ProbMap, a: &Mask) -> Result<f64> {
    p.check_mask(a)?;
    let n = a.data().len();
    let s: f64 = a
        .data()
        .iter()
        .enumerate()
        .map(|(px, &t)| -floored(p.prob(t as usize, px)).ln())
        .sum();
    Ok(s / n as f64)
}

/// `cw·(1−e^{−ce})^γ·ce`.
pub fn focal_term(ce: f64, cw: f64, gamma: f64) -> f64 {
    let u = -(-ce).exp_m1();
    cw * modulating(u, gamma) * ce
}

fn modulating(u: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        u.powf(gamma)
    }
}

/// `d focal_term / d ce`.
fn focal_term_slope(ce: f64, cw: f64, gamma: f64) -> f64 {
    let u = -(-ce).exp_m1();
    let growth = if gamma == 0.0 || u == 0.0 {
        0.0
    } else {
        gamma * u.powf(gamma - 1.0) * (-ce).exp() * ce
    };
    cw * (growth + modulating(u, gamma))
}

/// Hybrid weighted cross-entropy for one image.
pub fn hybrid_ce(p: &ProbMap, a1: &Mask, a2: &Mask, w: f64) -> Result<LossValue> {
    let ce_1 = cross_entropy(p, a1)?;
    let ce_2 = cross_entropy(p, a2)?;
    Ok(LossValue {
        total: w * ce_1 + (1.0 - w) * ce_2,
        ce_1,
        ce_2,
        w_used: w,
    })
}

/// Hybrid focal loss for one image, using `cfg.w`, `cfg.cw` and `cfg.gamma`.
pub fn hybrid_focal(p: &ProbMap, a1: &Mask, a2: &Mask, cfg: &LossConfig) -> Result<LossValue> {
    let ce_1 = cross_entropy(p, a1)?;
    let ce_2 = cross_entropy(p, a2)?;
    let w = cfg.w;
    Ok(LossValue {
        total: w * focal_term(ce_1, cfg.cw, cfg.gamma) + (1.0 - w) * focal_term(ce_2, cfg.cw, cfg.gamma),
        ce_1,
        ce_2,
        w_used: w,
    })
}

/// Evaluates the configured hybrid loss with weight `w` (overriding `cfg.w`).
pub fn hybrid_loss(p: &ProbMap, a1: &Mask, a2: &Mask, cfg: &LossConfig, w: f64) -> Result<LossValue> {
    match cfg.mode {
        LossMode::HybridCe => hybrid_ce(p, a1, a2, w),
        LossMode::HybridFocal => hybrid_focal(p, a1, a2, &LossConfig { w, ..cfg.clone() }),
    }
}

/// Sensitivities `T[c][px] = ∂total / ∂(−ln p_c(px))` of a hybrid loss.
///
/// Every hybrid loss is `Σ_k f_k(CE_k)`, so `T` collects
/// `f_k'(CE_k) / N` on the class each annotation marks at each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetWeights {
    pub classes: usize,
    pub data: Vec<f64>,
}

/// Loss value and its sensitivities for one image.
pub fn hybrid_loss_with_weights(
    p: &ProbMap,
    a1: &Mask,
    a2: &Mask,
    cfg: &LossConfig,
    w: f64,
) -> Result<(LossValue, TargetWeights)> {
    let value = hybrid_loss(p, a1, a2, cfg, w)?;
    let (s1, s2) = match cfg.mode {
        LossMode::HybridCe => (w, 1.0 - w),
        LossMode::HybridFocal => (
            w * focal_term_slope(value.ce_1, cfg.cw, cfg.gamma),
            (1.0 - w) * focal_term_slope(value.ce_2, cfg.cw, cfg.gamma),
        ),
    };
    let plane = p.width * p.height;
    let inv_n = 1.0 / plane as f64;
    let mut data = vec![0.0; p.classes * plane];
    for (a, s) in [(a1, s1), (a2, s2)] {
        for (px, &t) in a.data().iter().enumerate() {
            data[t as usize * plane + px] += s * inv_n;
        }
    }
    Ok((
        value,
        TargetWeights {
            classes: p.classes,
            data,
        },
    ))
}

/// Gradient w.r.t. the logits `z` of `p = softmax(z)`:
/// `∂L/∂z_c = p_c·Σ_c' T_c' − T_c`.
pub fn grad_wrt_logits(p: &ProbMap, t: &TargetWeights) -> Vec<f64> {
    let plane = p.width * p.height;
    let mut g = vec![0.0; p.data.len()];
    for px in 0..plane {
        let tsum: f64 = (0..p.classes).map(|c| t.data[c * plane + px]).sum();
        for c in 0..p.classes {
            let i = c * plane + px;
            g[i] = p.data[i] * tsum - t.data[i];
        }
    }
    g
}

/// Gradient w.r.t. the probabilities themselves: `∂L/∂p_c = −T_c / p_c`.
pub fn grad_wrt_probs(p: &ProbMap, t: &TargetWeights) -> Vec<f64> {
    p.data
        .iter()
        .zip(&t.data)
        .map(|(&pv, &tv)| if tv == 0.0 { 0.0 } else { -tv / floored(pv) })
        .collect()
}

/// Agreement statistic `(Dice + IoU) / 2` of two annotations.
pub fn pair_agreement(a1: &Mask, a2: &Mask) -> Result<f64> {
    Ok((metrics::dice(a1, a2)? + metrics::iou(a1, a2)?) / 2.0)
}

/// Initial expert-1 weight `clip(0.5 + β·(1 − s), w_clip)` with `s` the
/// pair agreement. The default `β = 0` yields `w = 0.5`.
pub fn init_weight(a1: &Mask, a2: &Mask, cfg: &LossConfig) -> Result<f64> {
    let s = pair_agreement(a1, a2)?;
    Ok(weight_from_agreement(s, cfg))
}

pub fn weight_from_agreement(s: f64, cfg: &LossConfig) -> f64 {
    (0.5 + cfg.beta * (1.0 - s)).clamp(cfg.w_clip.0, cfg.w_clip.1)
}

/// Per-epoch expert-1 weight: `clip(sigmoid(κ·(m2 − m1)), w_clip)`, where
/// `m_k` is the previous epoch's Dice of decoder `k` against annotation `k`.
/// The lagging decoder's annotation gets the larger share.
///
/// This update rule is this crate's own choice for per-epoch dynamic weighting.
pub fn adaptive_weight(m1: f64, m2: f64, kappa: f64, w_clip: (f64, f64)) -> f64 {
    let s = 1.0 / (1.0 + (-kappa * (m2 - m1)).exp());
    s.clamp(w_clip.0, w_clip.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pixel(fg: f64) -> ProbMap {
        ProbMap::from_foreground(1, 1, &[fg]).unwrap()
    }

    #[test]
    fn single_pixel_hybrid_ce_by_hand() {
        let p = single_pixel(0.8);
        let fg = Mask::full(1, 1);
        let bg = Mask::empty(1, 1);
        let v = hybrid_ce(&p, &fg, &bg, 0.5).unwrap();
        let expect = 0.5 * -(0.8f64.ln()) + 0.5 * -(0.2f64.ln());
        assert!((v.total - expect).abs() < 1e-15);
        assert!((v.total - 0.91629).abs() < 1e-5);
    }

    #[test]
    fn degenerate_weight_selects_expert_one() {
        let p = ProbMap::from_foreground(2, 1, &[0.3, 0.9]).unwrap();
        let a1 = Mask::new(2, 1, vec![0, 1]).unwrap();
        let a2 = Mask::new(2, 1, vec![1, 1]).unwrap();
        let v = hybrid_ce(&p, &a1, &a2, 1.0).unwrap();
        assert_eq!(v.total, cross_entropy(&p, &a1).unwrap());
    }

    #[test]
    fn identical_targets_make_w_irrelevant() {
        let p = ProbMap::from_foreground(2, 1, &[0.3, 0.9]).unwrap();
        let a = Mask::new(2, 1, vec![0, 1]).unwrap();
        let base = hybrid_ce(&p, &a, &a, 0.0).unwrap().total;
        for w in [0.3, 1.0] {
            assert!((hybrid_ce(&p, &a, &a, w).unwrap().total - base).abs() < 1e-15);
        }
    }

    #[test]
    fn focal_by_hand() {
        // CE = 1 exactly when p(target) = e^{-1}
        let q = (-1.0f64).exp();
        let p = single_pixel(q);
        let fg = Mask::full(1, 1);
        let cfg = LossConfig {
            w: 0.5,
            cw: 0.25,
            gamma: 2.0,
            ..Default::default()
        };
        let v = hybrid_focal(&p, &fg, &fg, &cfg).unwrap();
        assert!((v.ce_1 - 1.0).abs() < 1e-15);
        let expect = 0.25 * (1.0 - (-1.0f64).exp()).powi(2);
        assert!((v.total - expect).abs() < 1e-15);
        assert!((v.total - 0.09989).abs() < 1e-5);
    }

    #[test]
    fn focal_vanishes_superlinearly() {
        let ratio = |x: f64| focal_term(x, 1.0, 2.0) / x;
        assert!(ratio(1e-2) < 1e-3);
        assert!(ratio(1e-3) < ratio(1e-2) / 50.0);
    }

    #[test]
    fn non_normalized_probabilities_are_rejected() {
        assert!(ProbMap::new(1, 1, 2, vec![0.5, 0.6]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = single_pixel(0.5);
        assert!(hybrid_ce(&p, &Mask::empty(2, 1), &Mask::empty(1, 1), 0.5).is_err());
    }

    #[test]
    fn init_weight_examples() {
        let a = Mask::from_fn(4, 4, |_, y| y == 0);
        let b = Mask::from_fn(4, 4, |x, y| x < 2 && y < 2);
        let cfg = LossConfig::default();
        assert_eq!(init_weight(&a, &a, &cfg).unwrap(), 0.5);
        assert_eq!(init_weight(&a, &b, &cfg).unwrap(), 0.5);
        assert!((pair_agreement(&a, &b).unwrap() - 5.0 / 12.0).abs() < 1e-15);
        let eager = LossConfig { beta: 1.0, ..cfg };
        assert!((init_weight(&a, &b, &eager).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn adaptive_weight_examples() {
        assert_eq!(adaptive_weight(0.6, 0.6, 3.0, (0.25, 0.75)), 0.5);
        let w = adaptive_weight(0.9, 0.7, 1.0, (0.25, 0.75));
        assert!((w - 1.0 / (1.0 + 0.2f64.exp())).abs() < 1e-15);
        assert!((w - 0.45017).abs() < 1e-5);
        assert_eq!(adaptive_weight(0.0, 1.0, 10.0, (0.25, 0.75)), 0.75);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig { w: 1.5, ..Default::default() }.validate().is_err());
        assert!(LossConfig { w_clip: (0.6, 0.4), ..Default::default() }.validate().is_err());
        assert!(LossConfig { gamma: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { cw: 0.0, ..Default::default() }.validate().is_err());
    }
}
