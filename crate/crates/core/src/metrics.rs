//! Overlap metrics between binary masks and their dataset-level summaries.
//!
//! Conventions: two empty masks agree perfectly (Dice = IoU = 1). Filtered
//! means (core Dice, IoU without background) only count items where at
//! least one mask of the pair carries foreground. Dispersion is the
//! population standard deviation of the per-item values.

use serde::{Deserialize, Serialize};

use crate::domain::{AnnotationPair, Mask};
use crate::error::{Error, Result};

fn check_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "masks are {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `(|a|, |b|, |a ∩ b|)`.
fn counts(a: &Mask, b: &Mask) -> (usize, usize, usize) {
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        both += (x & y) as usize;
    }
    (na, nb, both)
}

fn dice_from(na: usize, nb: usize, both: usize) -> f64 {
    if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    }
}

fn iou_from(na: usize, nb: usize, both: usize) -> f64 {
    let union = na + nb - both;
    if union == 0 {
        1.0
    } else {
        both as f64 / union as f64
    }
}

/// Dice coefficient `2|a∩b| / (|a|+|b|)`.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb, both) = counts(a, b);
    Ok(dice_from(na, nb, both))
}

/// Intersection over union `|a∩b| / |a∪b|`.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb, both) = counts(a, b);
    Ok(iou_from(na, nb, both))
}

/// Mean and population standard deviation over `n` items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

/// Dataset-level agreement or performance summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: Stat,
    /// Dice over items with annotated foreground; absent when none qualify.
    pub core_dice: Option<Stat>,
    pub iou: Stat,
    /// IoU over items with annotated foreground; absent when none qualify.
    pub iou_nobk: Option<Stat>,
    pub n_items: usize,
}

impl MetricReport {
    /// Shorthand for the mean core Dice.
    pub fn core_dice_mean(&self) -> Option<f64> {
        self.core_dice.map(|s| s.mean)
    }

    pub fn iou_nobk_mean(&self) -> Option<f64> {
        self.iou_nobk.map(|s| s.mean)
    }
}

/// Per-item inputs to [`summarize`].
#[derive(Debug, Clone, Copy)]
pub struct ScoredItem {
    pub dice: f64,
    pub iou: f64,
    /// Counts toward core Dice and IoU_nobk.
    pub annotated: bool,
    /// Counts toward the reported IoU when `iou_filtered` is set.
    pub in_iou_filter: bool,
}

/// Aggregates per-item scores. With `iou_filtered`, the reported IoU averages
/// only items flagged `in_iou_filter` (falling back to all items when none are);
/// otherwise it averages every item.
pub fn summarize(items: &[ScoredItem], iou_filtered: bool) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::Data("cannot summarize an empty evaluation set".into()));
    }
    let dice_all: Vec<f64> = items.iter().map(|i| i.dice).collect();
    let iou_all: Vec<f64> = items.iter().map(|i| i.iou).collect();
    let core: Vec<f64> = items.iter().filter(|i| i.annotated).map(|i| i.dice).collect();
    let nobk: Vec<f64> = items.iter().filter(|i| i.annotated).map(|i| i.iou).collect();
    let iou = if iou_filtered {
        let f: Vec<f64> = items.iter().filter(|i| i.in_iou_filter).map(|i| i.iou).collect();
        Stat::of(&f).unwrap_or_else(|| Stat::of(&iou_all).expect("nonempty"))
    } else {
        Stat::of(&iou_all).expect("nonempty")
    };
    Ok(MetricReport {
        dice: Stat::of(&dice_all).expect("nonempty"),
        core_dice: Stat::of(&core),
        iou,
        iou_nobk: Stat::of(&nobk),
        n_items: items.len(),
    })
}

/// Scores each `(a, b)` pair; an item is "annotated" when either mask has foreground.
pub fn score_pairs(pairs: &[(&Mask, &Mask)]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Data("empty list of mask pairs".into()));
    }
    let items = pairs
        .iter()
        .map(|(a, b)| {
            check_dims(a, b)?;
            let (na, nb, both) = counts(a, b);
            let annotated = na + nb > 0;
            Ok(ScoredItem {
                dice: dice_from(na, nb, both),
                iou: iou_from(na, nb, both),
                annotated,
                in_iou_filter: annotated,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(&items, false)
}

/// Mean Dice over pairs with foreground in at least one mask (plus the
/// unfiltered mean in `dice`).
pub fn core_dice(pairs: &[(&Mask, &Mask)]) -> Result<MetricReport> {
    score_pairs(pairs)
}

/// Mean IoU over pairs with foreground in at least one mask, reported in
/// `iou_nobk`.
pub fn iou_nobk(pairs: &[(&Mask, &Mask)]) -> Result<MetricReport> {
    score_pairs(pairs)
}

/// Inter-annotator agreement (expert 1 vs expert 2) over a dataset.
pub fn agreement_report(dataset: &[AnnotationPair]) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::Data("agreement report needs at least one annotated image".into()));
    }
    let pairs: Vec<(&Mask, &Mask)> = dataset.iter().map(|p| (&p.mask_1, &p.mask_2)).collect();
    score_pairs(&pairs)
}

/// Model-vs-annotation scores for one item.
///
/// `annotations` are all experts' masks for the item: the core Dice and
/// IoU_nobk filters use "any expert annotated foreground"; the reported IoU
/// additionally admits items where the prediction has foreground.
pub fn score_prediction(pred: &Mask, target: &Mask, annotations: &[&Mask]) -> Result<ScoredItem> {
    check_dims(pred, target)?;
    let (na, nb, both) = counts(pred, target);
    let annotated = annotations.iter().any(|m| m.has_foreground());
    Ok(ScoredItem {
        dice: dice_from(na, nb, both),
        iou: iou_from(na, nb, both),
        annotated,
        in_iou_filter: annotated || na > 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `|a|=4, |b|=4`, overlap 2 on a 4×4 grid.
    fn overlap_two() -> (Mask, Mask) {
        let a = Mask::from_fn(4, 4, |_, y| y == 0);
        let b = Mask::from_fn(4, 4, |x, y| (y == 0 && x < 2) || (y == 1 && x < 2));
        (a, b)
    }

    #[test]
    fn dice_examples() {
        let (a, b) = overlap_two();
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        let c = Mask::from_fn(4, 4, |_, y| y == 3);
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        assert!(dice(&a, &Mask::empty(3, 4)).is_err());
    }

    #[test]
    fn iou_examples() {
        let (a, b) = overlap_two();
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&Mask::empty(2, 2), &Mask::empty(2, 2)).unwrap(), 1.0);
    }

    #[test]
    fn core_dice_all_empty_is_absent() {
        let e = Mask::empty(3, 3);
        let pairs = vec![(&e, &e); 3];
        let r = core_dice(&pairs).unwrap();
        assert!(r.core_dice.is_none());
        assert_eq!(r.dice.mean, 1.0);
        assert_eq!(r.n_items, 3);
        assert!(iou_nobk(&pairs).unwrap().iou_nobk.is_none());
    }

    #[test]
    fn core_dice_filters_empty_pairs() {
        let (a, b) = overlap_two();
        let e = Mask::empty(4, 4);
        let r = core_dice(&[(&e, &e), (&a, &b)]).unwrap();
        assert_eq!(r.core_dice_mean(), Some(0.5));
        assert_eq!(r.dice.mean, 0.75);
        let r = iou_nobk(&[(&e, &e), (&a, &b)]).unwrap();
        assert!((r.iou_nobk_mean().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(core_dice(&[]).is_err());
        assert!(agreement_report(&[]).is_err());
    }

    #[test]
    fn prediction_filter_admits_predicted_foreground() {
        let e = Mask::empty(2, 2);
        let p = Mask::full(2, 2);
        let item = score_prediction(&p, &e, &[&e, &e]).unwrap();
        assert!(!item.annotated);
        assert!(item.in_iou_filter);
        assert_eq!(item.iou, 0.0);
    }

    #[test]
    fn stat_is_population_std() {
        let s = Stat::of(&[0.0, 1.0]).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.std, 0.5);
    }
}
