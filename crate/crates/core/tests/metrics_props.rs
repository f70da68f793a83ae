use proptest::prelude::*;
use unaah::domain::{AnnotationPair, Image, ImageSample, Mask};
use unaah::metrics::{agreement_report, core_dice, dice, iou, iou_nobk};

fn mask_strategy(w: usize, h: usize) -> impl Strategy<Value = Mask> {
    prop::collection::vec(0u8..=1, w * h).prop_map(move |d| Mask::new(w, h, d).unwrap())
}

/// Pairs with a bias toward sparse and empty masks so the filters get exercised.
fn pair_strategy() -> impl Strategy<Value = (Mask, Mask)> {
    (1usize..10, 1usize..10, 0u32..4).prop_flat_map(|(w, h, sparsity)| {
        let cell = move || {
            prop::collection::vec(0u32..(1 + sparsity * 4), w * h)
                .prop_map(move |v| Mask::new(w, h, v.into_iter().map(|x| (x == 0) as u8).collect()).unwrap())
        };
        (cell(), cell())
    })
}

fn oracle(a: &Mask, b: &Mask) -> (f64, f64) {
    let (mut inter, mut union, mut sa, mut sb) = (0u64, 0u64, 0u64, 0u64);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get(x, y), b.get(x, y));
            inter += (p && q) as u64;
            union += (p || q) as u64;
            sa += p as u64;
            sb += q as u64;
        }
    }
    let d = if sa + sb == 0 { 1.0 } else { 2.0 * inter as f64 / (sa + sb) as f64 };
    let j = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    (d, j)
}

proptest! {
    #[test]
    fn dice_and_iou_match_oracle((a, b) in pair_strategy()) {
        let (d, j) = oracle(&a, &b);
        prop_assert_eq!(dice(&a, &b).unwrap(), d);
        prop_assert_eq!(iou(&a, &b).unwrap(), j);
    }

    #[test]
    fn bounded_and_symmetric((a, b) in pair_strategy()) {
        let d = dice(&a, &b).unwrap();
        let j = iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert_eq!(j, iou(&b, &a).unwrap());
        prop_assert!(j <= d);
    }

    #[test]
    fn iou_is_dice_over_two_minus_dice((a, b) in pair_strategy()) {
        let d = dice(&a, &b).unwrap();
        prop_assert!((iou(&a, &b).unwrap() - d / (2.0 - d)).abs() < 1e-12);
    }

    #[test]
    fn self_agreement_is_perfect(a in (1usize..8, 1usize..8).prop_flat_map(|(w, h)| mask_strategy(w, h))) {
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn filtered_means_skip_empty_pairs(pairs in prop::collection::vec(pair_strategy(), 1..12)) {
        // resample every pair onto a common 6x6 grid
        let pairs: Vec<(Mask, Mask)> = pairs
            .into_iter()
            .map(|(a, b)| {
                let f = |m: &Mask| Mask::from_fn(6, 6, |x, y| m.get(x % m.width(), y % m.height()));
                (f(&a), f(&b))
            })
            .collect();
        let refs: Vec<(&Mask, &Mask)> = pairs.iter().map(|(a, b)| (a, b)).collect();
        let kept: Vec<(f64, f64)> = pairs
            .iter()
            .filter(|(a, b)| a.has_foreground() || b.has_foreground())
            .map(|(a, b)| oracle(a, b))
            .collect();
        let r = core_dice(&refs).unwrap();
        let r2 = iou_nobk(&refs).unwrap();
        if kept.is_empty() {
            prop_assert!(r.core_dice.is_none());
            prop_assert!(r2.iou_nobk.is_none());
        } else {
            let n = kept.len() as f64;
            let cd = kept.iter().map(|k| k.0).sum::<f64>() / n;
            let nb = kept.iter().map(|k| k.1).sum::<f64>() / n;
            prop_assert!((r.core_dice_mean().unwrap() - cd).abs() <= 1e-12);
            prop_assert!((r2.iou_nobk_mean().unwrap() - nb).abs() <= 1e-12);
            prop_assert_eq!(r.core_dice.unwrap().n, kept.len());
        }
        let all = pairs.iter().map(|(a, b)| oracle(a, b).0).sum::<f64>() / pairs.len() as f64;
        prop_assert!((r.dice.mean - all).abs() <= 1e-12);
    }
}

#[test]
fn agreement_report_of_identical_annotations_is_perfect() {
    let pairs: Vec<AnnotationPair> = (0..4)
        .map(|i| {
            let m = Mask::from_fn(5, 5, |x, y| x + y < i);
            AnnotationPair::new(ImageSample::new(Image::filled(5, 5, 1, 0.0), "g", (0, 0)).unwrap(), m.clone(), m).unwrap()
        })
        .collect();
    let r = agreement_report(&pairs).unwrap();
    assert_eq!(r.dice.mean, 1.0);
    assert_eq!(r.iou.mean, 1.0);
    assert_eq!(r.core_dice_mean(), Some(1.0));
    assert_eq!(r.iou_nobk_mean(), Some(1.0));
    // the first pair is empty and drops out of the filtered means
    assert_eq!(r.core_dice.unwrap().n, 3);
}
