use proptest::prelude::*;
use unaah::domain::Mask;
use unaah::losses::{
    cross_entropy, focal_term, grad_wrt_logits, hybrid_ce, hybrid_focal, hybrid_loss, hybrid_loss_with_weights,
    LossConfig, LossMode, ProbMap,
};

const W: usize = 4;
const H: usize = 3;

fn instance() -> impl Strategy<Value = (Vec<f64>, Mask, Mask)> {
    (
        prop::collection::vec(-4.0f64..4.0, 2 * W * H),
        prop::collection::vec(0u8..=1, W * H),
        prop::collection::vec(0u8..=1, W * H),
    )
        .prop_map(|(z, a, b)| (z, Mask::new(W, H, a).unwrap(), Mask::new(W, H, b).unwrap()))
}

fn probs(z: &[f64]) -> ProbMap {
    ProbMap::from_logits(W, H, 2, z).unwrap()
}

fn focal_cfg(w: f64, cw: f64, gamma: f64) -> LossConfig {
    LossConfig {
        w,
        cw,
        gamma,
        mode: LossMode::HybridFocal,
        ..Default::default()
    }
}

proptest! {
    #[test]
    fn losses_are_non_negative((z, a, b) in instance(), w in 0.0f64..=1.0, gamma in 0.0f64..4.0) {
        let p = probs(&z);
        prop_assert!(hybrid_ce(&p, &a, &b, w).unwrap().total >= 0.0);
        prop_assert!(hybrid_focal(&p, &a, &b, &focal_cfg(w, 0.25, gamma)).unwrap().total >= 0.0);
    }

    #[test]
    fn expert_swap_symmetry((z, a, b) in instance(), w in 0.0f64..=1.0) {
        let p = probs(&z);
        let l = hybrid_ce(&p, &a, &b, w).unwrap().total;
        let s = hybrid_ce(&p, &b, &a, 1.0 - w).unwrap().total;
        prop_assert!((l - s).abs() <= 1e-12);
        let lf = hybrid_focal(&p, &a, &b, &focal_cfg(w, 0.25, 2.0)).unwrap().total;
        let sf = hybrid_focal(&p, &b, &a, &focal_cfg(1.0 - w, 0.25, 2.0)).unwrap().total;
        prop_assert!((lf - sf).abs() <= 1e-12);
    }

    #[test]
    fn affine_in_w((z, a, b) in instance()) {
        let p = probs(&z);
        let cfg = focal_cfg(0.5, 0.25, 2.0);
        for mode in [LossMode::HybridCe, LossMode::HybridFocal] {
            let cfg = LossConfig { mode, ..cfg.clone() };
            let l = |w: f64| hybrid_loss(&p, &a, &b, &cfg, w).unwrap().total;
            let (l0, l1, lh) = (l(0.0), l(1.0), l(0.3));
            prop_assert!((lh - (0.7 * l0 + 0.3 * l1)).abs() <= 1e-10);
        }
    }

    #[test]
    fn focal_with_unit_weight_and_no_focusing_is_ce((z, a, b) in instance(), w in 0.0f64..=1.0) {
        let p = probs(&z);
        let ce = hybrid_ce(&p, &a, &b, w).unwrap().total;
        let f = hybrid_focal(&p, &a, &b, &focal_cfg(w, 1.0, 0.0)).unwrap().total;
        prop_assert!((ce - f).abs() <= 1e-12);
    }

    #[test]
    fn focal_never_exceeds_weighted_ce(ce in 0.0f64..20.0, gamma in 0.0f64..5.0) {
        prop_assert!(focal_term(ce, 0.25, gamma) <= 0.25 * ce + 1e-15);
    }

    #[test]
    fn components_reconstruct_total((z, a, b) in instance(), w in 0.0f64..=1.0) {
        let p = probs(&z);
        for cfg in [LossConfig { mode: LossMode::HybridCe, ..Default::default() }, focal_cfg(0.5, 0.25, 2.0)] {
            let v = hybrid_loss(&p, &a, &b, &cfg, w).unwrap();
            prop_assert!((v.reconstruct(cfg.mode, cfg.cw, cfg.gamma) - v.total).abs() <= 1e-12);
            prop_assert!((v.ce_1 - cross_entropy(&p, &a).unwrap()).abs() <= 1e-15);
        }
    }

    #[test]
    fn logit_gradient_matches_central_differences((z, a, b) in instance(), w in 0.0f64..=1.0, focal in any::<bool>()) {
        let cfg = if focal { focal_cfg(w, 0.25, 2.0) } else { LossConfig { w, ..Default::default() } };
        let p = probs(&z);
        let (_, t) = hybrid_loss_with_weights(&p, &a, &b, &cfg, w).unwrap();
        let g = grad_wrt_logits(&p, &t);
        let h = 1e-5;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (hybrid_loss(&probs(&zp), &a, &b, &cfg, w).unwrap().total
                - hybrid_loss(&probs(&zm), &a, &b, &cfg, w).unwrap().total)
                / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 + 1e-4 * fd.abs().max(g[i].abs()), "i={} fd={} g={}", i, fd, g[i]);
        }
    }
}
