use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unaah::model::{aggregate, Aggregation, Mode, ModelSpec, Network, Tensor, Upsample, Visit};
use unaah::Error;

fn conv(i: usize, o: usize, k: usize, bias: bool) -> usize {
    i * o * k * k + if bias { o } else { 0 }
}

fn block(i: usize, o: usize) -> usize {
    conv(i, o, 3, false) + 2 * o + conv(o, o, 3, false) + 2 * o + if i != o { conv(i, o, 1, false) } else { 0 }
}

fn stage(i: usize, o: usize, depth: usize) -> usize {
    block(i, o) + (depth - 1) * block(o, o)
}

/// Parameter count written out layer by layer from the architecture description.
fn expected_params(spec: &ModelSpec) -> usize {
    let ch = &spec.stage_channels;
    let d = spec.blocks_per_stage;
    let mut enc = 0;
    let mut prev = spec.in_channels;
    for &c in ch {
        enc += stage(prev, c, d);
        prev = c;
    }
    let bottleneck = 2 * prev;
    enc += stage(prev, bottleneck, d);
    let mut dec = 0;
    let mut below = bottleneck;
    for &skip in ch.iter().rev() {
        let up_out = match spec.upsample {
            Upsample::TransposedConv => {
                dec += below * skip * 4 + skip;
                skip
            }
            Upsample::Bilinear => below,
        };
        dec += stage(up_out + skip, skip, d);
        below = skip;
    }
    dec += conv(ch[0], spec.num_classes, 1, true);
    enc + spec.num_decoders * dec
}

fn random_input(n: usize, c: usize, s: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(n, c, s, s, (0..n * c * s * s).map(|_| rng.random::<f32>()).collect())
}

fn small(decoders: usize) -> ModelSpec {
    ModelSpec {
        stage_channels: vec![3, 6],
        num_decoders: decoders,
        ..Default::default()
    }
}

#[test]
fn parameter_count_matches_layerwise_oracle() {
    for spec in [
        ModelSpec::default(),
        ModelSpec {
            stage_channels: vec![16, 32, 64],
            ..Default::default()
        },
        ModelSpec {
            stage_channels: vec![4, 8],
            num_decoders: 3,
            blocks_per_stage: 2,
            upsample: Upsample::Bilinear,
            in_channels: 3,
            ..Default::default()
        },
        ModelSpec {
            stage_channels: vec![5],
            num_decoders: 1,
            ..Default::default()
        },
    ] {
        let mut net = Network::init(&spec, 0).unwrap();
        assert_eq!(net.trainable_param_count(), expected_params(&spec), "{spec:?}");
    }
}

#[test]
fn one_encoder_is_shared_by_all_decoders() {
    let mut net = Network::init(&small(2), 0).unwrap();
    let names = net.param_names();
    let enc = names.iter().filter(|n| n.starts_with("encoder.")).count();
    let d0 = names.iter().filter(|n| n.starts_with("decoder0.")).count();
    let d1 = names.iter().filter(|n| n.starts_with("decoder1.")).count();
    assert!(enc > 0 && d0 > 0);
    assert_eq!(d0, d1);
    assert_eq!(enc + d0 + d1, names.len());
    let single = Network::init(&small(1), 0).unwrap().param_names().iter().filter(|n| n.starts_with("encoder.")).count();
    assert_eq!(single, enc);
}

#[test]
fn output_shapes_follow_the_input() {
    let spec = ModelSpec {
        stage_channels: vec![2, 3, 4, 5],
        ..Default::default()
    };
    let mut net = Network::init(&spec, 1).unwrap();
    let x = random_input(1, 1, 224, 0);
    let (feats, logits) = net.forward_features(&x, Mode::Eval).unwrap();
    assert_eq!(feats.bottleneck.shape(), [1, 10, 14, 14]);
    assert_eq!(feats.skips.iter().map(|s| s.h).collect::<Vec<_>>(), vec![224, 112, 56, 28]);
    for l in &logits {
        assert_eq!(l.shape(), [1, 2, 224, 224]);
    }
}

#[test]
fn bad_inputs_are_shape_errors() {
    let mut net = Network::init(&small(2), 1).unwrap();
    assert!(matches!(net.forward(&random_input(1, 1, 10, 0), Mode::Eval), Err(Error::Shape(_))));
    assert!(matches!(net.forward(&random_input(1, 3, 8, 0), Mode::Eval), Err(Error::Shape(_))));
}

#[test]
fn zeroed_second_decoder_leaves_first_decoder_softmax() {
    let mut net = Network::init(&small(2), 3).unwrap();
    net.decoders[1].visit("", &mut |_, p| p.value.iter_mut().for_each(|v| *v = 0.0));
    let out = net.forward(&random_input(2, 1, 8, 1), Mode::Eval).unwrap();
    assert!(out.logits[1].data.iter().all(|&v| v == 0.0));
    let alone = aggregate(&out.logits[..1], Aggregation::LogitSum);
    assert_eq!(out.aggregate, alone);
}

#[test]
fn perturbing_one_decoder_leaves_the_others_bit_identical() {
    for mode in [Mode::Eval, Mode::Train] {
        let mut net = Network::init(&small(3), 4).unwrap();
        let x = random_input(2, 1, 8, 2);
        let before = net.forward(&x, mode).unwrap();
        net.decoders[1].visit("", &mut |_, p| {
            if p.trainable {
                p.value.iter_mut().for_each(|v| *v += 0.25)
            }
        });
        let after = net.forward(&x, mode).unwrap();
        assert_eq!(before.logits[0], after.logits[0]);
        assert_eq!(before.logits[2], after.logits[2]);
        assert_ne!(before.logits[1], after.logits[1]);
    }
}

#[test]
fn aggregation_ignores_decoder_order() {
    let mut net = Network::init(&small(2), 5).unwrap();
    let out = net.forward(&random_input(1, 1, 8, 3), Mode::Eval).unwrap();
    let swapped = vec![out.logits[1].clone(), out.logits[0].clone()];
    for mode in [Aggregation::LogitSum, Aggregation::ProbabilityMean] {
        assert_eq!(aggregate(&out.logits, mode), aggregate(&swapped, mode));
        let agg = aggregate(&out.logits, mode);
        for i in 0..agg.plane() {
            let s = agg.data[i] + agg.data[agg.plane() + i];
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn every_trainable_parameter_receives_gradient() {
    let mut net = Network::init(&small(2), 6).unwrap();
    let out = net.forward(&random_input(2, 1, 8, 4), Mode::Train).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grads: Vec<Tensor> = out
        .logits
        .iter()
        .map(|l| Tensor::from_vec(l.n, l.c, l.h, l.w, (0..l.data.len()).map(|_| rng.random::<f32>() - 0.5).collect()))
        .collect();
    net.zero_grad();
    net.backward(&grads);
    net.visit("", &mut |name, p| {
        if p.trainable {
            assert!(p.grad.iter().any(|&g| g != 0.0), "{name} received no gradient");
        }
    });
}

/// `Σ logits · R` for fixed random `R`; its gradient w.r.t. the logits is `R`.
fn probe(net: &mut Network, x: &Tensor, r: &[Vec<f32>]) -> f64 {
    let out = net.forward(x, Mode::Train).unwrap();
    out.logits
        .iter()
        .zip(r)
        .map(|(l, rr)| l.data.iter().zip(rr).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>())
        .sum()
}

#[test]
fn backward_matches_finite_differences() {
    let spec = ModelSpec {
        stage_channels: vec![2, 3],
        ..Default::default()
    };
    let mut net = Network::init(&spec, 7).unwrap();
    let x = random_input(2, 1, 8, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shapes: Vec<usize> = net.forward(&x, Mode::Train).unwrap().logits.iter().map(|l| l.data.len()).collect();
    let r: Vec<Vec<f32>> = shapes.iter().map(|&n| (0..n).map(|_| rng.random::<f32>() - 0.5).collect()).collect();

    let grads: Vec<Tensor> = net
        .forward(&x, Mode::Train)
        .unwrap()
        .logits
        .iter()
        .zip(&r)
        .map(|(l, rr)| Tensor::from_vec(l.n, l.c, l.h, l.w, rr.clone()))
        .collect();
    net.zero_grad();
    net.backward(&grads);

    let mut analytic: Vec<(String, usize, f32)> = Vec::new();
    net.visit("", &mut |name, p| {
        if p.trainable {
            for idx in [0, p.len() / 2, p.len() - 1] {
                analytic.push((name.to_string(), idx, p.grad[idx]));
            }
        }
    });
    // small enough to rarely cross a ReLU or pooling kink, large enough for f32
    let h = 1e-3f32;
    let (mut dot, mut nf, mut ng) = (0.0, 0.0, 0.0);
    for (name, idx, g) in analytic {
        let nudge = |delta: f32, net: &mut Network| {
            net.visit("", &mut |n, p| {
                if n == name {
                    p.value[idx] += delta;
                }
            })
        };
        nudge(h, &mut net);
        let up = probe(&mut net, &x, &r);
        nudge(-2.0 * h, &mut net);
        let down = probe(&mut net, &x, &r);
        nudge(h, &mut net);
        let fd = (up - down) / (2.0 * h as f64);
        let g = g as f64;
        let tol = 3e-2 * fd.abs().max(g.abs()) + 5e-2;
        assert!((fd - g).abs() <= tol, "{name}[{idx}]: fd {fd} vs analytic {g}");
        dot += fd * g;
        nf += fd * fd;
        ng += g * g;
    }
    let cosine = dot / (nf.sqrt() * ng.sqrt());
    assert!(cosine > 0.999, "cosine {cosine}");
}

#[test]
fn initialization_is_deterministic_per_seed() {
    let a = Network::init(&small(2), 8).unwrap().checksum();
    assert_eq!(a, Network::init(&small(2), 8).unwrap().checksum());
    assert_ne!(a, Network::init(&small(2), 9).unwrap().checksum());
}
