//! Mini-batch training of single-expert and two-expert models.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Variant;
use crate::config::RunConfig;
use crate::data::{augment, resize_sample};
use crate::domain::rng::stream;
use crate::domain::{AnnotationPair, Mask};
use crate::error::{Error, Result};
use crate::losses::{
    grad_wrt_logits, grad_wrt_probs, hybrid_loss_with_weights, pair_agreement, weight_from_agreement, adaptive_weight,
    LossValue, ProbMap, WeightSchedule,
};
use crate::metrics;
use crate::model::network::softmax_in_place;
use crate::model::{Adam, Aggregation, Checkpoint, DecoderOutputs, Mode, Network, Tensor};

const PURPOSE_SHUFFLE: u64 = 0x5348_5546;
const PURPOSE_AUGMENT: u64 = 0x4155_4720;

/// Summary of one completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss_total: f64,
    pub ce_1: f64,
    pub ce_2: f64,
    pub w_used: f64,
    /// Training-batch Dice of each decoder's own prediction against its annotation.
    pub train_decoder_dice: Vec<f64>,
    /// Validation Dice of each decoder against its annotation; empty without a validation set.
    pub val_decoder_dice: Vec<f64>,
    /// Validation Dice of the aggregate prediction averaged over the target annotations.
    pub val_dice: Option<f64>,
    pub seconds: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str =
        "epoch,loss_total,ce_1,ce_2,w_used,train_decoder_dice,val_decoder_dice,val_dice,seconds";

    pub fn csv_row(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|d| format!("{d:.6}")).collect::<Vec<_>>().join(";");
        format!(
            "{},{:.8},{:.8},{:.8},{:.6},{},{},{},{:.3}",
            self.epoch,
            self.loss_total,
            self.ce_1,
            self.ce_2,
            self.w_used,
            join(&self.train_decoder_dice),
            join(&self.val_decoder_dice),
            self.val_dice.map(|d| format!("{d:.6}")).unwrap_or_default(),
            self.seconds
        )
    }
}

pub struct TrainOutcome {
    pub network: Network,
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights `network` holds.
    pub selected_epoch: usize,
    /// Path of the final checkpoint when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

/// The annotation decoder `k` (0-based) is compared against.
pub(crate) fn decoder_annotation(variant: Variant, k: usize) -> usize {
    match variant {
        Variant::Unet1 => 1,
        Variant::Unet2 => 2,
        Variant::Unaah => k % 2 + 1,
    }
}

/// Packs the images of `pairs` into an NCHW batch.
pub fn batch_tensor(pairs: &[&AnnotationPair]) -> Tensor {
    let first = pairs[0].image();
    let (w, h, c) = (first.width(), first.height(), first.channels());
    let mut data = Vec::with_capacity(pairs.len() * c * h * w);
    for p in pairs {
        data.extend_from_slice(p.image().data());
    }
    Tensor::from_vec(pairs.len(), c, h, w, data)
}

/// Loss of each batch item and the gradient of their mean w.r.t. every
/// decoder's logits.
///
/// `targets[i]` holds the two masks the hybrid loss compares item `i` with.
pub fn batch_loss(
    outputs: &DecoderOutputs,
    targets: &[(&Mask, &Mask)],
    cfg: &crate::losses::LossConfig,
    w: f64,
    aggregation: Aggregation,
) -> Result<(Vec<LossValue>, Vec<Tensor>)> {
    let first = &outputs.logits[0];
    let (n, c, h, wd) = (first.n, first.c, first.h, first.w);
    let plane = h * wd;
    let k = outputs.logits.len();
    let scale = 1.0 / n as f64;
    let mut values = Vec::with_capacity(n);
    let mut grads: Vec<Tensor> = (0..k).map(|_| Tensor::zeros(n, c, h, wd)).collect();
    for (i, (a1, a2)) in targets.iter().enumerate() {
        match aggregation {
            Aggregation::LogitSum => {
                let mut z = vec![0.0f64; c * plane];
                for o in &outputs.logits {
                    for (acc, &v) in z.iter_mut().zip(o.item(i)) {
                        *acc += v as f64;
                    }
                }
                let p = ProbMap::from_logits(wd, h, c, &z)?;
                let (value, t) = hybrid_loss_with_weights(&p, a1, a2, cfg, w)?;
                let g = grad_wrt_logits(&p, &t);
                for gt in grads.iter_mut() {
                    for (dst, &src) in gt.item_mut(i).iter_mut().zip(&g) {
                        *dst = (src * scale) as f32;
                    }
                }
                values.push(value);
            }
            Aggregation::ProbabilityMean => {
                let probs: Vec<f64> = outputs.aggregate.item(i).iter().map(|&v| v as f64).collect();
                let p = ProbMap::new(wd, h, c, probs)?;
                let (value, t) = hybrid_loss_with_weights(&p, a1, a2, cfg, w)?;
                let dp = grad_wrt_probs(&p, &t);
                let mut s = vec![0.0f64; c];
                for (o, gt) in outputs.logits.iter().zip(grads.iter_mut()) {
                    let (zi, gi) = (o.item(i), gt.item_mut(i));
                    for px in 0..plane {
                        for ci in 0..c {
                            s[ci] = zi[ci * plane + px] as f64;
                        }
                        softmax_in_place(&mut s);
                        let dot: f64 = (0..c).map(|ci| s[ci] * dp[ci * plane + px]).sum();
                        for ci in 0..c {
                            let d = s[ci] * (dp[ci * plane + px] - dot) / k as f64;
                            gi[ci * plane + px] = (d * scale) as f32;
                        }
                    }
                }
                values.push(value);
            }
        }
    }
    Ok((values, grads))
}

/// Foreground mask from one decoder's logits alone (class 1 wins the argmax).
pub fn decoder_mask(logits: &Tensor, item: usize) -> Mask {
    let bg = logits.channel(item, 0);
    let fg = logits.channel(item, 1);
    let data = bg.iter().zip(fg).map(|(b, f)| (f >= b) as u8).collect();
    Mask::new(logits.w, logits.h, data).expect("binary data")
}

fn targets_for(variant: Variant, p: &AnnotationPair) -> (&Mask, &Mask) {
    match variant {
        Variant::Unet1 => (&p.mask_1, &p.mask_1),
        Variant::Unet2 => (&p.mask_2, &p.mask_2),
        Variant::Unaah => (&p.mask_1, &p.mask_2),
    }
}

struct Validation {
    decoder_dice: Vec<f64>,
    dice: f64,
}

fn validate(net: &mut Network, variant: Variant, val: &[AnnotationPair], cfg: &RunConfig) -> Result<Validation> {
    let k = net.decoders.len();
    let mut dec_sum = vec![0.0; k];
    let mut agg_sum = 0.0;
    for chunk in val.chunks(cfg.optimizer.batch_size) {
        let refs: Vec<&AnnotationPair> = chunk.iter().collect();
        let out = net.forward(&batch_tensor(&refs), Mode::Eval)?;
        for (i, p) in chunk.iter().enumerate() {
            for (d, o) in out.logits.iter().enumerate() {
                dec_sum[d] += metrics::dice(&decoder_mask(o, i), p.mask(decoder_annotation(variant, d)))?;
            }
            let pred = crate::model::predict_mask(&out, i, cfg.threshold)?;
            let (a, b) = targets_for(variant, p);
            agg_sum += (metrics::dice(&pred, a)? + metrics::dice(&pred, b)?) / 2.0;
        }
    }
    let n = val.len() as f64;
    Ok(Validation {
        decoder_dice: dec_sum.into_iter().map(|s| s / n).collect(),
        dice: agg_sum / n,
    })
}

fn save_checkpoint(net: &mut Network, seed: u64, epoch: usize, path: &Path) -> Result<()> {
    Checkpoint::capture(net, seed, epoch).save(path)
}

/// Trains `variant` on `train_set` for `cfg.epochs` epochs.
///
/// Samples are resized to `cfg.input_size` once, then augmented on the fly
/// with per-(epoch, sample) random streams. Each batch minimizes the mean
/// per-image hybrid loss of the aggregate prediction; single-expert variants
/// use one decoder and compare against their expert's mask twice with
/// `w = 1`. With a validation set and `cfg.patience`, training stops once the
/// validation Dice has not improved for `patience` epochs, and the best
/// epoch's weights are returned.
///
/// When `out_dir` is given, a checkpoint is written after every epoch and the
/// per-epoch log goes to `epochs.csv`.
pub fn train(
    variant: Variant,
    train_set: &[AnnotationPair],
    val_set: &[AnnotationPair],
    cfg: &RunConfig,
    seed: u64,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let spec = variant.model_spec(&cfg.model);
    for p in train_set.iter().chain(val_set) {
        if p.image().channels() != spec.in_channels {
            return Err(Error::Data(format!(
                "sample {} has {} channels, model expects {}",
                p.sample.group_id,
                p.image().channels(),
                spec.in_channels
            )));
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let size = cfg.input_size;
    let train_rs: Vec<AnnotationPair> = train_set.iter().map(|p| resize_sample(p, size)).collect();
    let val_rs: Vec<AnnotationPair> = val_set.iter().map(|p| resize_sample(p, size)).collect();

    let mut net = Network::init(&spec, seed)?;
    let mut opt = Adam::new(cfg.optimizer.learning_rate);
    let lc = &cfg.loss;

    let initial_w = match (variant, lc.schedule) {
        (Variant::Unet1 | Variant::Unet2, _) => 1.0,
        (Variant::Unaah, WeightSchedule::Fixed) => lc.w,
        (Variant::Unaah, _) => {
            let s: f64 = train_set
                .iter()
                .map(|p| pair_agreement(&p.mask_1, &p.mask_2))
                .sum::<Result<f64>>()?
                / train_set.len() as f64;
            weight_from_agreement(s, lc)
        }
    };
    let mut w = initial_w;

    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, usize, Network)> = None;
    let mut since_best = 0;
    let mut log = String::from(EpochRecord::CSV_HEADER);
    log.push('\n');
    let n_batches = train_rs.len().div_ceil(cfg.optimizer.batch_size);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if variant == Variant::Unaah && lc.schedule == WeightSchedule::Adaptive {
            if let Some(prev) = records.last() {
                let m = if prev.val_decoder_dice.is_empty() {
                    &prev.train_decoder_dice
                } else {
                    &prev.val_decoder_dice
                };
                w = adaptive_weight(m[0], m[1 % m.len()], lc.kappa, lc.w_clip);
            }
        }

        let mut order: Vec<usize> = (0..train_rs.len()).collect();
        order.shuffle(&mut stream(seed, PURPOSE_SHUFFLE, epoch as u64));

        let (mut sum_total, mut sum_ce1, mut sum_ce2) = (0.0, 0.0, 0.0);
        let mut dec_dice = vec![0.0; net.decoders.len()];
        for (b, idx) in order.chunks(cfg.optimizer.batch_size).enumerate() {
            let batch: Vec<AnnotationPair> = idx
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        let mut rng = stream(seed, PURPOSE_AUGMENT, (epoch * train_rs.len() + i) as u64);
                        augment(&train_rs[i], &cfg.augmentation, &mut rng)
                    } else {
                        train_rs[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&AnnotationPair> = batch.iter().collect();
            let out = net.forward(&batch_tensor(&refs), Mode::Train)?;
            let targets: Vec<(&Mask, &Mask)> = batch.iter().map(|p| targets_for(variant, p)).collect();
            let (values, grads) = batch_loss(&out, &targets, lc, w, spec.aggregation)?;
            let mean = values.iter().map(|v| v.total).sum::<f64>() / values.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss: mean,
                });
            }
            for v in &values {
                sum_total += v.total;
                sum_ce1 += v.ce_1;
                sum_ce2 += v.ce_2;
            }
            for (i, p) in batch.iter().enumerate() {
                for (d, o) in out.logits.iter().enumerate() {
                    dec_dice[d] += metrics::dice(&decoder_mask(o, i), p.mask(decoder_annotation(variant, d)))?;
                }
            }
            net.zero_grad();
            net.backward(&grads);
            opt.step(&mut net);
        }
        debug_assert_eq!(opt.steps_taken() as usize, epoch * n_batches);

        let n = train_rs.len() as f64;
        let val = if val_rs.is_empty() {
            None
        } else {
            Some(validate(&mut net, variant, &val_rs, cfg)?)
        };
        let record = EpochRecord {
            epoch,
            loss_total: sum_total / n,
            ce_1: sum_ce1 / n,
            ce_2: sum_ce2 / n,
            w_used: w,
            train_decoder_dice: dec_dice.iter().map(|d| d / n).collect(),
            val_decoder_dice: val.as_ref().map(|v| v.decoder_dice.clone()).unwrap_or_default(),
            val_dice: val.as_ref().map(|v| v.dice),
            seconds: started.elapsed().as_secs_f64(),
        };
        log.push_str(&record.csv_row());
        log.push('\n');
        if let Some(dir) = out_dir {
            let name = if cfg.keep_all_checkpoints {
                format!("checkpoint-epoch{epoch:03}.bin")
            } else {
                "checkpoint.bin".to_string()
            };
            save_checkpoint(&mut net, seed, epoch, &dir.join(name))?;
            let p = dir.join("epochs.csv");
            fs::write(&p, &log).map_err(|e| Error::io(&p, e))?;
        }
        progress(&record);
        records.push(record);

        if let (Some(v), Some(patience)) = (&val, cfg.patience) {
            if best.as_ref().is_none_or(|(d, _, _)| v.dice > *d) {
                best = Some((v.dice, epoch, net.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }

    let last_epoch = records.last().map_or(0, |r| r.epoch);
    let (mut network, selected_epoch) = match best {
        Some((_, e, n)) => (n, e),
        None => (net, last_epoch),
    };
    let checkpoint = match out_dir {
        Some(dir) => {
            let p = dir.join("final.bin");
            save_checkpoint(&mut network, seed, selected_epoch, &p)?;
            Some(p)
        }
        None => None,
    };
    Ok(TrainOutcome {
        network,
        records,
        selected_epoch,
        checkpoint,
    })
}
