//! The shared-encoder, multi-decoder segmentation network.
//!
//! One residual encoder produces skip features at every stage and a
//! bottleneck (the shared feature space). Each of the K decoders consumes the
//! same bottleneck and the same skip features, upsamples back to the input
//! resolution, and ends in a 1×1 head producing per-class logits `O_k`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{join, BatchNorm2d, BilinearUp2, Conv2d, MaxPool2, Mode, Param, Relu, UpConv2, Visit};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    Bilinear,
    #[default]
    TransposedConv,
}

/// How decoder outputs are combined into the final prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `softmax(Σ_k O_k)`.
    #[default]
    LogitSum,
    /// `mean_k softmax(O_k)`; kept for ablations.
    ProbabilityMean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub num_classes: usize,
    pub stage_channels: Vec<usize>,
    pub num_decoders: usize,
    /// Residual blocks per encoder stage, bottleneck and decoder level.
    pub blocks_per_stage: usize,
    pub upsample: Upsample,
    pub aggregation: Aggregation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            in_channels: 1,
            num_classes: 2,
            stage_channels: vec![64, 128, 256, 512],
            num_decoders: 2,
            blocks_per_stage: 1,
            upsample: Upsample::TransposedConv,
            aggregation: Aggregation::LogitSum,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("model: {m}")));
        if self.stage_channels.is_empty() {
            return err("stage_channels must be nonempty");
        }
        if self.stage_channels.windows(2).any(|w| w[0] >= w[1]) || self.stage_channels[0] == 0 {
            return err("stage_channels must be positive and strictly increasing");
        }
        if self.in_channels == 0 {
            return err("in_channels must be positive");
        }
        if self.num_classes < 2 {
            return err("num_classes must be at least 2");
        }
        if self.num_decoders == 0 {
            return err("num_decoders must be at least 1");
        }
        if self.blocks_per_stage == 0 {
            return err("blocks_per_stage must be at least 1");
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        2 * self.stage_channels.last().copied().unwrap_or(0)
    }

    /// Required divisor of the input side length.
    pub fn size_divisor(&self) -> usize {
        1 << self.stage_channels.len()
    }
}

/// `[conv3×3 → BN → ReLU] × 2` plus a shortcut (identity, or 1×1 conv when
/// the channel count changes).
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    relu1: Relu,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    relu2: Relu,
    pub shortcut: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(in_c, out_c, 3, false, rng),
            bn1: BatchNorm2d::new(out_c),
            relu1: Relu::default(),
            conv2: Conv2d::new(out_c, out_c, 3, false, rng),
            bn2: BatchNorm2d::new(out_c),
            relu2: Relu::default(),
            shortcut: (in_c != out_c).then(|| Conv2d::new(in_c, out_c, 1, false, rng)),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let h = self.conv1.forward(x, mode);
        let h = self.bn1.forward(&h, mode);
        let h = self.relu1.forward(h, mode);
        let h = self.conv2.forward(&h, mode);
        let h = self.bn2.forward(&h, mode);
        let mut h = self.relu2.forward(h, mode);
        match &mut self.shortcut {
            Some(sc) => h.add_assign(&sc.forward(x, mode)),
            None => h.add_assign(x),
        }
        h
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let g = self.relu2.backward(dy.clone());
        let g = self.bn2.backward(&g);
        let g = self.conv2.backward(&g);
        let g = self.relu1.backward(g);
        let g = self.bn1.backward(&g);
        let mut dx = self.conv1.backward(&g);
        match &mut self.shortcut {
            Some(sc) => dx.add_assign(&sc.backward(dy)),
            None => dx.add_assign(dy),
        }
        dx
    }
}

impl Visit for ResidualBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit(&join(prefix, "shortcut"), f);
        }
    }
}

/// A run of residual blocks at one resolution.
#[derive(Debug, Clone)]
pub struct Stage {
    pub blocks: Vec<ResidualBlock>,
}

impl Stage {
    fn new(in_c: usize, out_c: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let blocks = (0..depth)
            .map(|i| ResidualBlock::new(if i == 0 { in_c } else { out_c }, out_c, rng))
            .collect();
        Stage { blocks }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let mut h = self.blocks[0].forward(x, mode);
        for b in &mut self.blocks[1..] {
            h = b.forward(&h, mode);
        }
        h
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut g = dy.clone();
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        g
    }
}

impl Visit for Stage {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub stages: Vec<Stage>,
    pools: Vec<MaxPool2>,
    pub bottleneck: Stage,
}

/// Encoder activations consumed by every decoder.
#[derive(Debug, Clone)]
pub struct EncoderFeatures {
    /// Skip features, shallowest first.
    pub skips: Vec<Tensor>,
    pub bottleneck: Tensor,
}

impl Encoder {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> EncoderFeatures {
        let mut skips = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for (stage, pool) in self.stages.iter_mut().zip(&mut self.pools) {
            let s = stage.forward(&h, mode);
            h = pool.forward(&s, mode);
            skips.push(s);
        }
        let bottleneck = self.bottleneck.forward(&h, mode);
        EncoderFeatures { skips, bottleneck }
    }

    fn backward(&mut self, d_bottleneck: &Tensor, mut d_skips: Vec<Tensor>) -> Tensor {
        let mut g = self.bottleneck.backward(d_bottleneck);
        for i in (0..self.stages.len()).rev() {
            let mut ds = self.pools[i].backward(&g);
            ds.add_assign(&d_skips[i]);
            d_skips[i] = Tensor::zeros(0, 0, 0, 0);
            g = self.stages[i].backward(&ds);
        }
        g
    }
}

impl Visit for Encoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit(&join(prefix, &format!("stage{i}")), f);
        }
        self.bottleneck.visit(&join(prefix, "bottleneck"), f);
    }
}

#[derive(Debug, Clone)]
enum Upsampler {
    Bilinear(BilinearUp2),
    Transposed(UpConv2),
}

impl Upsampler {
    fn out_channels(&self, in_c: usize) -> usize {
        match self {
            Upsampler::Bilinear(_) => in_c,
            Upsampler::Transposed(u) => u.out_c,
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        match self {
            Upsampler::Bilinear(u) => u.forward(x, mode),
            Upsampler::Transposed(u) => u.forward(x, mode),
        }
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        match self {
            Upsampler::Bilinear(u) => u.backward(dy),
            Upsampler::Transposed(u) => u.backward(dy),
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    up: Upsampler,
    up_channels: usize,
    stage: Stage,
}

/// One expert-specific expanding path with its own 1×1 head.
#[derive(Debug, Clone)]
pub struct Decoder {
    /// Deepest level first.
    levels: Vec<DecoderLevel>,
    pub head: Conv2d,
}

impl Decoder {
    fn new(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Self {
        let chans = &spec.stage_channels;
        let mut below = spec.bottleneck_channels();
        let mut levels = Vec::with_capacity(chans.len());
        for &skip_c in chans.iter().rev() {
            let up = match spec.upsample {
                Upsample::Bilinear => Upsampler::Bilinear(BilinearUp2::default()),
                Upsample::TransposedConv => Upsampler::Transposed(UpConv2::new(below, skip_c, rng)),
            };
            let up_channels = up.out_channels(below);
            let stage = Stage::new(up_channels + skip_c, skip_c, spec.blocks_per_stage, rng);
            levels.push(DecoderLevel {
                up,
                up_channels,
                stage,
            });
            below = skip_c;
        }
        let head = Conv2d::new(chans[0], spec.num_classes, 1, true, rng);
        Decoder { levels, head }
    }

    fn forward(&mut self, feats: &EncoderFeatures, mode: Mode) -> Tensor {
        let mut h = feats.bottleneck.clone();
        for (level, skip) in self.levels.iter_mut().zip(feats.skips.iter().rev()) {
            let up = level.up.forward(&h, mode);
            let cat = Tensor::concat_channels(&up, skip);
            h = level.stage.forward(&cat, mode);
        }
        self.head.forward(&h, mode)
    }

    /// Returns the gradients w.r.t. the bottleneck and each skip (shallowest first).
    fn backward(&mut self, d_logits: &Tensor) -> (Tensor, Vec<Tensor>) {
        let mut g = self.head.backward(d_logits);
        let mut d_skips = Vec::with_capacity(self.levels.len());
        for level in self.levels.iter_mut().rev() {
            let d_cat = level.stage.backward(&g);
            let (d_up, d_skip) = d_cat.split_channels(level.up_channels);
            d_skips.push(d_skip);
            g = level.up.backward(&d_up);
        }
        (g, d_skips)
    }
}

impl Visit for Decoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        let n = self.levels.len();
        for (j, level) in self.levels.iter_mut().enumerate() {
            // levels are stored deepest-first; name them by resolution index
            let p = join(prefix, &format!("level{}", n - 1 - j));
            if let Upsampler::Transposed(u) = &mut level.up {
                u.visit(&join(&p, "up"), f);
            }
            level.stage.visit(&p, f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

/// Per-decoder logits and the aggregated class probabilities, NCHW.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutputs {
    pub logits: Vec<Tensor>,
    pub aggregate: Tensor,
}

impl DecoderOutputs {
    pub fn batch_len(&self) -> usize {
        self.aggregate.n
    }

    /// Foreground (class 1) probabilities of batch item `i`, row-major.
    pub fn foreground(&self, i: usize) -> &[f32] {
        self.aggregate.channel(i, 1)
    }
}

/// Combines decoder logits into class probabilities according to `mode`.
pub fn aggregate(logits: &[Tensor], mode: Aggregation) -> Tensor {
    let first = &logits[0];
    let (n, c, plane) = (first.n, first.c, first.plane());
    let mut out = Tensor::zeros(n, c, first.h, first.w);
    let mut z = vec![0.0f64; c];
    for i in 0..n {
        for p in 0..plane {
            match mode {
                Aggregation::LogitSum => {
                    for (ci, zc) in z.iter_mut().enumerate() {
                        *zc = logits.iter().map(|o| o.data[(i * c + ci) * plane + p] as f64).sum();
                    }
                    softmax_in_place(&mut z);
                    for (ci, zc) in z.iter().enumerate() {
                        out.data[(i * c + ci) * plane + p] = *zc as f32;
                    }
                }
                Aggregation::ProbabilityMean => {
                    let k = logits.len() as f64;
                    let mut acc = vec![0.0f64; c];
                    for o in logits {
                        for (ci, zc) in z.iter_mut().enumerate() {
                            *zc = o.data[(i * c + ci) * plane + p] as f64;
                        }
                        softmax_in_place(&mut z);
                        for (a, zc) in acc.iter_mut().zip(&z) {
                            *a += zc / k;
                        }
                    }
                    for (ci, a) in acc.iter().enumerate() {
                        out.data[(i * c + ci) * plane + p] = *a as f32;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// The full network: one encoder, `num_decoders` decoders.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: ModelSpec,
    pub encoder: Encoder,
    pub decoders: Vec<Decoder>,
}

impl Network {
    /// Builds a network with fan-in-scaled normal conv weights, unit BN scale
    /// and zero shifts. Deterministic for a fixed `seed`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = spec.blocks_per_stage;
        let mut stages = Vec::new();
        let mut in_c = spec.in_channels;
        for &c in &spec.stage_channels {
            stages.push(Stage::new(in_c, c, depth, &mut rng));
            in_c = c;
        }
        let bottleneck = Stage::new(in_c, spec.bottleneck_channels(), depth, &mut rng);
        let pools = vec![MaxPool2::default(); stages.len()];
        let decoders = (0..spec.num_decoders).map(|_| Decoder::new(spec, &mut rng)).collect();
        Ok(Network {
            spec: spec.clone(),
            encoder: Encoder {
                stages,
                pools,
                bottleneck,
            },
            decoders,
        })
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let d = self.spec.size_divisor();
        if x.c != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, model expects {}",
                x.c, self.spec.in_channels
            )));
        }
        if x.h == 0 || x.w == 0 || x.h % d != 0 || x.w % d != 0 {
            return Err(Error::Shape(format!(
                "input {}x{} is not a positive multiple of {d}",
                x.h, x.w
            )));
        }
        Ok(())
    }

    /// Runs encoder once and every decoder on the shared features.
    pub fn forward_features(&mut self, x: &Tensor, mode: Mode) -> Result<(EncoderFeatures, Vec<Tensor>)> {
        self.check_input(x)?;
        let feats = self.encoder.forward(x, mode);
        let logits = self.decoders.iter_mut().map(|d| d.forward(&feats, mode)).collect();
        Ok((feats, logits))
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<DecoderOutputs> {
        let (_, logits) = self.forward_features(x, mode)?;
        let aggregate = aggregate(&logits, self.spec.aggregation);
        Ok(DecoderOutputs { logits, aggregate })
    }

    /// Inference on a frozen network (batch-norm running statistics).
    pub fn predict(&self, x: &Tensor) -> Result<DecoderOutputs> {
        // eval mode touches no caches, but the layer API is `&mut`
        let mut frozen = self.clone();
        frozen.forward(x, Mode::Eval)
    }

    /// Backpropagates per-decoder logit gradients through every decoder and
    /// the shared encoder; returns the input gradient.
    pub fn backward(&mut self, d_logits: &[Tensor]) -> Tensor {
        assert_eq!(d_logits.len(), self.decoders.len(), "one gradient per decoder");
        let mut d_bottleneck: Option<Tensor> = None;
        let mut d_skips: Option<Vec<Tensor>> = None;
        for (dec, g) in self.decoders.iter_mut().zip(d_logits) {
            let (db, ds) = dec.backward(g);
            match (&mut d_bottleneck, &mut d_skips) {
                (Some(b), Some(s)) => {
                    b.add_assign(&db);
                    for (acc, d) in s.iter_mut().zip(&ds) {
                        acc.add_assign(d);
                    }
                }
                _ => {
                    d_bottleneck = Some(db);
                    d_skips = Some(ds);
                }
            }
        }
        self.encoder
            .backward(&d_bottleneck.expect("at least one decoder"), d_skips.expect("at least one decoder"))
    }

    pub fn zero_grad(&mut self) {
        self.visit("", &mut |_, p| p.zero_grad());
    }

    pub fn trainable_param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.len();
            }
        });
        n
    }

    /// FNV-1a over every parameter and buffer in visiting order.
    pub fn checksum(&mut self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        self.visit("", &mut |name, p| {
            for b in name.bytes().chain(p.value.iter().flat_map(|v| v.to_le_bytes())) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        });
        h
    }

    /// Names of all parameters and buffers, in visiting order.
    pub fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit("", &mut |name, _| names.push(name.to_string()));
        names
    }
}

impl Visit for Network {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        for (k, d) in self.decoders.iter_mut().enumerate() {
            d.visit(&join(prefix, &format!("decoder{k}")), f);
        }
    }
}
