//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::data::{extract_patches, generate_synthetic, AugmentConfig, ContentMode, PatchSpec, SyntheticSpec};
use crate::domain::{
    group_split, load_manifest_with_split, AnnotationPair, Annotator, DatasetManifest, Image, ManifestEntry, Mask,
    Split,
};
use crate::error::{Error, Result};
use crate::harness::{
    evaluate, metric_label, predict_masks, run_experiment, save_overlay, train, ExperimentPlan, Variant,
};
use crate::losses::{LossMode, WeightSchedule};
use crate::metrics::{agreement_report, MetricReport};
use crate::model::{Aggregation, Checkpoint, Upsample};

#[derive(Debug, Parser)]
#[command(name = "unaah", version, about = "Train and compare segmentation models on two experts' annotations")]
pub struct Cli {
    /// JSON run configuration (a run config, or an experiment plan with `run_config`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Request reproducible execution (always the case here; recorded in outputs).
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-annotator dataset.
    Generate(GenerateArgs),
    /// Tile an image and its two masks into filtered patches.
    Patches(PatchArgs),
    /// Report inter-annotator agreement over a dataset.
    Agreement(AgreementArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Score a checkpoint against one or both experts.
    Evaluate(EvaluateArgs),
    /// Train every variant for every seed and write the comparison table.
    Experiment(ExperimentArgs),
    /// Render prediction overlays for checkpoints.
    Overlay(OverlayArgs),
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated numbers, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.trim().parse::<T>().map_err(|e| format!("{v:?}: {e}")))
        .collect()
}

// Aliases keep clap from treating these as repeated arguments.
type Usizes = Vec<usize>;
type Seeds = Vec<u64>;
type Variants = Vec<Variant>;

fn parse_usizes(s: &str) -> std::result::Result<Vec<usize>, String> {
    parse_list(s)
}

fn parse_u64s(s: &str) -> std::result::Result<Vec<u64>, String> {
    parse_list(s)
}

fn parse_variants(s: &str) -> std::result::Result<Vec<Variant>, String> {
    s.split(',').map(|v| v.trim().parse::<Variant>().map_err(|e| e.to_string())).collect()
}

fn parse_fractions(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let v: Vec<f64> = parse_list(s)?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected train,val,test fractions, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UpsampleArg {
    Bilinear,
    TransposedConv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    LogitSum,
    ProbabilityMean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossModeArg {
    HybridCe,
    HybridFocal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScheduleArg {
    Fixed,
    AgreementInit,
    Adaptive,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AgainstArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

impl AgainstArg {
    fn annotators(self) -> Vec<Annotator> {
        match self {
            AgainstArg::One => vec![Annotator::One],
            AgainstArg::Two => vec![Annotator::Two],
            AgainstArg::Both => vec![Annotator::One, Annotator::Two],
        }
    }
}

/// Overrides for every run configuration field.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Early-stopping patience in epochs (0 disables early stopping).
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub keep_all_checkpoints: Option<bool>,
    // model
    #[arg(long)]
    pub in_channels: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Encoder stage widths, e.g. `64,128,256,512`.
    #[arg(long, value_parser = parse_usizes)]
    pub stages: Option<Usizes>,
    #[arg(long)]
    pub decoders: Option<usize>,
    #[arg(long)]
    pub blocks_per_stage: Option<usize>,
    #[arg(long, value_enum)]
    pub upsample: Option<UpsampleArg>,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    // loss
    #[arg(long, value_enum)]
    pub loss: Option<LossModeArg>,
    /// Weight of expert 1's loss term.
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub cw: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    #[arg(long, value_parser = parse_pair)]
    pub w_clip: Option<(f64, f64)>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    // augmentation
    #[arg(long)]
    pub augment: Option<bool>,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub rotation: Option<(f64, f64)>,
    #[arg(long)]
    pub flip_prob: Option<f64>,
    #[arg(long)]
    pub crop_resize_prob: Option<f64>,
    #[arg(long, value_parser = parse_pair)]
    pub crop_scale: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_pair)]
    pub brightness: Option<(f64, f64)>,
    #[arg(long)]
    pub no_brightness: bool,
    #[arg(long)]
    pub hue_contrast_jitter: Option<bool>,
    #[arg(long)]
    pub hue_shift: Option<f64>,
    #[arg(long, value_parser = parse_pair)]
    pub contrast: Option<(f64, f64)>,
}

impl RunArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.epochs => cfg.epochs);
        if let Some(p) = self.patience {
            cfg.patience = (p > 0).then_some(p);
        }
        set!(self.optimizer => cfg.optimizer.name);
        set!(self.lr => cfg.optimizer.learning_rate);
        set!(self.batch_size => cfg.optimizer.batch_size);
        set!(self.input_size => cfg.input_size);
        set!(self.threshold => cfg.threshold);
        set!(self.keep_all_checkpoints => cfg.keep_all_checkpoints);
        let m = &mut cfg.model;
        set!(self.in_channels => m.in_channels);
        set!(self.num_classes => m.num_classes);
        set!(self.stages => m.stage_channels);
        set!(self.decoders => m.num_decoders);
        set!(self.blocks_per_stage => m.blocks_per_stage);
        if let Some(u) = self.upsample {
            m.upsample = match u {
                UpsampleArg::Bilinear => Upsample::Bilinear,
                UpsampleArg::TransposedConv => Upsample::TransposedConv,
            };
        }
        if let Some(a) = self.aggregation {
            m.aggregation = match a {
                AggregationArg::LogitSum => Aggregation::LogitSum,
                AggregationArg::ProbabilityMean => Aggregation::ProbabilityMean,
            };
        }
        let l = &mut cfg.loss;
        if let Some(mode) = self.loss {
            l.mode = match mode {
                LossModeArg::HybridCe => LossMode::HybridCe,
                LossModeArg::HybridFocal => LossMode::HybridFocal,
            };
        }
        set!(self.w => l.w);
        set!(self.cw => l.cw);
        set!(self.gamma => l.gamma);
        if let Some(s) = self.schedule {
            l.schedule = match s {
                ScheduleArg::Fixed => WeightSchedule::Fixed,
                ScheduleArg::AgreementInit => WeightSchedule::AgreementInit,
                ScheduleArg::Adaptive => WeightSchedule::Adaptive,
            };
        }
        set!(self.w_clip => l.w_clip);
        set!(self.beta => l.beta);
        set!(self.kappa => l.kappa);
        set!(self.augment => cfg.augment);
        let a: &mut AugmentConfig = &mut cfg.augmentation;
        set!(self.rotation => a.rotation_degrees);
        set!(self.flip_prob => a.flip_prob);
        set!(self.crop_resize_prob => a.crop_resize_prob);
        set!(self.crop_scale => a.crop_scale);
        if let Some(b) = self.brightness {
            a.brightness_range = Some(b);
        }
        if self.no_brightness {
            a.brightness_range = None;
        }
        set!(self.hue_contrast_jitter => a.hue_contrast_jitter);
        set!(self.hue_shift => a.hue_shift);
        set!(self.contrast => a.contrast_range);
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset manifest (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Optional JSON object mapping group ids to train/val/test.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    /// Group split fractions used when the manifest carries no split.
    #[arg(long, value_parser = parse_fractions, default_value = "0.8,0,0.2")]
    pub fractions: (f64, f64, f64),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON synthetic spec; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long, value_parser = parse_usizes)]
    pub disks: Option<Usizes>,
    #[arg(long, value_parser = parse_pair)]
    pub radius: Option<(f64, f64)>,
    /// Signed radial bias of expert 1 and expert 2, e.g. `3,-3`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub bias: Option<(f64, f64)>,
    #[arg(long)]
    pub jitter_std: Option<f64>,
    #[arg(long)]
    pub contour_vertices: Option<usize>,
    /// Background intensity mean,std.
    #[arg(long, value_parser = parse_pair)]
    pub background: Option<(f64, f64)>,
    /// Foreground intensity mean,std.
    #[arg(long, value_parser = parse_pair)]
    pub foreground: Option<(f64, f64)>,
    #[arg(long)]
    pub pattern_amplitude: Option<f64>,
    #[arg(long)]
    pub n_images: Option<usize>,
    #[arg(long)]
    pub test_images: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ContentArg {
    Stain,
    Intensity,
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask1: PathBuf,
    #[arg(long)]
    pub mask2: PathBuf,
    /// Patient or scan identifier shared by every patch.
    #[arg(long)]
    pub group: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    #[arg(long, default_value_t = 0.35)]
    pub content_threshold: f64,
    #[arg(long, value_enum, default_value = "stain")]
    pub content: ContentArg,
    #[arg(long, default_value_t = 0.9)]
    pub max_luminance: f32,
    #[arg(long, default_value_t = 0.05)]
    pub min_saturation: f32,
    #[arg(long, default_value_t = 0.35)]
    pub intensity_threshold: f32,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    /// Write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "unaah")]
    pub variant: Variant,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Variant the checkpoint was trained as (labels; spec check with --config).
    #[arg(long, default_value = "unaah")]
    pub variant: Variant,
    #[arg(long, value_enum, default_value = "both")]
    pub against: AgainstArg,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Write reports as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_variants)]
    pub variants: Option<Variants>,
    #[arg(long, value_parser = parse_u64s)]
    pub seeds: Option<Seeds>,
    /// Number of test samples to render as overlays.
    #[arg(long)]
    pub overlays: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `path` or `label=path`; repeat for several models.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<String>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

fn json_err(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> Error {
    let context = context.into();
    move |source| Error::Json { context, source }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err(path.display().to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Loads the global config file as an experiment plan (a run config file
/// becomes the plan's `run_config`).
fn load_plan(cli: &Cli) -> Result<ExperimentPlan> {
    let mut plan = match &cli.config {
        None => ExperimentPlan::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(json_err(format!("config {}", path.display())))?;
            if value.get("run_config").is_some() {
                serde_json::from_value(value).map_err(json_err(format!("config {}", path.display())))?
            } else {
                ExperimentPlan {
                    run_config: serde_json::from_value(value).map_err(json_err(format!("config {}", path.display())))?,
                    ..Default::default()
                }
            }
        }
    };
    if let Some(seed) = cli.seed {
        plan.run_config.seed = seed;
    }
    if cli.deterministic {
        plan.run_config.deterministic = true;
    }
    Ok(plan)
}

fn run_config(cli: &Cli, run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = load_plan(cli)?.run_config;
    run.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(args: &DataArgs, seed: u64) -> Result<DatasetManifest> {
    let manifest = load_manifest_with_split(&args.manifest, args.split_file.as_deref())?;
    if manifest.split.is_some() {
        Ok(manifest)
    } else {
        group_split(&manifest, args.fractions, seed)
    }
}

fn print_report(title: &str, r: &MetricReport) {
    let opt = |s: Option<f64>| s.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{title}: D {:.4} ± {:.4}  cD {}  IoU {:.4} ± {:.4}  IoU_nobk {}  (n = {})",
        r.dice.mean,
        r.dice.std,
        opt(r.core_dice_mean()),
        r.iou.mean,
        r.iou.std,
        opt(r.iou_nobk_mean()),
        r.n_items
    );
}

/// Runs the parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(&cli, a),
        Command::Patches(a) => cmd_patches(a),
        Command::Agreement(a) => cmd_agreement(&cli, a),
        Command::Train(a) => cmd_train(&cli, a),
        Command::Evaluate(a) => cmd_evaluate(&cli, a),
        Command::Experiment(a) => cmd_experiment(&cli, a),
        Command::Overlay(a) => cmd_overlay(&cli, a),
    }
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(json_err(format!("synthetic spec {}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(v) = a.image_size {
        spec.image_size = v;
    }
    if let Some(d) = &a.disks {
        spec.disks_per_image = match d[..] {
            [n] => (n, n),
            [lo, hi] => (lo, hi),
            _ => return Err(Error::Config("--disks takes N or MIN,MAX".into())),
        };
    }
    if let Some(v) = a.radius {
        spec.radius = v;
    }
    if let Some(v) = a.bias {
        spec.annotator_bias = v;
    }
    if let Some(v) = a.jitter_std {
        spec.jitter_std = v;
    }
    if let Some(v) = a.contour_vertices {
        spec.contour_vertices = v;
    }
    if let Some((mean, std)) = a.background {
        spec.texture.background = crate::data::Intensity { mean, std };
    }
    if let Some((mean, std)) = a.foreground {
        spec.texture.foreground = crate::data::Intensity { mean, std };
    }
    if let Some(v) = a.pattern_amplitude {
        spec.texture.pattern_amplitude = v;
    }
    if let Some(v) = a.n_images {
        spec.n_images = v;
    }
    if let Some(v) = a.test_images {
        spec.test_images = v;
    }
    let manifest = generate_synthetic(&spec, &a.out)?;
    println!("wrote {} samples to {}", manifest.len(), a.out.display());
    Ok(())
}

fn cmd_patches(a: &PatchArgs) -> Result<()> {
    let spec = PatchSpec {
        patch_size: a.patch_size,
        overlap: a.overlap,
        content_threshold: a.content_threshold,
        content_mode: match a.content {
            ContentArg::Stain => ContentMode::Stain {
                max_luminance: a.max_luminance,
                min_saturation: a.min_saturation,
            },
            ContentArg::Intensity => ContentMode::Intensity {
                threshold: a.intensity_threshold,
            },
        },
    };
    let image = Image::load_png(&a.image)?;
    let masks = [Mask::load_png(&a.mask1)?, Mask::load_png(&a.mask2)?];
    let patches = extract_patches(&image, &masks, &spec, &a.group)?;
    for sub in ["images", "masks1", "masks2"] {
        create_dir(&a.out.join(sub))?;
    }
    let mut entries = Vec::new();
    for p in &patches {
        let (row, col) = p.sample.source_offset;
        let name = format!("{}_r{row}_c{col}.png", a.group);
        let rel = |sub: &str| PathBuf::from(sub).join(&name);
        p.image().save_png(&a.out.join(rel("images")))?;
        p.mask_1.save_png(&a.out.join(rel("masks1")))?;
        p.mask_2.save_png(&a.out.join(rel("masks2")))?;
        entries.push(ManifestEntry {
            image: rel("images"),
            mask1: rel("masks1"),
            mask2: rel("masks2"),
            group: a.group.clone(),
            base: None,
            split: None,
        });
    }
    let manifest = DatasetManifest {
        root: a.out.clone(),
        entries,
        split: None,
    };
    manifest.write_jsonl(&a.out.join("manifest.jsonl"))?;
    println!("kept {} patches", patches.len());
    Ok(())
}

fn cmd_agreement(cli: &Cli, a: &AgreementArgs) -> Result<()> {
    let seed = load_plan(cli)?.run_config.seed;
    let manifest = if a.split.split().is_some() {
        load_dataset(&a.data, seed)?
    } else {
        load_manifest_with_split(&a.data.manifest, a.data.split_file.as_deref())?
    };
    let pairs = manifest.load_pairs(a.split.split())?;
    let report = agreement_report(&pairs)?;
    print_report("expert 1 vs expert 2", &report);
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn splits(manifest: &DatasetManifest) -> Result<(Vec<AnnotationPair>, Vec<AnnotationPair>, Vec<AnnotationPair>)> {
    Ok((
        manifest.load_pairs(Some(Split::Train))?,
        manifest.load_pairs(Some(Split::Val))?,
        manifest.load_pairs(Some(Split::Test))?,
    ))
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = run_config(cli, &a.run)?;
    let manifest = load_dataset(&a.data, cfg.seed)?;
    let (train_set, val_set, _) = splits(&manifest)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &cfg)?;
    let mut log = |r: &crate::harness::EpochRecord| {
        eprintln!(
            "epoch {}: loss {:.5} (ce1 {:.5}, ce2 {:.5}, w {:.3})",
            r.epoch, r.loss_total, r.ce_1, r.ce_2, r.w_used
        )
    };
    let outcome = train(a.variant, &train_set, &val_set, &cfg, cfg.seed, Some(&a.out), &mut log)?;
    println!(
        "trained {} for {} epochs; checkpoint {}",
        a.variant,
        outcome.records.len(),
        outcome.checkpoint.expect("output directory given").display()
    );
    Ok(())
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let cfg = run_config(cli, &a.run)?;
    let manifest = load_dataset(&a.data, cfg.seed)?;
    let pairs = manifest.load_pairs(a.split.split())?;
    if pairs.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut net = if cli.config.is_some() {
        ck.into_network_for(&a.variant.model_spec(&cfg.model))?
    } else {
        ck.into_network()?
    };
    let mut out = serde_json::Map::new();
    for against in a.against.annotators() {
        let report = evaluate(&mut net, &pairs, against, &cfg)?;
        let label = metric_label("D", a.variant, against);
        print_report(&label, &report);
        out.insert(label, serde_json::to_value(&report).map_err(json_err("report"))?);
    }
    if let Some(path) = &a.out {
        write_json(path, &out)?;
    }
    Ok(())
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs) -> Result<()> {
    let mut plan = load_plan(cli)?;
    a.run.apply(&mut plan.run_config);
    if let Some(v) = &a.variants {
        plan.variants = v.clone();
    }
    match &a.seeds {
        Some(s) => plan.seeds = s.clone(),
        None if cli.seed.is_some() => {
            let s = plan.run_config.seed;
            plan.seeds = vec![s, s + 1, s + 2];
        }
        None => {}
    }
    if let Some(n) = a.overlays {
        plan.overlay_samples = n;
    }
    plan.output_dir = Some(a.out.clone());
    plan.validate()?;
    let manifest = load_dataset(&a.data, plan.run_config.seed)?;
    let (train_set, val_set, test_set) = splits(&manifest)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("plan.json"), &plan)?;
    let outcome = run_experiment(&plan, &train_set, &val_set, &test_set, &mut |m| eprintln!("{m}"))?;
    print!("{}", outcome.table);
    Ok(())
}

fn cmd_overlay(cli: &Cli, a: &OverlayArgs) -> Result<()> {
    let cfg = run_config(cli, &a.run)?;
    let manifest = load_dataset(&a.data, cfg.seed)?;
    let pairs: Vec<AnnotationPair> = manifest.load_pairs(a.split.split())?.into_iter().take(a.count).collect();
    if pairs.is_empty() {
        return Err(Error::Data("no samples to render".into()));
    }
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    for spec in &a.checkpoints {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => (spec.clone(), PathBuf::from(spec)),
        };
        let mut net = Checkpoint::load(&path)?.into_network()?;
        preds.push(predict_masks(&mut net, &pairs, &cfg)?);
        labels.push(label);
    }
    create_dir(&a.out)?;
    let legend: Vec<String> = ["input", "annotation 1", "annotation 2"]
        .into_iter()
        .map(String::from)
        .chain(labels)
        .collect();
    let legend_path = a.out.join("panels.txt");
    fs::write(&legend_path, legend.join("\n") + "\n").map_err(|e| Error::io(&legend_path, e))?;
    for (i, pair) in pairs.iter().enumerate() {
        let masks: Vec<&Mask> = preds.iter().map(|p| &p[i]).collect();
        save_overlay(&a.out.join(format!("sample_{i:04}.png")), pair, &masks)?;
    }
    println!("wrote {} overlays to {}", pairs.len(), a.out.display());
    Ok(())
}
