//! Trains every (variant, seed), scores each model against both experts and
//! aggregates the per-seed means into one comparison table.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::evaluate::{metric_label, predict_masks, score_masks};
use super::overlay::save_overlay;
use super::train::{train, EpochRecord};
use super::Variant;
use crate::config::RunConfig;
use crate::domain::{AnnotationPair, Annotator, Mask};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, Stat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub run_config: RunConfig,
    /// Where run directories, tables and overlays go; nothing is written when absent.
    pub output_dir: Option<PathBuf>,
    /// Number of test samples rendered as overlays (first seed's models).
    pub overlay_samples: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            variants: Variant::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            run_config: RunConfig::default(),
            output_dir: None,
            overlay_samples: 4,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.run_config.validate()?;
        if self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("an experiment needs at least one variant and one seed".into()));
        }
        let mut v = self.variants.clone();
        v.sort();
        v.dedup();
        if v.len() != self.variants.len() {
            return Err(Error::Config("variants must not repeat".into()));
        }
        let mut s = self.seeds.clone();
        s.sort();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::Config("seeds must not repeat".into()));
        }
        Ok(())
    }
}

/// One trained model's scores against each expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    /// Scores against expert 1 and expert 2.
    pub reports: [MetricReport; 2],
    pub records: Vec<EpochRecord>,
    pub selected_epoch: usize,
}

impl RunResult {
    pub fn report(&self, against: Annotator) -> &MetricReport {
        &self.reports[against.index() - 1]
    }
}

/// One row: a model tested on one expert's annotations, mean ± std over seeds
/// of the per-seed means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub annotation: Annotator,
    pub model: Variant,
    /// For example `D_unaah^1`.
    pub label: String,
    pub dice: Stat,
    pub core_dice: Option<Stat>,
    pub iou: Stat,
    pub iou_nobk: Option<Stat>,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<TableRow>,
}

fn fmt_opt(s: &Option<Stat>) -> (String, String) {
    match s {
        Some(s) => (format!("{:.8}", s.mean), format!("{:.8}", s.std)),
        None => (String::new(), String::new()),
    }
}

impl ComparisonTable {
    /// Rows grouped by annotation, models in the order UNet 1, UNet 2, UNaah.
    pub fn from_runs(runs: &[RunResult]) -> Self {
        let mut rows = Vec::new();
        for annotation in [Annotator::One, Annotator::Two] {
            for model in Variant::ALL {
                let reports: Vec<&MetricReport> =
                    runs.iter().filter(|r| r.variant == model).map(|r| r.report(annotation)).collect();
                if reports.is_empty() {
                    continue;
                }
                let of = |f: &dyn Fn(&MetricReport) -> f64| {
                    Stat::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("nonempty")
                };
                let of_opt = |f: &dyn Fn(&MetricReport) -> Option<f64>| {
                    let v: Option<Vec<f64>> = reports.iter().map(|r| f(r)).collect();
                    v.and_then(|v| Stat::of(&v))
                };
                rows.push(TableRow {
                    annotation,
                    model,
                    label: metric_label("D", model, annotation),
                    dice: of(&|r| r.dice.mean),
                    core_dice: of_opt(&|r| r.core_dice_mean()),
                    iou: of(&|r| r.iou.mean),
                    iou_nobk: of_opt(&|r| r.iou_nobk_mean()),
                    n_seeds: reports.len(),
                });
            }
        }
        ComparisonTable { rows }
    }

    pub fn row(&self, annotation: Annotator, model: Variant) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.annotation == annotation && r.model == model)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "annotation,model,label,dice_mean,dice_std,core_dice_mean,core_dice_std,iou_mean,iou_std,iou_nobk_mean,iou_nobk_std,n_seeds\n",
        );
        for r in &self.rows {
            let (cd, cds) = fmt_opt(&r.core_dice);
            let (nb, nbs) = fmt_opt(&r.iou_nobk);
            out.push_str(&format!(
                "{},{},{},{:.8},{:.8},{cd},{cds},{:.8},{:.8},{nb},{nbs},{}\n",
                r.annotation.index(),
                r.model.key(),
                r.label,
                r.dice.mean,
                r.dice.std,
                r.iou.mean,
                r.iou.std,
                r.n_seeds
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let csv = dir.join("table.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("table.json");
        let text = serde_json::to_string_pretty(self).expect("table serializes");
        fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pm = |s: &Option<Stat>| s.map_or("-".to_string(), |s| format!("{:.4} ± {:.4}", s.mean, s.std));
        writeln!(
            f,
            "{:<10} {:<7} {:<18} {:<18} {:<18} {:<18}",
            "Annotation", "Model", "D", "cD", "IoU", "IoU_nobk"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:<7} {:<18} {:<18} {:<18} {:<18}",
                r.annotation.index(),
                r.model.to_string(),
                pm(&Some(r.dice)),
                pm(&r.core_dice),
                pm(&Some(r.iou)),
                pm(&r.iou_nobk)
            )?;
        }
        Ok(())
    }
}

pub struct ExperimentOutcome {
    pub runs: Vec<RunResult>,
    pub table: ComparisonTable,
}

/// Runs `plan` on fixed train/validation/test sets.
///
/// With an output directory, each run writes its epoch log and checkpoints
/// to `runs/<variant>-seed<seed>/`, the table goes to `table.csv` and
/// `table.json`, per-run scores to `runs.json`, and overlays of the first
/// seed's predictions to `overlays/`.
pub fn run_experiment(
    plan: &ExperimentPlan,
    train_set: &[AnnotationPair],
    val_set: &[AnnotationPair],
    test_set: &[AnnotationPair],
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentOutcome> {
    plan.validate()?;
    if test_set.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let cfg = &plan.run_config;
    let mut runs = Vec::new();
    let mut overlay_preds: Vec<(Variant, Vec<Mask>)> = Vec::new();
    for &seed in &plan.seeds {
        for &variant in &plan.variants {
            let run_dir = plan
                .output_dir
                .as_ref()
                .map(|d| d.join("runs").join(format!("{}-seed{seed}", variant.key())));
            let mut on_epoch = |r: &EpochRecord| {
                progress(&format!(
                    "{} seed {seed} epoch {}: loss {:.5} (ce1 {:.5}, ce2 {:.5}, w {:.3}) {:.1}s",
                    variant, r.epoch, r.loss_total, r.ce_1, r.ce_2, r.w_used, r.seconds
                ))
            };
            let mut outcome = train(variant, train_set, val_set, cfg, seed, run_dir.as_deref(), &mut on_epoch)?;
            let preds = predict_masks(&mut outcome.network, test_set, cfg)?;
            let reports = [
                score_masks(&preds, test_set, Annotator::One)?,
                score_masks(&preds, test_set, Annotator::Two)?,
            ];
            progress(&format!(
                "{} seed {seed}: {} = {:.4}, {} = {:.4}",
                variant,
                metric_label("D", variant, Annotator::One),
                reports[0].dice.mean,
                metric_label("D", variant, Annotator::Two),
                reports[1].dice.mean
            ));
            if seed == plan.seeds[0] {
                overlay_preds.push((variant, preds.into_iter().take(plan.overlay_samples).collect()));
            }
            runs.push(RunResult {
                variant,
                seed,
                reports,
                records: outcome.records,
                selected_epoch: outcome.selected_epoch,
            });
        }
    }
    let table = ComparisonTable::from_runs(&runs);

    if let Some(dir) = &plan.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        table.write(dir)?;
        let runs_path = dir.join("runs.json");
        let text = serde_json::to_string_pretty(&runs).expect("runs serialize");
        fs::write(&runs_path, text + "\n").map_err(|e| Error::io(&runs_path, e))?;
        if plan.overlay_samples > 0 {
            let odir = dir.join("overlays");
            fs::create_dir_all(&odir).map_err(|e| Error::io(&odir, e))?;
            let order: Vec<String> = ["input", "annotation 1", "annotation 2"]
                .into_iter()
                .map(String::from)
                .chain(overlay_preds.iter().map(|(v, _)| v.to_string()))
                .collect();
            let legend = odir.join("panels.txt");
            fs::write(&legend, order.join("\n") + "\n").map_err(|e| Error::io(&legend, e))?;
            for (i, pair) in test_set.iter().take(plan.overlay_samples).enumerate() {
                let masks: Vec<&Mask> = overlay_preds.iter().map(|(_, p)| &p[i]).collect();
                save_overlay(&odir.join(format!("sample_{i:04}.png")), pair, &masks)?;
            }
        }
    }
    Ok(ExperimentOutcome { runs, table })
}
