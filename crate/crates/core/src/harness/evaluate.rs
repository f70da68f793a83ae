use super::Variant;
use crate::config::RunConfig;
use crate::data::resize_sample;
use crate::domain::{AnnotationPair, Annotator, Mask};
use crate::error::{Error, Result};
use crate::metrics::{score_prediction, summarize, MetricReport};
use crate::model::{predict_mask_at, Checkpoint, Mode, ModelSpec, Network};

use super::train::batch_tensor;

/// `D_1^2`-style label: metric, model subscript, annotation superscript.
pub fn metric_label(metric: &str, model: Variant, annotation: Annotator) -> String {
    format!("{metric}_{}^{}", model.subscript(), annotation.index())
}

/// Binarized aggregate predictions at each sample's native size.
///
/// Samples are resized to the network input, and the predicted foreground
/// probability is resampled back before thresholding.
pub fn predict_masks(net: &mut Network, pairs: &[AnnotationPair], cfg: &RunConfig) -> Result<Vec<Mask>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(cfg.optimizer.batch_size.max(1)) {
        let resized: Vec<AnnotationPair> = chunk.iter().map(|p| resize_sample(p, cfg.input_size)).collect();
        let refs: Vec<&AnnotationPair> = resized.iter().collect();
        let outputs = net.forward(&batch_tensor(&refs), Mode::Eval)?;
        for (i, p) in chunk.iter().enumerate() {
            let (w, h) = p.image().dims();
            out.push(predict_mask_at(&outputs, i, cfg.threshold, w, h)?);
        }
    }
    Ok(out)
}

/// Scores predictions against one expert's masks. Core Dice and IoU_nobk
/// count items either expert annotated; the reported IoU also counts items
/// where the prediction has foreground.
pub fn score_masks(preds: &[Mask], pairs: &[AnnotationPair], against: Annotator) -> Result<MetricReport> {
    if preds.len() != pairs.len() {
        return Err(Error::Data(format!("{} predictions for {} samples", preds.len(), pairs.len())));
    }
    let items = preds
        .iter()
        .zip(pairs)
        .map(|(pred, p)| score_prediction(pred, p.mask(against.index()), &[&p.mask_1, &p.mask_2]))
        .collect::<Result<Vec<_>>>()?;
    summarize(&items, true)
}

/// Scores `net` on `test` against expert `against`.
pub fn evaluate(net: &mut Network, test: &[AnnotationPair], against: Annotator, cfg: &RunConfig) -> Result<MetricReport> {
    if test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let preds = predict_masks(net, test, cfg)?;
    score_masks(&preds, test, against)
}

/// Loads `checkpoint` (checking it against `expected` when given) and
/// evaluates it.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    expected: Option<&ModelSpec>,
    test: &[AnnotationPair],
    against: Annotator,
    cfg: &RunConfig,
) -> Result<MetricReport> {
    let mut net = match expected {
        Some(spec) => checkpoint.into_network_for(spec)?,
        None => checkpoint.into_network()?,
    };
    evaluate(&mut net, test, against, cfg)
}
