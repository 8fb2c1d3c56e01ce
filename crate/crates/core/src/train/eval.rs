use crate::error::{Error, Result};
use crate::grid::Tensor;
use crate::image::{Image, LabelMap, NUM_CLASSES};
use crate::loss::{argmax_labels, FOREGROUND};
use crate::segnet::SegNetParams;

const INFER_CHUNK: usize = 8;

/// Hard dice per foreground class (LV, MYO, RV). A class absent from both
/// maps scores 1.
pub fn dice_scores(pred: &LabelMap, truth: &LabelMap) -> Result<[f64; 3]> {
    if pred.dims() != truth.dims() {
        return Err(Error::shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    let mut out = [0.0; 3];
    for (slot, &c) in out.iter_mut().zip(FOREGROUND.iter()) {
        let c = c as u8;
        let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            a += (p == c) as usize;
            b += (t == c) as usize;
            both += (p == c && t == c) as usize;
        }
        *slot = if a + b == 0 {
            1.0
        } else {
            2.0 * both as f64 / (a + b) as f64
        };
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiceSummary {
    pub per_sample: Vec<(String, [f64; 3])>,
    /// Per-class means over samples.
    pub mean: [f64; 3],
}

impl DiceSummary {
    pub fn average(&self) -> f64 {
        self.mean.iter().sum::<f64>() / 3.0
    }
}

/// Scores `(sample_id, prediction, truth)` triples.
pub fn evaluate_dice<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a LabelMap, Option<&'a LabelMap>)>,
) -> Result<DiceSummary> {
    let mut summary = DiceSummary::default();
    for (id, pred, truth) in pairs {
        let truth = truth.ok_or_else(|| Error::data(format!("{id}: no ground-truth mask")))?;
        summary
            .per_sample
            .push((id.to_string(), dice_scores(pred, truth)?));
    }
    if summary.per_sample.is_empty() {
        return Err(Error::data("no labeled samples to evaluate"));
    }
    let n = summary.per_sample.len() as f64;
    for (_, s) in &summary.per_sample {
        for c in 0..3 {
            summary.mean[c] += s[c] / n;
        }
    }
    Ok(summary)
}

fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
    let (h, w) = images[0].dims();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::shape(format!(
                "mixed image sizes {:?} and {:?}",
                (h, w),
                img.dims()
            )));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::new(&[images.len(), 1, h, w], data)
}

/// Averages softmax maps within each model, then across models.
///
/// Returns one `[C, H, W]` probability map per image, flattened.
pub fn ensemble_probs(models: &[&[SegNetParams]], images: &[&Image]) -> Result<Vec<Vec<f64>>> {
    if models.is_empty() || models.iter().any(|m| m.is_empty()) {
        return Err(Error::config(
            "ensemble needs at least one network per model",
        ));
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFER_CHUNK) {
        let batch = batch_tensor(chunk)?;
        let mut acc = vec![0.0; batch.len() * NUM_CLASSES];
        for model in models {
            let mut inner = vec![0.0; acc.len()];
            for net in model.iter() {
                let p = net.predict_probs(&batch)?;
                inner.iter_mut().zip(p.data()).for_each(|(a, b)| *a += b);
            }
            let k = (model.len() * models.len()) as f64;
            acc.iter_mut().zip(&inner).for_each(|(a, b)| *a += b / k);
        }
        let per = acc.len() / chunk.len();
        out.extend(acc.chunks(per).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Hard labels from a `[C, H, W]` probability map; ties go to the lower class.
pub fn hard_mask(probs: &[f64], height: usize, width: usize) -> Result<LabelMap> {
    let t = Tensor::new(&[1, NUM_CLASSES, height, width], probs.to_vec())?;
    LabelMap::new(height, width, argmax_labels(&t)?)
}

pub fn ensemble_predict(models: &[&[SegNetParams]], images: &[&Image]) -> Result<Vec<LabelMap>> {
    let probs = ensemble_probs(models, images)?;
    probs
        .iter()
        .zip(images)
        .map(|(p, img)| hard_mask(p, img.height(), img.width()))
        .collect()
}
