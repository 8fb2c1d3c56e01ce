//! Two-network CACPS training, AdamW, cosine schedule, ensemble inference and
//! dice evaluation.

pub mod config;
pub mod eval;
pub mod optim;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, ErrorKind, Result};
use crate::grid::{Tape, Tensor, Var};
use crate::image::{Image, LabelMap, NUM_CLASSES};
use crate::loss::{self, CacpsOptions, LossReport};
use crate::phantom::{mix_seed, Dataset, Split};
use crate::segnet::{BoundNet, SegNetParams};
use crate::spectral::{fourier_augment, MixConfig};

pub use config::{AugSettings, PartnerSource, Paths, RunConfig, Seeds, TrainSettings};
pub use eval::{
    dice_scores, ensemble_predict, ensemble_probs, evaluate_dice, hard_mask, DiceSummary,
};
pub use optim::{adamw_step, cosine_lr, AdamWState};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_COLUMNS: [&str; 12] = [
    "epoch",
    "step",
    "model_id",
    "L_s",
    "L_cacps",
    "L_total",
    "lr",
    "mean_V",
    "val_dice_LV",
    "val_dice_MYO",
    "val_dice_RV",
    "val_dice_avg",
];

/// In-memory training pool and validation set.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub pool: Vec<PoolItem>,
    pub val: Vec<(String, Image, LabelMap)>,
}

#[derive(Clone, Debug)]
pub struct PoolItem {
    pub image: Image,
    pub mask: Option<LabelMap>,
}

impl TrainData {
    /// Train split becomes the pool (labeled members only when
    /// `labeled_only`); labeled val samples become the validation set.
    pub fn from_dataset(ds: &Dataset, labeled_only: bool) -> Result<Self> {
        let pool = ds
            .load_split(Split::Train)?
            .into_iter()
            .filter(|s| s.labeled || !labeled_only)
            .map(|s| PoolItem {
                image: s.image,
                mask: s.mask,
            })
            .collect();
        let val = ds
            .load_split(Split::Val)?
            .into_iter()
            .filter_map(|s| s.mask.map(|m| (s.sample_id, s.image, m)))
            .collect();
        Ok(TrainData { pool, val })
    }
}

/// One row of the metrics CSV. Ensemble rows (model 0) carry no losses.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub model_id: u8,
    pub losses: Option<EpochLosses>,
    pub val_dice: Option<[f64; 3]>,
}

/// Epoch means of the per-step losses.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLosses {
    pub l_s: f64,
    pub l_cacps: f64,
    pub l_total: f64,
    pub lr: f64,
    pub mean_v: f64,
}

impl MetricsRow {
    pub fn record(&self) -> Vec<String> {
        let mut rec = vec![
            self.epoch.to_string(),
            self.step.to_string(),
            self.model_id.to_string(),
        ];
        match &self.losses {
            Some(l) => {
                rec.extend([l.l_s, l.l_cacps, l.l_total, l.lr, l.mean_v].map(|v| v.to_string()))
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        match self.val_dice {
            Some(d) => {
                rec.extend(d.map(|v| v.to_string()));
                rec.push((d.iter().sum::<f64>() / 3.0).to_string());
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 4)),
        }
        rec
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(METRICS_COLUMNS)
        .map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.record())
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::new(ErrorKind::Io, format!("{}: {e}", path.display()))
}

/// One optimizer step's worth of inputs.
pub struct StepBatch<'a> {
    pub images: Vec<&'a Image>,
    /// Augmented views, required when the CACPS term is active.
    pub augmented: Option<Vec<Image>>,
    pub masks: Vec<Option<&'a LabelMap>>,
}

fn stack(images: &[&Image]) -> Result<Tensor> {
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

/// Gradients for both networks (kernel, bias per layer) and the loss report.
///
/// `L = L_s + beta·L_cacps`, with `L_s` the sum of both networks' dice losses
/// on the labeled members' original-view predictions. With `beta == 0` the
/// augmented branch is not evaluated and `L_cacps` reports as 0.
pub fn step_gradients(
    nets: [&SegNetParams; 2],
    batch: &StepBatch,
    beta: f64,
    opts: CacpsOptions,
) -> Result<([Vec<Vec<f64>>; 2], LossReport)> {
    if batch.images.is_empty() || batch.images.len() != batch.masks.len() {
        return Err(Error::shape("step batch needs one mask slot per image"));
    }
    let tape = Tape::new();
    let bound = [nets[0].bind(&tape, true), nets[1].bind(&tape, true)];
    let original = tape.constant(stack(&batch.images)?);
    let mut report = LossReport::default();

    let (probs_o, l_cacps): ([Var; 2], Option<Var>) = if beta > 0.0 {
        let aug = batch
            .augmented
            .as_ref()
            .ok_or_else(|| Error::config("augmented views missing"))?;
        let aug_refs: Vec<&Image> = aug.iter().collect();
        let augmented = tape.constant(stack(&aug_refs)?);
        let a = loss::build_bundle(&bound[0], original, augmented)?;
        let b = loss::build_bundle(&bound[1], original, augmented)?;
        report.mean_variance = (a.variance.value().data().iter().sum::<f64>()
            + b.variance.value().data().iter().sum::<f64>())
            / (2 * a.variance.value().len()) as f64;
        let l = loss::cacps_pair_loss(&a, &b, opts)?;
        ([a.p_o, b.p_o], Some(l))
    } else {
        (
            [
                bound[0].predict_probs(original)?,
                bound[1].predict_probs(original)?,
            ],
            None,
        )
    };

    let labeled: Vec<usize> = (0..batch.masks.len())
        .filter(|&i| batch.masks[i].is_some())
        .collect();
    let l_s = if labeled.is_empty() {
        None
    } else {
        let mut g = Vec::with_capacity(labeled.len() * NUM_CLASSES * batch.images[0].data().len());
        for &i in &labeled {
            g.extend(batch.masks[i].expect("labeled").one_hot());
        }
        let (h, w) = batch.images[0].dims();
        let g = Tensor::new(&[labeled.len(), NUM_CLASSES, h, w], g)?;
        let mut total: Option<Var> = None;
        for p in probs_o {
            let sub = tape.gather(p, &labeled)?;
            let terms = loss::dice_terms(sub, &g)?.value();
            for (slot, &c) in report.dice_terms.iter_mut().zip(loss::FOREGROUND.iter()) {
                *slot += terms.data()[c] / 2.0;
            }
            let d = loss::dice_loss(sub, &g)?;
            total = Some(match total {
                Some(t) => t.add(d)?,
                None => d,
            });
        }
        total
    };

    let zero = || tape.constant(Tensor::scalar(0.0));
    let l_s = l_s.unwrap_or_else(zero);
    let l_c = l_cacps.unwrap_or_else(zero);
    let total = loss::total_loss(l_s, l_c, beta)?;
    report.l_s = l_s.item();
    report.l_cacps = l_c.item();
    report.l_total = total.item();
    if !report.l_total.is_finite() {
        return Err(Error::new(
            ErrorKind::Diverged,
            format!("non-finite loss {}", report.l_total),
        ));
    }
    let grads = tape.backward(total)?;
    let collect = |net: &BoundNet| -> Vec<Vec<f64>> {
        net.vars()
            .map(|v| {
                grads
                    .get(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; v.value().len()])
            })
            .collect()
    };
    Ok(([collect(&bound[0]), collect(&bound[1])], report))
}

/// Endless stream of indices, reshuffled after each full pass.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(order: Vec<usize>, rng: ChaCha8Rng) -> Self {
        Sampler {
            pos: order.len(),
            order,
            rng,
        }
    }

    fn restart(&mut self) {
        self.pos = self.order.len();
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

enum BatchSampler {
    Pool(Sampler),
    Split {
        labeled: Sampler,
        unlabeled: Sampler,
        per_batch: usize,
    },
}

impl BatchSampler {
    fn restart(&mut self) {
        match self {
            BatchSampler::Pool(s) => s.restart(),
            BatchSampler::Split {
                labeled, unlabeled, ..
            } => {
                labeled.restart();
                unlabeled.restart();
            }
        }
    }

    fn batch(&mut self, size: usize) -> Vec<usize> {
        match self {
            BatchSampler::Pool(s) => (0..size).map(|_| s.next()).collect(),
            BatchSampler::Split {
                labeled,
                unlabeled,
                per_batch,
            } => {
                let mut out: Vec<usize> = (0..*per_batch).map(|_| labeled.next()).collect();
                out.extend((*per_batch..size).map(|_| unlabeled.next()));
                out
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelRun {
    pub model_id: u8,
    pub nets: [SegNetParams; 2],
    pub rows: Vec<MetricsRow>,
}

pub fn checkpoint_name(model_id: u8, which: usize) -> String {
    format!("net{}.ckpt", 2 * (model_id as usize - 1) + which + 1)
}

fn save_nets(dir: &Path, model_id: u8, nets: &[SegNetParams; 2]) -> Result<()> {
    for (k, net) in nets.iter().enumerate() {
        net.save(&dir.join(checkpoint_name(model_id, k)))?;
    }
    Ok(())
}

/// Validation dice of the averaged pair, or `None` without validation data.
fn validate(nets: &[SegNetParams], val: &[(String, Image, LabelMap)]) -> Result<Option<[f64; 3]>> {
    if val.is_empty() {
        return Ok(None);
    }
    let images: Vec<&Image> = val.iter().map(|(_, img, _)| img).collect();
    let preds = ensemble_predict(&[nets], &images)?;
    let summary = evaluate_dice(
        val.iter()
            .zip(&preds)
            .map(|((id, _, m), p)| (id.as_str(), p, Some(m))),
    )?;
    Ok(Some(summary.mean))
}

/// Trains one CACPS model (two networks). Checkpoints, when a directory is
/// given, are rewritten after every epoch so a divergence leaves the last
/// good pair on disk.
pub fn train_cacps_model(
    model_id: u8,
    data: &TrainData,
    cfg: &RunConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<ModelRun> {
    cfg.validate()?;
    if !(1..=2).contains(&model_id) {
        return Err(Error::config(format!("model id {model_id} must be 1 or 2")));
    }
    if data.pool.is_empty() {
        return Err(Error::data("training pool is empty"));
    }
    if data.pool.iter().all(|p| p.mask.is_none()) {
        return Err(Error::data("training pool has no labeled samples"));
    }
    let t = &cfg.train;
    let (seed_a, seed_b) = cfg.net_seeds(model_id);
    let mut nets = [SegNetParams::init(seed_a), SegNetParams::init(seed_b)];
    let mut states = [
        AdamWState::new(nets[0].tensors()),
        AdamWState::new(nets[1].tensors()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seeds.shuffle, model_id as u64));
    let (labeled, unlabeled): (Vec<usize>, Vec<usize>) =
        (0..data.pool.len()).partition(|&i| data.pool[i].mask.is_some());
    let split_batches = t.labeled_per_batch > 0 && !unlabeled.is_empty();
    let mut sampler = if split_batches {
        BatchSampler::Split {
            labeled: Sampler::new(labeled, ChaCha8Rng::seed_from_u64(rng.random())),
            unlabeled: Sampler::new(unlabeled, ChaCha8Rng::seed_from_u64(rng.random())),
            per_batch: t.labeled_per_batch,
        }
    } else {
        BatchSampler::Pool(Sampler::new(
            (0..data.pool.len()).collect(),
            ChaCha8Rng::seed_from_u64(rng.random()),
        ))
    };
    let batch_size = if split_batches {
        t.batch_size
    } else {
        t.batch_size.min(data.pool.len())
    };
    let steps = if t.steps_per_epoch > 0 {
        t.steps_per_epoch
    } else {
        data.pool.len().div_ceil(batch_size)
    };
    let opts = CacpsOptions {
        grad_through_variance: t.grad_through_variance,
    };
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_nets(dir, model_id, &nets)?;
    }

    let mut rows = Vec::with_capacity(t.epochs);
    let mut global_step = 0;
    for epoch in 0..t.epochs {
        let lr = cosine_lr(epoch, t.epochs, t.lr_max, t.lr_min);
        let beta = cfg.beta_at(epoch);
        sampler.restart();
        let mut sums = [0.0; 4];
        for _ in 0..steps {
            let idx = sampler.batch(batch_size);
            let images: Vec<&Image> = idx.iter().map(|&i| &data.pool[i].image).collect();
            let augmented = if beta > 0.0 {
                let mut out = Vec::with_capacity(idx.len());
                for (k, img) in images.iter().enumerate() {
                    let partner = match cfg.aug.partners {
                        PartnerSource::Batch => {
                            let offset = if idx.len() > 1 {
                                1 + rng.random_range(0..idx.len() - 1)
                            } else {
                                0
                            };
                            images[(k + offset) % idx.len()]
                        }
                        PartnerSource::Pool => {
                            let n = data.pool.len();
                            let offset = if n > 1 {
                                1 + rng.random_range(0..n - 1)
                            } else {
                                0
                            };
                            &data.pool[(idx[k] + offset) % n].image
                        }
                    };
                    let lambda = cfg.aug.lambda_max * rng.random::<f64>();
                    let mix = MixConfig {
                        lambda,
                        mask_ratio: cfg.aug.mask_ratio,
                        mode: cfg.aug.mode,
                    };
                    out.push(fourier_augment(img, partner, &mix)?);
                }
                Some(out)
            } else {
                None
            };
            let batch = StepBatch {
                images,
                augmented,
                masks: idx.iter().map(|&i| data.pool[i].mask.as_ref()).collect(),
            };
            let (grads, report) = step_gradients([&nets[0], &nets[1]], &batch, beta, opts)
                .map_err(|e| {
                    if e.kind() == ErrorKind::Diverged {
                        Error::new(
                            ErrorKind::Diverged,
                            format!("model {model_id} epoch {epoch}: {}", e.message()),
                        )
                    } else {
                        e
                    }
                })?;
            for ((net, state), g) in nets.iter_mut().zip(states.iter_mut()).zip(&grads) {
                let mut params: Vec<&mut Tensor> = net.tensors_mut().collect();
                adamw_step(&mut params, g, state, lr, t.weight_decay)?;
            }
            sums[0] += report.l_s;
            sums[1] += report.l_cacps;
            sums[2] += report.l_total;
            sums[3] += report.mean_variance;
            global_step += 1;
        }
        if nets.iter().any(|n| n.tensors().any(|p| !p.is_finite())) {
            return Err(Error::new(
                ErrorKind::Diverged,
                format!("model {model_id} epoch {epoch}: non-finite weights"),
            ));
        }
        if let Some(dir) = checkpoint_dir {
            save_nets(dir, model_id, &nets)?;
        }
        let n = steps as f64;
        rows.push(MetricsRow {
            epoch,
            step: global_step,
            model_id,
            losses: Some(EpochLosses {
                l_s: sums[0] / n,
                l_cacps: sums[1] / n,
                l_total: sums[2] / n,
                lr,
                mean_v: sums[3] / n,
            }),
            val_dice: validate(&nets, &data.val)?,
        });
    }
    Ok(ModelRun {
        model_id,
        nets,
        rows,
    })
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub models: Vec<ModelRun>,
    pub rows: Vec<MetricsRow>,
    pub metrics_path: PathBuf,
}

/// Trains the configured models, writes checkpoints under
/// `out_dir/checkpoints`, `metrics.csv` and the resolved `config.json`.
/// When both models train, a final model-0 row scores their ensemble.
pub fn train_run(cfg: &RunConfig, dataset: &Dataset, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = TrainData::from_dataset(dataset, cfg.train.labeled_only)?;
    let ckpt = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    let config_path = out_dir.join("config.json");
    let text = serde_json::to_string_pretty(&cfg.to_flat()).expect("config serializes");
    fs::write(&config_path, text + "\n").map_err(|e| Error::io(&config_path, e))?;

    let mut models = Vec::new();
    let mut rows = Vec::new();
    for &m in &cfg.train.models {
        let run = train_cacps_model(m, &data, cfg, Some(&ckpt))?;
        rows.extend(run.rows.iter().cloned());
        models.push(run);
    }
    if models.len() == 2 && !data.val.is_empty() {
        let pairs: Vec<&[SegNetParams]> = models.iter().map(|m| &m.nets[..]).collect();
        let images: Vec<&Image> = data.val.iter().map(|(_, img, _)| img).collect();
        let preds = ensemble_predict(&pairs, &images)?;
        let summary = evaluate_dice(
            data.val
                .iter()
                .zip(&preds)
                .map(|((id, _, m), p)| (id.as_str(), p, Some(m))),
        )?;
        let last = rows.last().expect("trained rows");
        rows.push(MetricsRow {
            epoch: last.epoch,
            step: last.step,
            model_id: 0,
            losses: None,
            val_dice: Some(summary.mean),
        });
    }
    let metrics_path = out_dir.join(METRICS_FILE);
    write_metrics_csv(&metrics_path, &rows)?;
    Ok(RunOutcome {
        models,
        rows,
        metrics_path,
    })
}
