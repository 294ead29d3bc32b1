//! The optimization loop: Adam with weight decay, reduce-on-plateau on the
//! validation score, early stop at the learning-rate floor, best-score
//! checkpointing. Fully deterministic under a fixed seed.

mod adam;
mod checkpoint;
mod plateau;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPS as ADAM_EPS};
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use plateau::{plateau_schedule, PlateauSchedule, IMPROVEMENT_TOL};

use crate::data::augment::{augment, AugmentOp};
use crate::data::manifest::{load_entry, DatasetManifest, Split};
use crate::data::SamplePair;
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossConfig};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{AblationFlags, ModelConfig, SaanModel};
use crate::rng::Rng;
use crate::similarity::ContrastiveConfig;
use crate::tensor::{Tape, Tensor};
use std::path::Path;

/// Which validation score drives the plateau schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValMetric {
    F1,
    PixelAccuracy,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub contrastive: ContrastiveConfig,
    pub flags: AblationFlags,
    pub model: ModelConfig,
    pub val_metric: ValMetric,
    pub decoupled_weight_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 5e-4,
            weight_decay: 1e-5,
            batch_size: 8,
            plateau_patience: 5,
            plateau_factor: 1.0 / 3.0,
            min_lr: 1e-7,
            max_epochs: 200,
            seed: 0,
            loss: LossConfig::default(),
            contrastive: ContrastiveConfig::default(),
            flags: AblationFlags::full(),
            model: ModelConfig::default(),
            val_metric: ValMetric::F1,
            decoupled_weight_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::value("train_config", "plateau_factor must be in (0,1)"));
        }
        if self.min_lr >= self.lr0 {
            return Err(Error::value("train_config", "min_lr must be below lr0"));
        }
        if self.plateau_patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::value(
                "train_config",
                "patience, batch_size and max_epochs must be positive",
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::value("train_config", "weight_decay must be >= 0"));
        }
        self.loss.validate()?;
        self.contrastive.validate()?;
        self.flags.validate()?;
        self.model.encoder.validate()
    }
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub l_seg: f64,
    pub l_con: f64,
    pub l_aux: f64,
    pub val_f1: f64,
    pub val_iou: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    LrFloor,
    MaxEpochs,
    /// Training aborted on a non-finite loss; the checkpoint is the last
    /// good state.
    NonFinite,
}

#[derive(Clone, Debug)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Total loss of the first few optimizer steps, for determinism checks.
    pub step_losses: Vec<f32>,
    pub stop: StopReason,
    /// Mean wall-clock seconds per optimizer step.
    pub sec_per_iter: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,lr,loss,l_seg,l_con,l_aux,val_f1,val_iou";

pub fn epoch_record_csv(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.epoch, r.lr, r.loss, r.l_seg, r.l_con, r.l_aux, r.val_f1, r.val_iou
    )
}

pub fn epoch_log_csv(log: &TrainLog) -> String {
    let mut out = String::from(EPOCH_LOG_HEADER);
    out.push('\n');
    for r in &log.epochs {
        out.push_str(&epoch_record_csv(r));
        out.push('\n');
    }
    out
}

/// A dataset split loaded into memory.
#[derive(Clone, Debug, Default)]
pub struct LoadedDataset {
    pub train: Vec<SamplePair>,
    pub val: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
}

impl LoadedDataset {
    pub fn split(&self, split: Split) -> &[SamplePair] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Read every split referenced by a manifest file into memory.
pub fn load_dataset(manifest_path: &Path) -> Result<LoadedDataset> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let root = manifest_path
        .parent()
        .ok_or_else(|| Error::format(manifest_path.display().to_string(), "no parent directory", None))?;
    let mut out = LoadedDataset::default();
    for entry in &manifest.entries {
        let sample = load_entry(root, entry)?;
        match entry.split {
            Split::Train => out.train.push(sample),
            Split::Val => out.val.push(sample),
            Split::Test => out.test.push(sample),
        }
    }
    Ok(out)
}

fn batched(img: &Tensor<f32>) -> Tensor<f32> {
    let mut shape = vec![1usize];
    shape.extend_from_slice(img.shape());
    Tensor::from_vec(&shape, img.data().to_vec())
}

fn stack_batch(samples: &[SamplePair]) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>) {
    let t1: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.t1).collect();
    let t2: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.t2).collect();
    let mask: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.mask).collect();
    (
        Tensor::stack(&t1),
        Tensor::stack(&t2),
        Tensor::stack(&mask),
    )
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub log: TrainLog,
}

// Tag for the shuffle/augment stream so it never collides with the
// per-sample generator streams.
const DATA_STREAM_TAG: u64 = 0xda7a_57ea_4d00_0001;

/// Train on a manifest on disk.
pub fn train(config: &TrainConfig, manifest_path: &Path) -> Result<TrainOutcome> {
    let dataset = load_dataset(manifest_path)?;
    train_on(config, &dataset)
}

/// Train on an in-memory dataset.
pub fn train_on(config: &TrainConfig, dataset: &LoadedDataset) -> Result<TrainOutcome> {
    train_with_progress(config, dataset, |_| {})
}

/// Train with a per-epoch callback (progress reporting).
pub fn train_with_progress(
    config: &TrainConfig,
    dataset: &LoadedDataset,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(Error::value("train", "train and val splits must be non-empty"));
    }
    let mut model = SaanModel::<f32>::new(config.model.clone(), config.flags, config.seed)?;
    let mut adam = AdamState::new(model.params());
    let mut data_rng = Rng::for_index(config.seed, DATA_STREAM_TAG);
    let mut schedule = PlateauSchedule::new(
        config.lr0,
        config.plateau_patience,
        config.plateau_factor,
        config.min_lr,
    );

    let mut log = TrainLog {
        epochs: Vec::new(),
        step_losses: Vec::new(),
        stop: StopReason::MaxEpochs,
        sec_per_iter: 0.0,
    };
    let mut best: Option<Checkpoint> = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut lr = config.lr0;
    let mut step_seconds = 0.0f64;
    let mut steps_total = 0u64;

    'epochs: for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        data_rng.shuffle(&mut order);

        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64); // total, seg, con, aux
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<SamplePair> = chunk
                .iter()
                .map(|&i| {
                    let op = AugmentOp::draw(&mut data_rng);
                    augment(&dataset.train[i], op)
                })
                .collect::<Result<_>>()?;
            let (t1, t2, mask) = stack_batch(&samples);

            let started = std::time::Instant::now();
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &t1, &t2, true)?;
            let loss = total_loss(
                &mut tape,
                out.final_logits,
                &out.aux_logits,
                Some(out.deepest),
                &mask,
                &config.flags,
                &config.loss,
                &config.contrastive,
            )?;
            if !loss.breakdown.total.is_finite() {
                // hand back the last good state
                log.stop = StopReason::NonFinite;
                let ckpt = best.unwrap_or_else(|| {
                    Checkpoint::capture(&model, &adam, config, data_rng.state(), epoch as u64, 0.0)
                });
                log.sec_per_iter = if steps_total > 0 {
                    step_seconds / steps_total as f64
                } else {
                    0.0
                };
                return Ok(TrainOutcome { best: ckpt, log });
            }
            tape.backward(loss.var)?;
            let grads: Vec<Vec<f32>> = out
                .param_vars
                .iter()
                .enumerate()
                .map(|(i, &id)| {
                    tape.grad(id)
                        .map(|g| g.to_vec())
                        .unwrap_or_else(|| vec![0.0; model.params().tensors()[i].len()])
                })
                .collect();
            adam_step(
                model.params_mut(),
                &grads,
                &mut adam,
                lr,
                config.weight_decay,
                config.decoupled_weight_decay,
            )?;
            step_seconds += started.elapsed().as_secs_f64();
            steps_total += 1;

            if log.step_losses.len() < 16 {
                log.step_losses.push(loss.breakdown.total as f32);
            }
            sums.0 += loss.breakdown.total;
            sums.1 += loss.breakdown.seg;
            sums.2 += loss.breakdown.con;
            sums.3 += loss.breakdown.aux_sum;
            batches += 1;
        }

        let (val_report, _) = evaluate(&mut model, &dataset.val, config.loss.prediction_threshold)?;
        let metric = match config.val_metric {
            ValMetric::F1 => val_report.f1,
            ValMetric::PixelAccuracy => val_report.pixel_accuracy(),
        };
        if metric > best_f1 {
            best_f1 = metric;
            best = Some(Checkpoint::capture(
                &model,
                &adam,
                config,
                data_rng.state(),
                epoch as u64,
                metric,
            ));
        }
        let inv_b = 1.0 / batches.max(1) as f64;
        let record = EpochRecord {
            epoch,
            lr,
            loss: sums.0 * inv_b,
            l_seg: sums.1 * inv_b,
            l_con: sums.2 * inv_b,
            l_aux: sums.3 * inv_b,
            val_f1: val_report.f1,
            val_iou: val_report.iou,
        };
        progress(&record);
        log.epochs.push(record);
        let (new_lr, stop) = schedule.observe(metric);
        lr = new_lr;
        if stop {
            log.stop = StopReason::LrFloor;
            break 'epochs;
        }
    }

    log.sec_per_iter = if steps_total > 0 {
        step_seconds / steps_total as f64
    } else {
        0.0
    };
    let best = best.ok_or_else(|| Error::value("train", "no epoch completed"))?;
    Ok(TrainOutcome { best, log })
}

/// Score a model over a set of pairs. Runs in eval mode (running-stat
/// batchnorm), where every sample's math is independent of its batch, so
/// results are bit-identical for any batching. Returns the aggregate
/// report (counts summed before the ratios) plus one report per tile.
pub fn evaluate(
    model: &mut SaanModel<f32>,
    samples: &[SamplePair],
    threshold: f64,
) -> Result<(MetricsReport, Vec<MetricsReport>)> {
    let mut per_tile = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(8) {
        let (t1, t2, _) = stack_batch(chunk);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &t1, &t2, false)?;
        let logits = tape.value(out.final_logits);
        let per_sample = logits.len() / chunk.len();
        for (i, s) in chunk.iter().enumerate() {
            let slice = &logits.data()[i * per_sample..(i + 1) * per_sample];
            let mut shape = vec![1usize];
            shape.extend_from_slice(s.mask.shape());
            let l = Tensor::from_vec(&shape, slice.to_vec());
            per_tile.push(compute_metrics(&l, &batched(&s.mask), threshold)?);
        }
    }
    Ok((MetricsReport::merge(&per_tile), per_tile))
}

/// Eval-mode logits for one pair of `[C,H,W]` images -> `[1,1,H,W]`.
pub fn predict_logits(
    model: &mut SaanModel<f32>,
    t1: &Tensor<f32>,
    t2: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &batched(t1), &batched(t2), false)?;
    Ok(tape.value(out.final_logits).clone())
}

/// Rows of the component-ablation comparison.
pub struct AblateRow {
    pub label: &'static str,
    pub flags: AblationFlags,
}

/// The comparison grid: quick = endpoints only, full = every intermediate
/// combination.
pub fn ablation_grid(full: bool) -> Vec<AblateRow> {
    let mut rows = vec![AblateRow {
        label: "baseline",
        flags: AblationFlags::baseline(),
    }];
    if full {
        rows.push(AblateRow {
            label: "sim",
            flags: AblationFlags {
                sim_loss: true,
                ..AblationFlags::baseline()
            },
        });
        rows.push(AblateRow {
            label: "ds",
            flags: AblationFlags {
                deep_supervision: true,
                ..AblationFlags::baseline()
            },
        });
    }
    rows.push(AblateRow {
        label: "sim_ds",
        flags: AblationFlags::sim_ds(),
    });
    if full {
        rows.push(AblateRow {
            label: "sim_ds_sca",
            flags: AblationFlags {
                sca: true,
                ..AblationFlags::sim_ds()
            },
        });
        rows.push(AblateRow {
            label: "sim_ds_ssa",
            flags: AblationFlags {
                ssa: true,
                ..AblationFlags::sim_ds()
            },
        });
        rows.push(AblateRow {
            label: "sim_ds_sca_ssa",
            flags: AblationFlags {
                sca: true,
                ssa: true,
                ..AblationFlags::sim_ds()
            },
        });
    }
    rows.push(AblateRow {
        label: "full",
        flags: AblationFlags::full(),
    });
    rows
}
