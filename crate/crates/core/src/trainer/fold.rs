use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lookahead::Lookahead;
use super::source::{Access, Channel, ClipSource, Task};
use super::stopping::EarlyStopping;
use super::window::{draw_batch, first_window, stack, to_network_input};
use crate::augment::AugmentConfig;
use crate::clipstore::Pixel;
use crate::dvrnet::{save_checkpoint, DvrModel, LossKind, LossWeights, Mode};
use crate::error::{Error, Result};
use crate::folds::{fold_to_splits, FoldPlan};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub window_frames: usize,
    pub net_frames: usize,
    pub lr: f64,
    pub lookahead_alpha: f64,
    pub lookahead_k: usize,
    pub epochs: usize,
    pub patience: usize,
    pub k_folds: usize,
    pub seed: u64,
    /// Overrides the frames-per-epoch rule when set.
    pub steps_per_epoch: Option<usize>,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 5,
            window_frames: 720,
            net_frames: 360,
            lr: 1e-5,
            lookahead_alpha: 0.5,
            lookahead_k: 5,
            epochs: 40,
            patience: 10,
            k_folds: 4,
            seed: 0,
            steps_per_epoch: None,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.epochs == 0 || self.lookahead_k == 0 || self.k_folds < 2 {
            return bad("batch_size, epochs and lookahead_k must be positive and k_folds at least 2".into());
        }
        if self.net_frames == 0 || self.window_frames != 2 * self.net_frames {
            return bad(format!(
                "net_frames ({}) must be half of window_frames ({})",
                self.net_frames, self.window_frames
            ));
        }
        if self.patience >= self.epochs {
            return bad(format!("patience {} must be below epochs {}", self.patience, self.epochs));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.lookahead_alpha) {
            return bad(format!("bad lr {} or alpha {}", self.lr, self.lookahead_alpha));
        }
        self.loss_weights.validate()
    }

    /// `ceil(total frames / (window * batch))`, unless overridden.
    pub fn steps_for(&self, total_frames: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| total_frames.div_ceil(self.window_frames * self.batch_size))
            .max(1)
    }
}

/// Everything about a training run besides the data and the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub config: TrainConfig,
    pub augment: AugmentConfig,
    pub task: Task,
    pub channel: Channel,
}

impl TrainSetup {
    pub fn loss(&self) -> LossKind {
        match self.task {
            Task::Both => LossKind::Joint(self.config.loss_weights),
            _ => LossKind::Mse,
        }
    }

    pub fn tags(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("task".to_string(), self.task.to_string()),
            ("channel".to_string(), self.channel.to_string()),
            ("window_frames".to_string(), self.config.window_frames.to_string()),
            ("net_frames".to_string(), self.config.net_frames.to_string()),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub best_val_mse: f64,
    pub epochs_ran: usize,
    pub checkpoint: Option<PathBuf>,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome<T> {
    pub result: FoldResult,
    /// Weights from the best validation epoch.
    pub model: DvrModel<T>,
}

/// Predictions on the first window of each clip, in label units.
pub fn predict_first_windows<T: Scalar + Pixel>(
    model: &DvrModel<T>,
    source: &dyn ClipSource,
    ids: &[String],
    window: usize,
    net_frames: usize,
    channel: Channel,
    access: Access,
) -> Result<Array2<f64>> {
    let chunk = 8;
    let mut out = Array2::zeros((ids.len(), model.config().n_outputs));
    for (c, group) in ids.chunks(chunk).enumerate() {
        let mut seqs = Vec::with_capacity(group.len());
        for id in group {
            let clip = source.load(id, access)?;
            seqs.push(to_network_input::<T>(&first_window(&clip, window, net_frames)?, channel)?);
        }
        let pred = model.predict(&stack(&seqs)?)?;
        for (i, row) in pred.rows().into_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[[c * chunk + i, j]] = v.to_f64_lossy();
            }
        }
    }
    Ok(out)
}

fn validation_mse<T: Scalar + Pixel>(
    model: &DvrModel<T>,
    source: &dyn ClipSource,
    ids: &[String],
    setup: &TrainSetup,
) -> Result<f64> {
    let c = &setup.config;
    let pred = predict_first_windows(model, source, ids, c.window_frames, c.net_frames, setup.channel, Access::Validate)?;
    let mut sum = 0.0;
    for (id, row) in ids.iter().zip(pred.rows()) {
        let labels = setup.task.labels(source.record(id)?);
        sum += row.iter().zip(&labels).map(|(p, l)| (p - l).powi(2)).sum::<f64>();
    }
    Ok(sum / pred.len() as f64)
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if sd > 1e-9 { sd } else { 1.0 })
}

/// Trains one fold with Lookahead-SGD, validating after every epoch and
/// keeping the best weights. The output layer is rescaled so that a unit
/// network output spans one training-label standard deviation.
pub fn train_fold<T: Scalar + Pixel>(
    mut model: DvrModel<T>,
    source: &dyn ClipSource,
    fold_index: usize,
    train_ids: &[String],
    val_ids: &[String],
    setup: &TrainSetup,
    out_dir: Option<&Path>,
) -> Result<FoldOutcome<T>> {
    let cfg = &setup.config;
    cfg.validate()?;
    setup.augment.validate()?;
    if train_ids.is_empty() || val_ids.is_empty() {
        return Err(Error::Training(format!("fold {fold_index} has an empty train or validation set")));
    }
    if model.config().n_outputs != setup.task.n_outputs() {
        return Err(Error::invalid(format!(
            "model has {} outputs but task {} needs {}",
            model.config().n_outputs,
            setup.task,
            setup.task.n_outputs()
        )));
    }

    let mut total_frames = 0;
    let mut per_output: Vec<Vec<f64>> = vec![Vec::new(); setup.task.n_outputs()];
    for id in train_ids {
        let r = source.record(id)?;
        total_frames += r.n_frames;
        for (j, v) in setup.task.labels(r).into_iter().enumerate() {
            per_output[j].push(v);
        }
    }
    let (offset, scale): (Vec<f64>, Vec<f64>) = per_output.iter().map(|v| mean_and_sd(v)).unzip();
    model.set_output_affine(&offset, &scale)?;

    let steps = cfg.steps_for(total_frames);
    let loss_kind = setup.loss();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(fold_index as u64));
    rng.set_stream(1);
    let mut opt = Lookahead::new(&model, cfg.lr, cfg.lookahead_alpha, cfg.lookahead_k)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_model = None;
    let mut history = Vec::new();

    let checkpoint = out_dir.map(|d| d.join(format!("fold{fold_index}.dvrw")));
    let mut log_file = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let p = d.join(format!("fold{fold_index}_log.txt"));
            let mut f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            writeln!(f, "epoch train_loss val_mse").map_err(|e| Error::io(&p, e))?;
            Some((p, f))
        }
        None => None,
    };

    for epoch in 1..=cfg.epochs {
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let batch = draw_batch::<T>(
                source,
                train_ids,
                cfg.batch_size,
                cfg.window_frames,
                cfg.net_frames,
                setup.channel,
                setup.task,
                &setup.augment,
                &mut rng,
            )?;
            let pass = model.forward(&batch.inputs, Mode::Train, &mut rng)?;
            let (loss, grads) = model.backward(&pass, &batch.labels, loss_kind)?;
            let step = if loss.is_finite() {
                opt.step(&mut model, &grads)
            } else {
                Err(Error::NonFiniteGradient { clip_ids: Vec::new() })
            };
            if let Err(Error::NonFiniteGradient { .. }) = step {
                let err = Error::NonFiniteGradient {
                    clip_ids: batch.clip_ids,
                };
                log::warn!("fold {fold_index} epoch {epoch}: {err}; abandoning the epoch");
                opt.reset_fast(&mut model);
                break;
            }
            step?;
            losses.push(loss.to_f64_lossy());
        }
        let train_loss = if losses.is_empty() {
            f64::NAN
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        let val_mse = validation_mse(&model, source, val_ids, setup)?;
        log::info!("fold {fold_index} epoch {epoch}: train_loss {train_loss:.4} val_mse {val_mse:.4}");
        if let Some((p, f)) = log_file.as_mut() {
            writeln!(f, "{epoch} {train_loss} {val_mse}").map_err(|e| Error::io(&*p, e))?;
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_mse,
        });
        let decision = stopper.update(val_mse);
        if decision.improved {
            if let Some(p) = &checkpoint {
                save_checkpoint(&model, &setup.tags(), p)?;
            }
            best_model = Some(model.clone());
        }
        if decision.stop {
            break;
        }
    }

    let (Some(model), Some((_, best))) = (best_model, stopper.best()) else {
        return Err(Error::Training(format!("fold {fold_index}: every validation loss was non-finite")));
    };
    Ok(FoldOutcome {
        result: FoldResult {
            fold_index,
            best_val_mse: best,
            epochs_ran: history.len(),
            checkpoint,
            history,
        },
        model,
    })
}

/// Trains every fold of `plan`, each from a fresh model built for its index.
pub fn train_folds<T: Scalar + Pixel>(
    plan: &FoldPlan,
    mut make_model: impl FnMut(usize) -> Result<DvrModel<T>>,
    source: &dyn ClipSource,
    setup: &TrainSetup,
    out_dir: Option<&Path>,
) -> Result<Vec<FoldOutcome<T>>> {
    (0..plan.k())
        .map(|i| {
            let (train, val) = fold_to_splits(plan, i)?;
            train_fold(make_model(i)?, source, i, &train, &val, setup, out_dir)
        })
        .collect()
}

/// Lowest validation MSE; ties go to the lower fold index.
pub fn select_best_fold(results: &[FoldResult]) -> Result<&FoldResult> {
    results
        .iter()
        .min_by(|a, b| {
            a.best_val_mse
                .total_cmp(&b.best_val_mse)
                .then(a.fold_index.cmp(&b.fold_index))
        })
        .ok_or_else(|| Error::invalid("no fold results to choose from"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(i: usize, mse: f64) -> FoldResult {
        FoldResult {
            fold_index: i,
            best_val_mse: mse,
            epochs_ran: 1,
            checkpoint: None,
            history: vec![],
        }
    }

    #[test]
    fn best_fold_examples() {
        let rs: Vec<_> = [33.4, 40.1, 35.0, 50.2].iter().enumerate().map(|(i, &m)| result(i, m)).collect();
        assert_eq!(select_best_fold(&rs).unwrap().fold_index, 0);
        let tie = vec![result(1, 10.0), result(0, 10.0)];
        assert_eq!(select_best_fold(&tie).unwrap().fold_index, 0);
        assert_eq!(select_best_fold(&rs[2..3]).unwrap().fold_index, 2);
        assert!(select_best_fold(&[]).is_err());
    }

    #[test]
    fn config_rules() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.steps_for(810 * 36), 9);
        assert!(TrainConfig { net_frames: 300, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { patience: 40, ..c.clone() }.validate().is_err());
        assert_eq!(TrainConfig { steps_per_epoch: Some(3), ..c }.steps_for(1_000_000), 3);
    }
}
