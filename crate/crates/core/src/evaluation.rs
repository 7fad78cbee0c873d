//! Test-set predictions, agreement statistics and report files.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clipstore::{mean_pixel_trace, Pixel};
use crate::dvrnet::Checkpoint;
use crate::eemdpca::{estimate, EemdConfig};
use crate::error::{Error, Result};
use crate::trainer::{predict_first_windows, Access, Channel, ClipSource, Task};
use crate::Scalar;

/// Bland-Altman multiplier on the sample sd of the differences.
pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Hr,
    Rr,
}

impl Quantity {
    pub fn truth(self, r: &crate::clipstore::ClipRecord) -> f64 {
        match self {
            Quantity::Hr => r.hr_bpm,
            Quantity::Rr => r.rr_brpm,
        }
    }

    /// Network output columns for a task, in order.
    pub fn of_task(task: Task) -> &'static [Quantity] {
        match task {
            Task::Hr => &[Quantity::Hr],
            Task::Rr => &[Quantity::Rr],
            Task::Both => &[Quantity::Hr, Quantity::Rr],
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::Hr => "hr",
            Quantity::Rr => "rr",
        })
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hr" => Ok(Quantity::Hr),
            "rr" => Ok(Quantity::Rr),
            other => Err(Error::invalid(format!("unknown quantity {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub clip_id: String,
    pub quantity: Quantity,
    pub predicted: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    pub entries: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(entries: Vec<Prediction>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !(e.truth > 0.0) {
                return Err(Error::invalid(format!("{} {}: truth must be positive", e.clip_id, e.quantity)));
            }
            if !seen.insert((e.clip_id.as_str(), e.quantity)) {
                return Err(Error::invalid(format!("duplicate entry {} {}", e.clip_id, e.quantity)));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn quantities(&self) -> Vec<Quantity> {
        let mut q: Vec<Quantity> = self.entries.iter().map(|e| e.quantity).collect();
        q.sort();
        q.dedup();
        q
    }

    pub fn of(&self, quantity: Quantity) -> impl Iterator<Item = &Prediction> {
        self.entries.iter().filter(move |e| e.quantity == quantity)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        if self.entries.is_empty() {
            w.write_record(["clip_id", "quantity", "predicted", "truth"])?;
        }
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path.as_ref())?;
        let entries = rdr.deserialize().collect::<std::result::Result<Vec<Prediction>, _>>()?;
        Self::new(entries)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T = f64> {
    pub n: usize,
    pub mse: T,
    pub rms: T,
    /// Mean of predicted - truth.
    pub bias: T,
    pub loa_low: T,
    pub loa_high: T,
    pub pearson_r: T,
}

/// Pearson correlation. Zero variance on either side gives 1 for identical
/// vectors and 0 otherwise.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> T {
    let n = T::from_usize_lossy(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == T::zero() || syy == T::zero() {
        if x == y {
            return T::one();
        }
        log::warn!("correlation undefined for a constant series; reporting 0");
        return T::zero();
    }
    (sxy / (sxx * syy).sqrt()).max(-T::one()).min(T::one())
}

/// Agreement statistics between paired predictions and truths.
pub fn agreement<T: Scalar>(predicted: &[T], truth: &[T]) -> Result<EvalReport<T>> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions for {} truths", predicted.len(), truth.len())));
    }
    let n = predicted.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 pairs, got {n}")));
    }
    let nf = T::from_usize_lossy(n);
    let diffs: Vec<T> = predicted.iter().zip(truth).map(|(&p, &t)| p - t).collect();
    let mse = diffs.iter().map(|&d| d * d).sum::<T>() / nf;
    let bias = diffs.iter().copied().sum::<T>() / nf;
    let var = diffs.iter().map(|&d| (d - bias) * (d - bias)).sum::<T>() / (nf - T::one());
    let half = T::lit(LOA_Z) * var.sqrt();
    Ok(EvalReport {
        n,
        mse,
        rms: mse.sqrt(),
        bias,
        loa_low: bias - half,
        loa_high: bias + half,
        pearson_r: pearson(predicted, truth),
    })
}

/// One report per quantity present in the set.
pub fn compute_metrics(preds: &PredictionSet) -> Result<BTreeMap<Quantity, EvalReport>> {
    if preds.is_empty() {
        return Err(Error::invalid("empty prediction set"));
    }
    let mut out = BTreeMap::new();
    for q in preds.quantities() {
        let (p, t): (Vec<f64>, Vec<f64>) = preds.of(q).map(|e| (e.predicted, e.truth)).unzip();
        let report = agreement(&p, &t).map_err(|e| Error::invalid(format!("{q}: {e}")))?;
        out.insert(q, report);
    }
    Ok(out)
}

/// RMS of always predicting the mean of `train_truths`.
pub fn mean_predictor_rms(train_truths: &[f64], test_truths: &[f64]) -> Result<f64> {
    if train_truths.is_empty() || test_truths.is_empty() {
        return Err(Error::invalid("mean predictor needs train and test labels"));
    }
    let mean = train_truths.iter().sum::<f64>() / train_truths.len() as f64;
    let mse = test_truths.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / test_truths.len() as f64;
    Ok(mse.sqrt())
}

fn tag<'a>(tags: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    tags.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::invalid(format!("checkpoint lacks the {key:?} tag")))
}

/// Runs a trained checkpoint over `ids` in eval mode, first window per clip,
/// no augmentation. Task, channel and window come from the checkpoint tags.
pub fn evaluate_model<T: Scalar + Pixel>(
    ckpt: &Checkpoint<T>,
    source: &dyn ClipSource,
    ids: &[String],
) -> Result<PredictionSet> {
    let task: Task = tag(&ckpt.tags, "task")?.parse()?;
    let channel: Channel = tag(&ckpt.tags, "channel")?.parse()?;
    let parse = |k: &str| -> Result<usize> {
        tag(&ckpt.tags, k)?
            .parse()
            .map_err(|_| Error::invalid(format!("tag {k:?} is not a frame count")))
    };
    let (window, net) = (parse("window_frames")?, parse("net_frames")?);
    let quantities = Quantity::of_task(task);
    if quantities.len() != ckpt.model.config().n_outputs {
        return Err(Error::shape(format!(
            "task {task} needs {} outputs, model has {}",
            quantities.len(),
            ckpt.model.config().n_outputs
        )));
    }
    let pred = predict_first_windows(&ckpt.model, source, ids, window, net, channel, Access::Evaluate)?;
    let mut entries = Vec::with_capacity(ids.len() * quantities.len());
    for (id, row) in ids.iter().zip(pred.rows()) {
        let rec = source.record(id)?;
        for (&q, &p) in quantities.iter().zip(row) {
            entries.push(Prediction {
                clip_id: id.clone(),
                quantity: q,
                predicted: p,
                truth: q.truth(rec),
            });
        }
    }
    PredictionSet::new(entries)
}

/// One row of the EEMD-PCA baseline output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub clip_id: String,
    pub hr_pred: Option<f64>,
    pub rr_pred: Option<f64>,
    pub status: String,
}

/// EEMD-PCA estimates on the red mean-pixel trace of each clip. Per-clip
/// failures are reported in `status` rather than aborting the batch.
pub fn run_baseline(source: &dyn ClipSource, ids: &[String], cfg: &EemdConfig, seed: u64) -> Result<Vec<BaselineRow>> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let clip_seed = seed.wrapping_add(i as u64);
        let result = source
            .load(id, Access::Evaluate)
            .and_then(|clip| Channel::Red.extract(&clip))
            .and_then(|red| {
                let trace: Vec<f64> = mean_pixel_trace(&red)?;
                estimate(&trace, red.fps() as f64, cfg, clip_seed)
            });
        let row = match result {
            Ok(est) => {
                let mut problems = Vec::new();
                if let Err(e) = &est.hr_bpm {
                    problems.push(format!("hr: {e}"));
                }
                if let Err(e) = &est.rr_brpm {
                    problems.push(format!("rr: {e}"));
                }
                BaselineRow {
                    clip_id: id.clone(),
                    hr_pred: est.hr_bpm.ok(),
                    rr_pred: est.rr_brpm.ok(),
                    status: if problems.is_empty() { "ok".into() } else { problems.join("; ") },
                }
            }
            Err(e) => {
                log::warn!("{id}: baseline failed: {e}");
                BaselineRow {
                    clip_id: id.clone(),
                    hr_pred: None,
                    rr_pred: None,
                    status: e.to_string(),
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_baseline(rows: &[BaselineRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["clip_id", "hr_pred", "rr_pred", "status"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_baseline(path: impl AsRef<Path>) -> Result<Vec<BaselineRow>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<BaselineRow>, _>>()?)
}

/// Baseline rows as a prediction set; quantities without an estimate are
/// left out.
pub fn baseline_predictions(rows: &[BaselineRow], source: &dyn ClipSource) -> Result<PredictionSet> {
    let mut entries = Vec::new();
    for r in rows {
        let rec = source.record(&r.clip_id)?;
        for (q, p) in [(Quantity::Hr, r.hr_pred), (Quantity::Rr, r.rr_pred)] {
            if let Some(p) = p {
                entries.push(Prediction {
                    clip_id: r.clip_id.clone(),
                    quantity: q,
                    predicted: p,
                    truth: q.truth(rec),
                });
            }
        }
    }
    PredictionSet::new(entries)
}

pub fn format_metrics(reports: &BTreeMap<Quantity, EvalReport>) -> String {
    let mut s = String::from("quantity n mse rms bias loa_low loa_high pearson_r\n");
    for (q, r) in reports {
        writeln!(
            s,
            "{q} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            r.n, r.mse, r.rms, r.bias, r.loa_low, r.loa_high, r.pearson_r
        )
        .unwrap();
    }
    s
}

/// Writes `metrics.txt`, `bland_altman.csv` and `correlation.csv` into
/// `out_dir`, creating it if needed.
pub fn emit_report(reports: &BTreeMap<Quantity, EvalReport>, preds: &PredictionSet, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics = dir.join("metrics.txt");
    std::fs::write(&metrics, format_metrics(reports)).map_err(|e| Error::io(&metrics, e))?;

    let mut ba = String::from("clip_id,quantity,mean,diff\n");
    let mut corr = String::from("clip_id,quantity,truth,pred\n");
    for e in &preds.entries {
        let mean = (e.predicted + e.truth) / 2.0;
        writeln!(ba, "{},{},{},{}", e.clip_id, e.quantity, mean, e.predicted - e.truth).unwrap();
        writeln!(corr, "{},{},{},{}", e.clip_id, e.quantity, e.truth, e.predicted).unwrap();
    }
    for (name, body) in [("bland_altman.csv", ba), ("correlation.csv", corr)] {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
