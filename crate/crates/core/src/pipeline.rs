//! End-to-end orchestration: synth, preprocess, folds, train, evaluate,
//! baseline and report, each writing under one output directory and skipped
//! when its inputs have not changed since the last successful run.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::clipstore::Catalog;
use crate::dvrnet::{load_checkpoint, DvrConfig, DvrModel, Scale, Variant};
use crate::eemdpca::EemdConfig;
use crate::error::{Error, Result};
use crate::evaluation::{
    baseline_predictions, compute_metrics, emit_report, evaluate_model, format_metrics, mean_predictor_rms,
    run_baseline, write_baseline, PredictionSet, Quantity,
};
use crate::folds::{fold_to_splits, plan_folds, FoldPlan};
use crate::preprocess::{preprocess_pipeline, PreprocessConfig};
use crate::synthgen::{synth_dataset, SynthDatasetConfig};
use crate::trainer::{select_best_fold, train_fold, CatalogSource, Channel, ClipSource, Task, TrainConfig, TrainSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Preprocess,
    Folds,
    Train,
    Evaluate,
    Baseline,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Preprocess,
        Stage::Folds,
        Stage::Train,
        Stage::Evaluate,
        Stage::Baseline,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::Folds => "folds",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Baseline => "baseline",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldsConfig {
    pub holdout_fraction: f64,
    pub k: usize,
}

impl Default for FoldsConfig {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.25,
            k: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainStageConfig {
    pub variant: Variant,
    pub tasks: Vec<Task>,
    pub channels: Vec<Channel>,
    /// Reduced-size network; the canonical table when absent.
    pub scale: Option<Scale>,
    /// Train only the first `n` folds (all of them when absent).
    pub max_folds: Option<usize>,
    #[serde(flatten)]
    pub params: TrainConfig,
}

impl Default for TrainStageConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Dvr3,
            tasks: vec![Task::Hr, Task::Rr],
            channels: vec![Channel::Red],
            scale: None,
            max_folds: None,
            params: TrainConfig::default(),
        }
    }
}

impl TrainStageConfig {
    pub fn network(&self, task: Task) -> Result<DvrConfig> {
        match self.scale {
            Some(scale) => DvrConfig::scaled(self.variant, scale, task.n_outputs()),
            None => DvrConfig::canonical(self.variant, 1, task.n_outputs()),
        }
    }
}

/// Full pipeline configuration, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Master seed; overrides the per-section seeds.
    pub seed: u64,
    /// Generated dataset, used unless `input_catalog` is set.
    pub synth: Option<SynthDatasetConfig>,
    /// Existing raw catalog; takes precedence over `synth`.
    pub input_catalog: Option<PathBuf>,
    pub preprocess: PreprocessConfig,
    pub folds: FoldsConfig,
    pub train: TrainStageConfig,
    pub augment: AugmentConfig,
    pub baseline: EemdConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: Some(SynthDatasetConfig::default()),
            input_catalog: None,
            preprocess: PreprocessConfig::default(),
            folds: FoldsConfig::default(),
            train: TrainStageConfig::default(),
            augment: AugmentConfig::default(),
            baseline: EemdConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.synth.is_none() && self.input_catalog.is_none() {
            return Err(Error::Config("either [synth] or input_catalog is required".into()));
        }
        if self.train.max_folds == Some(0) {
            return Err(Error::Config("train.max_folds must be positive".into()));
        }
        if self.train.tasks.is_empty() || self.train.channels.is_empty() {
            return Err(Error::Config("train.tasks and train.channels must not be empty".into()));
        }
        let mut params = self.train.params.clone();
        params.k_folds = self.folds.k;
        params.validate()?;
        self.augment.validate()?;
        self.baseline.validate()
    }

    /// A small configuration that runs end to end on a laptop CPU: 64
    /// synthetic subjects at 16x16, a miniature DVR3 on 120-frame inputs.
    pub fn desk() -> Self {
        let frames = 120;
        Self {
            seed: 0,
            synth: Some(SynthDatasetConfig {
                n_subjects: 64,
                clips_per_subject: 1.0,
                height: 16,
                width: 16,
                ..SynthDatasetConfig::default()
            }),
            input_catalog: None,
            preprocess: PreprocessConfig {
                height: 16,
                width: 16,
                ..PreprocessConfig::default()
            },
            folds: FoldsConfig {
                holdout_fraction: 0.25,
                k: 4,
            },
            train: TrainStageConfig {
                variant: Variant::Dvr3,
                tasks: vec![Task::Hr],
                channels: vec![Channel::Red],
                scale: Some(Scale {
                    input: crate::dvrnet::InputShape {
                        frames,
                        height: 16,
                        width: 16,
                        channels: 1,
                    },
                    filter_divisor: 8,
                }),
                max_folds: Some(DESK_FOLDS_TRAINED),
                params: TrainConfig {
                    window_frames: 2 * frames,
                    net_frames: frames,
                    lr: DESK_LR,
                    epochs: DESK_EPOCHS,
                    patience: DESK_PATIENCE,
                    steps_per_epoch: Some(DESK_STEPS),
                    ..TrainConfig::default()
                },
            },
            augment: AugmentConfig::disabled(),
            baseline: EemdConfig::default(),
        }
    }
}

const DESK_LR: f64 = 1e-4;
const DESK_EPOCHS: usize = 16;
const DESK_PATIENCE: usize = 12;
const DESK_STEPS: usize = 50;
const DESK_FOLDS_TRAINED: usize = 2;

/// Files and directories the pipeline writes, relative to the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn raw_dir(&self) -> PathBuf {
        self.root.join("raw")
    }

    pub fn raw_catalog(&self) -> PathBuf {
        self.raw_dir().join("catalog.csv")
    }

    pub fn pre_dir(&self) -> PathBuf {
        self.root.join("preprocessed")
    }

    pub fn pre_catalog(&self) -> PathBuf {
        self.pre_dir().join("catalog.csv")
    }

    pub fn folds(&self) -> PathBuf {
        self.root.join("folds.csv")
    }

    pub fn model_dir(&self, task: Task, channel: Channel) -> PathBuf {
        self.root.join("models").join(format!("{task}_{channel}"))
    }

    pub fn best_checkpoint(&self, task: Task, channel: Channel) -> PathBuf {
        self.model_dir(task, channel).join("best.dvrw")
    }

    pub fn eval_dir(&self, task: Task, channel: Channel) -> PathBuf {
        self.root.join("eval").join(format!("{task}_{channel}"))
    }

    pub fn baseline_dir(&self) -> PathBuf {
        self.root.join("eval").join("baseline")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }

    fn stamp(&self, stage: Stage) -> PathBuf {
        self.root.join(".stamps").join(stage.name())
    }
}

/// FNV-1a over the serialized stage inputs; stable across builds.
fn fingerprint(parts: &[&str]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.bytes().chain(std::iter::once(0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

fn json<S: Serialize>(v: &S) -> String {
    serde_json::to_string(v).expect("config types serialize")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineSummary {
    pub ran: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub layout: Layout,
}

impl Pipeline {
    pub fn new(mut config: PipelineConfig, out_dir: impl Into<PathBuf>) -> Self {
        let seed = config.seed;
        if let Some(s) = config.synth.as_mut() {
            s.seed = seed;
        }
        config.train.params.seed = seed;
        config.train.params.k_folds = config.folds.k;
        Self {
            config,
            layout: Layout::new(out_dir),
        }
    }

    fn fingerprints(&self) -> BTreeMap<Stage, String> {
        let c = &self.config;
        let mut fp = BTreeMap::new();
        let source = match (&c.input_catalog, &c.synth) {
            (Some(p), _) => p.display().to_string(),
            (None, Some(s)) => json(s),
            (None, None) => String::new(),
        };
        fp.insert(Stage::Synth, fingerprint(&[&source]));
        fp.insert(Stage::Preprocess, fingerprint(&[&fp[&Stage::Synth], &json(&c.preprocess)]));
        fp.insert(
            Stage::Folds,
            fingerprint(&[&fp[&Stage::Preprocess], &json(&c.folds), &c.seed.to_string()]),
        );
        fp.insert(
            Stage::Train,
            fingerprint(&[&fp[&Stage::Folds], &json(&c.train), &json(&c.augment)]),
        );
        fp.insert(Stage::Evaluate, fingerprint(&[&fp[&Stage::Train]]));
        fp.insert(
            Stage::Baseline,
            fingerprint(&[&fp[&Stage::Folds], &json(&c.baseline), &c.seed.to_string()]),
        );
        fp.insert(
            Stage::Report,
            fingerprint(&[&fp[&Stage::Evaluate], &fp[&Stage::Baseline]]),
        );
        fp
    }

    fn is_current(&self, stage: Stage, fp: &str) -> bool {
        std::fs::read_to_string(self.layout.stamp(stage)).is_ok_and(|s| s.trim() == fp)
    }

    fn mark(&self, stage: Stage, fp: &str) -> Result<()> {
        let p = self.layout.stamp(stage);
        let dir = p.parent().expect("stamp has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(&p, fp).map_err(|e| Error::io(&p, e))
    }

    /// Runs every stage in order. A stage is skipped when its stamp matches
    /// the current inputs; once one stage reruns, everything after it does.
    pub fn run(&self) -> Result<PipelineSummary> {
        self.config.validate().map_err(|e| e.in_stage("config"))?;
        let fps = self.fingerprints();
        let mut summary = PipelineSummary::default();
        let mut dirty = false;
        for stage in Stage::ALL {
            let fp = &fps[&stage];
            if !dirty && self.is_current(stage, fp) {
                log::info!("{stage}: up to date");
                summary.skipped.push(stage);
                continue;
            }
            dirty = true;
            log::info!("{stage}: running");
            self.run_stage(stage).map_err(|e| e.in_stage(stage.name()))?;
            self.mark(stage, fp).map_err(|e| e.in_stage(stage.name()))?;
            summary.ran.push(stage);
        }
        Ok(summary)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Synth => self.synth(),
            Stage::Preprocess => self.preprocess(),
            Stage::Folds => self.folds(),
            Stage::Train => self.train(),
            Stage::Evaluate => self.evaluate(),
            Stage::Baseline => self.baseline(),
            Stage::Report => self.report(),
        }
    }

    fn raw_catalog_path(&self) -> PathBuf {
        match &self.config.input_catalog {
            Some(p) => p.clone(),
            None => self.layout.raw_catalog(),
        }
    }

    fn synth(&self) -> Result<()> {
        if self.config.input_catalog.is_some() {
            return Ok(());
        }
        if let Some(cfg) = &self.config.synth {
            synth_dataset(cfg, self.layout.raw_dir())?;
        }
        Ok(())
    }

    fn preprocess(&self) -> Result<()> {
        let catalog = Catalog::read(self.raw_catalog_path())?;
        let outcome = preprocess_pipeline(&catalog, &self.config.preprocess, self.layout.pre_dir())?;
        log::info!(
            "preprocess: {} of {} clips pass the quality gate, {} failed",
            outcome.retained(),
            catalog.len(),
            outcome.failures.len()
        );
        Ok(())
    }

    fn source(&self) -> Result<CatalogSource> {
        Ok(CatalogSource::new(Catalog::read(self.layout.pre_catalog())?))
    }

    fn plan(&self) -> Result<FoldPlan> {
        FoldPlan::read(self.layout.folds())
    }

    fn folds(&self) -> Result<()> {
        let catalog = Catalog::read(self.layout.pre_catalog())?;
        let f = &self.config.folds;
        let plan = plan_folds(&catalog, f.holdout_fraction, f.k, self.config.seed)?;
        plan.write(self.layout.folds())
    }

    fn combos(&self) -> Vec<(Task, Channel)> {
        let t = &self.config.train;
        t.tasks
            .iter()
            .flat_map(|&task| t.channels.iter().map(move |&ch| (task, ch)))
            .collect()
    }

    fn train(&self) -> Result<()> {
        let source = self.source()?;
        let plan = self.plan()?;
        for (task, channel) in self.combos() {
            let dir = self.layout.model_dir(task, channel);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let setup = TrainSetup {
                config: self.config.train.params.clone(),
                augment: self.config.augment.clone(),
                task,
                channel,
            };
            let net = self.config.train.network(task)?;
            let seed = self.config.seed;
            let n = self.config.train.max_folds.unwrap_or(plan.k()).min(plan.k());
            let mut results = Vec::with_capacity(n);
            for i in 0..n {
                let (train_ids, val_ids) = fold_to_splits(&plan, i)?;
                let model = DvrModel::<f32>::from_config(net.clone(), seed.wrapping_add(i as u64))?;
                results.push(train_fold(model, &source, i, &train_ids, &val_ids, &setup, Some(&dir))?.result);
            }
            let best = select_best_fold(&results)?;
            let from = best
                .checkpoint
                .clone()
                .ok_or_else(|| Error::Training(format!("fold {} saved no checkpoint", best.fold_index)))?;
            let to = self.layout.best_checkpoint(task, channel);
            std::fs::copy(&from, &to).map_err(|e| Error::io(&to, e))?;
            let summary = dir.join("folds.json");
            std::fs::write(&summary, serde_json::to_string_pretty(&results)?).map_err(|e| Error::io(&summary, e))?;
            log::info!(
                "train {task}/{channel}: best fold {} (val mse {:.3})",
                best.fold_index,
                best.best_val_mse
            );
        }
        Ok(())
    }

    fn evaluate(&self) -> Result<()> {
        let source = self.source()?;
        let plan = self.plan()?;
        for (task, channel) in self.combos() {
            let ckpt = load_checkpoint::<f32>(self.layout.best_checkpoint(task, channel))?;
            let preds = evaluate_model(&ckpt, &source, &plan.holdout_clip_ids)?;
            write_evaluation(&preds, &self.layout.eval_dir(task, channel))?;
        }
        Ok(())
    }

    fn baseline(&self) -> Result<()> {
        let source = self.source()?;
        let plan = self.plan()?;
        let rows = run_baseline(&source, &plan.holdout_clip_ids, &self.config.baseline, self.config.seed)?;
        let dir = self.layout.baseline_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_baseline(&rows, dir.join("baseline.csv"))?;
        let preds = baseline_predictions(&rows, &source)?;
        write_evaluation(&preds, &dir)
    }

    fn report(&self) -> Result<()> {
        let source = self.source()?;
        let plan = self.plan()?;
        let train_ids: Vec<&String> = plan.folds.iter().flatten().collect();
        let mut text = String::new();
        for q in [Quantity::Hr, Quantity::Rr] {
            let train: Vec<f64> = train_ids
                .iter()
                .map(|id| source.record(id).map(|r| q.truth(r)))
                .collect::<Result<_>>()?;
            let test: Vec<f64> = plan
                .holdout_clip_ids
                .iter()
                .map(|id| source.record(id).map(|r| q.truth(r)))
                .collect::<Result<_>>()?;
            writeln!(text, "mean-predictor {q} rms {:.6}", mean_predictor_rms(&train, &test)?).unwrap();
        }
        let mut sections: Vec<(String, PathBuf)> = self
            .combos()
            .into_iter()
            .map(|(t, c)| (format!("dvr {t}/{c}"), self.layout.eval_dir(t, c)))
            .collect();
        sections.push(("eemd-pca".into(), self.layout.baseline_dir()));
        for (name, dir) in sections {
            let preds = PredictionSet::read_csv(dir.join("predictions.csv"))?;
            writeln!(text, "\n[{name}]").unwrap();
            match compute_metrics(&preds) {
                Ok(reports) => text.push_str(&format_metrics(&reports)),
                Err(e) => writeln!(text, "unavailable: {e}").unwrap(),
            }
        }
        let p = self.layout.summary();
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}

/// `predictions.csv` plus the report files, or just the predictions when
/// there are too few entries for statistics.
pub fn write_evaluation(preds: &PredictionSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    preds.write_csv(dir.join("predictions.csv"))?;
    match compute_metrics(preds) {
        Ok(reports) => emit_report(&reports, preds, dir),
        Err(e) => {
            log::warn!("{}: no metrics: {e}", dir.display());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let cfg = PipelineConfig::desk();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = PipelineConfig::from_toml_str("seed = 9\n[train]\ntasks = [\"both\"]\nlr = 0.001\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.train.tasks, vec![Task::Both]);
        assert_eq!(partial.train.params.lr, 1e-3);
        assert_eq!(partial.train.params.batch_size, 5);
        assert!(PipelineConfig::from_toml_str("[train]\nlr = \"fast\"\n").is_err());
    }

    #[test]
    fn desk_config_is_valid() {
        PipelineConfig::desk().validate().unwrap();
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn fingerprints_follow_inputs() {
        let a = Pipeline::new(PipelineConfig::desk(), "x").fingerprints();
        let mut cfg = PipelineConfig::desk();
        cfg.baseline.ensemble_size = 10;
        let b = Pipeline::new(cfg, "x").fingerprints();
        assert_eq!(a[&Stage::Train], b[&Stage::Train]);
        assert_ne!(a[&Stage::Baseline], b[&Stage::Baseline]);
        assert_ne!(a[&Stage::Report], b[&Stage::Report]);
    }

    #[test]
    fn missing_catalog_names_preprocess() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            input_catalog: Some(dir.path().join("nope.csv")),
            ..PipelineConfig::desk()
        };
        let err = Pipeline::new(cfg, dir.path()).run().unwrap_err();
        match err {
            Error::Stage { stage, .. } => assert_eq!(stage, "preprocess"),
            other => panic!("{other}"),
        }
    }
}
