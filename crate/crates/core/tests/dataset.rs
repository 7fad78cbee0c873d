use std::collections::HashSet;

use vidvital::folds::{fold_to_splits, holdout_split, plan_folds};
use vidvital::preprocess::{preprocess_pipeline, PreprocessConfig};
use vidvital::synthgen::{plan_dataset, synth_dataset, SynthDatasetConfig};

#[test]
fn dataset_shape_matches_target() {
    let clips = plan_dataset(&SynthDatasetConfig::default()).unwrap();
    let subjects: HashSet<&str> = clips.iter().map(|c| c.subject_id.as_str()).collect();
    assert_eq!(subjects.len(), 46);
    assert!((62..=80).contains(&clips.len()), "{}", clips.len());
}

#[test]
fn quality_gate_retains_the_good_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthDatasetConfig {
        n_subjects: 161,
        clips_per_subject: 1.0,
        height: 8,
        width: 8,
        good_fraction: 0.44,
        seed: 12,
        ..SynthDatasetConfig::default()
    };
    let planned = plan_dataset(&cfg).unwrap();
    let raw = synth_dataset(&cfg, dir.path().join("raw")).unwrap();
    assert_eq!(raw.len(), 161);
    let pre = PreprocessConfig { height: 8, width: 8, ..PreprocessConfig::default() };
    let out = preprocess_pipeline(&raw, &pre, dir.path().join("pre")).unwrap();
    assert!(out.failures.is_empty());

    let good: HashSet<&str> = planned.iter().filter(|c| c.good).map(|c| c.clip_id.as_str()).collect();
    let wrong = out
        .catalog
        .records
        .iter()
        .filter(|r| r.quality_pass != good.contains(r.clip_id.as_str()))
        .count();
    assert!(wrong <= 5, "{wrong} clips misjudged");
    let retained = out.retained();
    assert!(retained.abs_diff(71) <= 13, "retained {retained}");
}

#[test]
fn holdout_and_fold_proportions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthDatasetConfig {
        n_subjects: 52,
        clips_per_subject: 1.37,
        height: 4,
        width: 4,
        duration_s: 12.0,
        seed: 5,
        ..SynthDatasetConfig::default()
    };
    let catalog = synth_dataset(&cfg, dir.path()).unwrap();
    let (train, test) = holdout_split(&catalog, 0.2, 1).unwrap();
    let expected = (0.2 * catalog.len() as f64).ceil() as usize;
    assert!(test.len() >= expected && test.len() <= expected + 2, "{} of {}", test.len(), catalog.len());
    assert_eq!(train.len() + test.len(), catalog.len());

    let plan = plan_folds(&catalog, 0.2, 4, 1).unwrap();
    let pool = plan.folds.iter().map(Vec::len).sum::<usize>();
    let (tr, val) = fold_to_splits(&plan, 0).unwrap();
    assert_eq!(tr.len() + val.len(), pool);
    assert!(val.len().abs_diff(pool / 4) <= 1);
    assert!(fold_to_splits(&plan, 4).is_err());
}
