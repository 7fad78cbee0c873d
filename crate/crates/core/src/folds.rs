//! Subject-disjoint holdout and sorted stratified K-fold generation.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clipstore::{Catalog, ClipRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub holdout_clip_ids: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Writes `clip_id,assignment` rows, assignment being a fold index or
    /// `holdout`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        writeln!(out, "clip_id,assignment").unwrap();
        for id in &self.holdout_clip_ids {
            writeln!(out, "{id},holdout").unwrap();
        }
        for (i, fold) in self.folds.iter().enumerate() {
            for id in fold {
                writeln!(out, "{id},{i}").unwrap();
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        let mut holdout = Vec::new();
        let mut folds: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            let (id, assignment) = (row.get(0).unwrap_or(""), row.get(1).unwrap_or(""));
            if assignment == "holdout" {
                holdout.push(id.to_string());
            } else {
                let idx: usize = assignment
                    .parse()
                    .map_err(|_| Error::Catalog(format!("bad fold assignment {assignment:?} for {id}")))?;
                folds.entry(idx).or_default().push(id.to_string());
            }
        }
        let k = folds.keys().next_back().map_or(0, |m| m + 1);
        if folds.len() != k {
            return Err(Error::Catalog("fold indices are not contiguous".into()));
        }
        Ok(Self {
            holdout_clip_ids: holdout,
            folds: folds.into_values().collect(),
        })
    }
}

/// Moves whole subjects, in seeded random order, into the test set until it
/// holds at least `fraction` of the clips. A subject whose clips would leave
/// the train side short of `1 - fraction` is skipped.
pub fn holdout_split(catalog: &Catalog, fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if catalog.is_empty() {
        return Err(Error::invalid("cannot split an empty catalog"));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("holdout fraction must lie in [0, 1), got {fraction}")));
    }
    if let Some(r) = catalog.records.iter().find(|r| !r.quality_pass) {
        return Err(Error::invalid(format!("{} did not pass the quality gate", r.clip_id)));
    }
    let total = catalog.len();
    let mut by_subject: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &catalog.records {
        by_subject.entry(&r.subject_id).or_default().push(&r.clip_id);
    }
    let max_test = total as f64 * (1.0 - fraction);
    if let Some((s, clips)) = by_subject.iter().find(|(_, c)| c.len() as f64 > max_test) {
        return Err(Error::invalid(format!(
            "subject {s} owns {} of {total} clips; no subject-disjoint {fraction} holdout exists",
            clips.len()
        )));
    }
    let target = (fraction * total as f64 - 1e-9).ceil() as usize;
    let max_test = total - target;
    let mut subjects: Vec<&str> = by_subject.keys().copied().collect();
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut test: HashSet<&str> = HashSet::new();
    let mut n_test = 0;
    for s in subjects {
        if n_test >= target {
            break;
        }
        let n = by_subject[s].len();
        if n_test + n > max_test.max(target) {
            continue;
        }
        test.insert(s);
        n_test += n;
    }
    if n_test < target {
        return Err(Error::invalid("could not reach the holdout target without mixing subjects"));
    }
    let (test_ids, train_ids): (Vec<&ClipRecord>, Vec<&ClipRecord>) =
        catalog.records.iter().partition(|r| test.contains(r.subject_id.as_str()));
    Ok((
        train_ids.into_iter().map(|r| r.clip_id.clone()).collect(),
        test_ids.into_iter().map(|r| r.clip_id.clone()).collect(),
    ))
}

/// Sorted stratified K-fold assignment.
///
/// Records are sorted by descending HR x RR (ties by clip id) and cut into
/// `k` contiguous tiers whose sizes differ by at most one. Each tier is
/// shuffled; `floor(|tier| / k)` records go to every fold and the remainder
/// goes one apiece to the currently smallest folds, chosen at random among
/// equals, never twice to the same fold from one tier.
pub fn sorted_stratified_folds(train: &[ClipRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    if k <= 1 {
        return Err(Error::invalid(format!("K must be at least 2, got {k}")));
    }
    let n = train.len();
    if n < k {
        return Err(Error::invalid(format!("{n} records cannot fill {k} folds")));
    }
    let mut sorted: Vec<&ClipRecord> = train.iter().collect();
    sorted.sort_by(|a, b| {
        b.rate_product()
            .total_cmp(&a.rate_product())
            .then_with(|| a.clip_id.cmp(&b.clip_id))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut start = 0;
    for t in 0..k {
        let size = n / k + usize::from(t < n % k);
        let mut tier: Vec<&ClipRecord> = sorted[start..start + size].to_vec();
        start += size;
        tier.shuffle(&mut rng);
        let per_fold = size / k;
        let mut it = tier.into_iter();
        for fold in folds.iter_mut() {
            for r in it.by_ref().take(per_fold) {
                fold.push(r.clip_id.clone());
            }
        }
        // fewer than k leftovers, so each can go to a different fold
        let mut open: Vec<usize> = (0..k).collect();
        for r in it {
            let smallest = open.iter().map(|&i| folds[i].len()).min().unwrap();
            let mut candidates: Vec<usize> = open.iter().copied().filter(|&i| folds[i].len() == smallest).collect();
            candidates.shuffle(&mut rng);
            folds[candidates[0]].push(r.clip_id.clone());
            open.retain(|&i| i != candidates[0]);
        }
    }
    Ok(FoldPlan {
        holdout_clip_ids: Vec::new(),
        folds,
    })
}

/// Validation fold `index`; training set is the union of the others.
pub fn fold_to_splits(plan: &FoldPlan, index: usize) -> Result<(Vec<String>, Vec<String>)> {
    if index >= plan.k() {
        return Err(Error::invalid(format!("fold {index} out of range for K = {}", plan.k())));
    }
    let train = plan
        .folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != index)
        .flat_map(|(_, f)| f.iter().cloned())
        .collect();
    Ok((train, plan.folds[index].clone()))
}

/// Holdout split followed by fold generation over the remaining clips.
pub fn plan_folds(catalog: &Catalog, holdout_fraction: f64, k: usize, seed: u64) -> Result<FoldPlan> {
    let eligible = Catalog {
        records: catalog.records.iter().filter(|r| r.quality_pass).cloned().collect(),
    };
    let (train_ids, test_ids) = holdout_split(&eligible, holdout_fraction, seed)?;
    let train_set: HashSet<&str> = train_ids.iter().map(String::as_str).collect();
    let train: Vec<ClipRecord> = eligible
        .records
        .iter()
        .filter(|r| train_set.contains(r.clip_id.as_str()))
        .cloned()
        .collect();
    let mut plan = sorted_stratified_folds(&train, k, seed.wrapping_add(1))?;
    plan.holdout_clip_ids = test_ids;
    Ok(plan)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::clipstore::Split;
    use std::path::PathBuf;

    pub(crate) fn rec(id: &str, subject: &str, hr: f64, rr: f64) -> ClipRecord {
        ClipRecord {
            clip_id: id.into(),
            subject_id: subject.into(),
            path: PathBuf::from(format!("{id}.fvid")),
            fps: 30.0,
            n_frames: 780,
            duration_s: 26.0,
            hr_bpm: hr,
            rr_brpm: rr,
            quality_pass: true,
            split: Split::Unassigned,
        }
    }

    #[test]
    fn eight_record_example() {
        let products = [8000.0, 7000.0, 6000.0, 5000.0, 4000.0, 3000.0, 2000.0, 1000.0];
        let recs: Vec<ClipRecord> = products
            .iter()
            .enumerate()
            .map(|(i, p)| rec(&format!("c{i}"), &format!("s{i}"), p / 10.0, 10.0))
            .collect();
        for seed in 0..20 {
            let plan = sorted_stratified_folds(&recs, 4, seed).unwrap();
            for fold in &plan.folds {
                assert_eq!(fold.len(), 2);
                let tiers: HashSet<usize> = fold
                    .iter()
                    .map(|id| id[1..].parse::<usize>().unwrap() / 2)
                    .collect();
                assert_eq!(tiers.len(), 2, "{fold:?}");
            }
        }
    }

    #[test]
    fn n_equals_k_and_ties() {
        let recs: Vec<ClipRecord> = (0..4).map(|i| rec(&format!("c{i}"), "s", 80.0, 20.0)).collect();
        let plan = sorted_stratified_folds(&recs, 4, 1).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 1));
        let ties: Vec<ClipRecord> = (0..10).map(|i| rec(&format!("c{i}"), "s", 80.0, 20.0)).collect();
        let plan = sorted_stratified_folds(&ties, 4, 1).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn fold_errors() {
        let recs: Vec<ClipRecord> = (0..3).map(|i| rec(&format!("c{i}"), "s", 80.0, 20.0)).collect();
        assert!(sorted_stratified_folds(&recs, 1, 0).is_err());
        assert!(sorted_stratified_folds(&recs, 4, 0).is_err());
    }

    #[test]
    fn splits_from_folds() {
        let plan = FoldPlan {
            holdout_clip_ids: vec![],
            folds: vec![vec!["a".into()], vec!["b".into()]],
        };
        assert_eq!(fold_to_splits(&plan, 0).unwrap(), (vec!["b".to_string()], vec!["a".to_string()]));
        assert!(fold_to_splits(&plan, 2).is_err());
    }

    #[test]
    fn singleton_subjects_split_evenly() {
        let cat = Catalog::new((0..10).map(|i| rec(&format!("c{i}"), &format!("s{i}"), 80.0, 20.0)).collect()).unwrap();
        let (train, test) = holdout_split(&cat, 0.5, 3).unwrap();
        assert_eq!((train.len(), test.len()), (5, 5));
    }

    #[test]
    fn dominant_subject_makes_split_impossible() {
        let mut recs: Vec<ClipRecord> = (0..9).map(|i| rec(&format!("c{i}"), "big", 80.0, 20.0)).collect();
        recs.push(rec("x", "small", 80.0, 20.0));
        let cat = Catalog::new(recs).unwrap();
        assert!(holdout_split(&cat, 0.2, 0).is_err());
    }

    #[test]
    fn plan_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = FoldPlan {
            holdout_clip_ids: vec!["h1".into()],
            folds: vec![vec!["a".into(), "b".into()], vec!["c".into()]],
        };
        let p = dir.path().join("folds.csv");
        plan.write(&p).unwrap();
        assert_eq!(FoldPlan::read(&p).unwrap(), plan);
        assert!(std::fs::read_to_string(&p).unwrap().contains("h1,holdout"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn catalog(spec: &[(u8, f64, f64)]) -> Catalog {
            let recs = spec
                .iter()
                .enumerate()
                .map(|(i, &(subj, hr, rr))| rec(&format!("c{i}"), &format!("s{}", subj % 12), hr, rr))
                .collect();
            Catalog::new(recs).unwrap()
        }

        proptest! {
            #[test]
            fn folds_partition_and_split_tiers_evenly(
                spec in prop::collection::vec((0u8..255, 40.0f64..180.0, 6.0f64..45.0), 4..60),
                k in 2usize..6,
                seed in any::<u64>(),
            ) {
                prop_assume!(spec.len() >= k);
                let recs = catalog(&spec).records;
                let plan = sorted_stratified_folds(&recs, k, seed).unwrap();
                prop_assert_eq!(&plan, &sorted_stratified_folds(&recs, k, seed).unwrap());
                let n = recs.len();
                let mut seen: Vec<&str> = plan.folds.iter().flatten().map(String::as_str).collect();
                seen.sort_unstable();
                seen.dedup();
                prop_assert_eq!(seen.len(), n);
                for f in &plan.folds {
                    prop_assert!(f.len() == n / k || f.len() == n / k + 1);
                }

                let mut sorted: Vec<&ClipRecord> = recs.iter().collect();
                sorted.sort_by(|a, b| b.rate_product().total_cmp(&a.rate_product()).then_with(|| a.clip_id.cmp(&b.clip_id)));
                let mut start = 0;
                for t in 0..k {
                    let size = n / k + usize::from(t < n % k);
                    let tier: HashSet<&str> = sorted[start..start + size].iter().map(|r| r.clip_id.as_str()).collect();
                    start += size;
                    for f in &plan.folds {
                        let c = f.iter().filter(|id| tier.contains(id.as_str())).count();
                        prop_assert!(c == size / k || c == size / k + 1);
                    }
                }
            }

            #[test]
            fn holdout_is_subject_disjoint(
                spec in prop::collection::vec((0u8..255, 40.0f64..180.0, 6.0f64..45.0), 12..60),
                fraction in 0.1f64..0.4,
                seed in any::<u64>(),
            ) {
                let cat = catalog(&spec);
                if let Ok((train, test)) = holdout_split(&cat, fraction, seed) {
                    prop_assert_eq!(train.len() + test.len(), cat.len());
                    prop_assert!(test.len() as f64 >= fraction * cat.len() as f64 - 1e-9);
                    let subject = |id: &String| cat.records.iter().find(|r| &r.clip_id == id).unwrap().subject_id.clone();
                    let a: HashSet<String> = train.iter().map(subject).collect();
                    let b: HashSet<String> = test.iter().map(subject).collect();
                    prop_assert!(a.is_disjoint(&b));
                }
            }
        }
    }
}
