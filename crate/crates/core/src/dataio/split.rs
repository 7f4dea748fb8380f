//! Supervised (per-assay random) and zero-shot (held-out assay) splits.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assay::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Supervised,
    ZeroShot,
}

/// Record indices per partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub mode: SplitMode,
    pub seed: u64,
    pub holdout_assays: Vec<String>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Assays that were too small to split and went entirely to train.
    pub flagged_assays: Vec<String>,
}

/// Default supervised ratios, in (train, test, validation) order.
pub const SUPERVISED_RATIOS: (f64, f64, f64) = (0.6, 0.3, 0.1);

/// Train share of non-holdout assays in zero-shot mode; the rest is validation.
pub const ZERO_SHOT_TRAIN_SHARE: f64 = 0.85;

fn floor_count(ratio: f64, n: usize) -> usize {
    // tolerate representation error such as 0.6 * 100 = 60.00000000000001
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Per-assay random permutation, then contiguous cuts: the first
/// `⌊r_train·n⌋` rows go to train, the next `⌊r_test·n⌋` to test and the
/// remainder to validation. Assays with fewer than 3 rows go wholly to train.
pub fn split_supervised(ds: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (tr, te, va) = ratios;
    if [tr, te, va].iter().any(|r| !(0.0..=1.0).contains(r)) || ((tr + te + va) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        mode: SplitMode::Supervised,
        seed,
        holdout_assays: Vec::new(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        flagged_assays: Vec::new(),
    };
    for (assay, idx) in ds.assays() {
        let mut idx = idx.clone();
        if idx.len() < 3 {
            split.train.extend(idx);
            split.flagged_assays.push(assay.clone());
            continue;
        }
        idx.shuffle(&mut rng);
        let n_train = floor_count(tr, idx.len());
        let n_test = floor_count(te, idx.len());
        split.train.extend_from_slice(&idx[..n_train]);
        split.test.extend_from_slice(&idx[n_train..n_train + n_test]);
        split.val.extend_from_slice(&idx[n_train + n_test..]);
    }
    Ok(split)
}

/// Held-out assays go entirely to test; every other assay is split
/// 85/15 train/validation per assay.
pub fn split_zero_shot(ds: &Dataset, holdout_assays: &[String], seed: u64) -> Result<DatasetSplit> {
    if holdout_assays.is_empty() {
        return Err(Error::Config("zero-shot split requires at least one holdout assay".into()));
    }
    for a in holdout_assays {
        if !ds.assays().contains_key(a) {
            return Err(Error::Config(format!("unknown holdout assay {a}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        mode: SplitMode::ZeroShot,
        seed,
        holdout_assays: holdout_assays.to_vec(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        flagged_assays: Vec::new(),
    };
    for (assay, idx) in ds.assays() {
        if holdout_assays.contains(assay) {
            split.test.extend_from_slice(idx);
            continue;
        }
        let mut idx = idx.clone();
        idx.shuffle(&mut rng);
        let n_train = floor_count(ZERO_SHOT_TRAIN_SHARE, idx.len());
        split.train.extend_from_slice(&idx[..n_train]);
        split.val.extend_from_slice(&idx[n_train..]);
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub mode: SplitMode,
    pub seed: u64,
    pub holdout_assays: Vec<String>,
    /// `[assay_id, variant_id]` pairs.
    pub train: Vec<[String; 2]>,
    pub val: Vec<[String; 2]>,
    pub test: Vec<[String; 2]>,
}

impl DatasetSplit {
    pub fn manifest(&self, ds: &Dataset) -> SplitManifest {
        let keys = |idx: &[usize]| {
            idx.iter()
                .map(|&i| {
                    let r = ds.record(i);
                    [r.assay_id.clone(), r.variant_id.clone()]
                })
                .collect()
        };
        SplitManifest {
            mode: self.mode,
            seed: self.seed,
            holdout_assays: self.holdout_assays.clone(),
            train: keys(&self.train),
            val: keys(&self.val),
            test: keys(&self.test),
        }
    }

    pub fn save_manifest(&self, ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.manifest(ds))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn from_manifest(m: &SplitManifest, ds: &Dataset) -> Result<Self> {
        let lookup: std::collections::HashMap<(&str, &str), usize> = ds
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.assay_id.as_str(), r.variant_id.as_str()), i))
            .collect();
        let resolve = |keys: &[[String; 2]]| -> Result<Vec<usize>> {
            keys.iter()
                .map(|[a, v]| {
                    lookup
                        .get(&(a.as_str(), v.as_str()))
                        .copied()
                        .ok_or_else(|| Error::Data(format!("manifest key ({a}, {v}) not in dataset")))
                })
                .collect()
        };
        Ok(Self {
            mode: m.mode,
            seed: m.seed,
            holdout_assays: m.holdout_assays.clone(),
            train: resolve(&m.train)?,
            val: resolve(&m.val)?,
            test: resolve(&m.test)?,
            flagged_assays: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::assay::{ScoreType, VariantRecord};
    use super::*;

    fn dataset(sizes: &[usize]) -> Dataset {
        let mut records = Vec::new();
        for (a, &n) in sizes.iter().enumerate() {
            for v in 0..n {
                records.push(VariantRecord {
                    assay_id: format!("a{a}"),
                    variant_id: format!("v{v}"),
                    heavy_chain_seq: "ACD".into(),
                    antigen_seq: String::new(),
                    binding_score: v as f64,
                    score_type: ScoreType::NegLogKd,
                    structure_id: format!("s{a}"),
                });
            }
        }
        Dataset::new(records).unwrap()
    }

    #[test]
    fn hundred_rows_split_sixty_thirty_ten() {
        let s = split_supervised(&dataset(&[100]), SUPERVISED_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.val.len()), (60, 30, 10));
    }

    #[test]
    fn remainder_goes_to_validation() {
        let s = split_supervised(&dataset(&[101]), SUPERVISED_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.val.len()), (60, 30, 11));
    }

    #[test]
    fn seeds_change_permutation_not_sizes() {
        let ds = dataset(&[50]);
        let a = split_supervised(&ds, SUPERVISED_RATIOS, 1).unwrap();
        let b = split_supervised(&ds, SUPERVISED_RATIOS, 2).unwrap();
        assert_ne!(a.train, b.train);
        assert_eq!(a.train.len(), b.train.len());
        assert_eq!(a, split_supervised(&ds, SUPERVISED_RATIOS, 1).unwrap());
    }

    #[test]
    fn tiny_assay_goes_to_train_flagged() {
        let s = split_supervised(&dataset(&[2, 10]), SUPERVISED_RATIOS, 1).unwrap();
        assert_eq!(s.flagged_assays, vec!["a0".to_string()]);
        assert!(s.train.contains(&0) && s.train.contains(&1));
    }

    #[test]
    fn zero_shot_requires_known_holdouts() {
        let ds = dataset(&[5, 5]);
        assert!(split_zero_shot(&ds, &[], 0).is_err());
        assert!(split_zero_shot(&ds, &["zz".into()], 0).is_err());
        let all = split_zero_shot(&ds, &["a0".into(), "a1".into()], 0).unwrap();
        assert!(all.train.is_empty());
        assert_eq!(all.test.len(), 10);
    }

    #[test]
    fn manifest_roundtrip() {
        let ds = dataset(&[20, 7]);
        let s = split_supervised(&ds, SUPERVISED_RATIOS, 9).unwrap();
        let back = DatasetSplit::from_manifest(&s.manifest(&ds), &ds).unwrap();
        assert_eq!(back.train, s.train);
        assert_eq!(back.test, s.test);
        assert_eq!(back.val, s.val);
    }
}
