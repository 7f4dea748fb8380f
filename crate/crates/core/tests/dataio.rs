//! Assay table I/O and split properties.

use std::collections::BTreeSet;

use proptest::prelude::*;

use prefopt_core::dataio::{
    load_assays, read_assays, save_assays, split_supervised, split_zero_shot, synth_generate, write_assays, Dataset,
    ScoreType, SyntheticOracleConfig, VariantRecord,
};

const ASSAY_SIZES: [usize; 11] = [65535, 38574, 19660, 19528, 4312, 2686, 1842, 1296, 1294, 1086, 40];

fn record(assay: usize, i: usize, score: f64) -> VariantRecord {
    VariantRecord {
        assay_id: format!("assay{assay}"),
        variant_id: format!("v{i}"),
        heavy_chain_seq: "ACDEFGHIK".into(),
        antigen_seq: "LMNPQ".into(),
        binding_score: score,
        score_type: ScoreType::NegLogKd,
        structure_id: format!("s{assay}"),
    }
}

fn dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec(1usize..40, 1..6).prop_map(|sizes| {
        let records = sizes
            .iter()
            .enumerate()
            .flat_map(|(a, &n)| (0..n).map(move |i| record(a, i, (i as f64).sin() + 7.0)))
            .collect::<Vec<_>>();
        Dataset::new(records).unwrap()
    })
}

fn assay_of(ds: &Dataset, idx: &[usize]) -> BTreeSet<String> {
    idx.iter().map(|&i| ds.record(i).assay_id.clone()).collect()
}

#[test]
fn full_scale_table_loads_with_expected_assay_sizes() {
    let total: usize = ASSAY_SIZES.iter().sum();
    assert_eq!(total, 155_853);
    let data = synth_generate(&SyntheticOracleConfig {
        assay_sizes: Some(ASSAY_SIZES.to_vec()),
        ..SyntheticOracleConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("assays.csv");
    save_assays(data.dataset.records(), &path).unwrap();
    let ds = load_assays(&path).unwrap();
    assert_eq!(ds.len(), total);
    let sizes: Vec<usize> = ds.assays().values().map(Vec::len).collect();
    assert_eq!(sizes, ASSAY_SIZES);

    let holdouts: Vec<String> = ds.assay_ids();
    for (k, holdout) in holdouts.iter().enumerate() {
        let split = split_zero_shot(&ds, std::slice::from_ref(holdout), k as u64).unwrap();
        assert_eq!(split.test.len(), ASSAY_SIZES[k]);
        assert_eq!(assay_of(&ds, &split.test), BTreeSet::from([holdout.clone()]));
        assert!(!assay_of(&ds, &split.train).contains(holdout));
        assert!(!assay_of(&ds, &split.val).contains(holdout));
        assert_eq!(split.train.len() + split.val.len() + split.test.len(), total);
    }
}

#[test]
fn emitted_tables_read_back_identically() {
    let data = synth_generate(&SyntheticOracleConfig {
        n_assays: 3,
        variants_per_assay: 50,
        ..SyntheticOracleConfig::default()
    })
    .unwrap();
    let mut first = Vec::new();
    write_assays(data.dataset.records(), &mut first).unwrap();
    let back = read_assays(first.as_slice(), "memory").unwrap();
    assert_eq!(back.records(), data.dataset.records());
    let mut second = Vec::new();
    write_assays(back.records(), &mut second).unwrap();
    assert_eq!(first, second);
}

#[test]
fn invalid_rows_are_all_reported_with_line_numbers() {
    let csv = "assay_id,variant_id,heavy_chain_seq,antigen_seq,binding_score,score_type,structure_id\n\
               a,v1,ACD,KL,7.0,neg_log_kd,s\n\
               a,v2,AC1,KL,7.0,neg_log_kd,s\n\
               a,v3,ACD,KL,nan,neg_log_kd,s\n";
    let err = read_assays(csv.as_bytes(), "inline").unwrap_err();
    assert_eq!(err.code(), "DAT002");
    let msg = err.to_string();
    assert!(msg.contains("line 3") && msg.contains("line 4"), "{msg}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn supervised_split_partitions_every_row(ds in dataset(), seed in any::<u64>()) {
        let split = split_supervised(&ds, (0.6, 0.3, 0.1), seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).chain(&split.val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        for (assay, idx) in ds.assays() {
            let n = idx.len();
            let in_train = idx.iter().filter(|i| split.train.contains(i)).count();
            if n < 3 {
                prop_assert_eq!(in_train, n);
                prop_assert!(split.flagged_assays.contains(assay));
            } else {
                prop_assert_eq!(in_train, (0.6 * n as f64 + 1e-9).floor() as usize);
            }
        }
        prop_assert_eq!(split_supervised(&ds, (0.6, 0.3, 0.1), seed).unwrap(), split);
    }

    #[test]
    fn zero_shot_split_never_leaks_holdouts(ds in dataset(), pick in any::<prop::sample::Index>(), seed in any::<u64>()) {
        let ids = ds.assay_ids();
        let holdout = ids[pick.index(ids.len())].clone();
        let split = split_zero_shot(&ds, std::slice::from_ref(&holdout), seed).unwrap();
        prop_assert!(!assay_of(&ds, &split.train).contains(&holdout));
        prop_assert!(!assay_of(&ds, &split.val).contains(&holdout));
        prop_assert_eq!(split.test.len(), ds.assays()[&holdout].len());
        prop_assert_eq!(split.train.len() + split.val.len() + split.test.len(), ds.len());
    }
}
