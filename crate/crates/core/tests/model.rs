//! Geometry, decoder and generation properties of the likelihood model.

use std::collections::HashSet;

use proptest::prelude::*;

use prefopt_core::dataio::{synth_generate, SyntheticData, SyntheticOracleConfig};
use prefopt_core::ifmodel::structure::build_chain;
use prefopt_core::ifmodel::{
    backbone_dihedrals, encode, decode_logprobs, featurize, generate_variants, mutable_pool, sequence_loglik,
    BackboneStructure, GenerationConfig, ModelDims, ModelParameters, Residue, ScoreSpan, TokenizedSequence,
};

fn tiny_dims() -> ModelDims {
    ModelDims {
        d: 8,
        heads: 2,
        ffn: 8,
        k_neighbors: 4,
        ..ModelDims::default()
    }
}

fn synth() -> SyntheticData {
    synth_generate(&SyntheticOracleConfig {
        seed: 5,
        n_assays: 1,
        variants_per_assay: 12,
        ..SyntheticOracleConfig::default()
    })
    .unwrap()
}

fn wildtype(data: &SyntheticData) -> TokenizedSequence {
    let o = &data.oracle.assays[0];
    TokenizedSequence::from_chains(&o.wildtype, &o.antigen, &o.structure_id).unwrap()
}

/// Rotation from three Euler angles (z, y, x).
fn rotation(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    [
        [ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc],
        [sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc],
        [-sb, cb * sc, cb * cc],
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn loglik_is_invariant_under_rigid_motion(
        a in -3.1f64..3.1, b in -1.5f64..1.5, c in -3.1f64..3.1,
        t in prop::array::uniform3(-50.0f64..50.0),
    ) {
        let data = synth();
        let wt = wildtype(&data);
        let s = &data.structures[&wt.structure_id];
        let params = ModelParameters::init(tiny_dims(), 3).unwrap();
        let moved = s.transformed(&rotation(a, b, c), t);
        for r in data.dataset.records().iter().take(4) {
            let seq = r.tokens().unwrap();
            let x = sequence_loglik(s, &seq, &params, ScoreSpan::Full).unwrap();
            let y = sequence_loglik(&moved, &seq, &params, ScoreSpan::Full).unwrap();
            prop_assert!((x.sum_ll - y.sum_ll).abs() <= 1e-9, "{} vs {}", x.sum_ll, y.sum_ll);
        }
    }
}

#[test]
fn decoder_rows_ignore_current_and_future_tokens() {
    use rand::{Rng, SeedableRng};
    let data = synth();
    let wt = wildtype(&data);
    let s = &data.structures[&wt.structure_id];
    let params = ModelParameters::init(tiny_dims(), 4).unwrap();
    let emb = encode(&featurize(s, params.dims.k_neighbors).unwrap(), &params).unwrap();
    let base = decode_logprobs(&emb, &wt, &params).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let j = rng.random_range(0..wt.length());
        let mut tokens = wt.tokens.clone();
        tokens[j] = (tokens[j] + rng.random_range(1..20)) % 20;
        let edited = TokenizedSequence::new(tokens, wt.antibody_len, wt.structure_id.clone()).unwrap();
        let out = decode_logprobs(&emb, &edited, &params).unwrap();
        for i in 0..=j {
            assert_eq!(out.row(i), base.row(i), "row {i} changed after editing position {j}");
        }
        if j + 1 < wt.length() {
            assert_ne!(out.row(j + 1), base.row(j + 1));
        }
    }
}

#[test]
fn decoder_rows_are_normalized() {
    let data = synth();
    let wt = wildtype(&data);
    let s = &data.structures[&wt.structure_id];
    let params = ModelParameters::init(ModelDims::default(), 6).unwrap();
    let emb = encode(&featurize(s, params.dims.k_neighbors).unwrap(), &params).unwrap();
    let lp = decode_logprobs(&emb, &wt, &params).unwrap();
    assert_eq!(lp.rows(), wt.length());
    for i in 0..lp.rows() {
        let total: f64 = lp.row(i).iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() <= 1e-12, "row {i} sums to {total}");
    }
}

#[test]
fn ideal_helix_dihedrals_are_recovered() {
    let torsions = vec![(-57.0, -47.0, 180.0); 12];
    let residues: Vec<Residue> = build_chain(&torsions)
        .into_iter()
        .enumerate()
        .map(|(i, (n, ca, c))| Residue {
            chain_id: "H".into(),
            residue_index: i as i64 + 1,
            n,
            ca,
            c,
            aa: Some('A'),
        })
        .collect();
    let s = BackboneStructure::new("helix", residues).unwrap();
    let dih = backbone_dihedrals(&s);
    assert!(dih[0][0].is_none());
    assert!(dih[11][1].is_none());
    for d in &dih[1..11] {
        let [phi, psi, omega] = d.map(|a| a.unwrap().to_degrees());
        assert!((phi + 57.0).abs() < 1e-6, "phi {phi}");
        assert!((psi + 47.0).abs() < 1e-6, "psi {psi}");
        assert!((omega.abs() - 180.0).abs() < 1e-6, "omega {omega}");
    }
}

#[test]
fn generated_variants_only_use_improving_pool_substitutions() {
    let data = synth();
    let wt = wildtype(&data);
    let s = &data.structures[&wt.structure_id];
    let params = ModelParameters::init(tiny_dims(), 7).unwrap();
    let feats = featurize(s, params.dims.k_neighbors).unwrap();
    let region: Vec<usize> = (0..wt.antibody_len).collect();
    let pool = mutable_pool(&feats, &wt, &region, &params).unwrap();
    assert!(!pool.is_empty());
    let cfg = GenerationConfig {
        n: 300,
        max_subs: 4,
        ..GenerationConfig::default()
    };
    let out = generate_variants(&wt, &pool, &cfg).unwrap();
    assert!(!out.variants.is_empty());
    let mut seen = HashSet::new();
    for v in &out.variants {
        assert!(seen.insert(v.tokens.clone()), "duplicate variant");
        assert!((1..=cfg.max_subs).contains(&v.mutations.len()));
        assert!(v.mutations.windows(2).all(|w| w[0].0 < w[1].0));
        for &(p, from, to) in &v.mutations {
            let e = pool.entries.iter().find(|e| e.position == p).expect("position outside pool");
            assert_eq!(from, wt.tokens[p]);
            assert!(e.improving.iter().any(|&(t, _)| t == to));
        }
        let diff = v.tokens.iter().zip(&wt.tokens).filter(|(a, b)| a != b).count();
        assert_eq!(diff, v.mutations.len());
    }
    assert_eq!(out.exhausted, out.variants.len() < cfg.n);
}
