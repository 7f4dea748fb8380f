//! Hot paths: decoding with gradients, Pareto panel selection, rank
//! correlation.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use prefopt_bench::{correlated, random_candidates, synthetic};
use prefopt_core::evalkit::spearman;
use prefopt_core::ifmodel::{featurize_all, FreezeMask, ModelDims, ModelParameters, ScoreSpan};
use prefopt_core::preference::{PairExample, PolicyGraph, PreferenceHyperparams};
use prefopt_core::screening::{default_specs, pareto_front};

fn decode_forward_backward(c: &mut Criterion) {
    let data = synthetic(4);
    let params = ModelParameters::init(ModelDims::default(), 0).unwrap();
    let feats = featurize_all(data.structures.values(), params.dims.k_neighbors).unwrap();
    let mask = FreezeMask::encoder(&params);
    let recs = data.dataset.records();
    let pair = PairExample {
        winner: recs[0].tokens().unwrap(),
        loser: recs[1].tokens().unwrap(),
    };
    let hp = PreferenceHyperparams::default();
    c.bench_function("simpo_pair_forward_backward", |b| {
        b.iter(|| {
            let mut pg = PolicyGraph::new(&params, Some(&mask), &feats, ScoreSpan::Full);
            let (loss, _, _) = pg.simpo_loss(black_box(&pair), &hp).unwrap();
            black_box(pg.g.backward(loss).unwrap());
        })
    });
}

fn pareto(c: &mut Criterion) {
    let specs = default_specs();
    let metrics: Vec<String> = ["seq_pll", "ddg", "plddt", "delta_sasa", "mpnn_ll"].map(String::from).to_vec();
    let names: Vec<&str> = metrics.iter().map(String::as_str).collect();
    let mut group = c.benchmark_group("pareto_front");
    for n in [100, 1000] {
        let cands = random_candidates(n, &names, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &cands, |b, cands| {
            b.iter(|| pareto_front(black_box(cands), &specs, &metrics).unwrap())
        });
    }
    group.finish();
}

fn rank_correlation(c: &mut Criterion) {
    let mut group = c.benchmark_group("spearman");
    for n in [1_000, 65_535] {
        let (x, y) = correlated(n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &(x, y), |b, (x, y)| {
            b.iter(|| spearman(black_box(x), black_box(y)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, decode_forward_backward, pareto, rank_correlation);
criterion_main!(benches);
