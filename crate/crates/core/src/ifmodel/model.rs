//! Structure encoder and autoregressive decoder.
//!
//! Encoder: geometry features → linear projection + tanh → one k-NN
//! neighborhood mean-mixing layer + tanh, giving `E ∈ ℝ^{n×d}`.
//!
//! Decoder: row `i` is `[f_tok(y_{i-1}) ‖ E_i]` (with `BOS` before the first
//! residue) plus a fixed sinusoidal position code, projected to width `d`, then
//! one causal multi-head self-attention block with a tanh feed-forward
//! sublayer (both residual), and finally `log_softmax(W·h_i + b)`.

use super::features::{featurize, StructureFeatures, ANGLE_FEATURES};
use super::params::{ModelParameters, ParamVars};
use super::structure::BackboneStructure;
use super::vocab::{ScoreSpan, TokenizedSequence, BOS};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Residue-level structural embeddings `E` (`n × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidueEmbeddings {
    pub matrix: Tensor,
}

impl ResidueEmbeddings {
    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn d(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// Log-likelihood of one sequence under the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceLogLik {
    /// `Σ log p(y_i | y_<i, E)` over the scored span.
    pub sum_ll: f64,
    /// `sum_ll / |y|`.
    pub mean_ll: f64,
}

/// Scale applied to neighbor distances before projection: features enter the
/// encoder as `DISTANCE_SCALE / distance`, so the 999 Å sentinel maps to ~0.
const DISTANCE_SCALE: f64 = 4.0;

fn encoder_input(features: &StructureFeatures) -> Tensor {
    let mut t = features.features.clone();
    let width = t.shape()[1];
    for row in t.data_mut().chunks_mut(width) {
        for v in &mut row[ANGLE_FEATURES..] {
            *v = DISTANCE_SCALE / *v;
        }
    }
    t
}

fn mixing_matrix(features: &StructureFeatures) -> Tensor {
    let n = features.len();
    let mut m = vec![0.0; n * n];
    for (i, nbrs) in features.neighbors.iter().enumerate() {
        let w = 1.0 / nbrs.len() as f64;
        for &j in nbrs {
            m[i * n + j] = w;
        }
    }
    Tensor::matrix(n, n, m).expect("square")
}

fn linear(g: &mut Graph, x: Var, pv: &ParamVars, prefix: &str) -> Result<Var> {
    let y = g.matmul(x, pv.var(&format!("{prefix}.weight")))?;
    g.add_row(y, pv.var(&format!("{prefix}.bias")))
}

/// Records the encoder on `g`, returning the `n × d` embedding node.
pub fn encode_graph(g: &mut Graph, features: &StructureFeatures, pv: &ParamVars, expected_width: usize) -> Result<Var> {
    let width = features.features.shape()[1];
    if width != expected_width {
        return Err(Error::Dimension {
            op: "encode",
            left: vec![width],
            right: vec![expected_width],
        });
    }
    let x = g.constant(encoder_input(features));
    let h0 = linear(g, x, pv, "encoder.proj")?;
    let h0 = g.tanh(h0)?;
    let mix = g.constant(mixing_matrix(features));
    let m = g.matmul(mix, h0)?;
    let cat = g.concat(&[h0, m])?;
    let h = linear(g, cat, pv, "encoder.mix")?;
    g.tanh(h)
}

pub fn encode(features: &StructureFeatures, params: &ModelParameters) -> Result<ResidueEmbeddings> {
    let mut g = Graph::new();
    let pv = params.bind(&mut g, None);
    let e = encode_graph(&mut g, features, &pv, params.dims.feature_width())?;
    Ok(ResidueEmbeddings {
        matrix: g.value(e).clone(),
    })
}

/// Fixed sinusoidal position code, `n × width`.
pub fn positional_encoding(n: usize, width: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * width);
    for pos in 0..n {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / width as f64);
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(n, width, data).expect("shape")
}

/// Records the decoder on `g`; returns the `|y| × vocab` log-probability node.
pub fn decode_graph(g: &mut Graph, emb: Var, tokens: &TokenizedSequence, pv: &ParamVars, heads: usize) -> Result<Var> {
    let et = g.value(emb);
    let (n, d) = et
        .dims2()
        .ok_or_else(|| Error::domain("decode_logprobs", "embeddings must be rank 2"))?;
    if tokens.length() != n {
        return Err(Error::Dimension {
            op: "decode_logprobs",
            left: vec![tokens.length()],
            right: vec![n],
        });
    }
    let mut inputs = Vec::with_capacity(n);
    inputs.push(BOS);
    inputs.extend_from_slice(&tokens.tokens[..n - 1]);

    let tok = g.gather_rows(pv.var("decoder.tok_embed"), &inputs)?;
    let x0 = g.concat(&[tok, emb])?;
    let width = g.value(x0).shape()[1];
    let pe = g.constant(positional_encoding(n, width));
    let x0 = g.add(x0, pe)?;
    let x = linear(g, x0, pv, "decoder.in")?;

    let q = linear(g, x, pv, "decoder.attn.q")?;
    let k = linear(g, x, pv, "decoder.attn.k")?;
    let v = linear(g, x, pv, "decoder.attn.v")?;
    let dh = d / heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut ctx = Vec::with_capacity(heads);
    for h in 0..heads {
        let (s, e) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, s, e)?;
        let kh = g.slice_cols(k, s, e)?;
        let vh = g.slice_cols(v, s, e)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, inv_sqrt)?;
        let scores = g.causal_mask(scores)?;
        let attn = g.softmax(scores)?;
        ctx.push(g.matmul(attn, vh)?);
    }
    let ctx = if heads == 1 { ctx[0] } else { g.concat(&ctx)? };
    let attn_out = linear(g, ctx, pv, "decoder.attn.o")?;
    let h1 = g.add(x, attn_out)?;

    let up = linear(g, h1, pv, "decoder.ffn.up")?;
    let up = g.tanh(up)?;
    let down = linear(g, up, pv, "decoder.ffn.down")?;
    let h2 = g.add(h1, down)?;

    let logits = linear(g, h2, pv, "decoder.head")?;
    g.log_softmax(logits)
}

pub fn decode_logprobs(emb: &ResidueEmbeddings, tokens: &TokenizedSequence, params: &ModelParameters) -> Result<Tensor> {
    if emb.d() != params.dims.d {
        return Err(Error::Dimension {
            op: "decode_logprobs",
            left: vec![emb.d()],
            right: vec![params.dims.d],
        });
    }
    let mut g = Graph::new();
    let pv = params.bind(&mut g, None);
    let e = g.constant(emb.matrix.clone());
    let lp = decode_graph(&mut g, e, tokens, &pv, params.dims.heads)?;
    Ok(g.value(lp).clone())
}

/// Records `(sum_ll, mean_ll)` scalar nodes for one sequence.
pub fn loglik_graph(
    g: &mut Graph,
    emb: Var,
    tokens: &TokenizedSequence,
    pv: &ParamVars,
    heads: usize,
    span: ScoreSpan,
) -> Result<(Var, Var)> {
    let range = tokens.span(span);
    if range.is_empty() {
        return Err(Error::Sequence("scored span is empty".into()));
    }
    let lp = decode_graph(g, emb, tokens, pv, heads)?;
    let picked = g.pick(lp, &tokens.tokens)?;
    let scored = if range.len() == tokens.length() {
        picked
    } else {
        let mask: Vec<f64> = (0..tokens.length())
            .map(|i| if range.contains(&i) { 1.0 } else { 0.0 })
            .collect();
        let m = g.constant(Tensor::vector(mask));
        g.mul(picked, m)?
    };
    let sum = g.sum(scored)?;
    let mean = g.scale(sum, 1.0 / range.len() as f64)?;
    Ok((sum, mean))
}

/// Scores several sequences against one structure, encoding it once.
pub fn score_sequences(
    features: &StructureFeatures,
    seqs: &[TokenizedSequence],
    params: &ModelParameters,
    span: ScoreSpan,
) -> Result<Vec<SequenceLogLik>> {
    let mut g = Graph::new();
    let pv = params.bind(&mut g, None);
    let e = encode_graph(&mut g, features, &pv, params.dims.feature_width())?;
    let base = g.len();
    let mut out = Vec::with_capacity(seqs.len());
    for s in seqs {
        let (sum, mean) = loglik_graph(&mut g, e, s, &pv, params.dims.heads, span)?;
        out.push(SequenceLogLik {
            sum_ll: g.value(sum).item(),
            mean_ll: g.value(mean).item(),
        });
        g.truncate(base);
    }
    Ok(out)
}

pub fn sequence_loglik(
    structure: &BackboneStructure,
    tokens: &TokenizedSequence,
    params: &ModelParameters,
    span: ScoreSpan,
) -> Result<SequenceLogLik> {
    let features = featurize(structure, params.dims.k_neighbors)?;
    Ok(score_sequences(&features, std::slice::from_ref(tokens), params, span)?[0])
}

/// Teacher-forced log-probability rows for `tokens` under `structure`.
pub fn teacher_forced_rows(
    features: &StructureFeatures,
    tokens: &TokenizedSequence,
    params: &ModelParameters,
) -> Result<Tensor> {
    let emb = encode(features, params)?;
    decode_logprobs(&emb, tokens, params)
}
