use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::feature_width;
use super::vocab::VOCAB_SIZE;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    /// Embedding width `d` shared by the encoder output and decoder stream.
    pub d: usize,
    pub heads: usize,
    /// Hidden width of the decoder feed-forward sublayer.
    pub ffn: usize,
    /// Neighbor count for featurization and neighborhood mixing.
    pub k_neighbors: usize,
    pub vocab_size: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            ffn: 128,
            k_neighbors: 8,
            vocab_size: VOCAB_SIZE,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.ffn == 0 || self.k_neighbors == 0 {
            return Err(Error::Config("model dims must be positive".into()));
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!("d={} is not divisible by heads={}", self.d, self.heads)));
        }
        if self.vocab_size != VOCAB_SIZE {
            return Err(Error::Config(format!("vocab_size must be {VOCAB_SIZE}")));
        }
        Ok(())
    }

    pub fn feature_width(&self) -> usize {
        feature_width(self.k_neighbors)
    }

    /// Name, group and shape of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, ParamGroup, Vec<usize>)> {
        let (d, f, v) = (self.d, self.ffn, self.vocab_size);
        let enc = ParamGroup::Encoder;
        let dec = ParamGroup::Decoder;
        let mut out = vec![
            ("encoder.proj.weight".to_string(), enc, vec![self.feature_width(), d]),
            ("encoder.proj.bias".to_string(), enc, vec![d]),
            ("encoder.mix.weight".to_string(), enc, vec![2 * d, d]),
            ("encoder.mix.bias".to_string(), enc, vec![d]),
            ("decoder.tok_embed".to_string(), dec, vec![v, d]),
            ("decoder.in.weight".to_string(), dec, vec![2 * d, d]),
            ("decoder.in.bias".to_string(), dec, vec![d]),
        ];
        for p in ["q", "k", "v", "o"] {
            out.push((format!("decoder.attn.{p}.weight"), dec, vec![d, d]));
            out.push((format!("decoder.attn.{p}.bias"), dec, vec![d]));
        }
        out.extend([
            ("decoder.ffn.up.weight".to_string(), dec, vec![d, f]),
            ("decoder.ffn.up.bias".to_string(), dec, vec![f]),
            ("decoder.ffn.down.weight".to_string(), dec, vec![f, d]),
            ("decoder.ffn.down.bias".to_string(), dec, vec![d]),
            ("decoder.head.weight".to_string(), dec, vec![d, v]),
            ("decoder.head.bias".to_string(), dec, vec![v]),
        ]);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// Named parameter tensors of one model instance, split into an encoder and
/// a decoder group.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub dims: ModelDims,
    params: Vec<NamedParam>,
}

/// Names of parameters excluded from optimization.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FreezeMask {
    pub frozen_names: BTreeSet<String>,
}

impl FreezeMask {
    pub fn none() -> Self {
        Self::default()
    }

    /// Freezes the entire encoder group.
    pub fn encoder(params: &ModelParameters) -> Self {
        Self {
            frozen_names: params
                .iter()
                .filter(|p| p.group == ParamGroup::Encoder)
                .map(|p| p.name.clone())
                .collect(),
        }
    }

    pub fn all(params: &ModelParameters) -> Self {
        Self {
            frozen_names: params.iter().map(|p| p.name.clone()).collect(),
        }
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen_names.contains(name)
    }

    pub fn validate(&self, params: &ModelParameters) -> Result<()> {
        for name in &self.frozen_names {
            if params.get(name).is_none() {
                return Err(Error::Config(format!("freeze mask names unknown parameter {name}")));
            }
        }
        Ok(())
    }
}

impl ModelParameters {
    /// Seeded random initialization: weights drawn from `N(0, 1/fan_in)`,
    /// biases zero, token embeddings from `N(0, 0.25)`.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = dims
            .layout()
            .into_iter()
            .map(|(name, group, shape)| {
                let n: usize = shape.iter().product();
                let std = if name.ends_with("bias") {
                    0.0
                } else if name == "decoder.tok_embed" {
                    0.5
                } else {
                    1.0 / (shape[0] as f64).sqrt()
                };
                let data = if std == 0.0 {
                    vec![0.0; n]
                } else {
                    let normal = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                };
                NamedParam {
                    name,
                    group,
                    tensor: Tensor::new(shape, data).expect("layout shape"),
                }
            })
            .collect();
        Ok(Self { dims, params })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let params = dims
            .layout()
            .into_iter()
            .map(|(name, group, shape)| NamedParam {
                name,
                group,
                tensor: Tensor::zeros(&shape),
            })
            .collect();
        Ok(Self { dims, params })
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedParam> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut NamedParam> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    /// Replaces one tensor, checking its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let slot = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if slot.tensor.shape() != tensor.shape() {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: slot.tensor.shape().to_vec(),
                found: tensor.shape().to_vec(),
            });
        }
        slot.tensor = tensor;
        Ok(())
    }

    pub fn count(&self, group: Option<ParamGroup>) -> usize {
        self.params
            .iter()
            .filter(|p| group.is_none_or(|g| p.group == g))
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Zeroes every tensor of one group.
    pub fn zero_group(&mut self, group: ParamGroup) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.tensor.data_mut().fill(0.0);
        }
    }

    /// SHA-256 over names, shapes and little-endian values, optionally
    /// restricted to one group.
    pub fn hash(&self, group: Option<ParamGroup>) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| group.is_none_or(|g| p.group == g)) {
            h.update(p.name.as_bytes());
            for d in p.tensor.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Records every tensor as a graph leaf. With `None` every leaf is a
    /// constant; otherwise only the names in the mask are.
    pub fn bind(&self, g: &mut Graph, frozen: Option<&FreezeMask>) -> ParamVars {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let trainable = frozen.is_some_and(|m| !m.is_frozen(&p.name));
                (p.name.clone(), g.leaf(p.tensor.clone(), trainable))
            })
            .collect();
        ParamVars { vars }
    }
}

/// Parameter tensors recorded on one graph.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<(String, Var)>,
}

impl ParamVars {
    /// Wraps externally recorded leaves, e.g. those of a gradient check.
    pub fn new(vars: Vec<(String, Var)>) -> Self {
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}
