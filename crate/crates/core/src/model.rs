//! The transformer encoder over token sequences, candidate scoring and the
//! training loss.
//!
//! Parameter names are stable and double as checkpoint keys:
//!
//! | name | shape |
//! |------|-------|
//! | `embed.item` | items × d1 |
//! | `embed.attribute` | attributes × d1 |
//! | `embed.operator` | 5 × d1 (`[S] [P] [I] [N] [U]`) |
//! | `embed.relation` | 2·relations × d1 (forward, inverse) |
//! | `embed.position` | positions × d1 |
//! | `embed.type` | 2 × d3 (node, edge) |
//! | `embed.graph_token` | 1 × (d1 + 2·d2 + d3) |
//! | `input.weight`, `input.bias` | (d1 + 2·d2 + d3) × d_model, 1 × d_model |
//! | `layer{i}.ln1.gain`, `.ln1.bias`, `.ln2.gain`, `.ln2.bias` | 1 × d_model |
//! | `layer{i}.attn.{q,k,v,o}.weight` / `.bias` | d_model × d_model, 1 × d_model |
//! | `layer{i}.ffn.w1`, `.ffn.b1`, `.ffn.w2`, `.ffn.b2` | d_model × ffn, 1 × ffn, ffn × d_model, 1 × d_model |
//! | `final_ln.gain`, `final_ln.bias` | 1 × d_model |
//! | `readout.weight` | d_model × d1 |

use log::info;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{VertexId, VertexKind, Vocab};
use crate::rng::derive_rng;
use crate::tensor::{Checkpoint, NamedTensor, Tape, Tensor, TensorError, Var};
use crate::tokenizer::{Feature, Operator, TableSizes, TokenSequence, TokenizerError, TokenizerFlags};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    TooLong { len: usize, max: usize },
    #[error("candidates mix {0} and {1} vertices")]
    MixedCandidates(VertexKind, VertexKind),
    #[error("{0} vertices are not scoring candidates")]
    BadCandidateKind(VertexKind),
    #[error("candidate {0} has no embedding row")]
    UnknownCandidate(VertexId),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Rows of the session-position table.
    pub positions: usize,
    pub max_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d1: 64,
            d2: 24,
            d3: 16,
            d_model: 128,
            layers: 2,
            heads: 4,
            ffn: 256,
            positions: 20,
            max_tokens: 256,
        }
    }
}

impl ModelConfig {
    pub fn token_width(&self) -> usize {
        self.d1 + 2 * self.d2 + self.d3
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d1", self.d1),
            ("d2", self.d2),
            ("d3", self.d3),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn", self.ffn),
            ("positions", self.positions),
            ("max_tokens", self.max_tokens),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Vocabulary sizes the embedding tables are built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub items: usize,
    pub attributes: usize,
    pub relations: usize,
}

impl VocabSizes {
    pub fn of(vocab: &Vocab) -> Self {
        Self {
            items: vocab.count(VertexKind::Item),
            attributes: vocab.count(VertexKind::Attribute),
            relations: vocab.relation_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub sizes: VocabSizes,
    pub item: Tensor,
    pub attribute: Tensor,
    pub operator: Tensor,
    pub relation: Tensor,
    pub position: Tensor,
    pub token_type: Tensor,
    pub graph_token: Tensor,
    pub input_w: Tensor,
    pub input_b: Tensor,
    pub layers: Vec<LayerParams>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
    pub readout: Tensor,
}

macro_rules! layer_fields {
    ($l:expr, $i:expr, $f:ident) => {
        vec![
            (format!("layer{}.ln1.gain", $i), $f!($l.ln1_gain)),
            (format!("layer{}.ln1.bias", $i), $f!($l.ln1_bias)),
            (format!("layer{}.attn.q.weight", $i), $f!($l.wq)),
            (format!("layer{}.attn.q.bias", $i), $f!($l.bq)),
            (format!("layer{}.attn.k.weight", $i), $f!($l.wk)),
            (format!("layer{}.attn.k.bias", $i), $f!($l.bk)),
            (format!("layer{}.attn.v.weight", $i), $f!($l.wv)),
            (format!("layer{}.attn.v.bias", $i), $f!($l.bv)),
            (format!("layer{}.attn.o.weight", $i), $f!($l.wo)),
            (format!("layer{}.attn.o.bias", $i), $f!($l.bo)),
            (format!("layer{}.ln2.gain", $i), $f!($l.ln2_gain)),
            (format!("layer{}.ln2.bias", $i), $f!($l.ln2_bias)),
            (format!("layer{}.ffn.w1", $i), $f!($l.w1)),
            (format!("layer{}.ffn.b1", $i), $f!($l.b1)),
            (format!("layer{}.ffn.w2", $i), $f!($l.w2)),
            (format!("layer{}.ffn.b2", $i), $f!($l.b2)),
        ]
    };
}

macro_rules! all_fields {
    ($s:expr, $f:ident) => {{
        let mut v = vec![
            ("embed.item".to_string(), $f!($s.item)),
            ("embed.attribute".to_string(), $f!($s.attribute)),
            ("embed.operator".to_string(), $f!($s.operator)),
            ("embed.relation".to_string(), $f!($s.relation)),
            ("embed.position".to_string(), $f!($s.position)),
            ("embed.type".to_string(), $f!($s.token_type)),
            ("embed.graph_token".to_string(), $f!($s.graph_token)),
            ("input.weight".to_string(), $f!($s.input_w)),
            ("input.bias".to_string(), $f!($s.input_b)),
        ];
        for (i, l) in ($f!($s.layers)).iter_f().enumerate() {
            v.extend(layer_fields!(l, i, $f));
        }
        v.push(("final_ln.gain".to_string(), $f!($s.final_gain)));
        v.push(("final_ln.bias".to_string(), $f!($s.final_bias)));
        v.push(("readout.weight".to_string(), $f!($s.readout)));
        v
    }};
}

trait IterF<'a> {
    type It;
    fn iter_f(self) -> Self::It;
}

impl<'a> IterF<'a> for &'a Vec<LayerParams> {
    type It = std::slice::Iter<'a, LayerParams>;
    fn iter_f(self) -> Self::It {
        self.iter()
    }
}

impl<'a> IterF<'a> for &'a mut Vec<LayerParams> {
    type It = std::slice::IterMut<'a, LayerParams>;
    fn iter_f(self) -> Self::It {
        self.iter_mut()
    }
}

macro_rules! by_ref {
    ($e:expr) => {
        &$e
    };
}

macro_rules! by_mut {
    ($e:expr) => {
        &mut $e
    };
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Tensor::new(rows, cols, data).expect("rows*cols values")
}

/// Handles of every parameter on one tape, plus the stacked feature table.
pub struct ParamVars {
    item: Var,
    attribute: Var,
    token_type: Var,
    graph_token: Var,
    input_w: Var,
    input_b: Var,
    layers: Vec<[Var; 16]>,
    final_gain: Var,
    final_bias: Var,
    readout: Var,
    /// item, attribute, operator, relation, position tables and one zero
    /// row, stacked in that order.
    features: Var,
    all: Vec<Var>,
}

impl ModelParams {
    /// Random initialization: embeddings ~ N(0, 1/d1), weights ~ N(0,
    /// 1/fan_in), biases zero, layernorm gains one.
    pub fn init(config: ModelConfig, sizes: VocabSizes, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = derive_rng(seed, &[0x11]);
        let c = config;
        let e = 1.0 / (c.d1 as f64).sqrt();
        let w = c.token_width();
        let lin = |rng: &mut ChaCha8Rng, i: usize, o: usize| gaussian(rng, i, o, 1.0 / (i as f64).sqrt());
        let item = gaussian(&mut rng, sizes.items, c.d1, e);
        let attribute = gaussian(&mut rng, sizes.attributes, c.d1, e);
        let operator = gaussian(&mut rng, Operator::COUNT, c.d1, e);
        let relation = gaussian(&mut rng, 2 * sizes.relations, c.d1, e);
        let position = gaussian(&mut rng, c.positions, c.d1, e);
        let token_type = gaussian(&mut rng, 2, c.d3, 1.0 / (c.d3 as f64).sqrt());
        let graph_token = gaussian(&mut rng, 1, w, 1.0 / (w as f64).sqrt() * 2.0);
        let input_w = lin(&mut rng, w, c.d_model);
        let d = c.d_model;
        let layers = (0..c.layers)
            .map(|_| LayerParams {
                ln1_gain: Tensor::filled(1, d, 1.0),
                ln1_bias: Tensor::zeros(1, d),
                wq: lin(&mut rng, d, d),
                bq: Tensor::zeros(1, d),
                wk: lin(&mut rng, d, d),
                bk: Tensor::zeros(1, d),
                wv: lin(&mut rng, d, d),
                bv: Tensor::zeros(1, d),
                wo: lin(&mut rng, d, d),
                bo: Tensor::zeros(1, d),
                ln2_gain: Tensor::filled(1, d, 1.0),
                ln2_bias: Tensor::zeros(1, d),
                w1: lin(&mut rng, d, c.ffn),
                b1: Tensor::zeros(1, c.ffn),
                w2: lin(&mut rng, c.ffn, d),
                b2: Tensor::zeros(1, d),
            })
            .collect();
        let readout = lin(&mut rng, d, c.d1);
        let params = Self {
            config,
            sizes,
            item,
            attribute,
            operator,
            relation,
            position,
            token_type,
            graph_token,
            input_w,
            input_b: Tensor::zeros(1, d),
            layers,
            final_gain: Tensor::filled(1, d, 1.0),
            final_bias: Tensor::zeros(1, d),
            readout,
        };
        info!("model initialized with {} parameters", params.parameter_count());
        Ok(params)
    }

    /// Every parameter in registry order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        all_fields!(self, by_ref)
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        all_fields!(self, by_mut)
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn table_sizes(&self) -> TableSizes {
        TableSizes {
            items: self.sizes.items,
            attributes: self.sizes.attributes,
            relations: self.sizes.relations,
            positions: self.config.positions,
        }
    }

    pub fn tables(&self) -> crate::tokenizer::EmbeddingTables<'_> {
        crate::tokenizer::EmbeddingTables {
            item: &self.item,
            attribute: &self.attribute,
            operator: &self.operator,
            relation: &self.relation,
            position: &self.position,
            token_type: &self.token_type,
            graph_token: &self.graph_token,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(
            self.named()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    tensor: t.clone(),
                })
                .collect(),
        );
        ck.meta = serde_json::json!({ "model": self.config, "sizes": self.sizes });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |m: String| ModelError::Checkpoint(m);
        let config: ModelConfig = serde_json::from_value(ck.meta["model"].clone())
            .map_err(|e| bad(format!("model config: {e}")))?;
        let sizes: VocabSizes = serde_json::from_value(ck.meta["sizes"].clone())
            .map_err(|e| bad(format!("vocabulary sizes: {e}")))?;
        let mut params = Self::init(config, sizes, 0)?;
        let expected = params.named().len();
        if ck.tensors.len() != expected {
            return Err(bad(format!(
                "{} tensors, expected {expected}",
                ck.tensors.len()
            )));
        }
        for (name, slot) in params.named_mut() {
            let t = ck
                .get(&name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(bad(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(params)
    }

    /// Places every parameter on `tape` (borrowed, trainable).
    pub fn on_tape<'p>(&'p self, tape: &mut Tape<'p>) -> Result<ParamVars> {
        let all: Vec<Var> = self.named().into_iter().map(|(_, t)| tape.param(t)).collect();
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("registry length");
        let (item, attribute, operator, relation, position, token_type, graph_token) =
            (next(), next(), next(), next(), next(), next(), next());
        let (input_w, input_b) = (next(), next());
        let layers = (0..self.layers.len())
            .map(|_| std::array::from_fn(|_| next()))
            .collect();
        let (final_gain, final_bias, readout) = (next(), next(), next());
        let zero = tape.constant(Tensor::zeros(1, self.config.d1));
        let features = tape.concat_rows(&[item, attribute, operator, relation, position, zero])?;
        Ok(ParamVars {
            item,
            attribute,
            token_type,
            graph_token,
            input_w,
            input_b,
            layers,
            final_gain,
            final_bias,
            readout,
            features,
            all,
        })
    }

    fn feature_row(&self, f: Feature) -> usize {
        let s = &self.sizes;
        let op0 = s.items + s.attributes;
        let rel0 = op0 + Operator::COUNT;
        let pos0 = rel0 + 2 * s.relations;
        match f {
            Feature::Item(i) => i as usize,
            Feature::Attribute(i) => s.items + i as usize,
            Feature::Operator(o) => op0 + o.row(),
            Feature::Relation(r) => rel0 + crate::tokenizer::relation_row(r),
            Feature::Position(p) => pos0 + p - 1,
            Feature::Zero => pos0 + self.config.positions,
        }
    }

    /// Input matrix on the tape: graph token first, then `seq` in order.
    /// With `order`, rows are rearranged so that row `i` is original row
    /// `order[i]` (row 0 of the original is the graph token).
    pub fn input_rows(
        &self,
        tape: &mut Tape<'_>,
        vars: &ParamVars,
        seq: &TokenSequence,
        basis: &Tensor,
        order: Option<&[usize]>,
    ) -> Result<Var> {
        let c = &self.config;
        if seq.len() > c.max_tokens {
            return Err(ModelError::TooLong {
                len: seq.len(),
                max: c.max_tokens,
            });
        }
        if basis.rows() != seq.n || basis.cols() != c.d2 {
            return Err(TokenizerError::BasisMismatch {
                basis: basis.rows(),
                nodes: seq.n,
            }
            .into());
        }
        let sizes = self.table_sizes();
        for t in &seq.tokens {
            let ok = match t.feature {
                Feature::Item(i) => (i as usize) < sizes.items,
                Feature::Attribute(i) => (i as usize) < sizes.attributes,
                Feature::Relation(r) => (r.id.0 as usize) < sizes.relations,
                Feature::Position(p) => p >= 1 && p <= sizes.positions,
                Feature::Operator(_) | Feature::Zero => true,
            };
            if !ok {
                return Err(ModelError::Config(format!("token feature {} has no table row", t.feature)));
            }
        }
        let feat_idx: Vec<usize> = seq.tokens.iter().map(|t| self.feature_row(t.feature)).collect();
        let type_idx: Vec<usize> = seq.tokens.iter().map(|t| t.type_row()).collect();
        let mut ids = Vec::with_capacity(seq.tokens.len() * 2 * c.d2);
        for t in &seq.tokens {
            ids.extend_from_slice(basis.row(t.id_a));
            ids.extend_from_slice(basis.row(t.id_b));
        }
        let body = if seq.tokens.is_empty() {
            None
        } else {
            let feats = tape.gather_rows(vars.features, &feat_idx)?;
            let ids = tape.constant(Tensor::new(seq.tokens.len(), 2 * c.d2, ids)?);
            let types = tape.gather_rows(vars.token_type, &type_idx)?;
            Some(tape.concat_cols(&[feats, ids, types])?)
        };
        let x = match body {
            Some(b) => tape.concat_rows(&[vars.graph_token, b])?,
            None => vars.graph_token,
        };
        match order {
            Some(o) => Ok(tape.gather_rows(x, o)?),
            None => Ok(x),
        }
    }

    fn layer_norm(&self, tape: &mut Tape<'_>, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let n = tape.layernorm_rows(x, LN_EPS)?;
        let g = tape.mul_row(n, gain)?;
        Ok(tape.add_row(g, bias)?)
    }

    fn linear(&self, tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        Ok(tape.add_row(y, b)?)
    }

    /// Runs the encoder on input rows and reads out row `readout` as the
    /// 1 × d1 query embedding.
    pub fn encode_rows(&self, tape: &mut Tape<'_>, vars: &ParamVars, x: Var, readout: usize) -> Result<Var> {
        let c = &self.config;
        let dh = c.d_model / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut h = self.linear(tape, x, vars.input_w, vars.input_b)?;
        for l in &vars.layers {
            let [ln1g, ln1b, wq, bq, wk, bk, wv, bv, wo, bo, ln2g, ln2b, w1, b1, w2, b2] = *l;
            let a = self.layer_norm(tape, h, ln1g, ln1b)?;
            let q = self.linear(tape, a, wq, bq)?;
            let k = self.linear(tape, a, wk, bk)?;
            let v = self.linear(tape, a, wv, bv)?;
            let mut heads = Vec::with_capacity(c.heads);
            for i in 0..c.heads {
                let qh = tape.slice_cols(q, i * dh, dh)?;
                let kh = tape.slice_cols(k, i * dh, dh)?;
                let vh = tape.slice_cols(v, i * dh, dh)?;
                let kt = tape.transpose(kh)?;
                let s = tape.matmul(qh, kt)?;
                let s = tape.scale(s, scale)?;
                let p = tape.softmax_rows(s)?;
                heads.push(tape.matmul(p, vh)?);
            }
            let cat = if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat_cols(&heads)?
            };
            let o = self.linear(tape, cat, wo, bo)?;
            h = tape.add(h, o)?;
            let f = self.layer_norm(tape, h, ln2g, ln2b)?;
            let f = self.linear(tape, f, w1, b1)?;
            let f = tape.gelu(f)?;
            let f = self.linear(tape, f, w2, b2)?;
            h = tape.add(h, f)?;
        }
        let g = tape.gather_rows(h, &[readout])?;
        let g = self.layer_norm(tape, g, vars.final_gain, vars.final_bias)?;
        Ok(tape.matmul(g, vars.readout)?)
    }

    /// Query embedding on a tape.
    pub fn encode_on(
        &self,
        tape: &mut Tape<'_>,
        vars: &ParamVars,
        seq: &TokenSequence,
        basis: &Tensor,
    ) -> Result<Var> {
        let x = self.input_rows(tape, vars, seq, basis, None)?;
        self.encode_rows(tape, vars, x, 0)
    }

    /// Query embedding `e_q` (1 × d1).
    pub fn encode(&self, seq: &TokenSequence, basis: &Tensor) -> Result<Tensor> {
        self.encode_permuted(seq, basis, None)
    }

    /// As [`encode`](Self::encode) with the input rows presented in
    /// `order` (a permutation of `0..seq.len()`, 0 being the graph token).
    pub fn encode_permuted(&self, seq: &TokenSequence, basis: &Tensor, order: Option<&[usize]>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.on_tape(&mut tape)?;
        let x = self.input_rows(&mut tape, &vars, seq, basis, order)?;
        let readout = order.map_or(0, |o| o.iter().position(|&r| r == 0).unwrap_or(0));
        let e = self.encode_rows(&mut tape, &vars, x, readout)?;
        Ok(tape.value(e).clone())
    }

    /// Embedding table for answers of `kind`.
    pub fn candidate_table(&self, kind: VertexKind) -> Result<&Tensor> {
        match kind {
            VertexKind::Item => Ok(&self.item),
            VertexKind::Attribute => Ok(&self.attribute),
            VertexKind::Session => Err(ModelError::BadCandidateKind(kind)),
        }
    }

    /// Inner products of `e_q` with each candidate's embedding.
    pub fn score(&self, e_q: &Tensor, candidates: &[VertexId]) -> Result<Vec<f64>> {
        let Some(first) = candidates.first() else {
            return Ok(Vec::new());
        };
        if let Some(other) = candidates.iter().find(|c| c.kind != first.kind) {
            return Err(ModelError::MixedCandidates(first.kind, other.kind));
        }
        let table = self.candidate_table(first.kind)?;
        if e_q.shape() != (1, table.cols()) {
            return Err(TensorError::ShapeMismatch {
                op: "score",
                left: e_q.shape(),
                right: (1, table.cols()),
            }
            .into());
        }
        candidates
            .iter()
            .map(|c| {
                let row = c.index as usize;
                if row >= table.rows() {
                    return Err(ModelError::UnknownCandidate(*c));
                }
                Ok(table.row(row).iter().zip(e_q.data()).map(|(a, b)| a * b).sum())
            })
            .collect()
    }

    /// Scores against the whole typed table, in index order.
    pub fn score_all(&self, e_q: &Tensor, kind: VertexKind) -> Result<Vec<f64>> {
        let table = self.candidate_table(kind)?;
        Ok(e_q.matmul(&table.transpose())?.into_data())
    }

    /// Mean cross entropy of a batch on `tape`. Items and attributes are
    /// scored against their own tables.
    pub fn loss_on(&self, tape: &mut Tape<'_>, vars: &ParamVars, batch: &[Example]) -> Result<Var> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut parts = Vec::new();
        for kind in [VertexKind::Item, VertexKind::Attribute] {
            let group: Vec<&Example> = batch.iter().filter(|e| e.answer.kind == kind).collect();
            if group.is_empty() {
                continue;
            }
            let table_len = self.candidate_table(kind)?.rows();
            let mut rows = Vec::with_capacity(group.len());
            let mut targets = Vec::with_capacity(group.len());
            for ex in &group {
                if ex.answer.index as usize >= table_len {
                    return Err(ModelError::UnknownCandidate(ex.answer));
                }
                rows.push(self.encode_on(tape, vars, &ex.tokens, &ex.basis)?);
                targets.push(ex.answer.index as usize);
            }
            let e = if rows.len() == 1 {
                rows[0]
            } else {
                tape.concat_rows(&rows)?
            };
            let table = if kind == VertexKind::Item {
                vars.item
            } else {
                vars.attribute
            };
            let tt = tape.transpose(table)?;
            let logits = tape.matmul(e, tt)?;
            let ce = tape.cross_entropy_with_logits(logits, &targets)?;
            parts.push(tape.scale(ce, group.len() as f64 / batch.len() as f64)?);
        }
        if let Some(bad) = batch.iter().find(|e| e.answer.kind == VertexKind::Session) {
            return Err(ModelError::BadCandidateKind(bad.answer.kind));
        }
        Ok(match parts.as_slice() {
            [one] => *one,
            [a, b] => tape.add(*a, *b)?,
            _ => unreachable!("batch is non-empty"),
        })
    }

    /// Loss value and gradients in registry order.
    pub fn loss_and_grad(&self, batch: &[Example]) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.on_tape(&mut tape)?;
        let loss = self.loss_on(&mut tape, &vars, batch)?;
        let value = tape.value(loss).data()[0];
        let mut g = tape.backward(loss)?;
        let grads = vars
            .all
            .iter()
            .map(|v| {
                g.take(*v)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(*v).rows(), tape.value(*v).cols()))
            })
            .collect();
        Ok((value, grads))
    }

    /// Loss value only.
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.on_tape(&mut tape)?;
        let loss = self.loss_on(&mut tape, &vars, batch)?;
        Ok(tape.value(loss).data()[0])
    }
}

/// A tokenized query, its identifier basis and one correct answer.
#[derive(Debug, Clone)]
pub struct Example {
    pub tokens: TokenSequence,
    pub basis: Tensor,
    pub answer: VertexId,
}

/// Uniformly random permutation of `0..n`.
pub fn random_order(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

/// Tokenizer flags travel with a trained model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub drop_logic_tokens: bool,
    pub drop_session_positions: bool,
}

impl From<AblationFlags> for TokenizerFlags {
    fn from(a: AblationFlags) -> Self {
        TokenizerFlags {
            drop_logic_tokens: a.drop_logic_tokens,
            drop_session_positions: a.drop_session_positions,
        }
    }
}
