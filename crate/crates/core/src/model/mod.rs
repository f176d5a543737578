//! Tagger, tag embeddings, parser BiLSTM stack, optional biaffine/GAT
//! refinement, MLP heads and biaffine edge and relation scoring.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Scaling};

use crate::error::{Error, Result};
use crate::numerics::ops::xavier_init;
use crate::numerics::{InitMode, ParamId, ParameterStore, SeededRng, Tape, Tensor, Var};

/// Slope of the LeakyReLU inside GAT attention.
pub const GAT_LEAKY_SLOPE: f64 = 0.2;

/// Vocabulary sizes the parameter shapes depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sizes {
    pub words: usize,
    pub tags: usize,
    pub relations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmDirection {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmLayer {
    pub fwd: LstmDirection,
    pub bwd: LstmDirection,
    pub norm: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone, Copy)]
pub struct GatParams {
    pub w: ParamId,
    pub a_src: ParamId,
    pub a_dst: ParamId,
    pub scorer: Affine,
}

#[derive(Debug, Clone)]
struct Ids {
    embed: ParamId,
    tagger: Option<BiLstmLayer>,
    tag_cls: Affine,
    tag_embed: Option<Affine>,
    root: ParamId,
    parser: Vec<BiLstmLayer>,
    gat: Vec<GatParams>,
    edge_head: Affine,
    edge_dep: Affine,
    rel_head: Affine,
    rel_dep: Affine,
    edge_scorer: Affine,
    rel_scorer: Affine,
}

/// Per-sentence scores. `s_edge[dep][head]` over `(n+1) x (n+1)` with row 0
/// (ROOT as dependent) unused; `s_rel` is `[n, n+1, |R|]` with row `i`
/// belonging to word `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub s_edge: Tensor,
    pub s_rel: Tensor,
    pub tag_logits: Option<Tensor>,
    pub tags: Vec<usize>,
    pub scaling: f64,
}

impl ScoreSet {
    pub fn words(&self) -> usize {
        self.s_edge.shape()[0] - 1
    }

    pub fn relations(&self) -> usize {
        self.s_rel.shape()[2]
    }

    pub fn edge(&self, dep: usize, head: usize) -> f64 {
        self.s_edge.at(dep, head)
    }

    /// Relation scores of word `dep` (1-based) under head `head`.
    pub fn rel(&self, dep: usize, head: usize) -> &[f64] {
        let r = self.relations();
        let n1 = self.words() + 1;
        let start = ((dep - 1) * n1 + head) * r;
        &self.s_rel.data()[start..start + r]
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub tag_logits: Option<Var>,
    pub tags: Vec<usize>,
    pub s_edge: Var,
    pub s_rel: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    sizes: Sizes,
    params: ParameterStore,
    ids: Ids,
}

struct Builder<'r> {
    store: ParameterStore,
    rng: &'r mut SeededRng,
}

impl Builder<'_> {
    fn weight(&mut self, name: &str, shape: &[usize], mode: InitMode) -> ParamId {
        let t = xavier_init(shape, mode, self.rng).expect("matrix shape");
        self.store.add(name, t, true)
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::zeros(shape), true)
    }

    fn normal(&mut self, name: &str, shape: &[usize], trainable: bool) -> ParamId {
        let len = shape.iter().product();
        let data = (0..len).map(|_| self.rng.normal()).collect();
        self.store
            .add(name, Tensor::new(shape.to_vec(), data).expect("shape"), trainable)
    }

    fn affine(&mut self, name: &str, fan_in: usize, fan_out: usize, mode: InitMode) -> Affine {
        Affine {
            w: self.weight(&format!("{name}.w"), &[fan_in, fan_out], mode),
            b: self.zeros(&format!("{name}.b"), &[fan_out]),
        }
    }

    fn bilstm(&mut self, name: &str, d_in: usize, h: usize, norm: bool, mode: InitMode) -> BiLstmLayer {
        let mut dir = |d: &str| LstmDirection {
            w_ih: self.weight(&format!("{name}.{d}.w_ih"), &[d_in, 4 * h], mode),
            w_hh: self.weight(&format!("{name}.{d}.w_hh"), &[h, 4 * h], mode),
            b: self.zeros(&format!("{name}.{d}.b"), &[4 * h]),
        };
        let fwd = dir("fwd");
        let bwd = dir("bwd");
        let norm = norm.then(|| {
            let gain = self
                .store
                .add(format!("{name}.ln.gain"), Tensor::filled(&[2 * h], 1.0), true);
            (gain, self.zeros(&format!("{name}.ln.bias"), &[2 * h]))
        });
        BiLstmLayer { fwd, bwd, norm }
    }

    fn biaffine(&mut self, name: &str, d: usize, labels: usize, mode: InitMode) -> Affine {
        Affine {
            w: self.weight(&format!("{name}.w"), &[d, labels, d], mode),
            b: self.zeros(&format!("{name}.b"), &[d]),
        }
    }
}

impl Model {
    /// Fresh parameters. `frozen` supplies the word table in frozen-feature
    /// mode; trainable mode draws it from `N(0, 1)`.
    pub fn new(config: ModelConfig, sizes: Sizes, frozen: Option<Tensor>, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        if sizes.words == 0 || sizes.tags == 0 || sizes.relations == 0 {
            return Err(Error::Config(format!("empty vocabulary: {sizes:?}")));
        }
        let mut b = Builder {
            store: ParameterStore::new(),
            rng,
        };
        let c = &config;
        let embed = match (c.feature_mode, frozen) {
            (crate::data::FeatureMode::Frozen, Some(t)) => {
                if t.shape() != [sizes.words, c.feature_dim] {
                    return Err(Error::Dimension(format!(
                        "frozen table is {:?}, expected [{}, {}]",
                        t.shape(),
                        sizes.words,
                        c.feature_dim
                    )));
                }
                b.store.add("embed.word", t, false)
            }
            (crate::data::FeatureMode::Frozen, None) => {
                return Err(Error::Config("frozen features need a vector table".into()))
            }
            (crate::data::FeatureMode::Trainable, _) => {
                b.normal("embed.word", &[sizes.words, c.feature_dim], true)
            }
        };
        let uniform = InitMode::Uniform;
        let tagger = c
            .tagger
            .then(|| b.bilstm("tagger.lstm.l0", c.feature_dim, c.tagger_hidden, false, uniform));
        let cls_in = if c.tagger { 2 * c.tagger_hidden } else { c.feature_dim };
        let tag_cls = b.affine("tagger.cls", cls_in, sizes.tags, uniform);
        let tag_embed = c
            .tag_embed
            .then(|| b.affine("tag_embed", sizes.tags, c.tag_dim, uniform));
        let d_in = c.parser_input_dim();
        let root = b.normal("parser.root", &[1, d_in], true);
        let mut parser = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let width = if l == 0 { d_in } else { 2 * c.hidden };
            parser.push(b.bilstm(&format!("parser.lstm.l{l}"), width, c.hidden, c.layer_norm, c.init));
        }
        let d = c.parser_output_dim();
        let gat = (0..c.gat_pairs)
            .map(|k| GatParams {
                w: b.weight(&format!("parser.gat.{k}.w"), &[d, d], c.init),
                a_src: b.weight(&format!("parser.gat.{k}.a_src"), &[d, 1], c.init),
                a_dst: b.weight(&format!("parser.gat.{k}.a_dst"), &[d, 1], c.init),
                scorer: b.biaffine(&format!("parser.gat.{k}.biaffine"), d, 1, c.init),
            })
            .collect();
        let ids = Ids {
            embed,
            tagger,
            tag_cls,
            tag_embed,
            root,
            parser,
            gat,
            edge_head: b.affine("parser.mlp.edge_head", d, c.mlp_dim, c.init),
            edge_dep: b.affine("parser.mlp.edge_dep", d, c.mlp_dim, c.init),
            rel_head: b.affine("parser.mlp.rel_head", d, c.rel_dim, c.init),
            rel_dep: b.affine("parser.mlp.rel_dep", d, c.rel_dim, c.init),
            edge_scorer: b.biaffine("parser.biaffine.edge", c.mlp_dim, 1, c.init),
            rel_scorer: b.biaffine("parser.biaffine.rel", c.rel_dim, sizes.relations, c.init),
        };
        Ok(Model {
            params: b.store,
            config,
            sizes,
            ids,
        })
    }

    /// Rebuilds a model around stored parameter values. Names and shapes
    /// must match what `config` and `sizes` produce.
    pub fn from_params(config: ModelConfig, sizes: Sizes, stored: ParameterStore) -> Result<Self> {
        let frozen = stored.by_name("embed.word").map(|p| p.value.clone());
        let mut model = Model::new(config, sizes, frozen, &mut SeededRng::new(0))?;
        if stored.len() != model.params.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, model expects {}",
                stored.len(),
                model.params.len()
            )));
        }
        for (_, p) in stored.iter() {
            let id = model
                .params
                .id(&p.name)
                .ok_or_else(|| Error::Validation(format!("unexpected tensor {}", p.name)))?;
            let slot = model.params.get_mut(id);
            if slot.value.shape() != p.value.shape() {
                return Err(Error::Validation(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    p.value.shape(),
                    slot.value.shape()
                )));
            }
            slot.value = p.value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn sizes(&self) -> Sizes {
        self.sizes
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    /// Names of the parser BiLSTM gate matrices, in layer order.
    pub fn parser_lstm_matrices(&self) -> Vec<ParamId> {
        self.ids
            .parser
            .iter()
            .flat_map(|l| [l.fwd.w_ih, l.fwd.w_hh, l.bwd.w_ih, l.bwd.w_hh])
            .collect()
    }

    /// Records one sentence on `tape`. `gold_tags` replace predictions in
    /// oracle mode and are ignored otherwise.
    pub fn forward(&self, tape: &mut Tape<'_>, words: &[usize], gold_tags: &[usize]) -> Forward {
        let c = &self.config;
        let n = words.len();
        assert!(n >= 1, "forward needs at least one word");
        let emb = tape.param(self.ids.embed);
        let x = tape.gather_rows(emb, words);

        let (tag_logits, tags) = if c.oracle_tags {
            (None, gold_tags.to_vec())
        } else {
            let feats = match &self.ids.tagger {
                Some(layer) => bilstm_layer(tape, x, layer),
                None => x,
            };
            let logits = affine(tape, feats, self.ids.tag_cls);
            let (_, t) = tape.dims(logits);
            let tags = tape.data(logits).chunks(t).map(argmax).collect();
            (Some(logits), tags)
        };

        let input = match self.ids.tag_embed {
            Some(te) => {
                let table = tape.param(te.w);
                let rows = tape.gather_rows(table, &tags);
                let bias = tape.param(te.b);
                let e = tape.add_row(rows, bias);
                tape.concat_cols(&[e, x])
            }
            None => x,
        };
        let root = tape.param(self.ids.root);
        let mut h = tape.concat_rows(&[root, input]);
        for layer in &self.ids.parser {
            h = bilstm_layer(tape, h, layer);
        }
        for g in &self.ids.gat {
            let d = tape.dims(h).1;
            let bias = biaffine_pair(tape, h, h, g.scorer, 1, c.scaling.factor(d));
            h = gat_layer(tape, h, g, Some(bias)).0;
        }

        let eh = head(tape, h, self.ids.edge_head);
        let ed = head(tape, h, self.ids.edge_dep);
        let rh = head(tape, h, self.ids.rel_head);
        let rd = head(tape, h, self.ids.rel_dep);

        let by_head = biaffine_pair(tape, eh, ed, self.ids.edge_scorer, 1, c.edge_scale());
        let s_edge = tape.transpose(by_head);
        let words_only: Vec<usize> = (1..=n).collect();
        let rd_words = tape.gather_rows(rd, &words_only);
        let r = self.sizes.relations;
        let rel = biaffine_pair(tape, rh, rd_words, self.ids.rel_scorer, r, c.rel_scale());
        let s_rel = tape.permute3(rel, [n + 1, r, n], [2, 0, 1]);
        Forward {
            tag_logits,
            tags,
            s_edge,
            s_rel,
        }
    }

    /// Forward pass without keeping the tape.
    pub fn score(&self, words: &[usize], gold_tags: &[usize]) -> ScoreSet {
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, words, gold_tags);
        self.to_scores(&tape, &f)
    }

    pub fn to_scores(&self, tape: &Tape<'_>, f: &Forward) -> ScoreSet {
        let n = f.tags.len();
        ScoreSet {
            s_edge: tape.value(f.s_edge),
            s_rel: tape
                .value(f.s_rel)
                .reshape(vec![n, n + 1, self.sizes.relations])
                .expect("relation score shape"),
            tag_logits: f.tag_logits.map(|v| tape.value(v)),
            tags: f.tags.clone(),
            scaling: self.config.edge_scale(),
        }
    }
}

/// Lowest index wins ties.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn affine(tape: &mut Tape<'_>, x: Var, a: Affine) -> Var {
    let w = tape.param(a.w);
    let b = tape.param(a.b);
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

/// MLP head: `ELU(x W + b)`.
pub fn head(tape: &mut Tape<'_>, x: Var, a: Affine) -> Var {
    let z = affine(tape, x, a);
    tape.elu(z)
}

pub fn bilstm_layer(tape: &mut Tape<'_>, x: Var, layer: &BiLstmLayer) -> Var {
    let mut run = |dir: &LstmDirection, reverse: bool| {
        let w_ih = tape.param(dir.w_ih);
        let w_hh = tape.param(dir.w_hh);
        let b = tape.param(dir.b);
        let xw = tape.matmul(x, w_ih);
        let xw = tape.add_row(xw, b);
        tape.lstm(xw, w_hh, reverse)
    };
    let f = run(&layer.fwd, false);
    let r = run(&layer.bwd, true);
    let out = tape.concat_cols(&[f, r]);
    match layer.norm {
        Some((g, b)) => {
            let g = tape.param(g);
            let b = tape.param(b);
            tape.layer_norm_rows(out, g, b, crate::numerics::ops::LAYER_NORM_EPS)
        }
        None => out,
    }
}

/// `[x1 rows, labels * x2 rows]` scores; see [`Tape::biaffine`].
pub fn biaffine_pair(tape: &mut Tape<'_>, x1: Var, x2: Var, a: Affine, labels: usize, scale: f64) -> Var {
    let w = tape.param(a.w);
    let b = tape.param(a.b);
    tape.biaffine(x1, x2, w, b, labels, scale)
}

/// Single-head attention over the fully connected graph:
/// `e_ij = LeakyReLU(a_src . W h_i + a_dst . W h_j) + bias_ij`,
/// `h_i' = ELU(sum_j softmax_j(e_ij) W h_j)`. Returns the new features and
/// the attention matrix.
pub fn gat_layer(tape: &mut Tape<'_>, h: Var, p: &GatParams, bias: Option<Var>) -> (Var, Var) {
    let (m, _) = tape.dims(h);
    let w = tape.param(p.w);
    let wh = tape.matmul(h, w);
    let a_src = tape.param(p.a_src);
    let a_dst = tape.param(p.a_dst);
    let src = tape.matmul(wh, a_src);
    let dst = tape.matmul(wh, a_dst);
    let dst_row = tape.transpose(dst);
    let zeros = tape.constant_matrix(m, m, vec![0.0; m * m]);
    let pair = tape.add_row(zeros, dst_row);
    let pair = tape.add_col(pair, src);
    let mut e = tape.leaky_relu(pair, GAT_LEAKY_SLOPE);
    if let Some(b) = bias {
        e = tape.add(e, b);
    }
    let alpha = tape.softmax_rows(e);
    let mixed = tape.matmul(alpha, wh);
    (tape.elu(mixed), alpha)
}

#[cfg(test)]
mod tests;
