//! Encoder-decoder parser: linking-augmented BiLSTM encoder, schema GNN, and
//! a grammar-constrained LSTM decoder scoring global rules, schema items by
//! link-weighted attention, and schema items by self-attention over earlier
//! item decisions.

use std::collections::HashMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{self, GnnEdges};
use crate::grammar::{self, legal_actions, num_rules, Action, Derivation, GrammarError, LegalActions};
use crate::linking::{self, feature_tensor, name_parts, LinkError, Question, Vocab};
use crate::schema::{ItemType, Schema, SchemaGraph};
use crate::tensor::{
    self, birnn_encode, init_linear, init_lstm, linear, lstm_cell, Init, LstmState, ParamStore, Tape, Tensor,
    TensorError, Var,
};

pub mod beam;
pub mod train;

pub use beam::{beam_search, greedy_search, Hypothesis, SearchSpace};
pub use train::{greedy_accuracy, train, train_step, EpochMetrics, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no legal action after {0} steps")]
    NoLegalAction(usize),
    #[error("gold action {action} is not legal at step {step}")]
    GoldNotLegal { action: Action, step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Ablation switches. The default is the full model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// `φ_v := r_v`, no `l^φ` on encoder states, `τ(v)` as decoder input for
    /// items, no self-attention.
    pub no_gnn: bool,
    /// GNN on, `s_att = 0`.
    pub no_self_attend: bool,
    /// `φ` is used by self-attention only.
    pub only_self_attend: bool,
    /// `ρ_v = 1` for every item.
    pub no_relevance: bool,
    /// `ρ_v = 1` exactly on items of the gold query.
    pub oracle_relevance: bool,
    /// Drop beam candidates that join a table with itself.
    pub filter_beam: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 6] = [
        "no_gnn",
        "no_self_attend",
        "only_self_attend",
        "no_relevance",
        "oracle_relevance",
        "filter_beam",
    ];

    pub fn get(&self, name: &str) -> Option<bool> {
        let mut probe = *self;
        probe.slot(name).ok().map(|s| *s)
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        *self.slot(name)? = on;
        Ok(())
    }

    fn slot(&mut self, name: &str) -> Result<&mut bool> {
        Ok(match name {
            "no_gnn" => &mut self.no_gnn,
            "no_self_attend" => &mut self.no_self_attend,
            "only_self_attend" => &mut self.only_self_attend,
            "no_relevance" => &mut self.no_relevance,
            "oracle_relevance" => &mut self.oracle_relevance,
            "filter_beam" => &mut self.filter_beam,
            _ => return Err(ModelError::Config(format!("unknown ablation `{name}`"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let clash = |a: bool, b: bool, x: &str, y: &str| {
            if a && b {
                Err(ModelError::Config(format!("{x} and {y} are mutually exclusive")))
            } else {
                Ok(())
            }
        };
        clash(self.no_gnn, self.only_self_attend, "no_gnn", "only_self_attend")?;
        clash(self.no_self_attend, self.only_self_attend, "no_self_attend", "only_self_attend")?;
        clash(self.no_relevance, self.oracle_relevance, "no_relevance", "oracle_relevance")
    }

    pub fn gnn(&self) -> bool {
        !self.no_gnn
    }

    /// `φ` feeds the encoder (`l^φ`) and the decoder item inputs.
    pub fn phi_everywhere(&self) -> bool {
        !self.no_gnn && !self.only_self_attend
    }

    pub fn self_attention(&self) -> bool {
        !self.no_gnn && !self.no_self_attend
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_word: usize,
    pub d_node: usize,
    /// Per direction.
    pub d_enc: usize,
    pub d_dec: usize,
    pub d_att: usize,
    pub gnn_steps: usize,
    pub beam_size: usize,
    pub max_steps: usize,
    pub ablations: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_word: 32,
            d_node: 32,
            d_enc: 64,
            d_dec: 64,
            d_att: 32,
            gnn_steps: 2,
            beam_size: 10,
            max_steps: 200,
            ablations: Ablations::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("d_word", self.d_word),
            ("d_node", self.d_node),
            ("d_enc", self.d_enc),
            ("d_dec", self.d_dec),
            ("d_att", self.d_att),
            ("beam_size", self.beam_size),
            ("max_steps", self.max_steps),
        ] {
            if v == 0 {
                return Err(ModelError::Config(format!("{k} must be positive")));
            }
        }
        self.ablations.validate()
    }

    /// Width of the attention keys `h_aug_i`.
    pub fn d_aug(&self) -> usize {
        2 * self.d_enc + if self.ablations.phi_everywhere() { self.d_node } else { 0 }
    }
}

/// Row of `dec.rule_emb` used as the first decoder input.
pub fn begin_index() -> usize {
    num_rules()
}

/// Creates every parameter the configuration uses.
pub fn init_params(cfg: &ModelConfig, vocab_len: usize, store: &mut ParamStore, seed: u64) -> Result<()> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    store.add("emb.word", &[vocab_len, cfg.d_word], Init::Embedding, rng)?;
    linking::init_params(store, rng)?;
    gnn::init_node_params(store, cfg.d_node, cfg.d_word, rng)?;
    if cfg.ablations.gnn() {
        gnn::init_params(store, cfg.d_node, rng)?;
    }
    let d_in = cfg.d_word + cfg.d_node;
    init_lstm(store, "enc.fwd", d_in, cfg.d_enc, rng)?;
    init_lstm(store, "enc.bwd", d_in, cfg.d_enc, rng)?;
    init_linear(store, "dec.init", 2 * cfg.d_enc, cfg.d_dec, true, rng)?;
    let d_aug = cfg.d_aug();
    init_lstm(store, "dec.lstm", cfg.d_node + d_aug, cfg.d_dec, rng)?;
    store.add("dec.att", &[d_aug, cfg.d_dec], Init::Uniform, rng)?;
    store.add("dec.rule_emb", &[num_rules() + 1, cfg.d_node], Init::Embedding, rng)?;
    init_linear(store, "dec.ff1", cfg.d_dec + d_aug, cfg.d_dec, true, rng)?;
    init_linear(store, "dec.ff2", cfg.d_dec, num_rules(), true, rng)?;
    if cfg.ablations.self_attention() {
        init_linear(store, "dec.sim", cfg.d_node, cfg.d_att, false, rng)?;
    }
    Ok(())
}

/// Schema-dependent constants shared by every question on the schema.
#[derive(Clone, Debug)]
pub struct SchemaInputs {
    pub edges: GnnEdges,
    /// `[items × items]` membership-neighbor averaging matrix.
    pub membership_mean: Tensor,
    pub types: Vec<ItemType>,
    /// Vocabulary ids of every name part, item by item.
    pub part_ids: Vec<usize>,
    /// `[items × parts]`, averages part embeddings into name embeddings.
    pub name_avg: Tensor,
}

impl SchemaInputs {
    pub fn new(schema: &Schema, vocab: &Vocab) -> Self {
        let graph = SchemaGraph::build(schema);
        let edges = GnnEdges::from_graph(&graph);
        let membership_mean = edges.membership_mean();
        let n = schema.num_items();
        let mut types = Vec::with_capacity(n);
        let mut part_ids = Vec::new();
        let mut spans = Vec::with_capacity(n);
        for v in 0..n {
            let item = schema.item_at(v);
            types.push(schema.item_type(item));
            let start = part_ids.len();
            for p in name_parts(schema.item_name(item)) {
                part_ids.push(vocab.id(&p.to_lowercase()));
            }
            spans.push((start, part_ids.len()));
        }
        let p = part_ids.len();
        let mut avg = vec![0.0; n * p];
        for (v, &(s, e)) in spans.iter().enumerate() {
            for k in s..e {
                avg[v * p + k] = 1.0 / (e - s) as f64;
            }
        }
        SchemaInputs {
            edges,
            membership_mean,
            types,
            part_ids,
            name_avg: Tensor::matrix(n, p, avg).expect("consistent averaging matrix"),
        }
    }
}

/// A question prepared against one schema.
#[derive(Clone, Debug)]
pub struct Instance<'s> {
    pub schema: &'s Schema,
    pub inputs: Rc<SchemaInputs>,
    pub question: Question,
    pub word_ids: Vec<usize>,
    pub features: Tensor,
    /// Gold derivation, when known.
    pub gold: Option<Vec<Action>>,
    /// Gold-item indicator per node, when known.
    pub oracle_rho: Option<Vec<f64>>,
}

/// Output of [`Net::encode`].
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[|x| × 2·d_enc]`
    pub h: Var,
    /// `[|x| × d_node]`, `l_i = Σ_v p_link(v | x_i)·r_v`
    pub l: Var,
    /// `[|x| × d_node]`, as `l` with `φ_v` in place of `r_v`
    pub l_phi: Var,
    /// `[|x| × d_aug]`, `[h_i ; l^φ_i]`, or `h_i` when φ is not used by the encoder
    pub h_aug: Var,
    /// `h_aug · W_a`
    keys: Var,
    pub s_link: Var,
    pub p_link: Var,
    pub rho: Var,
    pub r: Var,
    pub phi: Var,
    /// Decoder input row per node.
    pub item_inputs: Var,
    /// `F(φ_v)` per node when self-attention is on.
    pub sim: Option<Var>,
    init: LstmState,
    d_aug: usize,
}

/// Decoder state after consuming the previous action.
#[derive(Clone, Debug)]
pub struct DecState {
    pub lstm: LstmState,
    /// `o_j`, also used as `u_j`
    pub o: Var,
    /// `a_j`
    pub attn: Var,
    /// `c_j`
    pub ctx: Var,
    /// `(u, node)` per decoded schema item, in decoding order.
    pub history: Vec<(Var, usize)>,
    pub derivation: Derivation,
}

/// Score blocks and the joint distribution of one step.
#[derive(Clone, Debug)]
pub struct StepScores {
    pub s_glob: Option<Var>,
    pub s_loc: Option<Var>,
    pub s_att: Option<Var>,
    /// `log p_j` over `[global ; items]`
    pub log_probs: Var,
}

/// Parameters paired with a configuration.
#[derive(Clone, Copy)]
pub struct Net<'a> {
    pub cfg: &'a ModelConfig,
    pub store: &'a ParamStore,
}

impl<'a> Net<'a> {
    pub fn new(cfg: &'a ModelConfig, store: &'a ParamStore) -> Self {
        Net { cfg, store }
    }

    fn p(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        Ok(tape.param(self.store, self.store.id(name)?))
    }

    pub fn encode(&self, tape: &mut Tape, inst: &Instance) -> Result<Encoded> {
        let ab = &self.cfg.ablations;
        let n = inst.question.len();
        if n == 0 {
            return Err(LinkError::EmptyQuestion(inst.question.raw.clone()).into());
        }
        let emb = self.p(tape, "emb.word")?;
        let words = tape.gather_rows(emb, &inst.word_ids)?;
        let parts = tape.gather_rows(emb, &inst.inputs.part_ids)?;
        let avg = tape.constant(inst.inputs.name_avg.clone())?;
        let names = tape.matmul(avg, parts)?;
        let mean = tape.constant(inst.inputs.membership_mean.clone())?;
        let nbr = tape.matmul(mean, names)?;
        let types = gnn::type_embeddings(tape, self.store, &inst.inputs.types)?;
        let r = gnn::node_embeddings(tape, self.store, types, names, nbr)?;

        let s_link = linking::link_scores(tape, self.store, words, names, &inst.features)?;
        let lm = linking::link_distribution(tape, s_link, inst.schema)?;
        let n_items = inst.schema.num_items();
        let rho = if ab.oracle_relevance {
            let rho = inst
                .oracle_rho
                .clone()
                .ok_or_else(|| ModelError::Config("oracle_relevance needs gold queries".into()))?;
            tape.constant(Tensor::vector(rho))?
        } else if ab.no_relevance {
            tape.constant(Tensor::vector(vec![1.0; n_items]))?
        } else {
            linking::relevance(tape, lm.p_link)?
        };
        let phi = if ab.gnn() {
            gnn::run_gnn(tape, self.store, &inst.inputs.edges, r, rho, self.cfg.gnn_steps)?
        } else {
            r
        };

        let pt = tape.transpose(lm.p_link)?;
        let l = tape.matmul(pt, r)?;
        let l_phi = if ab.gnn() { tape.matmul(pt, phi)? } else { l };
        let inputs: Vec<Var> = (0..n)
            .map(|i| {
                let w = tape.row(words, i)?;
                let li = tape.row(l, i)?;
                tape.concat(&[w, li])
            })
            .collect::<tensor::Result<_>>()?;
        let hs = birnn_encode(tape, self.store, "enc", &inputs)?;
        let h = tape.stack_rows(&hs)?;
        let h_aug = if ab.phi_everywhere() {
            let rows: Vec<Var> = (0..n)
                .map(|i| {
                    let lp = tape.row(l_phi, i)?;
                    tape.concat(&[hs[i], lp])
                })
                .collect::<tensor::Result<_>>()?;
            tape.stack_rows(&rows)?
        } else {
            h
        };
        let w_a = self.p(tape, "dec.att")?;
        let keys = tape.matmul(h_aug, w_a)?;

        let d = self.cfg.d_enc;
        let last_fwd = tape.slice(hs[n - 1], 0, d)?;
        let first_bwd = tape.slice(hs[0], d, d)?;
        let both = tape.concat(&[last_fwd, first_bwd])?;
        let h0 = linear(tape, self.store, "dec.init", both)?;
        let h0 = tape.tanh(h0)?;
        let c0 = tape.constant(Tensor::zeros(&[self.cfg.d_dec]))?;

        let item_inputs = if ab.phi_everywhere() { phi } else { types };
        let sim = if ab.self_attention() {
            Some(linear(tape, self.store, "dec.sim", phi)?)
        } else {
            None
        };
        Ok(Encoded {
            h,
            l,
            l_phi,
            h_aug,
            keys,
            s_link,
            p_link: lm.p_link,
            rho,
            r,
            phi,
            item_inputs,
            sim,
            init: LstmState { h: h0, c: c0 },
            d_aug: self.cfg.d_aug(),
        })
    }

    /// One recurrent step on input `g` followed by attention.
    fn recur(&self, tape: &mut Tape, enc: &Encoded, g: Var, prev_ctx: Var, lstm: LstmState) -> Result<(LstmState, Var, Var, Var)> {
        let x = tape.concat(&[g, prev_ctx])?;
        let lstm = lstm_cell(tape, self.store, "dec.lstm", x, lstm)?;
        let o = lstm.h;
        let e = tape.matvec(enc.keys, o)?;
        let a = tape.softmax(e)?;
        let c = tape.tmatvec(enc.h_aug, a)?;
        Ok((lstm, o, a, c))
    }

    pub fn start(&self, tape: &mut Tape, enc: &Encoded) -> Result<DecState> {
        let table = self.p(tape, "dec.rule_emb")?;
        let g = tape.row(table, begin_index())?;
        let c0 = tape.constant(Tensor::zeros(&[enc.d_aug]))?;
        let (lstm, o, attn, ctx) = self.recur(tape, enc, g, c0, enc.init)?;
        Ok(DecState {
            lstm,
            o,
            attn,
            ctx,
            history: Vec::new(),
            derivation: Derivation::new(),
        })
    }

    /// `s_att` for the legal item nodes; `None` when self-attention is off
    /// or nothing has been decoded yet.
    pub fn self_attention(&self, tape: &mut Tape, enc: &Encoded, state: &DecState, legal_nodes: &[usize]) -> Result<Option<Var>> {
        let Some(sim) = enc.sim else { return Ok(None) };
        if state.history.is_empty() {
            return Ok(None);
        }
        let us: Vec<Var> = state.history.iter().map(|&(u, _)| u).collect();
        let prev: Vec<usize> = state.history.iter().map(|&(_, v)| v).collect();
        let u_hat = tape.stack_rows(&us)?;
        let e = tape.matvec(u_hat, state.o)?;
        let a_hat = tape.softmax(e)?;
        let f_prev = tape.gather_rows(sim, &prev)?;
        let q = tape.tmatvec(f_prev, a_hat)?;
        let f_legal = tape.gather_rows(sim, legal_nodes)?;
        Ok(Some(tape.matvec(f_legal, q)?))
    }

    pub fn scores(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        state: &DecState,
        legal: &LegalActions,
        schema: &Schema,
    ) -> Result<StepScores> {
        if legal.is_empty() {
            return Err(ModelError::NoLegalAction(state.derivation.len()));
        }
        let mut blocks = Vec::with_capacity(2);
        let mut s_glob = None;
        let (mut s_loc, mut s_att) = (None, None);
        if !legal.global_rules.is_empty() {
            let oc = tape.concat(&[state.o, state.ctx])?;
            let hid = linear(tape, self.store, "dec.ff1", oc)?;
            let hid = tape.tanh(hid)?;
            let all = linear(tape, self.store, "dec.ff2", hid)?;
            let g = tape.select(all, &legal.global_rules)?;
            s_glob = Some(g);
            blocks.push(g);
        }
        if !legal.schema_items.is_empty() {
            let nodes: Vec<usize> = legal.schema_items.iter().map(|&it| schema.node_of(it)).collect();
            let all = tape.matvec(enc.s_link, state.attn)?;
            let loc = tape.select(all, &nodes)?;
            s_loc = Some(loc);
            let total = match self.self_attention(tape, enc, state, &nodes)? {
                Some(att) => {
                    s_att = Some(att);
                    tape.add(loc, att)?
                }
                None => loc,
            };
            blocks.push(total);
        }
        let logits = if blocks.len() == 1 { blocks[0] } else { tape.concat(&blocks)? };
        let log_probs = tape.log_softmax(logits)?;
        Ok(StepScores {
            s_glob,
            s_loc,
            s_att,
            log_probs,
        })
    }

    /// Applies `action` and, unless the derivation is complete, runs the next
    /// recurrent step with the action's embedding as input.
    pub fn advance(&self, tape: &mut Tape, enc: &Encoded, state: &DecState, action: Action, schema: &Schema) -> Result<DecState> {
        let mut next = state.clone();
        next.derivation.apply(action, schema)?;
        let g = match action {
            Action::Rule(id) => {
                let table = self.p(tape, "dec.rule_emb")?;
                tape.row(table, id)?
            }
            Action::Item(item) => {
                let v = schema.node_of(item);
                next.history.push((state.o, v));
                tape.row(enc.item_inputs, v)?
            }
        };
        if next.derivation.is_complete() {
            return Ok(next);
        }
        let (lstm, o, attn, ctx) = self.recur(tape, enc, g, state.ctx, state.lstm)?;
        next.lstm = lstm;
        next.o = o;
        next.attn = attn;
        next.ctx = ctx;
        Ok(next)
    }

    /// Teacher-forced `−Σ_j log p_j(gold_j)`.
    pub fn loss(&self, tape: &mut Tape, inst: &Instance) -> Result<Var> {
        let gold = inst
            .gold
            .as_ref()
            .ok_or_else(|| ModelError::Config("training instance without gold derivation".into()))?;
        let enc = self.encode(tape, inst)?;
        let mut state = self.start(tape, &enc)?;
        let mut terms = Vec::with_capacity(gold.len());
        for (step, &a) in gold.iter().enumerate() {
            let legal = legal_actions(&state.derivation, inst.schema)?;
            let k = legal.position(a).ok_or(ModelError::GoldNotLegal { action: a, step })?;
            let sc = self.scores(tape, &enc, &state, &legal, inst.schema)?;
            terms.push(tape.pick(sc.log_probs, k)?);
            state = self.advance(tape, &enc, &state, a, inst.schema)?;
        }
        let total = tape.add_all(&terms)?;
        Ok(tape.affine(total, -1.0, 0.0)?)
    }
}

/// Beam search over one instance, driven by a [`Net`].
pub struct ModelSearch<'n, 'i, 's> {
    pub net: Net<'n>,
    pub inst: &'i Instance<'s>,
    pub tape: Tape,
    pub enc: Encoded,
}

impl<'n, 'i, 's> ModelSearch<'n, 'i, 's> {
    pub fn new(net: Net<'n>, inst: &'i Instance<'s>) -> Result<Self> {
        let mut tape = Tape::new();
        let enc = net.encode(&mut tape, inst)?;
        Ok(ModelSearch { net, inst, tape, enc })
    }

    pub fn initial(&mut self) -> Result<DecState> {
        self.net.start(&mut self.tape, &self.enc)
    }
}

impl SearchSpace for ModelSearch<'_, '_, '_> {
    type State = DecState;
    type Action = Action;

    fn is_complete(&self, s: &DecState) -> bool {
        s.derivation.is_complete()
    }

    fn expand(&mut self, s: &DecState) -> Result<Vec<(Action, f64)>> {
        let legal = legal_actions(&s.derivation, self.inst.schema)?;
        let sc = self.net.scores(&mut self.tape, &self.enc, s, &legal, self.inst.schema)?;
        let lp = self.tape.value(sc.log_probs).data().to_vec();
        Ok(lp.into_iter().enumerate().map(|(k, p)| (legal.action(k), p)).collect())
    }

    fn apply(&mut self, s: &DecState, a: Action) -> Result<DecState> {
        self.net.advance(&mut self.tape, &self.enc, s, a, self.inst.schema)
    }
}

/// A finished prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub actions: Vec<Action>,
    pub log_prob: f64,
    pub sql: String,
}

/// Configuration, vocabulary and parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    schema_cache: HashMap<String, Rc<SchemaInputs>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointExtra {
    config: ModelConfig,
    vocab: Vec<String>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        init_params(&config, vocab.len(), &mut store, seed)?;
        Ok(Model {
            config,
            vocab,
            store,
            schema_cache: HashMap::new(),
        })
    }

    /// Vocabulary over question tokens and schema name parts.
    pub fn build_vocab<'a>(questions: impl IntoIterator<Item = &'a str>, schemas: &[&Schema]) -> Vocab {
        let mut words: Vec<String> = Vec::new();
        for q in questions {
            words.extend(linking::tokenize(q));
        }
        for s in schemas {
            for v in 0..s.num_items() {
                for p in name_parts(s.item_name(s.item_at(v))) {
                    words.push(p.to_lowercase());
                }
            }
        }
        Vocab::build(words.iter().map(String::as_str))
    }

    pub fn net(&self) -> Net<'_> {
        Net::new(&self.config, &self.store)
    }

    fn schema_inputs(&mut self, schema: &Schema) -> Rc<SchemaInputs> {
        self.schema_cache
            .entry(schema.db_id.clone())
            .or_insert_with(|| Rc::new(SchemaInputs::new(schema, &self.vocab)))
            .clone()
    }

    /// Tokenizes the question and, if given, converts the gold query into a
    /// derivation and relevance indicator.
    pub fn prepare<'s>(&mut self, question: &str, schema: &'s Schema, gold_sql: Option<&str>) -> Result<Instance<'s>> {
        let q = Question::new(question)?;
        let word_ids = q.tokens.iter().map(|w| self.vocab.id(w)).collect();
        let features = feature_tensor(&q, schema);
        let (gold, oracle_rho) = match gold_sql {
            Some(sql) => {
                let d = grammar::sql_to_derivation(sql, schema)?;
                let rho = crate::data::oracle_relevance(sql, schema)?;
                (Some(d.actions), Some(rho))
            }
            None => (None, None),
        };
        Ok(Instance {
            schema,
            inputs: self.schema_inputs(schema),
            question: q,
            word_ids,
            features,
            gold,
            oracle_rho,
        })
    }

    pub fn loss_value(&self, inst: &Instance) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.net().loss(&mut tape, inst)?;
        Ok(tape.value(l).item())
    }

    fn decoded(&self, h: Hypothesis<DecState, Action>, schema: &Schema) -> Result<Decoded> {
        let sql = grammar::derivation_to_sql(&h.state.derivation, schema)?;
        Ok(Decoded {
            actions: h.actions,
            log_prob: h.log_prob,
            sql,
        })
    }

    pub fn greedy(&self, inst: &Instance) -> Result<Option<Decoded>> {
        let mut search = ModelSearch::new(self.net(), inst)?;
        let init = search.initial()?;
        match greedy_search(&mut search, init, self.config.max_steps)? {
            Some(h) => Ok(Some(self.decoded(h, inst.schema)?)),
            None => Ok(None),
        }
    }

    /// Beam search with the greedy path merged into the candidate list;
    /// ranked by log-probability, at most `beam_size` entries.
    pub fn beam(&self, inst: &Instance, beam_size: usize) -> Result<Vec<Decoded>> {
        let mut search = ModelSearch::new(self.net(), inst)?;
        let init = search.initial()?;
        let mut hyps = beam_search(&mut search, init.clone(), beam_size, self.config.max_steps)?;
        if let Some(g) = greedy_search(&mut search, init, self.config.max_steps)? {
            if !hyps.iter().any(|h| h.actions == g.actions) {
                let at = hyps.iter().position(|h| h.log_prob < g.log_prob).unwrap_or(hyps.len());
                hyps.insert(at, g);
                hyps.truncate(beam_size);
            }
        }
        hyps.into_iter().map(|h| self.decoded(h, inst.schema)).collect()
    }

    pub fn save<W: std::io::Write>(&self, w: W, seed: u64) -> Result<()> {
        let extra = serde_json::to_value(CheckpointExtra {
            config: self.config,
            vocab: self.vocab.words().to_vec(),
        })
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Ok(self.store.save(w, seed, extra)?)
    }

    /// Loads a checkpoint and checks it against the parameter layout its
    /// stored configuration implies.
    pub fn load<R: std::io::Read>(r: R) -> Result<(Self, u64)> {
        let ck = ParamStore::load(r)?;
        let extra: CheckpointExtra =
            serde_json::from_value(ck.manifest.extra.clone()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let vocab = Vocab::from_words(extra.vocab);
        let mut expected = ParamStore::new();
        init_params(&extra.config, vocab.len(), &mut expected, 0)?;
        for id in expected.ids() {
            let name = expected.name(id);
            let want = expected.value(id).shape();
            let got = ck
                .store
                .id(name)
                .map_err(|_| ModelError::Checkpoint(format!("missing parameter `{name}`")))?;
            let got = ck.store.value(got).shape();
            if got != want {
                return Err(ModelError::Checkpoint(format!(
                    "parameter `{name}` has shape {got:?} in the checkpoint but the configuration needs {want:?}"
                )));
            }
        }
        if expected.len() != ck.store.len() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint has {} parameters, configuration needs {}",
                ck.store.len(),
                expected.len()
            )));
        }
        Ok((
            Model {
                config: extra.config,
                vocab,
                store: ck.store,
                schema_cache: HashMap::new(),
            },
            ck.manifest.seed,
        ))
    }
}

#[cfg(test)]
mod tests;
