//! Question-word to schema-item linking.
//!
//! `s_link(v, x_i)` combines hand-crafted lexical features with the cosine
//! similarity of the word embedding and the item's name embedding. Scores
//! are normalized per word within each item type, against an implicit
//! "links to nothing" element of score 0. The relevance of an item is its
//! highest link probability over the question words.

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ItemType, Schema, SchemaItem};
use crate::tensor::{self, Init, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("question `{0}` has no tokens")]
    EmptyQuestion(String),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
}

/// Lowercased word tokens; any non-alphanumeric character separates tokens.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl Question {
    pub fn new(raw: &str) -> Result<Self, LinkError> {
        let tokens = tokenize(raw);
        if tokens.is_empty() {
            return Err(LinkError::EmptyQuestion(raw.to_string()));
        }
        Ok(Question {
            raw: raw.to_string(),
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Underscore-separated parts of an identifier.
pub fn name_parts(name: &str) -> Vec<&str> {
    let parts: Vec<&str> = name.split('_').filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        vec![name]
    } else {
        parts
    }
}

pub const NUM_FEATURES: usize = 7;

/// Lexical and structural features of a (word, item) pair, in order:
/// exact match with a name part, exact match with the whole name, word is a
/// prefix (≥ 3 chars) of a name part, a name part is a prefix of the word,
/// edit distance ≤ 2 to a name part, item is a primary key, item is a table.
pub fn featurize(word: &str, item: SchemaItem, schema: &Schema) -> [f64; NUM_FEATURES] {
    let name = schema.item_name(item);
    let parts = name_parts(name);
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let is_primary = match item {
        SchemaItem::Column(c) => schema.column(c).is_primary,
        SchemaItem::Table(_) => false,
    };
    [
        ind(parts.iter().any(|p| *p == word)),
        ind(name == word),
        ind(word.chars().count() >= 3 && parts.iter().any(|p| p.starts_with(word))),
        ind(parts.iter().any(|p| word.starts_with(p))),
        ind(parts.iter().any(|p| edit_distance(word, p) <= 2)),
        ind(is_primary),
        ind(matches!(item, SchemaItem::Table(_))),
    ]
}

/// Levenshtein distance over chars.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Feature tensor of shape `[(items · words) × NUM_FEATURES]`, rows ordered
/// item-major, matching graph node order.
pub fn feature_tensor(question: &Question, schema: &Schema) -> Tensor {
    let n = schema.num_items();
    let mut data = Vec::with_capacity(n * question.len() * NUM_FEATURES);
    for node in 0..n {
        let item = schema.item_at(node);
        for w in &question.tokens {
            data.extend_from_slice(&featurize(w, item, schema));
        }
    }
    Tensor::matrix(n * question.len(), NUM_FEATURES, data).expect("nonempty feature tensor")
}

pub const UNK: usize = 0;

/// Word vocabulary shared by questions and schema item names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Index 0 is reserved for unknown words. Words are assigned indices in
    /// first-seen order.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab {
            words: vec!["<unk>".to_string()],
            index: HashMap::new(),
        };
        for w in words {
            if !v.index.contains_key(w) {
                v.index.insert(w.to_string(), v.words.len());
                v.words.push(w.to_string());
            }
        }
        v
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, w: &str) -> usize {
        self.index.get(w).copied().unwrap_or(UNK)
    }
}

pub fn init_params<R: Rng>(store: &mut ParamStore, rng: &mut R) -> tensor::Result<()> {
    store.add("link.w_feat", &[NUM_FEATURES], Init::Uniform, rng)?;
    store.add("link.w_sim", &[], Init::Const(1.0), rng)?;
    Ok(())
}

/// `s_link` as an `[items × words]` matrix:
/// `w_feat · features + w_sim · cos(word, name)`.
///
/// `words` is `[|x| × d]` word embeddings, `names` is `[items × d]` name
/// embeddings, `features` comes from [`feature_tensor`].
pub fn link_scores(
    tape: &mut Tape,
    store: &ParamStore,
    words: Var,
    names: Var,
    features: &Tensor,
) -> tensor::Result<Var> {
    let (n_items, n_words) = (tape.shape(names)[0], tape.shape(words)[0]);
    let w_feat = tape.param(store, store.id("link.w_feat")?);
    let w_sim = tape.param(store, store.id("link.w_sim")?);
    let f = tape.constant(features.clone())?;
    let lex = tape.matvec(f, w_feat)?;
    let lex = tape.reshape(lex, &[n_items, n_words])?;
    let wn = tape.normalize_rows(words)?;
    let nn = tape.normalize_rows(names)?;
    let cos = tape.matmul_t(nn, wn)?;
    let sim = tape.scale(cos, w_sim)?;
    tape.add(lex, sim)
}

/// Link scores, probabilities and the per-type null mass.
#[derive(Clone, Debug)]
pub struct LinkingMatrix {
    pub s_link: Var,
    /// `[items × words]`, `p_link(v | x_i)`
    pub p_link: Var,
    /// Item types present in the schema, in `ItemType::ALL` order.
    pub types: Vec<ItemType>,
    /// `null_mass[t][i]` is `p_link(∅ | x_i)` within type `types[t]`.
    pub null_mass: Vec<Vec<f64>>,
}

/// Per word, a softmax within each item type that includes the null element.
pub fn link_distribution(tape: &mut Tape, s_link: Var, schema: &Schema) -> tensor::Result<LinkingMatrix> {
    let groups = schema.type_groups();
    let types = groups.iter().map(|(t, _)| *t).collect();
    let rows: Vec<Vec<usize>> = groups.into_iter().map(|(_, g)| g).collect();
    let (p_link, null_mass) = tape.group_softmax(s_link, Rc::new(rows))?;
    Ok(LinkingMatrix {
        s_link,
        p_link,
        types,
        null_mass,
    })
}

/// `ρ_v = max_i p_link(v | x_i)`.
pub fn relevance(tape: &mut Tape, p_link: Var) -> tensor::Result<Var> {
    tape.row_max(p_link)
}
