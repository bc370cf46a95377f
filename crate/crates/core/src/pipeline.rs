//! Dataset-level glue: instance preparation, fitting, beam prediction and
//! scoring, shared by the command line and the acceptance suite.

use thiserror::Error;

use crate::data::{choose_top, oracle_relevance, evaluate, filter_beam, find_schema, join_badness, Candidate, DataError, EvalReport, Example, Prediction};
use crate::linking::Vocab;
use crate::model::{train, Instance, Model, ModelConfig, ModelError, TrainConfig, TrainOutcome};
use crate::schema::Schema;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Examples left out of training because their gold query is outside the
/// grammar, with the reason.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Coverage {
    pub total: usize,
    pub skipped: Vec<(usize, String)>,
}

impl Coverage {
    pub fn used(&self) -> usize {
        self.total - self.skipped.len()
    }

    pub fn line(&self, what: &str) -> String {
        format!("{what}: {} of {} examples in grammar", self.used(), self.total)
    }
}

/// Vocabulary of training questions and the name parts of training schemas.
pub fn training_vocab(train: &[Example], schemas: &[Schema]) -> Vocab {
    let used: Vec<&Schema> = schemas.iter().filter(|s| train.iter().any(|e| e.db_id == s.db_id)).collect();
    Model::build_vocab(train.iter().map(|e| e.question.as_str()), &used)
}

/// Instances with gold derivations. Examples whose gold query does not fit
/// the grammar are skipped and recorded; unknown databases are errors.
pub fn gold_instances<'s>(
    model: &mut Model,
    examples: &[Example],
    schemas: &'s [Schema],
) -> Result<(Vec<Instance<'s>>, Vec<usize>, Coverage)> {
    let mut out = Vec::new();
    let mut kept = Vec::new();
    let mut cov = Coverage {
        total: examples.len(),
        skipped: Vec::new(),
    };
    for (i, ex) in examples.iter().enumerate() {
        let schema = find_schema(schemas, &ex.db_id)?;
        match model.prepare(&ex.question, schema, Some(&ex.sql)) {
            Ok(inst) => {
                out.push(inst);
                kept.push(i);
            }
            Err(e @ (ModelError::Grammar(_) | ModelError::Link(_))) => {
                log::warn!("example {i} skipped: {e}");
                cov.skipped.push((i, e.to_string()));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((out, kept, cov))
}

#[derive(Debug)]
pub struct Fitted {
    pub outcome: TrainOutcome,
    pub coverage: Coverage,
}

/// Builds a fresh model from `seed` and trains it; dev accuracy drives
/// checkpoint selection when dev data is given.
pub fn fit(
    config: ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Example],
    dev_set: &[Example],
    schemas: &[Schema],
    seed: u64,
) -> Result<Fitted> {
    let model = Model::new(config, training_vocab(train_set, schemas), seed)?;
    fit_model(model, train_cfg, train_set, dev_set, schemas)
}

pub fn fit_model(
    mut model: Model,
    train_cfg: &TrainConfig,
    train_set: &[Example],
    dev_set: &[Example],
    schemas: &[Schema],
) -> Result<Fitted> {
    let (tr, _, coverage) = gold_instances(&mut model, train_set, schemas)?;
    let (dev, dev_idx, _) = gold_instances(&mut model, dev_set, schemas)?;
    let dev_gold: Vec<String> = dev_idx.iter().map(|&i| dev_set[i].sql.clone()).collect();
    let outcome = train(model, &tr, &dev, &dev_gold, train_cfg)?;
    Ok(Fitted { outcome, coverage })
}

/// Beam candidates for every example, best first, with join verdicts.
pub fn predict(model: &mut Model, examples: &[Example], schemas: &[Schema], beam_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let schema = find_schema(schemas, &ex.db_id)?;
        let mut inst = model.prepare(&ex.question, schema, None)?;
        if model.config.ablations.oracle_relevance {
            // relevance comes from the gold query even at test time
            inst.oracle_rho = Some(oracle_relevance(&ex.sql, schema).map_err(DataError::from)?);
        }
        let candidates = model
            .beam(&inst, beam_size)?
            .into_iter()
            .map(|d| Candidate {
                joins: join_badness(&d.sql, schema).unwrap_or_default(),
                sql: d.sql,
                log_prob: d.log_prob,
            })
            .collect();
        out.push(Prediction {
            db_id: ex.db_id.clone(),
            question: ex.question.clone(),
            candidates,
        });
    }
    Ok(out)
}

/// Top-1 query of each prediction, optionally after removing candidates
/// that join a table to itself. Also returns how many beams fell back to
/// the unfiltered top-1.
pub fn top_queries(predictions: &[Prediction], schemas: &[Schema], filter: bool) -> Result<(Vec<Option<String>>, usize)> {
    let mut fallbacks = 0;
    let mut out = Vec::with_capacity(predictions.len());
    for p in predictions {
        let schema = find_schema(schemas, &p.db_id)?;
        let filtered = filter.then(|| filter_beam(&p.candidates, schema));
        let (top, fell_back) = choose_top(&p.candidates, filtered.as_deref());
        fallbacks += usize::from(fell_back);
        out.push(top.map(|c| c.sql.clone()));
    }
    Ok((out, fallbacks))
}

/// Predicts and scores `examples` in one pass.
pub fn evaluate_model(model: &mut Model, examples: &[Example], schemas: &[Schema], beam_size: usize, filter: bool) -> Result<EvalReport> {
    let preds = predict(model, examples, schemas, beam_size)?;
    let (top, _) = top_queries(&preds, schemas, filter)?;
    Ok(evaluate(examples, &top, schemas)?)
}

/// Keeps the examples whose gold query touches at least two tables.
pub fn multi_subset(examples: &[Example], schemas: &[Schema]) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for ex in examples {
        let schema = find_schema(schemas, &ex.db_id)?;
        if crate::data::split_single_multi(&ex.sql, schema).map_err(DataError::from)? == crate::data::Split::Multi {
            out.push(ex.clone());
        }
    }
    Ok(out)
}
