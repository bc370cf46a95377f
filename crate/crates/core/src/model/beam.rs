//! Greedy and beam search over any step-wise scored search space.

use super::Result;

/// A space of action sequences with per-step log-probabilities.
pub trait SearchSpace {
    type State: Clone;
    type Action: Copy + PartialEq;

    fn is_complete(&self, s: &Self::State) -> bool;

    /// Legal actions of `s` with their log-probabilities, in legal order.
    fn expand(&mut self, s: &Self::State) -> Result<Vec<(Self::Action, f64)>>;

    fn apply(&mut self, s: &Self::State, a: Self::Action) -> Result<Self::State>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<S, A> {
    pub state: S,
    pub actions: Vec<A>,
    pub log_prob: f64,
}

/// Highest-probability action at every step; ties go to the earlier legal
/// action. `None` if `max_steps` is reached first.
pub fn greedy_search<P: SearchSpace>(
    space: &mut P,
    init: P::State,
    max_steps: usize,
) -> Result<Option<Hypothesis<P::State, P::Action>>> {
    let mut h = Hypothesis {
        state: init,
        actions: Vec::new(),
        log_prob: 0.0,
    };
    while !space.is_complete(&h.state) {
        if h.actions.len() >= max_steps {
            log::warn!("greedy decoding hit the step limit of {max_steps}");
            return Ok(None);
        }
        let options = space.expand(&h.state)?;
        // scored as beam search scores, so a beam of one agrees bit for bit
        let mut best: Option<(P::Action, f64)> = None;
        for (a, lp) in options {
            let score = h.log_prob + lp;
            if best.map_or(true, |(_, b)| score > b) {
                best = Some((a, score));
            }
        }
        let Some((a, score)) = best else {
            return Err(super::ModelError::NoLegalAction(h.actions.len()));
        };
        h.state = space.apply(&h.state, a)?;
        h.actions.push(a);
        h.log_prob = score;
    }
    Ok(Some(h))
}

/// Standard beam search. Each step extends every live hypothesis by every
/// legal action and keeps the `beam_size` best extensions, ties going to the
/// earlier hypothesis and then the earlier action. Search stops once
/// `beam_size` hypotheses are complete and no live one can still beat them.
/// Hypotheses reaching `max_steps` are dropped. Results are sorted by
/// log-probability, best first.
pub fn beam_search<P: SearchSpace>(
    space: &mut P,
    init: P::State,
    beam_size: usize,
    max_steps: usize,
) -> Result<Vec<Hypothesis<P::State, P::Action>>> {
    assert!(beam_size > 0, "beam size must be positive");
    let mut finished: Vec<Hypothesis<P::State, P::Action>> = Vec::new();
    let mut live = vec![Hypothesis {
        state: init,
        actions: Vec::new(),
        log_prob: 0.0,
    }];
    if space.is_complete(&live[0].state) {
        return Ok(live);
    }
    let mut dropped = 0usize;
    for _ in 0..max_steps {
        if live.is_empty() {
            break;
        }
        let mut cands: Vec<(f64, usize, P::Action)> = Vec::new();
        for (b, h) in live.iter().enumerate() {
            for (a, lp) in space.expand(&h.state)? {
                cands.push((h.log_prob + lp, b, a));
            }
        }
        // stable: equal scores keep hypothesis order, then action order
        cands.sort_by(|x, y| y.0.total_cmp(&x.0));
        cands.truncate(beam_size);
        let mut next = Vec::with_capacity(cands.len());
        for (score, b, a) in cands {
            let parent = &live[b];
            let state = space.apply(&parent.state, a)?;
            let mut actions = parent.actions.clone();
            actions.push(a);
            let h = Hypothesis {
                state,
                actions,
                log_prob: score,
            };
            if space.is_complete(&h.state) {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
        if finished.len() >= beam_size {
            finished.sort_by(|x, y| y.log_prob.total_cmp(&x.log_prob));
            finished.truncate(beam_size);
            let worst = finished[beam_size - 1].log_prob;
            if live.iter().all(|h| h.log_prob <= worst) {
                live.clear();
            }
        }
    }
    dropped += live.len();
    if dropped > 0 {
        log::warn!("beam search dropped {dropped} hypotheses at the step limit of {max_steps}");
    }
    finished.sort_by(|x, y| y.log_prob.total_cmp(&x.log_prob));
    finished.truncate(beam_size);
    Ok(finished)
}
