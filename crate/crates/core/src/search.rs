//! Greedy and beam search over any step-wise scorer.

use std::cmp::Ordering;

use crate::dataset::{EOS, SOS};

/// A left-to-right model that scores the next index of several partial
/// hypotheses at once.
pub trait StepModel {
    type State: Clone;

    fn start(&mut self) -> Self::State;

    /// Log-probabilities of the next index for each `(state, last index)`
    /// pair, plus the advanced states.
    fn step(&mut self, states: &[Self::State], last: &[usize]) -> (Vec<Self::State>, Vec<Vec<f64>>);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted indices, EOS excluded.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Whether EOS was emitted.
    pub finished: bool,
}

impl Hypothesis {
    /// Scored length: tokens plus the EOS step when finished.
    pub fn length(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    /// Mean log-probability per step.
    pub fn normalized(&self) -> f64 {
        self.log_prob / self.length().max(1) as f64
    }
}

/// Index of the largest entry, the lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode<M: StepModel>(model: &mut M, max_len: usize) -> Hypothesis {
    assert!(max_len >= 1, "max_len must be positive");
    let mut state = model.start();
    let mut last = SOS;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    for _ in 0..max_len {
        let (mut states, logp) = model.step(&[state], &[last]);
        let w = argmax(&logp[0]);
        hyp.log_prob += logp[0][w];
        if w == EOS {
            hyp.finished = true;
            break;
        }
        hyp.tokens.push(w);
        last = w;
        state = states.pop().expect("one state per input");
    }
    hyp
}

/// Orders by normalized score, then lexicographically smaller indices.
fn better(a: &Hypothesis, b: &Hypothesis) -> bool {
    match a.normalized().partial_cmp(&b.normalized()) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => a.tokens < b.tokens,
    }
}

/// Beam search keeping the `width` best expansions by cumulative
/// log-probability. Hypotheses that emit EOS retire; at the end the best
/// length-normalized hypothesis among retired and surviving ones wins.
pub fn beam_decode<M: StepModel>(model: &mut M, width: usize, max_len: usize) -> Hypothesis {
    assert!(width >= 1, "beam width must be positive");
    assert!(max_len >= 1, "max_len must be positive");
    let mut live: Vec<(M::State, Hypothesis)> = vec![(
        model.start(),
        Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
    )];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let states: Vec<M::State> = live.iter().map(|(s, _)| s.clone()).collect();
        let last: Vec<usize> = live
            .iter()
            .map(|(_, h)| h.tokens.last().copied().unwrap_or(SOS))
            .collect();
        let (next_states, logp) = model.step(&states, &last);

        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (i, row) in logp.iter().enumerate() {
            for (w, &lp) in row.iter().enumerate() {
                if lp.is_finite() {
                    cands.push((live[i].1.log_prob + lp, i, w));
                }
            }
        }
        // stable sort: equal scores stay in (hypothesis, index) order
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
        cands.truncate(width);

        let mut next = Vec::with_capacity(cands.len());
        for (score, i, w) in cands {
            let mut hyp = live[i].1.clone();
            hyp.log_prob = score;
            if w == EOS {
                hyp.finished = true;
                done.push(hyp);
            } else {
                hyp.tokens.push(w);
                next.push((next_states[i].clone(), hyp));
            }
        }
        live = next;
    }
    done.extend(live.into_iter().map(|(_, h)| h));
    let mut best = done.swap_remove(0);
    for h in done {
        if better(&h, &best) {
            best = h;
        }
    }
    best
}
