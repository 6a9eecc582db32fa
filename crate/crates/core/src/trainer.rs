//! Minibatch training: cross-entropy with partial teacher forcing, and the
//! hybrid cross-entropy + self-critical objective.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Gradients, Graph, ParamStore, Scalar};
use crate::batch::{GraphBatch, PreparedExample};
use crate::error::{Error, Result};
use crate::metrics::{bleu4, weighted_reward, BleuMode};
use crate::model::{Feed, Graph2Seq};
use crate::nn::Dropout;
use crate::training::{
    hybrid_loss, scst_loss, teacher_forcing_prob, xent_loss, Config, EarlyStopping, PlateauScheduler,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Cross-entropy only.
    Xent,
    /// Cross-entropy mixed with the self-critical loss.
    Rl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss: f64,
    pub xent: f64,
    pub rl: Option<f64>,
    pub clamped: usize,
    pub grad_norm: f64,
    pub tf_prob: f64,
}

/// One line of the training log. Deterministic given the seed, so no
/// wall-clock fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: f64,
    pub xent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rl: Option<f64>,
    pub dev_bleu4: f64,
    pub best_dev_bleu4: f64,
    pub lr: f64,
    pub tf_prob: f64,
    pub clamped: usize,
    pub steps: u64,
}

/// Greedy predictions and corpus BLEU-4 over a set of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub bleu4: f64,
    pub predictions: Vec<Vec<String>>,
}

const EVAL_CHUNK: usize = 32;

/// Decodes every example greedily (in parallel chunks) and scores the
/// predictions against the gold questions.
pub fn evaluate<F: Scalar>(
    model: &Graph2Seq,
    store: &ParamStore<F>,
    examples: &[PreparedExample],
    max_len: usize,
) -> Result<Evaluation> {
    let chunks: Vec<Vec<Vec<String>>> = examples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let graphs: Vec<_> = chunk.iter().map(|p| &p.graph).collect();
            let (seqs, ext) = model.greedy_batch(store, &graphs, max_len)?;
            Ok(seqs.iter().map(|s| ext.to_words(s)).collect())
        })
        .collect::<Result<_>>()?;
    let predictions: Vec<Vec<String>> = chunks.into_iter().flatten().collect();
    let golds: Vec<Vec<String>> = examples.iter().map(|p| p.example.question.clone()).collect();
    Ok(Evaluation {
        bleu4: bleu4(&predictions, &golds, BleuMode::Corpus),
        predictions,
    })
}

pub struct Trainer<F: Scalar> {
    pub model: Graph2Seq,
    pub store: ParamStore<F>,
    pub config: Config,
    pub stage: Stage,
    pub adam: Adam<F>,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    /// Parameter updates so far; drives the teacher-forcing schedule.
    pub step: u64,
    pub scheduler: PlateauScheduler,
    pub stopper: EarlyStopping,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(model: Graph2Seq, store: ParamStore<F>, config: Config, stage: Stage) -> Self {
        let lr = match stage {
            Stage::Xent => config.train.lr,
            Stage::Rl => config.train.rl_lr,
        };
        let adam = Adam::new(&store, lr);
        Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.train.seed),
            scheduler: PlateauScheduler::new(config.train.lr_factor, config.train.lr_patience),
            stopper: EarlyStopping::new(config.train.early_stop_patience),
            model,
            store,
            config,
            stage,
            adam,
            epoch: 0,
            step: 0,
        }
    }

    pub fn tf_prob(&self) -> f64 {
        teacher_forcing_prob(self.step, self.config.train.tf_init, self.config.train.tf_decay)
    }

    /// Sampled and greedy decodes on a gradient-free tape, with rewards.
    fn self_critical_samples(
        &mut self,
        batch: &GraphBatch,
        examples: &[&PreparedExample],
    ) -> Result<(Vec<Vec<usize>>, Vec<f64>, Vec<f64>)> {
        let t = &self.config.train;
        let mut g = Graph::inference(&self.store);
        let enc = self.model.encode(&mut g, batch, &mut Dropout::Eval)?;
        let mut srng = ChaCha8Rng::seed_from_u64(self.rng.random());
        let sampled = self
            .model
            .unroll(&mut g, &enc, &batch.ext, t.max_decode_len, Feed::Sample(&mut srng), &mut Dropout::Eval)
            .sequences;
        let greedy = self
            .model
            .unroll(&mut g, &enc, &batch.ext, t.max_decode_len, Feed::Greedy, &mut Dropout::Eval)
            .sequences;
        let reward = |seq: &[usize], gold: &[String]| {
            weighted_reward(&batch.ext.to_words(seq), gold, t.reward_bleu_weight, t.reward_rouge_weight)
        };
        let mut rs = Vec::with_capacity(examples.len());
        let mut rb = Vec::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            rs.push(reward(&sampled[i], &ex.example.question));
            rb.push(reward(&greedy[i], &ex.example.question));
        }
        Ok((sampled, rs, rb))
    }

    /// One optimizer update on a minibatch.
    pub fn train_batch(&mut self, examples: &[&PreparedExample]) -> Result<StepStats> {
        let (grads, stats) = self.gradients(examples)?;
        self.adam.update(&mut self.store, &grads);
        self.step += 1;
        Ok(stats)
    }

    /// Loss and clipped, frozen-masked gradients for a minibatch. Advances
    /// the trainer's random stream but not the parameters.
    pub fn gradients(&mut self, examples: &[&PreparedExample]) -> Result<(Gradients<F>, StepStats)> {
        let graphs: Vec<_> = examples.iter().map(|p| p.graph.clone()).collect();
        let batch = GraphBatch::new(&graphs, &self.model.vocab, self.model.config.use_copy);
        if self.model.config.use_copy {
            let ids: Vec<String> = examples.iter().map(|p| p.example.id.clone()).collect();
            batch.check_copyable(&ids)?;
        }
        let targets: Vec<Vec<usize>> = examples
            .iter()
            .enumerate()
            .map(|(i, p)| batch.target_indices(i, &p.target))
            .collect();
        let valid: Vec<Vec<bool>> = (0..examples.len()).map(|b| batch.ext.valid_mask(b)).collect();
        let rl_inputs = match self.stage {
            Stage::Rl => Some(self.self_critical_samples(&batch, examples)?),
            Stage::Xent => None,
        };

        let t = self.config.train.clone();
        let tf = self.tf_prob();
        let mut drng = ChaCha8Rng::seed_from_u64(self.rng.random());
        let mut tf_rng = ChaCha8Rng::seed_from_u64(self.rng.random());
        let (grads, stats) = {
            let mut g = Graph::new(&self.store);
            let mut dropout = Dropout::Train {
                rng: &mut drng,
                embed: t.embed_dropout,
                rnn: t.rnn_dropout,
            };
            let enc = self.model.encode(&mut g, &batch, &mut dropout)?;
            let feed = Feed::Teacher {
                targets: &targets,
                prob: tf,
                rng: &mut tf_rng,
            };
            let un = self.model.unroll(&mut g, &enc, &batch.ext, 0, feed, &mut dropout);
            let (l_lm, clamped) = xent_loss(&mut g, &un.dists, &targets, &valid, t.label_smoothing);
            let (loss, rl) = match rl_inputs {
                Some((sampled, rs, rb)) => {
                    // the sampling policy had no dropout, so neither does its likelihood
                    let enc = self.model.encode(&mut g, &batch, &mut Dropout::Eval)?;
                    let mut unused = ChaCha8Rng::seed_from_u64(0);
                    let feed = Feed::Teacher {
                        targets: &sampled,
                        prob: 1.0,
                        rng: &mut unused,
                    };
                    let un = self.model.unroll(&mut g, &enc, &batch.ext, 0, feed, &mut Dropout::Eval);
                    let l_rl = scst_loss(&mut g, &un.dists, &sampled, &rs, &rb);
                    (hybrid_loss(&mut g, l_rl, l_lm, t.gamma), Some(g.scalar(l_rl).as_f64()))
                }
                None => (l_lm, None),
            };
            let value = g.scalar(loss).as_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch + 1,
                    step: self.step,
                });
            }
            let mut grads = g.backward(loss);
            grads.mask_frozen(&self.store);
            let norm = grads.clip_global_norm(F::of(t.grad_clip)).as_f64();
            if !grads.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch + 1,
                    step: self.step,
                });
            }
            let stats = StepStats {
                loss: value,
                xent: g.scalar(l_lm).as_f64(),
                rl,
                clamped,
                grad_norm: norm,
                tf_prob: tf,
            };
            (grads, stats)
        };
        Ok((grads, stats))
    }

    /// One pass over `train` in a freshly shuffled order; returns mean
    /// statistics.
    pub fn train_epoch(&mut self, train: &[PreparedExample]) -> Result<StepStats> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = StepStats {
            loss: 0.0,
            xent: 0.0,
            rl: None,
            clamped: 0,
            grad_norm: 0.0,
            tf_prob: self.tf_prob(),
        };
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.train.batch_size) {
            let examples: Vec<&PreparedExample> = chunk.iter().map(|&i| &train[i]).collect();
            let s = self.train_batch(&examples)?;
            sum.loss += s.loss;
            sum.xent += s.xent;
            sum.rl = match (sum.rl, s.rl) {
                (Some(a), Some(b)) => Some(a + b),
                (None, b) => b,
                (a, None) => a,
            };
            sum.clamped += s.clamped;
            sum.grad_norm = sum.grad_norm.max(s.grad_norm);
            batches += 1;
        }
        let n = batches.max(1) as f64;
        sum.loss /= n;
        sum.xent /= n;
        sum.rl = sum.rl.map(|r| r / n);
        Ok(sum)
    }

    pub fn evaluate(&self, examples: &[PreparedExample]) -> Result<Evaluation> {
        evaluate(&self.model, &self.store, examples, self.config.train.max_decode_len)
    }

    /// Trains until `max_epochs` or early stopping. After every epoch the
    /// dev score drives the learning-rate schedule and `on_epoch` receives
    /// the log line and whether the dev score improved.
    pub fn fit<C>(&mut self, train: &[PreparedExample], dev: &[PreparedExample], max_epochs: usize, mut on_epoch: C) -> Result<()>
    where
        C: FnMut(&Trainer<F>, &EpochLog, bool) -> Result<()>,
    {
        while self.epoch < max_epochs {
            let start = Instant::now();
            let stats = self.train_epoch(train)?;
            self.epoch += 1;
            let dev_bleu4 = self.evaluate(dev)?.bleu4;
            self.adam.lr = self.scheduler.observe(dev_bleu4, self.adam.lr);
            let (improved, stop) = self.stopper.observe(self.epoch, dev_bleu4);
            let log = EpochLog {
                epoch: self.epoch,
                stage: self.stage,
                loss: stats.loss,
                xent: stats.xent,
                rl: stats.rl,
                dev_bleu4,
                best_dev_bleu4: self.stopper.best.unwrap_or(dev_bleu4),
                lr: self.adam.lr,
                tf_prob: stats.tf_prob,
                clamped: stats.clamped,
                steps: self.step,
            };
            log::info!(
                "epoch {} loss {:.4} dev BLEU-4 {:.4} lr {:.2e} ({:.1}s)",
                log.epoch,
                log.loss,
                log.dev_bleu4,
                log.lr,
                start.elapsed().as_secs_f64()
            );
            on_epoch(self, &log, improved)?;
            if stop {
                log::info!("early stop after epoch {}", self.epoch);
                break;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::toy_trainer as trainer;

    #[test]
    fn deterministic_under_fixed_seed() {
        let run = || {
            let (mut t, data) = trainer(Stage::Xent, 7);
            (0..3).map(|_| t.train_epoch(&data).unwrap().loss).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_bounds_gradient_norm() {
        let (mut t, data) = trainer(Stage::Xent, 1);
        t.config.train.grad_clip = 1e-3;
        let batch: Vec<&PreparedExample> = data.iter().collect();
        let (grads, s) = t.gradients(&batch).unwrap();
        assert!(s.grad_norm > 1e-3, "clip should be active");
        assert!(grads.global_norm() <= 1e-3 * (1.0 + 1e-4));
    }

    #[test]
    fn rl_stage_runs_and_reports_rl_loss() {
        let (mut t, data) = trainer(Stage::Rl, 2);
        let s = t.train_epoch(&data).unwrap();
        assert!(s.rl.is_some());
        assert!(s.loss.is_finite());
        assert!((t.adam.lr - t.config.train.rl_lr).abs() < 1e-15);
    }

    #[test]
    fn loss_decreases_on_toy_corpus() {
        let (mut t, data) = trainer(Stage::Xent, 3);
        t.config.train.embed_dropout = 0.0;
        t.config.train.rnn_dropout = 0.0;
        t.config.train.lr = 0.01;
        t.adam.lr = 0.01;
        let first = t.train_epoch(&data).unwrap().xent;
        let mut last = first;
        for _ in 0..30 {
            last = t.train_epoch(&data).unwrap().xent;
        }
        assert!(last < 0.7 * first, "{first} -> {last}");
    }
}
