//! Losses, schedules and training configuration.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Scalar, Var};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Dataset presets for the hyperparameters that differ between the two
/// benchmark corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetPreset {
    Wq,
    Pq,
}

impl fmt::Display for DatasetPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetPreset::Wq => "wq",
            DatasetPreset::Pq => "pq",
        })
    }
}

impl std::str::FromStr for DatasetPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wq" => Ok(DatasetPreset::Wq),
            "pq" => Ok(DatasetPreset::Pq),
            other => Err(Error::Config(format!("unknown dataset preset {other:?} (expected wq or pq)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub rl_lr: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub label_smoothing: f64,
    pub embed_dropout: f64,
    pub rnn_dropout: f64,
    pub tf_init: f64,
    pub tf_decay: f64,
    pub gamma: f64,
    pub reward_bleu_weight: f64,
    pub reward_rouge_weight: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub beam: usize,
    pub max_decode_len: usize,
    pub max_epochs: usize,
    pub min_freq: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            rl_lr: 1e-5,
            batch_size: 30,
            grad_clip: 10.0,
            label_smoothing: 0.2,
            embed_dropout: 0.4,
            rnn_dropout: 0.3,
            tf_init: 0.8,
            tf_decay: 0.9999,
            gamma: 0.02,
            reward_bleu_weight: 1.0,
            reward_rouge_weight: 0.02,
            lr_factor: 0.5,
            lr_patience: 3,
            early_stop_patience: 10,
            beam: 5,
            max_decode_len: 40,
            max_epochs: 100,
            min_freq: 3,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, m: &str| if ok { Ok(()) } else { Err(Error::Config(m.to_string())) };
        check(self.lr > 0.0 && self.rl_lr > 0.0, "learning rates must be positive")?;
        check(self.batch_size > 0, "batch_size must be positive")?;
        check(self.grad_clip > 0.0, "grad_clip must be positive")?;
        check((0.0..1.0).contains(&self.label_smoothing), "label_smoothing must be in [0, 1)")?;
        check((0.0..1.0).contains(&self.embed_dropout), "embed_dropout must be in [0, 1)")?;
        check((0.0..1.0).contains(&self.rnn_dropout), "rnn_dropout must be in [0, 1)")?;
        check((0.0..=1.0).contains(&self.tf_init), "tf_init must be in [0, 1]")?;
        check(self.tf_decay > 0.0 && self.tf_decay <= 1.0, "tf_decay must be in (0, 1]")?;
        check((0.0..=1.0).contains(&self.gamma), "gamma must be in [0, 1]")?;
        check(self.lr_factor > 0.0 && self.lr_factor < 1.0, "lr_factor must be in (0, 1)")?;
        check(self.beam > 0, "beam must be positive")?;
        check(self.max_decode_len > 0, "max_decode_len must be positive")?;
        check(self.min_freq > 0, "min_freq must be positive")
    }
}

/// Model and optimization settings; everything a checkpoint must agree on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn preset(dataset: DatasetPreset) -> Self {
        let mut c = Config::default();
        c.apply_preset(dataset);
        c
    }

    pub fn apply_preset(&mut self, dataset: DatasetPreset) {
        match dataset {
            DatasetPreset::Wq => {
                self.model.markup_dim = 32;
                self.train.gamma = 0.02;
                self.train.rl_lr = 1e-5;
            }
            DatasetPreset::Pq => {
                self.model.markup_dim = 24;
                self.train.gamma = 0.07;
                self.train.rl_lr = 2e-5;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// SHA-256 of the model section; checkpoints and predictions made
    /// under a different architecture are rejected by comparing it.
    pub fn model_hash(&self) -> String {
        let json = serde_json::to_string(&self.model).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// `p = init · decay^step`
pub fn teacher_forcing_prob(step: u64, init: f64, decay: f64) -> f64 {
    init * decay.powf(step as f64)
}

/// Cross-entropy against label-smoothed targets.
///
/// Row `b` of step `t` has target `q = (1 − ε) · onehot(gold) + ε · uniform`
/// over the entries of `valid[b]`; the loss is the mean over that row's
/// target steps, then the mean over rows. Returns the loss and the number
/// of gold entries whose probability was zero (their log is clamped).
pub fn xent_loss<F: Scalar>(
    g: &mut Graph<'_, F>,
    dists: &[Var],
    targets: &[Vec<usize>],
    valid: &[Vec<bool>],
    smoothing: f64,
) -> (Var, usize) {
    let rows = targets.len();
    assert_eq!(valid.len(), rows);
    let mut total: Option<Var> = None;
    let mut clamped = 0;
    for (t, &dist) in dists.iter().enumerate() {
        let (r, cols) = g.shape(dist);
        assert_eq!(r, rows, "one distribution row per target");
        let mut w = Array2::<F>::zeros((rows, cols));
        let mut any = false;
        for (b, target) in targets.iter().enumerate() {
            let Some(&gold) = target.get(t) else { continue };
            any = true;
            let scale = 1.0 / (target.len() as f64 * rows as f64);
            if g.value(dist)[(b, gold)] <= F::zero() {
                clamped += 1;
            }
            w[(b, gold)] -= F::of((1.0 - smoothing) * scale);
            if smoothing > 0.0 {
                let n_valid = valid[b].iter().filter(|&&v| v).count() as f64;
                let share = F::of(smoothing * scale / n_valid);
                for (c, _) in valid[b].iter().enumerate().filter(|(_, &v)| v) {
                    w[(b, c)] -= share;
                }
            }
        }
        if !any {
            continue;
        }
        let logp = g.log(dist);
        let term = g.weighted_sum(logp, w);
        total = Some(match total {
            Some(acc) => g.add(acc, term),
            None => term,
        });
    }
    let loss = total.unwrap_or_else(|| g.zeros((1, 1)));
    (loss, clamped)
}

/// Self-critical policy-gradient loss
/// `mean_b (r̂_b − r_b) · Σ_t log P(y_t^s)`, where `dists` come from
/// feeding the sampled sequences back in. Rewards enter as constants.
pub fn scst_loss<F: Scalar>(
    g: &mut Graph<'_, F>,
    dists: &[Var],
    sampled: &[Vec<usize>],
    sample_reward: &[f64],
    baseline_reward: &[f64],
) -> Var {
    let rows = sampled.len();
    let mut total: Option<Var> = None;
    for (t, &dist) in dists.iter().enumerate() {
        let cols = g.shape(dist).1;
        let mut w = Array2::<F>::zeros((rows, cols));
        let mut any = false;
        for (b, seq) in sampled.iter().enumerate() {
            if let Some(&y) = seq.get(t) {
                w[(b, y)] = F::of((baseline_reward[b] - sample_reward[b]) / rows as f64);
                any = true;
            }
        }
        if !any {
            continue;
        }
        let logp = g.log(dist);
        let term = g.weighted_sum(logp, w);
        total = Some(match total {
            Some(acc) => g.add(acc, term),
            None => term,
        });
    }
    total.unwrap_or_else(|| g.zeros((1, 1)))
}

/// `γ · L_rl + (1 − γ) · L_lm`
pub fn hybrid_loss<F: Scalar>(g: &mut Graph<'_, F>, l_rl: Var, l_lm: Var, gamma: f64) -> Var {
    let a = g.scale(l_rl, F::of(gamma));
    let b = g.scale(l_lm, F::of(1.0 - gamma));
    g.add(a, b)
}

/// Multiplies the learning rate by `factor` whenever the tracked score
/// has not improved for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            factor,
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Returns the new learning rate.
    pub fn observe(&mut self, score: f64, lr: f64) -> f64 {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}

/// Signals a stop after `patience` consecutive epochs without improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Records an epoch's score; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, score: f64) -> (bool, bool) {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            return (true, false);
        }
        self.bad_epochs += 1;
        (false, self.bad_epochs >= self.patience)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use crate::testutil::max_grad_error;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_loss(dist: Array2<f64>, targets: &[Vec<usize>], valid: &[Vec<bool>], eps: f64) -> f64 {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let d = g.constant(dist);
        let (l, _) = xent_loss(&mut g, &[d], targets, valid, eps);
        g.scalar(l)
    }

    #[test]
    fn xent_fixtures() {
        let all = vec![vec![true; 3]];
        assert_eq!(constant_loss(array![[0.0, 1.0, 0.0]], &[vec![1]], &all, 0.0), 0.0);
        let u = constant_loss(array![[0.25, 0.25, 0.25, 0.25]], &[vec![2]], &[vec![true; 4]], 0.0);
        assert!((u - 4f64.ln()).abs() < 1e-12);
        let l = constant_loss(array![[0.7, 0.2, 0.1]], &[vec![0]], &all, 0.2);
        let want = -((0.8 + 0.2 / 3.0) * 0.7f64.ln() + 0.2 / 3.0 * (0.2f64.ln() + 0.1f64.ln()));
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn xent_averages_steps_then_rows() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let d1 = g.constant(array![[0.5, 0.5], [0.25, 0.75]]);
        let d2 = g.constant(array![[0.9, 0.1], [0.5, 0.5]]);
        let valid = vec![vec![true; 2]; 2];
        let (l, clamped) = xent_loss(&mut g, &[d1, d2], &[vec![0, 0], vec![1]], &valid, 0.0);
        let want = (-(0.5f64.ln() + 0.9f64.ln()) / 2.0 - 0.75f64.ln()) / 2.0;
        assert!((g.scalar(l) - want).abs() < 1e-12);
        assert_eq!(clamped, 0);
    }

    #[test]
    fn zero_gold_probability_is_clamped_and_flagged() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let d = g.constant(array![[1.0, 0.0]]);
        let (l, clamped) = xent_loss(&mut g, &[d], &[vec![1]], &[vec![true, true]], 0.0);
        assert_eq!(clamped, 1);
        assert_eq!(g.scalar(l), 1e9);
    }

    #[test]
    fn teacher_forcing_schedule() {
        assert_eq!(teacher_forcing_prob(0, 0.8, 0.9999), 0.8);
        assert!((teacher_forcing_prob(10_000, 0.8, 0.9999) - 0.2943).abs() < 1e-4);
        assert!(teacher_forcing_prob(10_000_000, 0.8, 0.9999) < 1e-100);
    }

    #[test]
    fn hybrid_arithmetic() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let rl = g.constant(array![[2.0]]);
        let lm = g.constant(array![[3.0]]);
        let h = hybrid_loss(&mut g, rl, lm, 0.02);
        assert!((g.scalar(h) - 2.98).abs() < 1e-12);
        let h0 = hybrid_loss(&mut g, rl, lm, 0.0);
        assert_eq!(g.scalar(h0), 3.0);
        let h1 = hybrid_loss(&mut g, rl, lm, 1.0);
        assert_eq!(g.scalar(h1), 2.0);
    }

    fn softmax_param(store: &mut ParamStore<f64>, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> crate::autodiff::ParamId {
        store.add_uniform(format!("logits{}", store.len()), (rows, cols), 2.0, rng)
    }

    #[test]
    fn scst_zero_when_rewards_tie_and_sign_follows_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let p = softmax_param(&mut store, 2, 5, &mut rng);
        let sampled = vec![vec![1, 3, 2], vec![4, 2]];
        let value = |r: [f64; 2], b: [f64; 2]| {
            let mut g = Graph::inference(&store);
            let z = g.param(p);
            let d = g.softmax_rows(z);
            let l = scst_loss(&mut g, &[d, d, d], &sampled, &r, &b);
            g.scalar(l)
        };
        assert_eq!(value([0.3, 0.7], [0.3, 0.7]), 0.0);
        assert!(value([0.9, 0.9], [0.1, 0.1]) > 0.0);
        assert!(value([0.1, 0.1], [0.9, 0.9]) < 0.0);
    }

    #[test]
    fn scst_gradient_with_frozen_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let p = softmax_param(&mut store, 3, 6, &mut rng);
        let q = softmax_param(&mut store, 3, 6, &mut rng);
        let sampled = vec![vec![0, 5, 2], vec![3, 2], vec![1]];
        let (r, b): (Vec<f64>, Vec<f64>) = (0..3).map(|_| (rng.random::<f64>(), rng.random::<f64>())).unzip();
        let err = max_grad_error(&store, 18, |g| {
            let z1 = g.param(p);
            let z2 = g.param(q);
            let d1 = g.softmax_rows(z1);
            let d2 = g.softmax_rows(z2);
            let s = g.add(z1, z2);
            let d3 = g.softmax_rows(s);
            scst_loss(g, &[d1, d2, d3], &sampled, &r, &b)
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn xent_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let p = softmax_param(&mut store, 2, 4, &mut rng);
        let valid = vec![vec![true, true, false, true], vec![true; 4]];
        let err = max_grad_error(&store, 8, |g| {
            let z = g.param(p);
            let d = g.softmax_rows(z);
            let z2 = g.scale(z, 0.5);
            let d2 = g.softmax_rows(z2);
            xent_loss(g, &[d, d2], &[vec![1, 3], vec![2]], &valid, 0.2).0
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn plateau_halves_twice() {
        let mut s = PlateauScheduler::new(0.5, 3);
        let mut lr = 0.001;
        lr = s.observe(0.5, lr);
        for _ in 0..6 {
            lr = s.observe(0.4, lr);
        }
        assert!((lr - 0.00025).abs() < 1e-15);
    }

    #[test]
    fn early_stop_after_patience() {
        let mut e = EarlyStopping::new(10);
        assert_eq!(e.observe(1, 0.5), (true, false));
        for epoch in 2..11 {
            assert_eq!(e.observe(epoch, 0.5), (false, false), "epoch {epoch}");
        }
        assert_eq!(e.observe(11, 0.1), (false, true));
        assert_eq!(e.best_epoch, 1);
    }

    #[test]
    fn presets_and_hash() {
        let wq = Config::preset(DatasetPreset::Wq);
        let pq = Config::preset(DatasetPreset::Pq);
        assert_eq!((wq.model.markup_dim, pq.model.markup_dim), (32, 24));
        assert_eq!((wq.train.gamma, pq.train.gamma), (0.02, 0.07));
        assert_ne!(wq.model_hash(), pq.model_hash());
        let mut other = wq.clone();
        other.train.lr = 0.5;
        assert_eq!(wq.model_hash(), other.model_hash());
        assert!("PQ".parse::<DatasetPreset>().is_ok());
        assert!("xx".parse::<DatasetPreset>().is_err());
    }
}
