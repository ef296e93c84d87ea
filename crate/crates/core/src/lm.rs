//! Recurrent language model used as a frozen prior over summaries.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{log_softmax_values, Graph, Var};
use crate::coders::LstmCell;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::vocab::{EOS, SOS};

#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    pub layers: usize,
    pub hidden: usize,
    pub emb_dim: usize,
    pub emb_dropout: f64,
    pub rnn_dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    pub decay_every: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            layers: 2,
            hidden: 1024,
            emb_dim: 256,
            emb_dropout: 0.2,
            rnn_dropout: 0.5,
            epochs: 30,
            batch_size: 128,
            lr: 0.001,
            gamma: 0.5,
            decay_every: 10,
        }
    }
}

impl LmConfig {
    /// Small profile for CPU test runs.
    pub fn desk() -> Self {
        LmConfig {
            layers: 2,
            hidden: 64,
            emb_dim: 32,
            epochs: 5,
            batch_size: 32,
            lr: 0.003,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates_ok = (0.0..1.0).contains(&self.emb_dropout)
            && (0.0..1.0).contains(&self.rnn_dropout)
            && self.gamma > 0.0
            && self.gamma <= 1.0;
        if !rates_ok {
            return Err(Error::Config("lm dropout rates must lie in [0, 1) and gamma in (0, 1]".into()));
        }
        if self.layers == 0 || self.hidden == 0 || self.emb_dim == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::Config("lm sizes must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lm.lr must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used during 0-based `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.gamma.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Clone, Debug)]
pub struct LmModel {
    pub config: LmConfig,
    pub store: ParamStore,
    pub embedding: ParamId,
    pub cells: Vec<LstmCell>,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub vocab_size: usize,
    frozen: bool,
}

impl LmModel {
    pub fn new<R: Rng + ?Sized>(config: LmConfig, vocab_size: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let emb_data = (0..vocab_size * config.emb_dim)
            .map(|_| rng.gen_range(-0.1..=0.1))
            .collect();
        let embedding = store.add("lm.embedding", Tensor::from_parts(vec![vocab_size, config.emb_dim], emb_data));
        let cells = (0..config.layers)
            .map(|l| {
                let inp = if l == 0 { config.emb_dim } else { config.hidden };
                LstmCell::new(&mut store, &format!("lm.l{l}"), inp, config.hidden, rng)
            })
            .collect();
        let bound = 1.0 / (config.hidden as f64).sqrt();
        let w = (0..vocab_size * config.hidden)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let out_w = store.add("lm.out.weight", Tensor::from_parts(vec![vocab_size, config.hidden], w));
        let out_b = store.add("lm.out.bias", Tensor::zeros(&[vocab_size]));
        LmModel {
            config,
            store,
            embedding,
            cells,
            out_w,
            out_b,
            vocab_size,
            frozen: false,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks every parameter non-trainable; the model becomes read-only.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.store.set_trainable(false);
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
        self.store.set_trainable(true);
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Index {
                what: "lm token",
                index: bad,
                size: self.vocab_size,
            });
        }
        Ok(())
    }

    /// Logits after each input position. Dropout is applied only when `rng` is given.
    fn run(&self, g: &mut Graph, ids: &[usize], mut rng: Option<&mut ChaCha8Rng>) -> Result<Vec<Var>> {
        let emb = g.param(&self.store, self.embedding);
        let w = g.param(&self.store, self.out_w);
        let b = g.param(&self.store, self.out_b);
        let h = self.config.hidden;
        let mut state: Vec<(Var, Var)> = (0..self.cells.len())
            .map(|_| {
                (
                    g.constant(Tensor::zeros(&[h])),
                    g.constant(Tensor::zeros(&[h])),
                )
            })
            .collect();
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let mut x = g.row(emb, id)?;
            if let Some(r) = rng.as_deref_mut() {
                x = g.dropout(x, self.config.emb_dropout, r)?;
            }
            for (l, cell) in self.cells.iter().enumerate() {
                let (hn, cn) = cell.step(g, &self.store, x, state[l].0, state[l].1)?;
                state[l] = (hn, cn);
                x = hn;
                if let Some(r) = rng.as_deref_mut() {
                    x = g.dropout(x, self.config.rnn_dropout, r)?;
                }
            }
            let logits = g.matmul(w, x)?;
            out.push(g.add(logits, b)?);
        }
        Ok(out)
    }

    /// Next-token log-distribution after `prefix` (which must start with SOS).
    pub fn lm_distribution(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.first() != Some(&SOS) {
            return Err(Error::Contract("language-model prefix must start with SOS".into()));
        }
        Ok(self.step_log_probs(prefix)?.pop().expect("non-empty prefix"))
    }

    /// Log-distributions after every prefix `ids[..=i]`, without dropout.
    pub fn step_log_probs(&self, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_ids(ids)?;
        let mut g = Graph::new();
        let logits = self.run(&mut g, ids, None)?;
        Ok(logits
            .into_iter()
            .map(|l| log_softmax_values(g.value(l).data()))
            .collect())
    }

    /// Summed next-token cross-entropy of `SOS x EOS` and its token count.
    fn sentence_loss(&self, g: &mut Graph, sentence: &[usize], rng: Option<&mut ChaCha8Rng>) -> Result<(Var, usize)> {
        let mut input = Vec::with_capacity(sentence.len() + 1);
        input.push(SOS);
        input.extend_from_slice(sentence);
        let mut target = sentence.to_vec();
        target.push(EOS);
        let logits = self.run(g, &input, rng)?;
        let terms = logits
            .iter()
            .zip(&target)
            .map(|(&l, &t)| g.cross_entropy(l, t))
            .collect::<Result<Vec<_>>>()?;
        Ok((g.add_n(&terms)?, target.len()))
    }

    /// Per-token perplexity without dropout.
    pub fn perplexity(&self, corpus: &[Vec<usize>]) -> Result<f64> {
        let mut nll = 0.0;
        let mut tokens = 0;
        for s in corpus {
            self.check_ids(s)?;
            let mut g = Graph::new();
            let (loss, n) = self.sentence_loss(&mut g, s, None)?;
            nll += g.scalar(loss);
            tokens += n;
        }
        Ok((nll / tokens as f64).exp())
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct LmEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub perplexity: f64,
    pub steps: usize,
}

/// Resumable training state for the language model.
#[derive(Clone, Debug)]
pub struct LmTrainer {
    pub model: LmModel,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<LmEpoch>,
}

impl LmTrainer {
    pub fn new(config: LmConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = LmModel::new(config.clone(), vocab_size, &mut rng);
        let adam = Adam::new(config.lr, &model.store);
        Ok(LmTrainer {
            model,
            adam,
            rng,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// One pass over `corpus` in shuffled batches; the last partial batch is kept.
    pub fn train_epoch(&mut self, corpus: &[Vec<usize>]) -> Result<LmEpoch> {
        if self.model.is_frozen() {
            return Err(Error::Contract("cannot train a frozen language model".into()));
        }
        if corpus.is_empty() {
            return Err(Error::Input("language-model corpus is empty".into()));
        }
        let lr = self.model.config.lr_at_epoch(self.epoch);
        self.adam.lr = lr;
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut self.rng);
        let mut nll = 0.0;
        let mut tokens = 0usize;
        let mut steps = 0;
        for batch in order.chunks(self.model.config.batch_size) {
            let mut g = Graph::new();
            let mut terms = Vec::with_capacity(batch.len());
            let mut batch_tokens = 0;
            for &i in batch {
                self.model.check_ids(&corpus[i])?;
                let (loss, n) = self.model.sentence_loss(&mut g, &corpus[i], Some(&mut self.rng))?;
                terms.push(loss);
                batch_tokens += n;
            }
            let total = g.add_n(&terms)?;
            nll += g.scalar(total);
            tokens += batch_tokens;
            let loss = g.scale(total, 1.0 / batch_tokens as f64);
            if !g.scalar(loss).is_finite() {
                return Err(Error::Diverged { batch: steps });
            }
            self.model.store.zero_grad();
            g.backward(loss, &mut self.model.store)?;
            self.adam.step(&mut self.model.store);
            steps += 1;
        }
        self.epoch += 1;
        let record = LmEpoch {
            epoch: self.epoch,
            lr,
            perplexity: (nll / tokens as f64).exp(),
            steps,
        };
        log::info!(
            "lm epoch {} lr {} perplexity {:.4}",
            record.epoch,
            record.lr,
            record.perplexity
        );
        self.history.push(record.clone());
        Ok(record)
    }

    /// Trains up to `config.epochs` total epochs.
    pub fn run(&mut self, corpus: &[Vec<usize>]) -> Result<()> {
        while self.epoch < self.model.config.epochs {
            self.train_epoch(corpus)?;
        }
        Ok(())
    }

    pub fn into_frozen(mut self) -> LmModel {
        self.model.freeze();
        self.model
    }
}

/// Trains a language model on encoded source sentences and returns it frozen.
pub fn train_lm(corpus: &[Vec<usize>], config: LmConfig, vocab_size: usize, seed: u64) -> Result<(LmModel, Vec<LmEpoch>)> {
    let mut trainer = LmTrainer::new(config, vocab_size, seed)?;
    trainer.run(corpus)?;
    let history = trainer.history.clone();
    Ok((trainer.into_frozen(), history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LmConfig {
        LmConfig {
            layers: 1,
            hidden: 8,
            emb_dim: 4,
            epochs: 1,
            batch_size: 3,
            ..LmConfig::desk()
        }
    }

    #[test]
    fn zero_weights_give_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lm = LmModel::new(tiny(), 9, &mut rng);
        for id in lm.store.ids().collect::<Vec<_>>() {
            lm.store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let lp = lm.lm_distribution(&[SOS, 5, 6]).unwrap();
        for v in lp {
            assert!((v + 9f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn distributions_normalize_and_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lm = LmModel::new(tiny(), 12, &mut rng);
        lm.freeze();
        for _ in 0..20 {
            let mut prefix = vec![SOS];
            prefix.extend((0..rng.gen_range(0..6)).map(|_| rng.gen_range(0..12)));
            let a = lm.lm_distribution(&prefix).unwrap();
            let s: f64 = a.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert_eq!(a, lm.lm_distribution(&prefix).unwrap());
        }
    }

    #[test]
    fn bad_prefix_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lm = LmModel::new(tiny(), 6, &mut rng);
        assert!(matches!(lm.lm_distribution(&[SOS, 6]), Err(Error::Index { .. })));
        assert!(matches!(lm.lm_distribution(&[4]), Err(Error::Contract(_))));
    }

    #[test]
    fn lr_schedule_halves_every_ten_epochs() {
        let c = LmConfig::default();
        assert_eq!(c.lr_at_epoch(0), 0.001);
        assert_eq!(c.lr_at_epoch(9), 0.001);
        assert_eq!(c.lr_at_epoch(10), 0.0005);
        assert_eq!(c.lr_at_epoch(20), 0.00025);
    }

    #[test]
    fn last_partial_batch_is_trained() {
        let corpus: Vec<Vec<usize>> = (0..7).map(|i| vec![4 + i % 3, 5]).collect();
        let mut t = LmTrainer::new(tiny(), 8, 3).unwrap();
        let rec = t.train_epoch(&corpus).unwrap();
        assert_eq!(rec.steps, 3);
        assert_eq!(t.adam.step, 3);
    }

    #[test]
    fn frozen_model_refuses_training() {
        let mut t = LmTrainer::new(tiny(), 8, 3).unwrap();
        t.model.freeze();
        assert!(t.train_epoch(&[vec![4]]).is_err());
    }
}
