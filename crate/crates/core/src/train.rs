//! The SEQ³ training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::lm::LmModel;
use crate::losses::{mean_bundle, LossValues};
use crate::model::{Draws, Seq3Config, Seq3Model};
use crate::optim::Adam;
use crate::tensor::Tensor;
use crate::vocab::IdfTable;

/// An encoded source sentence with the idf score of each token.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub ids: Vec<usize>,
    pub idf: Vec<f64>,
}

impl TrainExample {
    pub fn new(ids: Vec<usize>, idf: &IdfTable) -> Self {
        let scores = ids.iter().map(|&i| idf.get(i)).collect();
        TrainExample { ids, idf: scores }
    }
}

/// Builds examples from encoded sentences, dropping empty ones.
pub fn prepare_examples(corpus: &[Vec<usize>], idf: &IdfTable) -> Vec<TrainExample> {
    corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| TrainExample::new(s.clone(), idf))
        .collect()
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub l_r: f64,
    pub l_p: f64,
    pub l_t: f64,
    pub l_l: f64,
    pub total: f64,
    pub lr: f64,
    pub tokens: usize,
}

impl StepRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numeric record")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean of the batch totals seen during the epoch.
    pub mean_total: f64,
}

/// Model, optimizer and rng: everything a checkpoint must carry to resume.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Seq3Model,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: u64,
}

impl Trainer {
    /// Seeds one rng from `config.seed`, initializes the model from it and keeps
    /// drawing from the same stream during training.
    pub fn new(config: Seq3Config, vocab_size: usize, embeddings: Option<Tensor>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Seq3Model::new(config, vocab_size, embeddings, &mut rng)?;
        Ok(Self::from_parts(model, rng))
    }

    pub fn from_parts(model: Seq3Model, rng: ChaCha8Rng) -> Self {
        let adam = Adam::new(model.config.lr, &model.store);
        Trainer {
            model,
            adam,
            rng,
            epoch: 0,
            step: 0,
        }
    }

    /// Draws the randomness for one batch, in example order.
    pub fn sample_draws(&mut self, batch: &[&TrainExample]) -> Result<Vec<Draws>> {
        batch
            .iter()
            .map(|ex| Draws::sample(&self.model.config, &ex.ids, self.model.vocab_size, &mut self.rng))
            .collect()
    }

    /// Replaces the stored gradients with those of the batch-mean loss.
    pub fn backward_batch(
        &mut self,
        batch: &[&TrainExample],
        draws: &[Draws],
        lm: Option<&LmModel>,
    ) -> Result<LossValues> {
        if batch.is_empty() || batch.len() != draws.len() {
            return Err(Error::Contract(format!(
                "batch of {} examples with {} draws",
                batch.len(),
                draws.len()
            )));
        }
        let mut g = Graph::new();
        let bundles = batch
            .iter()
            .zip(draws)
            .map(|(ex, d)| {
                self.model
                    .forward_train(&mut g, &ex.ids, &ex.idf, lm, d)
                    .map(|f| f.losses)
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = mean_bundle(&mut g, &bundles)?;
        let values = mean.values(&g);
        if !values.total.is_finite() {
            return Err(Error::Diverged {
                batch: self.step as usize,
            });
        }
        self.model.store.zero_grad();
        g.backward(mean.total, &mut self.model.store)?;
        Ok(values)
    }

    /// Forward, backward and one Adam update on `batch`.
    pub fn train_step(&mut self, batch: &[&TrainExample], lm: Option<&LmModel>) -> Result<StepRecord> {
        let draws = self.sample_draws(batch)?;
        let losses = self.backward_batch(batch, &draws, lm)?;
        let clip = self.model.config.grad_clip;
        if clip > 0.0 {
            let norm = self.model.store.grad_norm();
            if norm > clip {
                self.model.store.scale_grads(clip / norm);
            }
        }
        self.adam.step(&mut self.model.store);
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            epoch: self.epoch + 1,
            l_r: losses.l_r,
            l_p: losses.l_p,
            l_t: losses.l_t,
            l_l: losses.l_l,
            total: losses.total,
            lr: self.adam.lr,
            tokens: batch.iter().map(|e| e.ids.len()).sum(),
        })
    }

    /// One shuffled pass over `data`; the last partial batch is kept.
    pub fn train_epoch<F>(&mut self, data: &[TrainExample], lm: Option<&LmModel>, mut on_step: F) -> Result<EpochRecord>
    where
        F: FnMut(&StepRecord) -> Result<()>,
    {
        if data.is_empty() {
            return Err(Error::Input("training corpus is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let started = Instant::now();
        let mut tokens = 0usize;
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.model.config.batch_size) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &data[i]).collect();
            let record = self.train_step(&batch, lm)?;
            sum += record.total;
            tokens += record.tokens;
            steps += 1;
            on_step(&record)?;
        }
        self.epoch += 1;
        let secs = started.elapsed().as_secs_f64().max(1e-9);
        let record = EpochRecord {
            epoch: self.epoch,
            steps,
            mean_total: sum / steps as f64,
        };
        log::info!(
            "epoch {} steps {} mean loss {:.4} ({:.0} tokens/s)",
            record.epoch,
            steps,
            record.mean_total,
            tokens as f64 / secs
        );
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are complete.
    pub fn run<F, E>(&mut self, data: &[TrainExample], lm: Option<&LmModel>, mut on_step: F, mut on_epoch: E) -> Result<Vec<EpochRecord>>
    where
        F: FnMut(&StepRecord) -> Result<()>,
        E: FnMut(&Trainer, &EpochRecord) -> Result<()>,
    {
        let mut history = Vec::new();
        while self.epoch < self.model.config.epochs {
            let record = self.train_epoch(data, lm, &mut on_step)?;
            on_epoch(self, &record)?;
            history.push(record);
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::RESERVED;

    fn config() -> Seq3Config {
        Seq3Config {
            emb_dim: 6,
            enc_hidden: 4,
            dec_hidden: 5,
            batch_size: 2,
            epochs: 2,
            seed: 5,
            ..Seq3Config::default()
        }
    }

    fn data() -> Vec<TrainExample> {
        let idf = IdfTable::uniform(24, 1.0);
        let corpus: Vec<Vec<usize>> = (0..5)
            .map(|i| (0..6 + i).map(|j| RESERVED + (i + j) % 10).collect())
            .collect();
        prepare_examples(&corpus, &idf)
    }

    #[test]
    fn epochs_take_ceil_batches_steps() {
        let mut t = Trainer::new(config(), 24, None).unwrap();
        let mut seen = Vec::new();
        let hist = t
            .run(&data(), None, |r| {
                seen.push(r.step);
                Ok(())
            }, |_, _| Ok(()))
            .unwrap();
        assert_eq!(hist.len(), 2);
        assert_eq!(t.step, 6);
        assert_eq!(seen, (1..=6).collect::<Vec<_>>());
        assert_eq!(t.adam.step, 6);
    }

    #[test]
    fn batch_of_two_is_mean_of_singles() {
        let data = data();
        let mut t = Trainer::new(config(), 24, None).unwrap();
        let pair = [&data[0], &data[3]];
        let draws = t.sample_draws(&pair).unwrap();
        t.backward_batch(&pair, &draws, None).unwrap();
        let joint = t.model.store.clone();
        t.backward_batch(&pair[..1], &draws[..1], None).unwrap();
        let first = t.model.store.clone();
        t.backward_batch(&pair[1..], &draws[1..], None).unwrap();
        for (id, p) in joint.iter() {
            let a = p.grad.as_ref().map(|g| g.data().to_vec()).unwrap_or_default();
            let b = first.grad(id).map(|g| g.data().to_vec());
            let c = t.model.store.grad(id).map(|g| g.data().to_vec());
            for i in 0..a.len() {
                let expect = 0.5 * (b.as_ref().map_or(0.0, |v| v[i]) + c.as_ref().map_or(0.0, |v| v[i]));
                assert!((a[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()), "{}", p.name);
            }
        }
    }

    #[test]
    fn same_seed_same_log() {
        let run = || {
            let mut t = Trainer::new(config(), 24, None).unwrap();
            let mut lines = Vec::new();
            t.run(&data(), None, |r| {
                lines.push(r.to_json());
                Ok(())
            }, |_, _| Ok(()))
            .unwrap();
            lines
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn record_is_json_line() {
        let mut t = Trainer::new(config(), 24, None).unwrap();
        let d = data();
        let r = t.train_step(&[&d[0]], None).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["step", "epoch", "l_r", "l_p", "l_t", "l_l", "total", "lr", "tokens"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
