//! The full compressor → words → reconstructor pipeline.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::coders::{AttentionDecoder, BiEncoder, EncoderOutput};
use crate::error::{Error, Result};
use crate::lm::LmModel;
use crate::losses::{
    length_penalty, lm_prior_loss, reconstruction_loss, topic_loss, total_loss, LossBundle, LossWeights,
};
use crate::sampling::{
    argmax, gumbel_noise, inference_length, learned_temperature, sample_target_length, soft_argmax_embedding,
    SamplingConfig, SamplingMode, SummarySample, SummaryStep, Temperature,
};
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::vocab::{uniform_embeddings, EOS, SOS, UNK};

#[derive(Clone, Debug, PartialEq)]
pub struct Seq3Config {
    pub emb_dim: usize,
    /// Half-width of the uniform init used when no pretrained vectors are given.
    pub emb_init: f64,
    /// Keep the embedding table (and so the tied output projections) fixed.
    pub freeze_embeddings: bool,
    /// Let the topic loss train the compressor only, never the embeddings.
    pub topic_detach: bool,
    /// Hidden size per direction of the shared encoder.
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub dec_hidden: usize,
    pub dec_layers: usize,
    pub sampling: SamplingConfig,
    pub word_dropout: f64,
    pub weights: LossWeights,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Compressor steps past `M` that feed the length penalty.
    pub extra_steps: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for Seq3Config {
    fn default() -> Self {
        Seq3Config {
            emb_dim: 100,
            emb_init: 0.05,
            freeze_embeddings: false,
            topic_detach: false,
            enc_hidden: 300,
            enc_layers: 2,
            dec_hidden: 300,
            dec_layers: 2,
            sampling: SamplingConfig::default(),
            word_dropout: 0.5,
            weights: LossWeights::default(),
            lr: 0.001,
            batch_size: 128,
            epochs: 5,
            extra_steps: 2,
            grad_clip: 0.0,
            seed: 0,
        }
    }
}

impl Seq3Config {
    /// Small sizes that train on one core in minutes on the synthetic corpus.
    /// Random embeddings start wide: with tiny rows the compressor's logits
    /// sit far below the Gumbel noise and its samples carry no signal.
    /// Left free to move them, the topic loss pulls all rows together
    /// instead of picking topic words, hence the detach and the heavy weight.
    pub fn desk() -> Self {
        Seq3Config {
            emb_dim: 32,
            emb_init: 1.0,
            enc_hidden: 64,
            enc_layers: 2,
            dec_hidden: 64,
            dec_layers: 2,
            lr: 0.003,
            batch_size: 16,
            grad_clip: 1.0,
            topic_detach: true,
            sampling: SamplingConfig {
                tau: 1.0,
                ..SamplingConfig::default()
            },
            weights: LossWeights {
                topic: 60.0,
                ..LossWeights::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("model.emb_dim", self.emb_dim),
            ("model.enc_hidden", self.enc_hidden),
            ("model.enc_layers", self.enc_layers),
            ("model.dec_hidden", self.dec_hidden),
            ("model.dec_layers", self.dec_layers),
            ("train.batch_size", self.batch_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.emb_init > 0.0 && self.emb_init.is_finite()) {
            return Err(Error::Config(format!("model.emb_init must be positive, got {}", self.emb_init)));
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return Err(Error::Config(format!(
                "model.word_dropout must lie in [0, 1), got {}",
                self.word_dropout
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config(format!("train.grad_clip must be nonnegative, got {}", self.grad_clip)));
        }
        self.sampling.validate()?;
        self.weights.validate()
    }

    /// Analytic parameter count for a vocabulary of `vocab` ids.
    pub fn num_params(&self, vocab: usize) -> usize {
        let enc_dim = 2 * self.enc_hidden;
        let decoder = AttentionDecoder::num_params(vocab, self.emb_dim, enc_dim, self.dec_hidden, self.dec_layers);
        let tau = if self.sampling.learned_tau { self.dec_hidden } else { 0 };
        vocab * self.emb_dim + BiEncoder::num_params(self.emb_dim, self.enc_hidden, self.enc_layers) + 2 * decoder + tau
    }
}

/// Replaces every token except SOS by UNK with probability `rate`.
pub fn word_dropout<R: Rng + ?Sized>(ids: &[usize], rate: f64, rng: &mut R) -> Vec<usize> {
    ids.iter()
        .map(|&id| {
            if id != SOS && rate > 0.0 && rng.gen::<f64>() < rate {
                UNK
            } else {
                id
            }
        })
        .collect()
}

/// Every random quantity of one training forward pass, drawn up front so a
/// pass can be replayed exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Draws {
    pub target_len: usize,
    /// Gumbel noise for each of the `M + E` compressor steps (empty without noise).
    pub gumbel: Vec<Vec<f64>>,
    /// Reconstructor teacher-forcing inputs `SOS x_1 .. x_{N-1}` after word dropout.
    pub recon_inputs: Vec<usize>,
}

impl Draws {
    pub fn sample<R: Rng + ?Sized>(config: &Seq3Config, source: &[usize], vocab: usize, rng: &mut R) -> Result<Self> {
        if source.is_empty() {
            return Err(Error::Input("cannot compress an empty sentence".into()));
        }
        let s = &config.sampling;
        let target_len = sample_target_length(source.len(), s.alpha, s.beta, s.min_len, rng);
        let noisy = matches!(s.mode, SamplingMode::GumbelRelaxed | SamplingMode::GumbelSt);
        let gumbel = if noisy {
            (0..target_len + config.extra_steps)
                .map(|_| gumbel_noise(vocab, rng))
                .collect()
        } else {
            Vec::new()
        };
        let mut teacher = Vec::with_capacity(source.len());
        teacher.push(SOS);
        teacher.extend_from_slice(&source[..source.len() - 1]);
        let recon_inputs = word_dropout(&teacher, config.word_dropout, rng);
        Ok(Draws {
            target_len,
            gumbel,
            recon_inputs,
        })
    }

    /// Noise-free draws: fixed `M`, no Gumbel noise, no dropout.
    pub fn deterministic(source: &[usize], target_len: usize) -> Self {
        let mut recon_inputs = vec![SOS];
        recon_inputs.extend_from_slice(&source[..source.len().saturating_sub(1)]);
        Draws {
            target_len,
            gumbel: Vec::new(),
            recon_inputs,
        }
    }
}

/// Result of one training forward pass.
#[derive(Debug)]
pub struct TrainForward {
    pub summary: SummarySample,
    pub recon_logits: Vec<Var>,
    pub losses: LossBundle,
}

#[derive(Clone, Debug)]
pub struct Seq3Model {
    pub config: Seq3Config,
    pub store: ParamStore,
    pub vocab_size: usize,
    pub embedding: ParamId,
    pub encoder: BiEncoder,
    pub compressor: AttentionDecoder,
    pub reconstructor: AttentionDecoder,
    pub w_tau: Option<ParamId>,
}

impl Seq3Model {
    /// Builds a model; `embeddings` overrides the random initial embedding matrix.
    pub fn new<R: Rng + ?Sized>(
        config: Seq3Config,
        vocab_size: usize,
        embeddings: Option<Tensor>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let emb = match embeddings {
            Some(t) => {
                if t.shape() != [vocab_size, config.emb_dim] {
                    return Err(Error::Dimension {
                        op: "Seq3Model::new",
                        left: t.shape().to_vec(),
                        right: vec![vocab_size, config.emb_dim],
                    });
                }
                t
            }
            None => {
                uniform_embeddings(vocab_size, config.emb_dim, config.emb_init, rng)
            }
        };
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", emb);
        store.get_mut(embedding).trainable = !config.freeze_embeddings;
        let encoder = BiEncoder::new(&mut store, "encoder", config.emb_dim, config.enc_hidden, config.enc_layers, rng);
        let enc_dim = encoder.output_dim();
        let decoder = |store: &mut ParamStore, name: &str, rng: &mut R| {
            AttentionDecoder::new(
                store,
                name,
                embedding,
                config.emb_dim,
                enc_dim,
                config.dec_hidden,
                config.dec_layers,
                rng,
            )
        };
        let compressor = decoder(&mut store, "compressor", rng);
        let reconstructor = decoder(&mut store, "reconstructor", rng);
        let w_tau = config
            .sampling
            .learned_tau
            .then(|| store.add("compressor.w_tau", Tensor::zeros(&[config.dec_hidden])));
        let expected = config.num_params(vocab_size);
        assert_eq!(store.num_scalars(), expected, "parameter count disagrees with the config");
        Ok(Seq3Model {
            config,
            store,
            vocab_size,
            embedding,
            encoder,
            compressor,
            reconstructor,
            w_tau,
        })
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Input("cannot compress an empty sentence".into()));
        }
        match ids.iter().find(|&&i| i >= self.vocab_size) {
            Some(&bad) => Err(Error::Index {
                what: "token id",
                index: bad,
                size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn embed(&self, g: &mut Graph, ids: &[usize]) -> Result<Vec<Var>> {
        let table = g.param(&self.store, self.embedding);
        ids.iter().map(|&i| g.row(table, i)).collect()
    }

    /// Runs the compressor for `M + extra` steps, feeding each sampled embedding forward.
    fn run_compressor(
        &self,
        g: &mut Graph,
        enc: &EncoderOutput,
        source_len: usize,
        target_len: usize,
        extra: usize,
        gumbel: &[Vec<f64>],
        mode: SamplingMode,
    ) -> Result<SummarySample> {
        let s = &self.config.sampling;
        let table = g.param(&self.store, self.embedding);
        let mut state = self.compressor.init_state(g, &self.store, enc, target_len, source_len)?;
        let mut input = g.row(table, SOS)?;
        let mut steps = Vec::with_capacity(target_len);
        let mut extra_steps = Vec::with_capacity(extra);
        for t in 0..target_len + extra {
            let countdown = target_len.saturating_sub(t) as f64;
            let out = self.compressor.step(g, &self.store, enc, &state, input, countdown)?;
            state = out.state;
            let logits = out.logits;
            let (temperature, tau) = match self.w_tau {
                Some(w) if mode != SamplingMode::Greedy => {
                    let w = g.param(&self.store, w);
                    let (inv, tau) = learned_temperature(g, state.top(), w, s.tau0)?;
                    (Temperature::Learned(inv), tau)
                }
                _ => (Temperature::Fixed(s.tau), s.tau),
            };
            let noise = gumbel.get(t).cloned();
            let (token, embedding, weights) = match mode {
                SamplingMode::Greedy => {
                    let id = argmax(g.value(logits).data());
                    (id, g.row(table, id)?, None)
                }
                SamplingMode::SoftArgmax => {
                    let (w, e) = soft_argmax_embedding(g, logits, temperature, table)?;
                    (argmax(g.value(w).data()), e, Some(w))
                }
                SamplingMode::GumbelRelaxed | SamplingMode::GumbelSt => {
                    let xi = noise
                        .as_deref()
                        .ok_or_else(|| Error::Contract(format!("missing Gumbel noise for step {t}")))?;
                    let noisy = g.constant(Tensor::vector(xi.to_vec()));
                    let perturbed = g.add(logits, noisy)?;
                    let (w, soft) = soft_argmax_embedding(g, perturbed, temperature, table)?;
                    let id = argmax(g.value(perturbed).data());
                    if mode == SamplingMode::GumbelSt {
                        let hard = Tensor::vector(g.value(table).row(id).to_vec());
                        (id, g.straight_through(hard, soft)?, Some(w))
                    } else {
                        (argmax(g.value(w).data()), soft, Some(w))
                    }
                }
            };
            let step = SummaryStep {
                logits,
                token,
                embedding,
                weights,
                noise,
                tau,
            };
            if t < target_len {
                steps.push(step);
            } else {
                extra_steps.push(step);
            }
            input = embedding;
        }
        Ok(SummarySample {
            steps,
            extra: extra_steps,
            target_len,
        })
    }

    fn check_airtight(&self, g: &Graph, summary: &SummarySample) -> Result<()> {
        let table = self.store.value(self.embedding);
        for (t, step) in summary.steps.iter().enumerate() {
            if g.value(step.embedding).data() != table.row(step.token) {
                return Err(Error::Contract(format!(
                    "summary position {t} does not carry an exact embedding row"
                )));
            }
        }
        Ok(())
    }

    /// Source rows and summary embeddings rebuilt over a constant copy of the
    /// table, so the topic loss reaches the compressor's logits only.
    fn detached_topic_inputs(&self, g: &mut Graph, source: &[usize], summary: &SummarySample) -> Result<(Vec<Var>, Vec<Var>)> {
        let table = self.store.value(self.embedding);
        let src = source
            .iter()
            .map(|&i| g.constant(Tensor::vector(table.row(i).to_vec())))
            .collect();
        let fixed = g.constant(table.clone());
        let mut latent = Vec::with_capacity(summary.steps.len());
        for step in &summary.steps {
            let hard = Tensor::vector(table.row(step.token).to_vec());
            let e = match step.weights {
                None => g.constant(hard),
                Some(w) => {
                    let soft = g.matvec_t(fixed, w)?;
                    if self.config.sampling.mode == SamplingMode::GumbelSt {
                        g.straight_through(hard, soft)?
                    } else {
                        soft
                    }
                }
            };
            latent.push(e);
        }
        Ok((src, latent))
    }

    /// One training forward pass with all randomness taken from `draws`.
    /// `idf` holds one score per source token. A loss whose weight is zero is
    /// not computed and reported as 0; without an LM the prior loss is 0.
    pub fn forward_train(
        &self,
        g: &mut Graph,
        source: &[usize],
        idf: &[f64],
        lm: Option<&LmModel>,
        draws: &Draws,
    ) -> Result<TrainForward> {
        self.check_ids(source)?;
        let n = source.len();
        let m = draws.target_len;
        if draws.recon_inputs.len() != n {
            return Err(Error::Contract(format!(
                "draws carry {} reconstructor inputs for a {n}-token source",
                draws.recon_inputs.len()
            )));
        }
        let mode = self.config.sampling.mode;
        let extra = self.config.extra_steps;
        let src = self.embed(g, source)?;
        let enc = self.encoder.encode(g, &self.store, &src)?;
        let summary = self.run_compressor(g, &enc, n, m, extra, &draws.gumbel, mode)?;
        if cfg!(debug_assertions) && matches!(mode, SamplingMode::GumbelSt | SamplingMode::Greedy) {
            self.check_airtight(g, &summary)?;
        }

        let latent: Vec<Var> = summary.steps.iter().map(|s| s.embedding).collect();
        let enc_r = self.encoder.encode(g, &self.store, &latent)?;
        let mut state = self.reconstructor.init_state(g, &self.store, &enc_r, n, m)?;
        let inputs = self.embed(g, &draws.recon_inputs)?;
        let mut recon_logits = Vec::with_capacity(n);
        for (t, &x) in inputs.iter().enumerate() {
            let out = self.reconstructor.step(g, &self.store, &enc_r, &state, x, (n - t) as f64)?;
            recon_logits.push(out.logits);
            state = out.state;
        }

        let l_r = reconstruction_loss(g, &recon_logits, source)?;
        let comp_logits: Vec<Var> = summary.steps.iter().map(|s| s.logits).collect();
        let w = self.config.weights;
        let l_p = match lm {
            Some(lm) if w.prior > 0.0 => {
                if lm.vocab_size != self.vocab_size {
                    return Err(Error::Compatibility(format!(
                        "language model covers {} ids, model covers {}",
                        lm.vocab_size, self.vocab_size
                    )));
                }
                let mut prefix = vec![SOS];
                prefix.extend(summary.steps[..m - 1].iter().map(|s| s.token));
                let prior = lm.step_log_probs(&prefix)?;
                lm_prior_loss(g, &comp_logits, &prior)?
            }
            _ => g.constant(Tensor::scalar(0.0)),
        };
        let l_t = if w.topic > 0.0 && self.config.topic_detach {
            let (src_c, latent_c) = self.detached_topic_inputs(g, source, &summary)?;
            topic_loss(g, &src_c, idf, &latent_c)?
        } else if w.topic > 0.0 {
            topic_loss(g, &src, idf, &latent)?
        } else {
            g.constant(Tensor::scalar(0.0))
        };
        let l_l = if summary.extra.is_empty() || w.length == 0.0 {
            g.constant(Tensor::scalar(0.0))
        } else {
            let extra_logits: Vec<Var> = summary.extra.iter().map(|s| s.logits).collect();
            length_penalty(g, &extra_logits, EOS)?
        };
        let losses = total_loss(g, l_r, l_p, l_t, l_l, &self.config.weights)?;
        Ok(TrainForward {
            summary,
            recon_logits,
            losses,
        })
    }

    /// Greedy summary of at most `target_len` tokens, stopping before EOS.
    pub fn summarize(&self, source: &[usize], target_len: usize) -> Result<Vec<usize>> {
        self.check_ids(source)?;
        if target_len == 0 {
            return Err(Error::Input("summary length must be positive".into()));
        }
        let mut g = Graph::new();
        let src = self.embed(&mut g, source)?;
        let enc = self.encoder.encode(&mut g, &self.store, &src)?;
        let table = g.param(&self.store, self.embedding);
        let mut state = self.compressor.init_state(&mut g, &self.store, &enc, target_len, source.len())?;
        let mut input = g.row(table, SOS)?;
        let mut out = Vec::with_capacity(target_len);
        for t in 0..target_len {
            let step = self
                .compressor
                .step(&mut g, &self.store, &enc, &state, input, (target_len - t) as f64)?;
            state = step.state;
            let id = argmax(g.value(step.logits).data());
            if id == EOS {
                break;
            }
            out.push(id);
            input = g.row(table, id)?;
        }
        Ok(out)
    }

    /// Inference-time compression with `M = max(min_len, round(ratio·N))`.
    pub fn compress_ids(&self, source: &[usize], ratio: f64) -> Result<Vec<usize>> {
        if !(ratio > 0.0) {
            return Err(Error::Input(format!("compression ratio must be positive, got {ratio}")));
        }
        let m = inference_length(source.len(), ratio, self.config.sampling.min_len);
        self.summarize(source, m)
    }

    /// Greedy reconstruction of an `n`-token sentence from summary ids.
    pub fn reconstruct(&self, summary: &[usize], n: usize) -> Result<Vec<usize>> {
        self.check_ids(summary)?;
        let mut g = Graph::new();
        let latent = self.embed(&mut g, summary)?;
        let enc = self.encoder.encode(&mut g, &self.store, &latent)?;
        let table = g.param(&self.store, self.embedding);
        let mut state = self.reconstructor.init_state(&mut g, &self.store, &enc, n, summary.len())?;
        let mut input = g.row(table, SOS)?;
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let step = self
                .reconstructor
                .step(&mut g, &self.store, &enc, &state, input, (n - t) as f64)?;
            state = step.state;
            let id = argmax(g.value(step.logits).data());
            out.push(id);
            input = g.row(table, id)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Seq3Config {
        Seq3Config {
            emb_dim: 6,
            enc_hidden: 4,
            enc_layers: 2,
            dec_hidden: 5,
            dec_layers: 2,
            ..Seq3Config::default()
        }
    }

    fn model(config: Seq3Config) -> Seq3Model {
        Seq3Model::new(config, 20, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn word_dropout_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids: Vec<usize> = (14..24).collect();
        assert_eq!(word_dropout(&ids, 0.0, &mut rng), ids);

        let many: Vec<usize> = (0..10_000).map(|i| 14 + i % 50).collect();
        let out = word_dropout(&many, 0.5, &mut rng);
        let dropped = out.iter().filter(|&&i| i == UNK).count() as f64 / many.len() as f64;
        assert!((0.48..=0.52).contains(&dropped), "{dropped}");

        let sos = vec![SOS; 1000];
        assert_eq!(word_dropout(&sos, 0.9, &mut rng), sos);
    }

    #[test]
    fn parameter_count_matches_formula() {
        let mut c = tiny();
        let m = model(c.clone());
        assert_eq!(m.store.num_scalars(), c.num_params(20));
        c.sampling.learned_tau = true;
        let m = model(c.clone());
        assert_eq!(m.store.num_scalars(), c.num_params(20));
    }

    #[test]
    fn decoders_share_embedding_and_encoder() {
        let m = model(tiny());
        assert_eq!(m.compressor.w_v, m.embedding);
        assert_eq!(m.reconstructor.w_v, m.embedding);
        assert_ne!(m.compressor.init.w_c, m.reconstructor.init.w_c);
    }

    #[test]
    fn train_forward_shapes() {
        let m = model(tiny());
        let src = [14, 15, 16, 17, 18, 19, 14, 15, 16, 17];
        let draws = Draws::sample(&m.config, &src, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut g = Graph::new();
        let f = m.forward_train(&mut g, &src, &[1.0; 10], None, &draws).unwrap();
        assert_eq!(f.summary.steps.len(), draws.target_len);
        assert_eq!(f.summary.extra.len(), 2);
        assert_eq!(f.recon_logits.len(), 10);
        for s in &f.summary.steps {
            assert_eq!(g.value(s.logits).len(), 20);
        }
        assert_eq!(draws.recon_inputs[0], SOS);
        let v = f.losses.values(&g);
        assert!(v.total.is_finite() && v.l_r > 0.0 && v.l_p == 0.0);
    }

    #[test]
    fn empty_source_is_rejected() {
        let m = model(tiny());
        assert!(matches!(m.compress_ids(&[], 0.5), Err(Error::Input(_))));
        assert!(Draws::sample(&m.config, &[], 20, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn inference_respects_length() {
        let m = model(tiny());
        let src: Vec<usize> = (12..20).collect();
        let out = m.compress_ids(&src, 0.5).unwrap();
        assert!(out.len() <= 5);
        assert!(!out.contains(&EOS));
        let again = m.compress_ids(&src, 0.5).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn gradients_reach_both_halves() {
        let m = model(tiny());
        let mut store = m.store.clone();
        let src = [14, 15, 16, 17, 18, 19];
        let draws = Draws::sample(&m.config, &src, 20, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut g = Graph::new();
        let f = m.forward_train(&mut g, &src, &[1.0; 6], None, &draws).unwrap();
        g.backward(f.losses.total, &mut store).unwrap();
        for name in ["embedding", "encoder.l0.fwd.weight", "compressor.w_o", "reconstructor.w_o", "compressor.w_c"] {
            let id = store.id(name).unwrap_or_else(|| panic!("{name}"));
            let norm: f64 = store.grad(id).map_or(0.0, |t| t.data().iter().map(|v| v * v).sum());
            assert!(norm > 0.0, "{name} got no gradient");
        }
    }
}
