//! Run configuration as flat `dotted.key = value` text.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lm::LmConfig;
use crate::model::Seq3Config;
use crate::synthetic::SyntheticSpec;
use crate::vocab::DEFAULT_CAP;

/// Input and output locations. Empty fields are unset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataPaths {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub idf: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    /// Checkpoint to resume from.
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub desk: bool,
    pub seq3: Seq3Config,
    pub lm: LmConfig,
    pub synthetic: SyntheticSpec,
    pub vocab_cap: usize,
    pub data: DataPaths,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: origin.display().to_string(),
                line: i + 1,
                message: format!("expected `key = value`, got {line:?}"),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn base(seed: u64, desk: bool) -> Self {
        let (seq3, lm) = if desk {
            (Seq3Config::desk(), LmConfig::desk())
        } else {
            (Seq3Config::default(), LmConfig::default())
        };
        let mut c = RunConfig {
            seed,
            desk,
            seq3,
            lm,
            synthetic: SyntheticSpec::default(),
            vocab_cap: DEFAULT_CAP,
            data: DataPaths::default(),
        };
        c.sync_seed();
        c
    }

    fn sync_seed(&mut self) {
        self.seq3.seed = self.seed;
        self.synthetic.seed = self.seed;
    }

    /// Layers file values and then explicit overrides onto the base profile.
    /// A seed must come from one of them.
    pub fn resolve(
        file: Option<&Path>,
        desk: bool,
        seed: Option<u64>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            pairs = parse_pairs(&text, path)?;
        }
        pairs.extend(overrides.iter().cloned());
        let desk = desk
            || pairs
                .iter()
                .rev()
                .find(|(k, _)| k == "desk")
                .map(|(k, v)| parse::<bool>(k, v))
                .transpose()?
                .unwrap_or(false);
        let file_seed = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "seed")
            .map(|(k, v)| parse::<u64>(k, v))
            .transpose()?;
        let seed = seed.or(file_seed).ok_or_else(|| {
            Error::Config("a seed is required: set `seed = ...` in the config or pass --seed".into())
        })?;
        let mut c = RunConfig::base(seed, desk);
        for (k, v) in &pairs {
            if k != "seed" && k != "desk" {
                c.set(k, v)?;
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Rebuilds a config from the pairs stored in an artifact.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        Self::resolve(None, false, None, pairs)
    }

    pub fn validate(&self) -> Result<()> {
        self.seq3.validate()?;
        self.lm.validate()?;
        self.synthetic.validate()?;
        if self.vocab_cap == 0 {
            return Err(Error::Config("vocab.cap must be positive".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                self.sync_seed();
                return Ok(());
            }
            "desk" => {
                self.desk = parse(key, v)?;
                return Ok(());
            }
            _ => {}
        }
        let s = &mut self.seq3;
        let l = &mut self.lm;
        let y = &mut self.synthetic;
        match key {
            "model.emb_dim" => s.emb_dim = parse(key, v)?,
            "model.emb_init" => s.emb_init = parse(key, v)?,
            "model.freeze_embeddings" => s.freeze_embeddings = parse(key, v)?,
            "loss.topic_detach" => s.topic_detach = parse(key, v)?,
            "model.enc_hidden" => s.enc_hidden = parse(key, v)?,
            "model.enc_layers" => s.enc_layers = parse(key, v)?,
            "model.dec_hidden" => s.dec_hidden = parse(key, v)?,
            "model.dec_layers" => s.dec_layers = parse(key, v)?,
            "model.word_dropout" => s.word_dropout = parse(key, v)?,
            "model.extra_steps" => s.extra_steps = parse(key, v)?,
            "model.sampling" => s.sampling.mode = parse(key, v)?,
            "model.tau" => s.sampling.tau = parse(key, v)?,
            "model.learned_tau" => s.sampling.learned_tau = parse(key, v)?,
            "model.tau0" => s.sampling.tau0 = parse(key, v)?,
            "model.alpha" => s.sampling.alpha = parse(key, v)?,
            "model.beta" => s.sampling.beta = parse(key, v)?,
            "model.min_len" => s.sampling.min_len = parse(key, v)?,
            "loss.lambda_r" => s.weights.reconstruction = parse(key, v)?,
            "loss.lambda_p" => s.weights.prior = parse(key, v)?,
            "loss.lambda_t" => s.weights.topic = parse(key, v)?,
            "loss.lambda_l" => s.weights.length = parse(key, v)?,
            "train.lr" => s.lr = parse(key, v)?,
            "train.batch_size" => s.batch_size = parse(key, v)?,
            "train.epochs" => s.epochs = parse(key, v)?,
            "train.grad_clip" => s.grad_clip = parse(key, v)?,
            "lm.layers" => l.layers = parse(key, v)?,
            "lm.hidden" => l.hidden = parse(key, v)?,
            "lm.emb_dim" => l.emb_dim = parse(key, v)?,
            "lm.emb_dropout" => l.emb_dropout = parse(key, v)?,
            "lm.rnn_dropout" => l.rnn_dropout = parse(key, v)?,
            "lm.epochs" => l.epochs = parse(key, v)?,
            "lm.batch_size" => l.batch_size = parse(key, v)?,
            "lm.lr" => l.lr = parse(key, v)?,
            "lm.gamma" => l.gamma = parse(key, v)?,
            "lm.decay_every" => l.decay_every = parse(key, v)?,
            "synthetic.vocab_size" => y.vocab_size = parse(key, v)?,
            "synthetic.topic_words" => y.topic_words = parse(key, v)?,
            "synthetic.sentences" => y.sentences = parse(key, v)?,
            "synthetic.min_len" => y.min_len = parse(key, v)?,
            "synthetic.max_len" => y.max_len = parse(key, v)?,
            "synthetic.min_topics" => y.min_topics = parse(key, v)?,
            "synthetic.max_topics" => y.max_topics = parse(key, v)?,
            "synthetic.zipf" => y.zipf = parse(key, v)?,
            "vocab.cap" => self.vocab_cap = parse(key, v)?,
            "data.corpus" => self.data.corpus = path(v),
            "data.embeddings" => self.data.embeddings = path(v),
            "data.vocab" => self.data.vocab = path(v),
            "data.idf" => self.data.idf = path(v),
            "data.lm" => self.data.lm = path(v),
            "data.resume" => self.data.resume = path(v),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let s = &self.seq3;
        let l = &self.lm;
        let y = &self.synthetic;
        let d = &self.data;
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("desk", self.desk.to_string()),
            ("model.emb_dim", s.emb_dim.to_string()),
            ("model.emb_init", s.emb_init.to_string()),
            ("model.freeze_embeddings", s.freeze_embeddings.to_string()),
            ("loss.topic_detach", s.topic_detach.to_string()),
            ("model.enc_hidden", s.enc_hidden.to_string()),
            ("model.enc_layers", s.enc_layers.to_string()),
            ("model.dec_hidden", s.dec_hidden.to_string()),
            ("model.dec_layers", s.dec_layers.to_string()),
            ("model.word_dropout", s.word_dropout.to_string()),
            ("model.extra_steps", s.extra_steps.to_string()),
            ("model.sampling", s.sampling.mode.to_string()),
            ("model.tau", s.sampling.tau.to_string()),
            ("model.learned_tau", s.sampling.learned_tau.to_string()),
            ("model.tau0", s.sampling.tau0.to_string()),
            ("model.alpha", s.sampling.alpha.to_string()),
            ("model.beta", s.sampling.beta.to_string()),
            ("model.min_len", s.sampling.min_len.to_string()),
            ("loss.lambda_r", s.weights.reconstruction.to_string()),
            ("loss.lambda_p", s.weights.prior.to_string()),
            ("loss.lambda_t", s.weights.topic.to_string()),
            ("loss.lambda_l", s.weights.length.to_string()),
            ("train.lr", s.lr.to_string()),
            ("train.batch_size", s.batch_size.to_string()),
            ("train.epochs", s.epochs.to_string()),
            ("train.grad_clip", s.grad_clip.to_string()),
            ("lm.layers", l.layers.to_string()),
            ("lm.hidden", l.hidden.to_string()),
            ("lm.emb_dim", l.emb_dim.to_string()),
            ("lm.emb_dropout", l.emb_dropout.to_string()),
            ("lm.rnn_dropout", l.rnn_dropout.to_string()),
            ("lm.epochs", l.epochs.to_string()),
            ("lm.batch_size", l.batch_size.to_string()),
            ("lm.lr", l.lr.to_string()),
            ("lm.gamma", l.gamma.to_string()),
            ("lm.decay_every", l.decay_every.to_string()),
            ("synthetic.vocab_size", y.vocab_size.to_string()),
            ("synthetic.topic_words", y.topic_words.to_string()),
            ("synthetic.sentences", y.sentences.to_string()),
            ("synthetic.min_len", y.min_len.to_string()),
            ("synthetic.max_len", y.max_len.to_string()),
            ("synthetic.min_topics", y.min_topics.to_string()),
            ("synthetic.max_topics", y.max_topics.to_string()),
            ("synthetic.zipf", y.zipf.to_string()),
            ("vocab.cap", self.vocab_cap.to_string()),
            ("data.corpus", show(&d.corpus)),
            ("data.embeddings", show(&d.embeddings)),
            ("data.vocab", show(&d.vocab)),
            ("data.idf", show(&d.idf)),
            ("data.lm", show(&d.lm)),
            ("data.resume", show(&d.resume)),
        ];
        rows.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SamplingMode;

    #[test]
    fn seed_is_mandatory() {
        assert!(matches!(RunConfig::resolve(None, false, None, &[]), Err(Error::Config(_))));
        let c = RunConfig::resolve(None, false, Some(4), &[]).unwrap();
        assert_eq!((c.seed, c.seq3.seed), (4, 4));
    }

    #[test]
    fn round_trips_through_text() {
        let mut c = RunConfig::base(9, true);
        c.set("model.tau", "0.37").unwrap();
        c.set("model.sampling", "soft-argmax").unwrap();
        c.set("data.corpus", "some/file.txt").unwrap();
        let pairs = parse_pairs(&c.to_text(), Path::new("x")).unwrap();
        let back = RunConfig::from_pairs(&pairs).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.seq3.sampling.mode, SamplingMode::SoftArgmax);
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_rejected() {
        let o = vec![("model.taux".to_string(), "1".to_string())];
        assert!(RunConfig::resolve(None, false, Some(1), &o).is_err());
        let err = parse_pairs("seed = 1\n# note\n\nnot a pair\n", Path::new("c.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
    }

    #[test]
    fn overrides_win_and_desk_swaps_profiles() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "seed = 3  # fixed\nloss.lambda_t = 0.5\n").unwrap();
        let o = vec![("loss.lambda_t".to_string(), "0".to_string())];
        let c = RunConfig::resolve(Some(&file), true, Some(8), &o).unwrap();
        assert_eq!(c.seed, 8);
        assert_eq!(c.seq3.weights.topic, 0.0);
        assert_eq!(c.lm, LmConfig::desk());
        assert_eq!(c.seq3.emb_dim, Seq3Config::desk().emb_dim);
    }
}
