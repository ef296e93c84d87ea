//! Vocabulary, per-sentence OOV copy tokens, idf statistics and embedding
//! initialization.
//!
//! Ids `0..RESERVED` are fixed: PAD, SOS, EOS, UNK and the ten OOV copy
//! tokens. Content tokens follow in descending frequency, ties broken by
//! first occurrence.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_OOV: usize = 10;
pub const FIRST_OOV: usize = 4;
pub const RESERVED: usize = FIRST_OOV + NUM_OOV;
pub const DEFAULT_CAP: usize = 15_000;

const RESERVED_NAMES: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

fn reserved_surface(id: usize) -> String {
    if id < FIRST_OOV {
        RESERVED_NAMES[id].to_string()
    } else {
        format!("<oov{}>", id - FIRST_OOV + 1)
    }
}

impl Vocabulary {
    /// Builds a vocabulary from content tokens in id order.
    pub fn from_content<I, S>(content: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = (0..RESERVED).map(reserved_surface).collect();
        let mut index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for tok in content {
            let tok = tok.into();
            if index.contains_key(&tok) {
                continue;
            }
            index.insert(tok.clone(), tokens.len());
            tokens.push(tok);
        }
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn content_len(&self) -> usize {
        self.tokens.len() - RESERVED
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }

    pub fn is_oov_token(id: usize) -> bool {
        (FIRST_OOV..RESERVED).contains(&id)
    }

    /// Content hash used to pair checkpoints with vocabularies.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// One content token per line.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in self.content_tokens() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Ok(Vocabulary::from_content(
            text.lines().filter(|l| !l.is_empty()).map(str::to_string),
        ))
    }
}

/// Keeps the `cap` most frequent tokens.
pub fn build_vocab<I, S, T>(corpus: I, cap: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for sentence in corpus {
        for tok in sentence {
            let tok = tok.as_ref();
            let e = counts.entry(tok.to_string()).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            e.0 += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
    }
    let reserved: Vec<String> = (0..RESERVED).map(reserved_surface).collect();
    let mut ranked: Vec<(String, usize, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !reserved.contains(t))
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(cap);
    Ok(Vocabulary::from_content(ranked.into_iter().map(|(t, _, _)| t)))
}

/// Per-sentence mapping between unknown surface tokens and OOV copy ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OovMap {
    surfaces: Vec<String>,
    slots: HashMap<String, usize>,
}

impl OovMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    /// OOV id assigned to `surface`, if any.
    pub fn id_of(&self, surface: &str) -> Option<usize> {
        self.slots.get(surface).map(|s| FIRST_OOV + s)
    }

    /// Unknown word behind an OOV id.
    pub fn surface(&self, id: usize) -> Option<&str> {
        id.checked_sub(FIRST_OOV)
            .and_then(|slot| self.surfaces.get(slot))
            .map(String::as_str)
    }

    fn assign(&mut self, surface: &str) -> Option<usize> {
        if let Some(id) = self.id_of(surface) {
            return Some(id);
        }
        if self.surfaces.len() == NUM_OOV {
            return None;
        }
        self.slots.insert(surface.to_string(), self.surfaces.len());
        self.surfaces.push(surface.to_string());
        Some(FIRST_OOV + self.surfaces.len() - 1)
    }
}

/// Maps tokens to ids, giving the i-th distinct unknown word `OOV_i` and any
/// unknown past the tenth `UNK`.
pub fn encode_with_oov<T: AsRef<str>>(sentence: &[T], vocab: &Vocabulary) -> (Vec<usize>, OovMap) {
    let mut map = OovMap::new();
    let ids = sentence
        .iter()
        .map(|t| {
            let t = t.as_ref();
            match vocab.id(t) {
                Some(id) if id >= RESERVED => id,
                _ => map.assign(t).unwrap_or(UNK),
            }
        })
        .collect();
    (ids, map)
}

/// Inverse of [`encode_with_oov`]: OOV ids become their source words.
pub fn decode_restore(ids: &[usize], oov: &OovMap, vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .map(|&id| {
            if Vocabulary::is_oov_token(id) {
                oov.surface(id)
                    .unwrap_or(RESERVED_NAMES[UNK])
                    .to_string()
            } else {
                vocab.token(id).unwrap_or(RESERVED_NAMES[UNK]).to_string()
            }
        })
        .collect()
}

/// Inverse document frequencies over encoded training sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct IdfTable {
    scores: Vec<f64>,
    documents: usize,
}

impl IdfTable {
    pub fn get(&self, id: usize) -> f64 {
        self.scores.get(id).copied().unwrap_or(0.0)
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Uniform table, used when no corpus statistics are available.
    pub fn uniform(vocab_size: usize, value: f64) -> Self {
        IdfTable {
            scores: vec![value; vocab_size],
            documents: 0,
        }
    }

    pub fn to_file_string(&self) -> String {
        let mut s = format!("{}\n", self.documents);
        for v in &self.scores {
            s.push_str(&format!("{v:e}\n"));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: p.display().to_string(),
            line: line + 1,
            message,
        };
        let (_, first) = lines.next().ok_or_else(|| parse_err(0, "empty idf file".into()))?;
        let documents = first
            .trim()
            .parse()
            .map_err(|e| parse_err(0, format!("{e}")))?;
        let scores = lines
            .map(|(i, l)| l.trim().parse::<f64>().map_err(|e| parse_err(i, format!("{e}"))))
            .collect::<Result<_>>()?;
        Ok(IdfTable { scores, documents })
    }
}

/// `idf(w) = max(0, ln(D / (1 + df(w))))`; unseen ids get `ln D`.
pub fn compute_idf<I, S, T>(corpus: I, vocab: &Vocabulary) -> Result<IdfTable>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[T]>,
    T: AsRef<str>,
{
    let mut df = vec![0usize; vocab.len()];
    let mut documents = 0usize;
    let mut seen = vec![false; vocab.len()];
    for doc in corpus {
        documents += 1;
        let (ids, _) = encode_with_oov(doc.as_ref(), vocab);
        seen.iter_mut().for_each(|s| *s = false);
        for id in ids {
            if !seen[id] {
                seen[id] = true;
                df[id] += 1;
            }
        }
    }
    if documents == 0 {
        return Err(Error::Input("cannot compute idf over an empty corpus".into()));
    }
    let d = documents as f64;
    let scores = df
        .iter()
        .map(|&n| {
            if n == 0 {
                d.ln()
            } else {
                (d / (1.0 + n as f64)).ln().max(0.0)
            }
        })
        .collect();
    Ok(IdfTable { scores, documents })
}

/// `|V| × dim` matrix drawn uniformly from `[-0.05, 0.05]`.
pub fn random_embeddings<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Tensor {
    uniform_embeddings(vocab_size, dim, 0.05, rng)
}

/// Rows drawn from `U(-half_width, half_width)`.
pub fn uniform_embeddings<R: Rng + ?Sized>(vocab_size: usize, dim: usize, half_width: f64, rng: &mut R) -> Tensor {
    let data = (0..vocab_size * dim).map(|_| rng.gen_range(-half_width..=half_width)).collect();
    Tensor::from_parts(vec![vocab_size, dim], data)
}

/// Reads GloVe-style text vectors; rows for tokens absent from the file are random.
pub fn load_pretrained_embeddings<R: Rng + ?Sized>(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<Tensor> {
    let p = path.as_ref();
    let mut matrix = random_embeddings(vocab.len(), dim, rng);
    let file = fs::File::open(p).map_err(|e| Error::io(p, e))?;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(p, e))?;
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|v| {
                v.parse::<f64>().map_err(|e| Error::Parse {
                    path: p.display().to_string(),
                    line: lineno + 1,
                    message: format!("bad value {v:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Input(format!(
                "{}:{}: expected {dim} values for {token:?}, found {}",
                p.display(),
                lineno + 1,
                values.len()
            )));
        }
        if let Some(id) = vocab.id(token) {
            matrix.row_mut(id).copy_from_slice(&values);
        }
    }
    Ok(matrix)
}

/// Splits a corpus line into whitespace-separated tokens.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}
