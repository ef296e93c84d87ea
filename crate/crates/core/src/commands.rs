//! The operator commands behind the `seq3` binary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate_set, format_table, lead_n_baseline, prefix_baseline, EvalExample, EvalReport};
use crate::lm::{LmEpoch, LmModel, LmTrainer};
use crate::synthetic::generate;
use crate::train::{prepare_examples, EpochRecord, Trainer};
use crate::vocab::{
    build_vocab, compute_idf, decode_restore, encode_with_oov, load_pretrained_embeddings, tokenize, IdfTable,
    Vocabulary,
};

pub const CORPUS_FILE: &str = "corpus.txt";
pub const REFERENCES_FILE: &str = "references.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const IDF_FILE: &str = "idf.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const LM_CHECKPOINT: &str = "lm.ckpt";
pub const SEQ3_CHECKPOINT: &str = "seq3.ckpt";
pub const TRAIN_LOG: &str = "train.jsonl";
pub const LM_LOG: &str = "lm.jsonl";

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?.iter().map(|l| tokenize(l)).collect())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("{key} is not set")))
}

/// Writes `corpus.txt`, `references.txt` (planted topic words) and the config echo.
pub fn cmd_gen_synthetic(config: &RunConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    let corpus = generate(&config.synthetic)?;
    let join = |rows: &[Vec<String>]| rows.iter().map(|r| r.join(" ") + "\n").collect::<String>();
    write_file(&out.join(CORPUS_FILE), &join(&corpus.sentences))?;
    write_file(&out.join(REFERENCES_FILE), &join(&corpus.topics))?;
    write_file(&out.join(CONFIG_FILE), &config.to_text())?;
    log::info!("wrote {} synthetic sentences to {}", corpus.sentences.len(), out.display());
    Ok(())
}

/// Writes `vocab.txt` and `idf.txt` for `data.corpus`.
pub fn cmd_build_vocab(config: &RunConfig, out: &Path) -> Result<(Vocabulary, IdfTable)> {
    let corpus = read_corpus(required(&config.data.corpus, "data.corpus")?)?;
    create_dir(out)?;
    let vocab = build_vocab(&corpus, config.vocab_cap)?;
    let idf = compute_idf(&corpus, &vocab)?;
    vocab.save(out.join(VOCAB_FILE))?;
    idf.save(out.join(IDF_FILE))?;
    log::info!("vocabulary of {} ids, idf over {} sentences", vocab.len(), idf.documents());
    Ok((vocab, idf))
}

fn load_vocab(config: &RunConfig) -> Result<Vocabulary> {
    Vocabulary::load(required(&config.data.vocab, "data.vocab")?)
}

fn encode_corpus(corpus: &[Vec<String>], vocab: &Vocabulary) -> Vec<Vec<usize>> {
    corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| encode_with_oov(s, vocab).0)
        .collect()
}

/// Trains (or resumes) the language model, checkpointing after every epoch.
pub fn cmd_train_lm(config: &RunConfig, out: &Path) -> Result<(LmModel, Vec<LmEpoch>)> {
    let vocab = load_vocab(config)?;
    let corpus = encode_corpus(&read_corpus(required(&config.data.corpus, "data.corpus")?)?, &vocab);
    create_dir(out)?;
    let (mut trainer, resumed) = match &config.data.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_vocab(&vocab.hash())?;
            let (mut t, _) = ck.into_lm_trainer()?;
            t.model.config.epochs = config.lm.epochs;
            (t, true)
        }
        None => (LmTrainer::new(config.lm.clone(), vocab.len(), config.seed)?, false),
    };
    let log_path = out.join(LM_LOG);
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resumed)
        .truncate(!resumed)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    while trainer.epoch < trainer.model.config.epochs {
        let e = trainer.train_epoch(&corpus)?;
        println!("lm epoch {} lr {} perplexity {:.4}", e.epoch, e.lr, e.perplexity);
        let line = json!({"epoch": e.epoch, "lr": e.lr, "perplexity": e.perplexity, "steps": e.steps});
        writeln!(log, "{line}").map_err(|err| Error::io(&log_path, err))?;
        Checkpoint::from_lm_trainer(&trainer, config, &vocab.hash()).save(out.join(LM_CHECKPOINT))?;
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let history = trainer.history.clone();
    Ok((trainer.into_frozen(), history))
}

/// What a finished `train` run produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains SEQ³, appending one JSON line per step to `train.jsonl` and writing
/// `seq3-epochN.ckpt` plus `seq3.ckpt` after every epoch.
pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let vocab = load_vocab(config)?;
    let hash = vocab.hash();
    let raw = read_corpus(required(&config.data.corpus, "data.corpus")?)?;
    let idf = match &config.data.idf {
        Some(p) => IdfTable::load(p)?,
        None => compute_idf(&raw, &vocab)?,
    };
    if idf.scores().len() != vocab.len() {
        return Err(Error::Compatibility(format!(
            "idf table covers {} ids, vocabulary has {}",
            idf.scores().len(),
            vocab.len()
        )));
    }
    let data = prepare_examples(&encode_corpus(&raw, &vocab), &idf);
    let lm = match &config.data.lm {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.check_vocab(&hash)?;
            Some(ck.into_frozen_lm()?)
        }
        None => {
            if config.seq3.weights.prior > 0.0 {
                log::warn!("no language model given (data.lm); the prior loss is skipped");
            }
            None
        }
    };
    let (mut trainer, resumed) = match &config.data.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.check_vocab(&hash)?;
            let (mut t, _) = ck.into_trainer()?;
            t.model.config.epochs = config.seq3.epochs;
            (t, true)
        }
        None => {
            let embeddings = match &config.data.embeddings {
                Some(p) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
                    Some(load_pretrained_embeddings(p, &vocab, config.seq3.emb_dim, &mut rng)?)
                }
                None => None,
            };
            (Trainer::new(config.seq3.clone(), vocab.len(), embeddings)?, false)
        }
    };
    create_dir(out)?;
    let log_path = out.join(TRAIN_LOG);
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resumed)
        .truncate(!resumed)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let latest = out.join(SEQ3_CHECKPOINT);
    let history = trainer.run(
        &data,
        lm.as_ref(),
        |r| writeln!(log, "{}", r.to_json()).map_err(|e| Error::io(&log_path, e)),
        |t, e| {
            println!("epoch {} steps {} mean loss {:.4}", e.epoch, e.steps, e.mean_total);
            let ck = Checkpoint::from_trainer(t, config, &hash);
            ck.save(out.join(format!("seq3-epoch{}.ckpt", e.epoch)))?;
            ck.save(&latest)
        },
    )?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainOutcome {
        history,
        checkpoint: latest,
        log: log_path,
    })
}

/// Compresses every line of `input` (empty lines stay empty) into `out`.
pub fn cmd_compress(checkpoint: &Path, vocab: &Path, input: &Path, ratio: f64, out: &Path) -> Result<usize> {
    let vocab = Vocabulary::load(vocab)?;
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_vocab(&vocab.hash())?;
    let (model, _) = ck.into_model()?;
    let mut lines = Vec::new();
    for line in read_lines(input)? {
        let tokens = tokenize(&line);
        if tokens.is_empty() {
            lines.push(String::new());
            continue;
        }
        let (ids, oov) = encode_with_oov(&tokens, &vocab);
        let summary = model.compress_ids(&ids, ratio)?;
        lines.push(decode_restore(&summary, &oov, &vocab).join(" "));
    }
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    write_file(out, &text)?;
    Ok(lines.len())
}

/// Inputs of `evaluate`. Either `tsv` (`source<TAB>reference[<TAB>reference…]`)
/// or `references` (one file per reference set, line-aligned) must be given.
#[derive(Clone, Debug, Default)]
pub struct EvaluateArgs {
    pub candidates: Option<PathBuf>,
    pub references: Vec<PathBuf>,
    pub sources: Option<PathBuf>,
    pub tsv: Option<PathBuf>,
    pub stem: bool,
    pub baselines: bool,
    /// Cuts candidates to this many bytes (whole tokens) before scoring.
    pub truncate_bytes: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Scores candidates and optionally the LEAD-8 and PREFIX baselines; returns
/// one report per system in table order.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Vec<(String, EvalReport)>> {
    let (sources, references): (Option<Vec<String>>, Vec<Vec<Vec<String>>>) = match &args.tsv {
        Some(tsv) => {
            let mut src = Vec::new();
            let mut refs = Vec::new();
            for line in read_lines(tsv)? {
                let mut cols = line.split('\t');
                src.push(cols.next().unwrap_or("").to_string());
                refs.push(cols.map(tokenize).collect());
            }
            (Some(src), refs)
        }
        None => {
            if args.references.is_empty() {
                return Err(Error::Input("evaluate needs reference files or a tsv file".into()));
            }
            let sets = args
                .references
                .iter()
                .map(|p| read_lines(p))
                .collect::<Result<Vec<_>>>()?;
            let n = sets[0].len();
            if let Some((p, s)) = args.references.iter().zip(&sets).find(|(_, s)| s.len() != n) {
                return Err(Error::Input(format!(
                    "{} has {} lines, expected {n}",
                    p.display(),
                    s.len()
                )));
            }
            let refs = (0..n).map(|i| sets.iter().map(|s| tokenize(&s[i])).collect()).collect();
            let src = args.sources.as_deref().map(read_lines).transpose()?;
            (src, refs)
        }
    };
    let n = references.len();
    let check = |what: &str, len: usize| {
        if len != n {
            Err(Error::Input(format!("{what} has {len} lines, references have {n}")))
        } else {
            Ok(())
        }
    };
    let cut = |text: &str| match args.truncate_bytes {
        Some(cap) => tokenize(&prefix_baseline(text, cap)),
        None => tokenize(text),
    };
    let mut systems: Vec<(String, Vec<Vec<String>>)> = Vec::new();
    if let Some(c) = &args.candidates {
        let lines = read_lines(c)?;
        check("candidates", lines.len())?;
        systems.push(("seq3".into(), lines.iter().map(|l| cut(l)).collect()));
    }
    if args.baselines {
        let src = sources
            .as_ref()
            .ok_or_else(|| Error::Input("baselines need source sentences".into()))?;
        check("sources", src.len())?;
        systems.push(("lead-8".into(), src.iter().map(|s| lead_n_baseline(&tokenize(s), 8)).collect()));
        systems.push(("prefix-75".into(), src.iter().map(|s| tokenize(&prefix_baseline(s, 75))).collect()));
    }
    if systems.is_empty() {
        return Err(Error::Input("nothing to evaluate: give candidates or ask for baselines".into()));
    }
    let mut reports = Vec::new();
    for (name, cands) in systems {
        let examples: Vec<EvalExample> = cands
            .into_iter()
            .zip(&references)
            .enumerate()
            .map(|(i, (candidate, refs))| EvalExample {
                source: sources.as_ref().map(|s| tokenize(&s[i])).unwrap_or_default(),
                candidate,
                references: refs.clone(),
            })
            .collect();
        reports.push((name, evaluate_set(&examples, args.stem)?));
    }
    let rows: Vec<(&str, &EvalReport)> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    print!("{}", format_table(&rows));
    if let Some(first) = reports.first() {
        println!("evaluated {} examples, filtered {}", first.1.evaluated, first.1.filtered);
    }
    if let Some(out) = &args.out {
        let settings = json!({
            "stem": args.stem,
            "baselines": args.baselines,
            "truncate_bytes": args.truncate_bytes,
            "candidates": args.candidates,
            "references": args.references,
            "sources": args.sources,
            "tsv": args.tsv,
        });
        let systems: serde_json::Map<String, serde_json::Value> = reports
            .iter()
            .map(|(n, r)| (n.clone(), serde_json::to_value(r).expect("plain report")))
            .collect();
        let report = json!({"settings": settings, "systems": systems});
        write_file(out, &serde_json::to_string_pretty(&report).expect("plain report"))?;
    }
    Ok(reports)
}
