use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seq3::commands::{
    cmd_build_vocab, cmd_compress, cmd_evaluate, cmd_gen_synthetic, cmd_train, cmd_train_lm, EvaluateArgs,
    VOCAB_FILE,
};
use seq3::config::RunConfig;
use seq3::{Error, Result};

#[derive(Parser)]
#[command(name = "seq3", version, about = "Unsupervised sentence compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// Config file of `dotted.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from the small single-core profile.
    #[arg(long)]
    desk_profile: bool,
    /// Output directory (file for compress and evaluate).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Shared {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
        let mut pairs = self
            .set
            .iter()
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        for (k, v) in extra {
            if let Some(v) = v {
                pairs.push((k.to_string(), v.clone()));
            }
        }
        RunConfig::resolve(self.config.as_deref(), self.desk_profile, self.seed, &pairs)
    }
}

fn show(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and idf table of a corpus.
    BuildVocab {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Vocabulary size cap (default 15000).
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Pretrain the language-model prior.
    TrainLm {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// LM checkpoint to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the compressor-reconstructor.
    Train {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        idf: Option<PathBuf>,
        /// Frozen LM checkpoint for the prior loss.
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compress one sentence per line.
    Compress {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Vocabulary file; defaults to vocab.txt next to the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
    },
    /// Score summaries with ROUGE-1/2/L.
    Evaluate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// One or more reference files, line-aligned with the candidates.
        #[arg(long = "references", num_args = 1..)]
        references: Vec<PathBuf>,
        #[arg(long)]
        sources: Option<PathBuf>,
        /// `source<TAB>reference...` file instead of separate files.
        #[arg(long)]
        tsv: Option<PathBuf>,
        /// Disable Porter stemming.
        #[arg(long)]
        no_stem: bool,
        /// Also score LEAD-8 and PREFIX-75.
        #[arg(long)]
        baselines: bool,
        /// Truncate candidates to this many bytes before scoring.
        #[arg(long)]
        truncate_bytes: Option<usize>,
    },
    /// Generate the synthetic topic-word corpus.
    GenSynthetic {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        sentences: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildVocab { shared, corpus, cap } => {
            let c = shared.resolve(&[("data.corpus", show(&corpus)), ("vocab.cap", cap.map(|c| c.to_string()))])?;
            cmd_build_vocab(&c, &shared.out)?;
        }
        Command::TrainLm {
            shared,
            corpus,
            vocab,
            resume,
        } => {
            let c = shared.resolve(&[
                ("data.corpus", show(&corpus)),
                ("data.vocab", show(&vocab)),
                ("data.resume", show(&resume)),
            ])?;
            cmd_train_lm(&c, &shared.out)?;
        }
        Command::Train {
            shared,
            corpus,
            vocab,
            idf,
            lm,
            embeddings,
            resume,
        } => {
            let c = shared.resolve(&[
                ("data.corpus", show(&corpus)),
                ("data.vocab", show(&vocab)),
                ("data.idf", show(&idf)),
                ("data.lm", show(&lm)),
                ("data.embeddings", show(&embeddings)),
                ("data.resume", show(&resume)),
            ])?;
            let outcome = cmd_train(&c, &shared.out)?;
            println!("checkpoint {}", outcome.checkpoint.display());
        }
        Command::Compress {
            shared,
            checkpoint,
            vocab,
            input,
            ratio,
        } => {
            let vocab = vocab.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join(VOCAB_FILE)
            });
            let n = cmd_compress(&checkpoint, &vocab, &input, ratio, &shared.out)?;
            println!("compressed {n} lines into {}", shared.out.display());
        }
        Command::Evaluate {
            shared,
            candidates,
            references,
            sources,
            tsv,
            no_stem,
            baselines,
            truncate_bytes,
        } => {
            let args = EvaluateArgs {
                candidates,
                references,
                sources,
                tsv,
                stem: !no_stem,
                baselines,
                truncate_bytes,
                out: Some(shared.out.clone()),
            };
            cmd_evaluate(&args)?;
        }
        Command::GenSynthetic { shared, sentences } => {
            let c = shared.resolve(&[("synthetic.sentences", sentences.map(|s| s.to_string()))])?;
            cmd_gen_synthetic(&c, &shared.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
