//! Trains a small model on the synthetic corpus and compresses sentences
//! holding unknown names, which come back through the OOV copy tokens.
//!
//! cargo run --release --example compress

use seq3::config::RunConfig;
use seq3::synthetic::generate;
use seq3::train::{prepare_examples, Trainer};
use seq3::vocab::{build_vocab, compute_idf, decode_restore, encode_with_oov, tokenize};

fn main() -> seq3::Result<()> {
    let mut config = RunConfig::base(2, true);
    config.set("synthetic.sentences", "1500")?;
    config.set("train.epochs", "2")?;
    let corpus = generate(&config.synthetic)?;
    let vocab = build_vocab(&corpus.sentences, config.vocab_cap)?;
    let idf = compute_idf(&corpus.sentences, &vocab)?;
    let encoded: Vec<Vec<usize>> = corpus.sentences.iter().map(|s| encode_with_oov(s, &vocab).0).collect();
    let mut trainer = Trainer::new(config.seq3.clone(), vocab.len(), None)?;
    trainer.run(&prepare_examples(&encoded, &idf), None, |_| Ok(()), |_, e| {
        println!("epoch {} mean loss {:.3}", e.epoch, e.mean_total);
        Ok(())
    })?;

    let mut inputs: Vec<Vec<String>> = corpus.sentences[..3].to_vec();
    inputs.push(tokenize("Ottokar f00 t010 f01 Brno f02 t020 f03"));
    for s in &inputs {
        let (ids, oov) = encode_with_oov(s, &vocab);
        for ratio in [0.5, 1.0] {
            let summary = trainer.model.compress_ids(&ids, ratio)?;
            println!("{ratio:.1} | {} => {}", s.join(" "), decode_restore(&summary, &oov, &vocab).join(" "));
        }
    }
    Ok(())
}
