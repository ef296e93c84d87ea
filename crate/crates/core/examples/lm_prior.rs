//! Pretrains the LSTM language model on the synthetic corpus and queries
//! its next-word distribution.
//!
//! cargo run --release --example lm_prior

use seq3::lm::{train_lm, LmConfig};
use seq3::synthetic::{generate, SyntheticSpec};
use seq3::vocab::{build_vocab, encode_with_oov, SOS};

fn main() -> seq3::Result<()> {
    let corpus = generate(&SyntheticSpec {
        sentences: 1000,
        ..Default::default()
    })?;
    let vocab = build_vocab(&corpus.sentences, 200)?;
    let encoded: Vec<Vec<usize>> = corpus.sentences.iter().map(|s| encode_with_oov(s, &vocab).0).collect();
    let config = LmConfig {
        epochs: 3,
        ..LmConfig::desk()
    };
    let (lm, history) = train_lm(&encoded, config, vocab.len(), 1)?;
    for e in &history {
        println!("epoch {} lr {} perplexity {:.2}", e.epoch, e.lr, e.perplexity);
    }

    let prefix: Vec<usize> = std::iter::once(SOS).chain(encoded[0][..3].iter().copied()).collect();
    let lp = lm.lm_distribution(&prefix)?;
    let mut top: Vec<(usize, f64)> = lp.iter().copied().enumerate().collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1));
    let words: Vec<&str> = encoded[0][..3].iter().map(|&i| vocab.token(i).unwrap_or("?")).collect();
    println!("after \"{}\":", words.join(" "));
    for (id, l) in top.iter().take(5) {
        println!("  {:8} p = {:.3}", vocab.token(*id).unwrap_or("?"), l.exp());
    }
    Ok(())
}
