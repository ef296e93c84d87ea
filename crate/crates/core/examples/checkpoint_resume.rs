//! Stops training after one epoch, saves a checkpoint, resumes from it and
//! checks the result matches an uninterrupted run bit for bit.
//!
//! cargo run --release --example checkpoint_resume

use seq3::checkpoint::Checkpoint;
use seq3::config::RunConfig;
use seq3::synthetic::{generate, SyntheticSpec};
use seq3::train::{prepare_examples, Trainer};
use seq3::vocab::{build_vocab, compute_idf, encode_with_oov};

fn main() -> seq3::Result<()> {
    let mut config = RunConfig::base(9, true);
    for (k, v) in [("model.emb_dim", "8"), ("model.enc_hidden", "8"), ("model.dec_hidden", "8"), ("train.epochs", "2")] {
        config.set(k, v)?;
    }
    let corpus = generate(&SyntheticSpec {
        sentences: 200,
        ..config.synthetic.clone()
    })?;
    let vocab = build_vocab(&corpus.sentences, config.vocab_cap)?;
    let idf = compute_idf(&corpus.sentences, &vocab)?;
    let encoded: Vec<Vec<usize>> = corpus.sentences.iter().map(|s| encode_with_oov(s, &vocab).0).collect();
    let data = prepare_examples(&encoded, &idf);

    let mut straight = Trainer::new(config.seq3.clone(), vocab.len(), None)?;
    let full = straight.run(&data, None, |_| Ok(()), |_, _| Ok(()))?;

    let mut first = Trainer::new(config.seq3.clone(), vocab.len(), None)?;
    first.train_epoch(&data, None, |_| Ok(()))?;
    let path = std::env::temp_dir().join("seq3-example.ckpt");
    Checkpoint::from_trainer(&first, &config, &vocab.hash()).save(&path)?;
    println!("saved epoch {} step {} to {}", first.epoch, first.step, path.display());

    let loaded = Checkpoint::load(&path)?;
    loaded.check_vocab(&vocab.hash())?;
    let (mut resumed, _) = loaded.into_trainer()?;
    let rest = resumed.run(&data, None, |_| Ok(()), |_, _| Ok(()))?;
    std::fs::remove_file(&path).ok();

    println!("uninterrupted epoch 2 mean {:.12}", full[1].mean_total);
    println!("resumed       epoch 2 mean {:.12}", rest[0].mean_total);
    let same = straight
        .model
        .store
        .iter()
        .zip(resumed.model.store.iter())
        .all(|((_, a), (_, b))| a.value == b.value);
    println!("parameters identical: {same}");
    Ok(())
}
