//! Synthetic corpus → vocabulary → LM prior → SEQ³ → ROUGE against the
//! planted topic words, all on the desk profile.
//!
//! cargo run --release --example desk_pipeline -- [seed] [key=value ...]

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seq3::config::RunConfig;
use seq3::eval::{evaluate_set, EvalExample};
use seq3::lm::train_lm;
use seq3::synthetic::generate;
use seq3::train::{prepare_examples, Trainer};
use seq3::vocab::{build_vocab, compute_idf, decode_restore, encode_with_oov};

fn main() -> seq3::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().and_then(|s| s.parse().ok()).unwrap_or(7);
    let mut config = RunConfig::base(seed, true);
    for kv in args.iter().filter(|a| a.contains('=')) {
        let (k, v) = kv.split_once('=').unwrap();
        config.set(k, v)?;
    }
    config.validate()?;
    let started = Instant::now();

    let corpus = generate(&config.synthetic)?;
    let vocab = build_vocab(&corpus.sentences, config.vocab_cap)?;
    let idf = compute_idf(&corpus.sentences, &vocab)?;
    let encoded: Vec<Vec<usize>> = corpus.sentences.iter().map(|s| encode_with_oov(s, &vocab).0).collect();
    println!("corpus: {} sentences, {} ids", encoded.len(), vocab.len());

    let (lm, history) = train_lm(&encoded, config.lm.clone(), vocab.len(), seed)?;
    println!("lm perplexity {:.2} ({:.0?})", history.last().unwrap().perplexity, started.elapsed());

    let data = prepare_examples(&encoded, &idf);
    let mut trainer = Trainer::new(config.seq3.clone(), vocab.len(), None)?;
    let mut first = None;
    trainer.run(
        &data,
        Some(&lm),
        |r| {
            first.get_or_insert(r.total);
            if r.step % 50 == 0 {
                println!(
                    "step {:5} total {:.3} l_r {:.3} l_p {:.3} l_t {:.3} l_l {:.3}",
                    r.step, r.total, r.l_r, r.l_p, r.l_t, r.l_l
                );
            }
            Ok(())
        },
        |_, e| {
            println!("epoch {} mean {:.4} ({:.0?})", e.epoch, e.mean_total, started.elapsed());
            Ok(())
        },
    )?;
    println!("initial batch loss {:.4}", first.unwrap_or(f64::NAN));

    let held = generate(&seq3::synthetic::SyntheticSpec {
        sentences: 300,
        seed: seed + 1000,
        ..config.synthetic.clone()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model_ex = Vec::new();
    let mut random_ex = Vec::new();
    for (i, (s, t)) in held.sentences.iter().zip(&held.topics).enumerate() {
        let (ids, oov) = encode_with_oov(s, &vocab);
        let summary = decode_restore(&trainer.model.compress_ids(&ids, 0.5)?, &oov, &vocab);
        if i < 5 {
            println!("{}\n  -> {}\n  ref {}", s.join(" "), summary.join(" "), t.join(" "));
        }
        let m = summary.len().max(1);
        let mut keep = sample(&mut rng, s.len(), m.min(s.len())).into_vec();
        keep.sort_unstable();
        let random: Vec<String> = keep.iter().map(|&k| s[k].clone()).collect();
        model_ex.push(EvalExample {
            source: s.clone(),
            candidate: summary,
            references: vec![t.clone()],
        });
        random_ex.push(EvalExample {
            source: s.clone(),
            candidate: random,
            references: vec![t.clone()],
        });
    }
    let a = evaluate_set(&model_ex, false)?;
    let b = evaluate_set(&random_ex, false)?;
    println!("ROUGE-1 F1: seq3 {:.2}  random {:.2}", 100.0 * a.mean.r1.f1, 100.0 * b.mean.r1.f1);
    println!("total {:.0?}", started.elapsed());
    Ok(())
}
