//! Vocabulary construction, per-sentence OOV copy tokens and idf weights.
//!
//! cargo run --release --example vocab_oov

use seq3::vocab::{build_vocab, compute_idf, decode_restore, encode_with_oov, tokenize};

fn main() -> seq3::Result<()> {
    let corpus: Vec<Vec<String>> = [
        "the minister met the press on monday",
        "the press asked the minister about taxes",
        "taxes rose on monday",
    ]
    .iter()
    .map(|s| tokenize(s))
    .collect();
    let vocab = build_vocab(&corpus, 6)?;
    let idf = compute_idf(&corpus, &vocab)?;
    println!("{} ids (reserved tokens included)", vocab.len());
    for id in 0..vocab.len() {
        println!("  {id:2} {:12} idf {:.3}", vocab.token(id).unwrap_or("?"), idf.get(id));
    }

    let sentence = tokenize("Merkel and Macron met the press in Aachen");
    let (ids, oov) = encode_with_oov(&sentence, &vocab);
    let shown: Vec<&str> = ids.iter().map(|&i| vocab.token(i).unwrap_or("?")).collect();
    println!("\nencoded:  {}", shown.join(" "));
    // A summary that keeps two of the unknown names.
    let summary = [ids[0], ids[2], ids[7]];
    println!("restored: {}", decode_restore(&summary, &oov, &vocab).join(" "));
    Ok(())
}
