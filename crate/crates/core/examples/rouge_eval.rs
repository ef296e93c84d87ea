//! ROUGE-1/2/L with and without stemming, and the LEAD-8 and PREFIX-75
//! baselines over a handful of headline pairs.
//!
//! cargo run --release --example rouge_eval

use seq3::eval::{evaluate_set, format_table, lead_n_baseline, prefix_baseline, EvalExample};
use seq3::rouge::rouge_all;
use seq3::vocab::tokenize;

const DATA: [(&str, &str, &str); 3] = [
    (
        "the central bank raised interest rates on thursday for the third time this year",
        "central bank raises rates",
        "central bank raised interest rates again",
    ),
    (
        "heavy rains flooded villages across the southern province , officials said",
        "floods hit southern province",
        "rains flood southern villages",
    ),
    (
        "the striker scored twice as the home side won the cup final",
        "home side wins cup final",
        "striker scores twice in cup final win",
    ),
];

fn main() -> seq3::Result<()> {
    let (src, cand, reference) = DATA[0];
    for stem in [false, true] {
        let s = rouge_all(&tokenize(cand), &[tokenize(reference)], stem)?;
        println!(
            "stem {stem:5}: R-1 {:.3}  R-2 {:.3}  R-L {:.3}",
            s.r1.f1, s.r2.f1, s.rl.f1
        );
    }
    println!("lead-8:    {}", lead_n_baseline(&tokenize(src), 8).join(" "));
    println!("prefix-75: {}\n", prefix_baseline(src, 75));

    let build = |pick: &dyn Fn(&str, &str) -> Vec<String>| -> Vec<EvalExample> {
        DATA.iter()
            .map(|(s, c, r)| EvalExample {
                source: tokenize(s),
                candidate: pick(s, c),
                references: vec![tokenize(r)],
            })
            .collect()
    };
    let model = evaluate_set(&build(&|_, c| tokenize(c)), true)?;
    let lead = evaluate_set(&build(&|s, _| lead_n_baseline(&tokenize(s), 8)), true)?;
    let prefix = evaluate_set(&build(&|s, _| tokenize(&prefix_baseline(s, 75))), true)?;
    print!("{}", format_table(&[("system", &model), ("lead-8", &lead), ("prefix-75", &prefix)]));
    Ok(())
}
