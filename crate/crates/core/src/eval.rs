//! Dataset-level ROUGE evaluation and the extractive baselines.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rouge::{rouge_all, Prf, RougeScore};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalExample {
    pub source: Vec<String>,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleScore {
    /// Position in the input stream, counting filtered examples.
    pub index: usize,
    pub score: RougeScore,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mean: RougeScore,
    pub evaluated: usize,
    /// Examples dropped because every reference was empty.
    pub filtered: usize,
    pub per_example: Vec<ExampleScore>,
}

fn mean_prf(xs: &[Prf]) -> Prf {
    let n = xs.len() as f64;
    Prf {
        precision: xs.iter().map(|p| p.precision).sum::<f64>() / n,
        recall: xs.iter().map(|p| p.recall).sum::<f64>() / n,
        f1: xs.iter().map(|p| p.f1).sum::<f64>() / n,
    }
}

/// Scores every example, dropping empty references and then any example left
/// without one, and averages P, R and F1 per metric.
pub fn evaluate_set(examples: &[EvalExample], stem: bool) -> Result<EvalReport> {
    let mut per_example = Vec::with_capacity(examples.len());
    let mut filtered = 0;
    for (index, ex) in examples.iter().enumerate() {
        let refs: Vec<Vec<String>> = ex.references.iter().filter(|r| !r.is_empty()).cloned().collect();
        if refs.is_empty() {
            filtered += 1;
            continue;
        }
        per_example.push(ExampleScore {
            index,
            score: rouge_all(&ex.candidate, &refs, stem)?,
        });
    }
    if per_example.is_empty() {
        return Err(Error::EmptyEvaluation { filtered });
    }
    let pick = |f: fn(&RougeScore) -> Prf| per_example.iter().map(|e| f(&e.score)).collect::<Vec<_>>();
    let mean = RougeScore {
        r1: mean_prf(&pick(|s| s.r1)),
        r2: mean_prf(&pick(|s| s.r2)),
        rl: mean_prf(&pick(|s| s.rl)),
    };
    if filtered > 0 {
        log::info!("evaluation: {filtered} examples without a reference were skipped");
    }
    Ok(EvalReport {
        mean,
        evaluated: per_example.len(),
        filtered,
        per_example,
    })
}

/// The first `min(n, N)` source tokens.
pub fn lead_n_baseline<S: AsRef<str>>(source: &[S], n: usize) -> Vec<String> {
    source.iter().take(n).map(|s| s.as_ref().to_string()).collect()
}

/// Longest whole-token prefix of `source` whose UTF-8 length is at most `byte_cap`.
pub fn prefix_baseline(source: &str, byte_cap: usize) -> String {
    let mut out = String::new();
    for tok in source.split_whitespace() {
        let need = if out.is_empty() { tok.len() } else { out.len() + 1 + tok.len() };
        if need > byte_cap {
            if out.is_empty() {
                log::warn!("prefix baseline: first token alone exceeds {byte_cap} bytes");
            }
            break;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// A fixed-width table with F1 × 100 per metric, one row per system.
pub fn format_table(rows: &[(&str, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:width$}  {:>6}  {:>6}  {:>6}\n", "system", "R-1", "R-2", "R-L");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:width$}  {:>6.2}  {:>6.2}  {:>6.2}",
            name,
            100.0 * r.mean.r1.f1,
            100.0 * r.mean.r2.f1,
            100.0 * r.mean.rl.f1
        );
    }
    out
}
