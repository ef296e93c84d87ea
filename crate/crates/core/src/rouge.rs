//! ROUGE-1, ROUGE-2 and ROUGE-L F1.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stem::porter_stem;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// From a match count and the two lengths; any zero gives all zeros.
    pub fn from_counts(matched: usize, candidate: usize, reference: usize) -> Self {
        if matched == 0 || candidate == 0 || reference == 0 {
            return Prf::default();
        }
        let p = matched as f64 / candidate as f64;
        let r = matched as f64 / reference as f64;
        Prf {
            precision: p,
            recall: r,
            f1: 2.0 * p * r / (p + r),
        }
    }
}

/// R-1, R-2 and R-L of one candidate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RougeScore {
    pub r1: Prf,
    pub r2: Prf,
    pub rl: Prf,
}

/// Lowercases and, when `stem` is set, Porter-stems every token.
pub fn normalize<S: AsRef<str>>(tokens: &[S], stem: bool) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            let low = t.as_ref().to_lowercase();
            if stem {
                porter_stem(&low)
            } else {
                low
            }
        })
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn ngram_score(cand: &[String], reference: &[String], n: usize) -> Prf {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::from_counts(
        matched,
        cand.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// The score with the highest F1; ties keep the earlier reference.
fn best(scores: impl Iterator<Item = Prf>) -> Prf {
    scores.fold(None, |acc: Option<Prf>, s| match acc {
        Some(a) if a.f1 >= s.f1 => Some(a),
        _ => Some(s),
    })
    .unwrap_or_default()
}

fn check_refs<S>(references: &[Vec<S>]) -> Result<()> {
    if references.is_empty() {
        return Err(Error::Input("ROUGE needs at least one reference".into()));
    }
    Ok(())
}

/// Clipped n-gram overlap for `n` in {1, 2}, max-F1 over references.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>], n: usize, stem: bool) -> Result<Prf> {
    if !(1..=2).contains(&n) {
        return Err(Error::Input(format!("ROUGE-N is defined here for n in 1..=2, got {n}")));
    }
    check_refs(references)?;
    let cand = normalize(candidate, stem);
    Ok(best(references.iter().map(|r| ngram_score(&cand, &normalize(r, stem), n))))
}

/// LCS-based ROUGE-L, max-F1 over references.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>], stem: bool) -> Result<Prf> {
    check_refs(references)?;
    let cand = normalize(candidate, stem);
    Ok(best(references.iter().map(|r| {
        let r = normalize(r, stem);
        Prf::from_counts(lcs_len(&cand, &r), cand.len(), r.len())
    })))
}

pub fn rouge_all<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>], stem: bool) -> Result<RougeScore> {
    Ok(RougeScore {
        r1: rouge_n(candidate, references, 1, stem)?,
        r2: rouge_n(candidate, references, 2, stem)?,
        rl: rouge_l(candidate, references, stem)?,
    })
}
