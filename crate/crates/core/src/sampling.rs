//! The differentiable word bottleneck: soft-argmax, Gumbel-Softmax,
//! straight-through estimation, target-length sampling and the temperature
//! policy.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower/upper clamp of the uniform draw inside the Gumbel transform.
pub const GUMBEL_CLAMP: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    /// Temperature-peaked softmax mixture of embeddings, no noise.
    SoftArgmax,
    /// Gumbel-Softmax mixture without discretization.
    GumbelRelaxed,
    /// Exact embedding of `argmax(u + ξ)` forward, Gumbel-Softmax gradient backward.
    GumbelSt,
    /// `argmax(u)` with no gradient path; used at inference.
    Greedy,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SamplingMode::SoftArgmax => "soft-argmax",
            SamplingMode::GumbelRelaxed => "gumbel-relaxed",
            SamplingMode::GumbelSt => "gumbel-st",
            SamplingMode::Greedy => "greedy",
        };
        f.write_str(s)
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft-argmax" => Ok(SamplingMode::SoftArgmax),
            "gumbel-relaxed" => Ok(SamplingMode::GumbelRelaxed),
            "gumbel-st" => Ok(SamplingMode::GumbelSt),
            "greedy" => Ok(SamplingMode::Greedy),
            other => Err(Error::Config(format!("unknown sampling mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingConfig {
    pub mode: SamplingMode,
    pub tau: f64,
    pub learned_tau: bool,
    pub tau0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub min_len: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            mode: SamplingMode::GumbelSt,
            tau: 0.5,
            learned_tau: false,
            tau0: 1.0,
            alpha: 0.4,
            beta: 0.6,
            min_len: 5,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("sampling.tau must be positive, got {}", self.tau)));
        }
        if !(self.tau0 > 0.0) {
            return Err(Error::Config(format!("sampling.tau0 must be positive, got {}", self.tau0)));
        }
        if !(0.0 < self.alpha && self.alpha < self.beta && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < alpha < beta < 1, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.min_len == 0 {
            return Err(Error::Config("sampling.min_len must be positive".into()));
        }
        Ok(())
    }
}

/// `ξ = -ln(-ln x)` with `x ~ U(0, 1)` clamped away from both ends.
pub fn gumbel_from_uniform(x: f64) -> f64 {
    let x = x.clamp(GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP);
    -(-x.ln()).ln()
}

pub fn gumbel_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| gumbel_from_uniform(rng.gen::<f64>())).collect()
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Temperature of the relaxed softmax: a constant, or `1/τ` as a graph scalar.
#[derive(Clone, Copy, Debug)]
pub enum Temperature {
    Fixed(f64),
    /// Node holding the inverse temperature `1/τ`.
    Learned(Var),
}

impl Temperature {
    fn check(&self) -> Result<()> {
        match *self {
            Temperature::Fixed(t) if !(t > 0.0) => {
                Err(Error::Input(format!("temperature must be positive, got {t}")))
            }
            _ => Ok(()),
        }
    }
}

/// `τ = 1 / (softplus(w_τ·h) + τ₀)`. Returns the graph node for `1/τ` and the value of `τ`.
pub fn learned_temperature(g: &mut Graph, h: Var, w_tau: Var, tau0: f64) -> Result<(Var, f64)> {
    if !(tau0 > 0.0) {
        return Err(Error::Input(format!("tau0 must be positive, got {tau0}")));
    }
    let s = g.dot(w_tau, h)?;
    let sp = g.softplus(s);
    let inv = g.add_scalar(sp, tau0);
    let tau = 1.0 / g.scalar(inv);
    Ok((inv, tau))
}

fn relaxed_weights(g: &mut Graph, logits: Var, temperature: Temperature) -> Result<Var> {
    match temperature {
        Temperature::Fixed(t) => g.softmax(logits, t),
        Temperature::Learned(inv) => {
            let scaled = g.scale_by(logits, inv)?;
            g.softmax(scaled, 1.0)
        }
    }
}

/// Mixture of embedding rows weighted by `softmax(u/τ)`. Returns `(weights, embedding)`.
pub fn soft_argmax_embedding(
    g: &mut Graph,
    logits: Var,
    temperature: Temperature,
    embeddings: Var,
) -> Result<(Var, Var)> {
    temperature.check()?;
    let w = relaxed_weights(g, logits, temperature)?;
    let e = g.matvec_t(embeddings, w)?;
    Ok((w, e))
}

/// Gumbel-Softmax mixture with explicit noise.
pub fn gumbel_softmax_with_noise(
    g: &mut Graph,
    logits: Var,
    temperature: Temperature,
    embeddings: Var,
    noise: &[f64],
) -> Result<(Var, Var)> {
    temperature.check()?;
    let xi = g.constant(Tensor::vector(noise.to_vec()));
    let noisy = g.add(logits, xi)?;
    soft_argmax_embedding(g, noisy, temperature, embeddings)
}

/// Gumbel-Softmax mixture with fresh noise. Returns `(weights, embedding, ξ)`.
pub fn gumbel_softmax_embedding<R: Rng + ?Sized>(
    g: &mut Graph,
    logits: Var,
    temperature: Temperature,
    embeddings: Var,
    rng: &mut R,
) -> Result<(Var, Var, Vec<f64>)> {
    temperature.check()?;
    let noise = gumbel_noise(g.value(logits).len(), rng);
    let (w, e) = gumbel_softmax_with_noise(g, logits, temperature, embeddings, &noise)?;
    Ok((w, e, noise))
}

/// Straight-through with explicit noise: forward is the exact row of
/// `argmax(u + ξ)`, backward is the Gumbel-Softmax mixture's gradient.
pub fn straight_through_with_noise(
    g: &mut Graph,
    logits: Var,
    temperature: Temperature,
    embeddings: Var,
    noise: &[f64],
) -> Result<(usize, Var)> {
    let noisy: Vec<f64> = g
        .value(logits)
        .data()
        .iter()
        .zip(noise)
        .map(|(u, x)| u + x)
        .collect();
    let id = argmax(&noisy);
    let (_, soft) = gumbel_softmax_with_noise(g, logits, temperature, embeddings, noise)?;
    let hard = Tensor::vector(g.value(embeddings).row(id).to_vec());
    let e = g.straight_through(hard, soft)?;
    Ok((id, e))
}

pub fn straight_through_embedding<R: Rng + ?Sized>(
    g: &mut Graph,
    logits: Var,
    temperature: Temperature,
    embeddings: Var,
    rng: &mut R,
) -> Result<(usize, Var, Vec<f64>)> {
    let noise = gumbel_noise(g.value(logits).len(), rng);
    let (id, e) = straight_through_with_noise(g, logits, temperature, embeddings, &noise)?;
    Ok((id, e, noise))
}

/// `argmax(u)` and its embedding row as a constant.
pub fn greedy_embedding(g: &mut Graph, logits: Var, embeddings: Var) -> (usize, Var) {
    let id = argmax(g.value(logits).data());
    let row = Tensor::vector(g.value(embeddings).row(id).to_vec());
    (id, g.constant(row))
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// `M = round(u)`, `u ~ U(αN, βN)`, raised to `min_len` when smaller.
pub fn sample_target_length<R: Rng + ?Sized>(
    source_len: usize,
    alpha: f64,
    beta: f64,
    min_len: usize,
    rng: &mut R,
) -> usize {
    let n = source_len as f64;
    let u = alpha * n + (beta - alpha) * n * rng.gen::<f64>();
    round_half_up(u).max(min_len)
}

/// Test-time length `max(min_len, round(ratio · N))`.
pub fn inference_length(source_len: usize, ratio: f64, min_len: usize) -> usize {
    round_half_up(ratio * source_len as f64).max(min_len)
}

/// One decoded summary position.
#[derive(Clone, Debug)]
pub struct SummaryStep {
    pub logits: Var,
    pub token: usize,
    /// Embedding passed on to the next step and to the reconstructor.
    pub embedding: Var,
    /// Relaxed mixture weights behind `embedding`; `None` when greedy.
    pub weights: Option<Var>,
    /// Gumbel noise used at this step, kept for replay.
    pub noise: Option<Vec<f64>>,
    /// Temperature actually used (relevant with learned temperature).
    pub tau: f64,
}

/// The latent word sequence.
#[derive(Clone, Debug)]
pub struct SummarySample {
    /// The `M` summary positions (fewer at inference if EOS came early).
    pub steps: Vec<SummaryStep>,
    /// Extra steps past `M` that feed the length penalty.
    pub extra: Vec<SummaryStep>,
    pub target_len: usize,
}

impl SummarySample {
    pub fn tokens(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.token).collect()
    }
}
