//! Reconstruction, language-model prior, topic and length losses.

use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub prior: f64,
    pub topic: f64,
    pub length: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reconstruction: 1.0,
            prior: 0.1,
            topic: 1.0,
            length: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.reconstruction, self.prior, self.topic, self.length];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {all:?}")));
        }
        Ok(())
    }
}

/// The four loss nodes and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossBundle {
    pub reconstruction: Var,
    pub prior: Var,
    pub topic: Var,
    pub length: Var,
    pub total: Var,
}

/// Plain values of a [`LossBundle`], for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossValues {
    pub l_r: f64,
    pub l_p: f64,
    pub l_t: f64,
    pub l_l: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn values(&self, g: &Graph) -> LossValues {
        LossValues {
            l_r: g.scalar(self.reconstruction),
            l_p: g.scalar(self.prior),
            l_t: g.scalar(self.topic),
            l_l: g.scalar(self.length),
            total: g.scalar(self.total),
        }
    }
}

/// `-Σ log p_R(x_i)` over the teacher-forced reconstruction steps.
pub fn reconstruction_loss(g: &mut Graph, logits: &[Var], targets: &[usize]) -> Result<Var> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Dimension {
            op: "reconstruction_loss",
            left: vec![logits.len()],
            right: vec![targets.len()],
        });
    }
    let terms = logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| g.cross_entropy(l, t))
        .collect::<Result<Vec<_>>>()?;
    g.add_n(&terms)
}

/// `Σ_t KL(p_C(·|y<t, x) ‖ p_LM(·|y<t))`. The prior enters as constants, so
/// gradient reaches the compressor logits only.
pub fn lm_prior_loss(g: &mut Graph, logits: &[Var], prior_log_probs: &[Vec<f64>]) -> Result<Var> {
    if logits.len() != prior_log_probs.len() || logits.is_empty() {
        return Err(Error::Dimension {
            op: "lm_prior_loss",
            left: vec![logits.len()],
            right: vec![prior_log_probs.len()],
        });
    }
    let terms = logits
        .iter()
        .zip(prior_log_probs)
        .map(|(&u, lq)| {
            let lp = g.log_softmax(u)?;
            let lq = g.constant(Tensor::vector(lq.clone()));
            g.kl_divergence(lp, lq)
        })
        .collect::<Result<Vec<_>>>()?;
    g.add_n(&terms)
}

/// `1 - cos(v^x, v^y)` with `v^x` the idf-weighted mean of the source
/// embeddings and `v^y` the plain mean of the summary embeddings.
pub fn topic_loss(g: &mut Graph, source: &[Var], idf: &[f64], summary: &[Var]) -> Result<Var> {
    if source.is_empty() || summary.is_empty() {
        return Err(Error::Input("topic loss needs nonempty source and summary".into()));
    }
    if idf.len() != source.len() {
        return Err(Error::Dimension {
            op: "topic_loss",
            left: vec![source.len()],
            right: vec![idf.len()],
        });
    }
    let mass: f64 = idf.iter().sum();
    let v_x = if mass > 0.0 {
        let scaled: Vec<Var> = source
            .iter()
            .zip(idf)
            .map(|(&e, &w)| g.scale(e, w / mass))
            .collect();
        g.add_n(&scaled)?
    } else {
        log::debug!("topic loss: zero idf mass, using the unweighted source mean");
        g.mean_n(source)?
    };
    let v_y = g.mean_n(summary)?;
    let zero_norm = |t: &Tensor| t.data().iter().all(|&v| v == 0.0);
    if zero_norm(g.value(v_x)) || zero_norm(g.value(v_y)) {
        log::debug!("topic loss: zero-norm centroid, returning 1 with no gradient");
        return Ok(g.constant(Tensor::scalar(1.0)));
    }
    let cos = g.cosine(v_x, v_y)?;
    let neg = g.scale(cos, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Cross-entropy of every step past `M` against EOS, summed.
pub fn length_penalty(g: &mut Graph, extra_logits: &[Var], eos: usize) -> Result<Var> {
    if extra_logits.is_empty() {
        return Err(Error::Contract("length penalty needs at least one step past M".into()));
    }
    let terms = extra_logits
        .iter()
        .map(|&l| g.cross_entropy(l, eos))
        .collect::<Result<Vec<_>>>()?;
    g.add_n(&terms)
}

/// `L = λ_R L_R + λ_P L_P + λ_T L_T + λ_L L_L`.
pub fn total_loss(
    g: &mut Graph,
    reconstruction: Var,
    prior: Var,
    topic: Var,
    length: Var,
    weights: &LossWeights,
) -> Result<LossBundle> {
    let parts = [
        g.scale(reconstruction, weights.reconstruction),
        g.scale(prior, weights.prior),
        g.scale(topic, weights.topic),
        g.scale(length, weights.length),
    ];
    let total = g.add_n(&parts)?;
    Ok(LossBundle {
        reconstruction,
        prior,
        topic,
        length,
        total,
    })
}

/// Averages per-example bundles into one batch bundle.
pub fn mean_bundle(g: &mut Graph, bundles: &[LossBundle]) -> Result<LossBundle> {
    let pick = |f: fn(&LossBundle) -> Var| bundles.iter().map(f).collect::<Vec<_>>();
    Ok(LossBundle {
        reconstruction: g.mean_n(&pick(|b| b.reconstruction))?,
        prior: g.mean_n(&pick(|b| b.prior))?,
        topic: g.mean_n(&pick(|b| b.topic))?,
        length: g.mean_n(&pick(|b| b.length))?,
        total: g.mean_n(&pick(|b| b.total))?,
    })
}
