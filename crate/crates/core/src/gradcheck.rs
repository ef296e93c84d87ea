//! Central finite-difference checks against the tape's gradients.
//!
//! The checked function must be deterministic: any noise source (Gumbel
//! draws, dropout masks, sampled lengths) has to be replayed identically on
//! every evaluation, e.g. by reseeding the generator inside the closure.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

pub const DEFAULT_STEP: f64 = 1e-3;

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = f(&mut g, xv)?;
    let out = g.value(y);
    if !out.is_scalar() {
        return Err(Error::Contract("grad_check needs a scalar function".into()));
    }
    Ok(out.item())
}

/// Maximum relative error between autodiff and central differences of `f` at `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = f(&mut g, xv)?;
    let grads = g.gradients(y)?;
    let analytic = grads
        .get(xv)
        .map(|s| s.to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Same check over selected parameters of a store.
///
/// `f` builds a fresh graph from the store and returns the scalar loss.
/// Returns the max relative error over every coordinate of `params`.
pub fn grad_check_params<F>(store: &mut ParamStore, params: &[ParamId], f: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|&id| {
            store
                .grad(id)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; store.value(id).len()])
        })
        .collect();
    store.zero_grad();

    let value_of = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        Ok(g.scalar(loss))
    };

    let mut worst: f64 = 0.0;
    for (k, &id) in params.iter().enumerate() {
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let plus = value_of(store)?;
            store.value_mut(id).data_mut()[i] = orig - eps;
            let minus = value_of(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[k][i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        Tensor::vector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn sum_tanh_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_vec(&mut rng, 8);
        let err = grad_check(
            |g, x| {
                let t = g.tanh(x);
                Ok(g.sum(t))
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn linear_map_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_vec(&mut rng, 5);
        let w = random_vec(&mut rng, 5);
        let err = grad_check(
            |g, x| {
                let wv = g.constant(w.clone());
                g.dot(wv, x)
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn params_variant_matches() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.3, -0.7, 1.1]));
        let err = grad_check_params(
            &mut store,
            &[w],
            |g, s| {
                let wv = g.param(s, w);
                let t = g.tanh(wv);
                let sq = g.mul(t, t)?;
                Ok(g.sum(sq))
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
