//! Reverse-mode gradients of a small attention-like expression, checked
//! against central differences.
//!
//! cargo run --release --example gradcheck

use seq3::autodiff::Graph;
use seq3::gradcheck::grad_check;
use seq3::tensor::Tensor;

fn main() -> seq3::Result<()> {
    let keys = Tensor::matrix(3, 2, vec![0.5, -1.0, 0.2, 0.8, -0.6, 0.1])?;
    let query = Tensor::vector(vec![0.3, -0.7]);

    // softmax(K q) · K, then layer norm and a tanh readout.
    let f = |g: &mut Graph, q| {
        let k = g.constant(keys.clone());
        let scores = (0..3)
            .map(|i| {
                let r = g.row(k, i)?;
                g.dot(r, q)
            })
            .collect::<seq3::Result<Vec<_>>>()?;
        let scores = g.concat(&scores)?;
        let a = g.softmax(scores, 1.0)?;
        let ctx = g.matvec_t(k, a)?;
        let gain = g.constant(Tensor::vector(vec![1.0, 0.5]));
        let bias = g.constant(Tensor::vector(vec![0.0, 0.1]));
        let n = g.layer_norm(ctx, gain, bias)?;
        let t = g.tanh(n);
        Ok(g.sum(t))
    };

    let mut g = Graph::new();
    let q = g.input(query.clone());
    let y = f(&mut g, q)?;
    let grads = g.gradients(y)?;
    println!("f(q) = {:.6}", g.value(y).item());
    println!("df/dq = {:?}", grads.get(q).unwrap());

    for step in [1e-2, 1e-4, 1e-6] {
        println!("step {step:e}: max relative error {:.2e}", grad_check(f, &query, step)?);
    }
    Ok(())
}
