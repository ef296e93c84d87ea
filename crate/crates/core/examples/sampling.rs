//! The differentiable word choices: soft-argmax, Gumbel-Softmax and
//! straight-through, plus the learned temperature and target lengths.
//!
//! cargo run --release --example sampling

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seq3::autodiff::Graph;
use seq3::sampling::{
    gumbel_softmax_embedding, inference_length, learned_temperature, sample_target_length, soft_argmax_embedding,
    straight_through_embedding, Temperature,
};
use seq3::tensor::Tensor;

fn main() -> seq3::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits = vec![1.0, 2.5, 0.3, 2.2];
    let table = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0])?;

    for tau in [2.0, 0.5, 0.1] {
        let mut g = Graph::new();
        let u = g.input(Tensor::vector(logits.clone()));
        let e = g.constant(table.clone());
        let (w, v) = soft_argmax_embedding(&mut g, u, Temperature::Fixed(tau), e)?;
        println!("soft-argmax tau {tau:3}: weights {:.3?} -> {:.3?}", g.value(w).data(), g.value(v).data());
    }

    let mut g = Graph::new();
    let u = g.input(Tensor::vector(logits.clone()));
    let e = g.constant(table.clone());
    let (w, v, noise) = gumbel_softmax_embedding(&mut g, u, Temperature::Fixed(0.5), e, &mut rng)?;
    println!("gumbel-softmax: noise {noise:.3?}\n  weights {:.3?} -> {:.3?}", g.value(w).data(), g.value(v).data());

    let mut counts = [0usize; 4];
    for _ in 0..10_000 {
        let mut g = Graph::new();
        let u = g.input(Tensor::vector(logits.clone()));
        let e = g.constant(table.clone());
        let (id, _, _) = straight_through_embedding(&mut g, u, Temperature::Fixed(0.5), e, &mut rng)?;
        counts[id] += 1;
    }
    let p = seq3::autodiff::softmax_values(&logits, 1.0);
    println!("straight-through picks over 10k draws {counts:?}, softmax {p:.3?}");

    let mut g = Graph::new();
    let h = g.constant(Tensor::vector(vec![0.4, -0.2]));
    let w = g.input(Tensor::vector(vec![0.0, 0.0]));
    let (_, tau) = learned_temperature(&mut g, h, w, 1.0)?;
    println!("learned temperature at w = 0: {tau:.4}");

    let lengths: Vec<usize> = (0..12).map(|_| sample_target_length(20, 0.4, 0.6, 5, &mut rng)).collect();
    println!("training lengths for N = 20: {lengths:?}; inference at ratio 0.5: {}", inference_length(20, 0.5, 5));
    Ok(())
}
