//! Invariants checked over generated inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seq3::autodiff::{log_softmax_values, softmax_values, Graph};
use seq3::config::{parse_pairs, RunConfig};
use seq3::losses::topic_loss;
use seq3::model::word_dropout;
use seq3::rouge::{lcs_len, rouge_all, rouge_n};
use seq3::sampling::{inference_length, sample_target_length, soft_argmax_embedding, Temperature};
use seq3::tensor::{ParamStore, Tensor};
use seq3::vocab::{decode_restore, encode_with_oov, Vocabulary, SOS, UNK};

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..12)
}

fn sentence(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..max)
        .prop_map(|v| v.into_iter().map(str::to_string).collect())
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(x in logits(), t in 0.01f64..5.0) {
        let p = softmax_values(&x, t);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_is_stable(x in prop::collection::vec(-1e3f64..1e3, 1..12)) {
        let l = log_softmax_values(&x);
        prop_assert!(l.iter().all(|v| v.is_finite() && *v <= 1e-12));
        prop_assert!((l.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn relaxed_embedding_is_convex(x in logits(), dim in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = seq3::vocab::random_embeddings(x.len(), dim, &mut rng);
        let mut g = Graph::new();
        let u = g.input(Tensor::vector(x.clone()));
        let e = g.input(table.clone());
        let (w, out) = soft_argmax_embedding(&mut g, u, Temperature::Fixed(0.5), e).unwrap();
        let w = g.value(w).data().to_vec();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for j in 0..dim {
            let col: Vec<f64> = (0..x.len()).map(|i| table.row(i)[j]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = g.value(out).data()[j];
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn gradients_accumulate_linearly(x in prop::collection::vec(-2.0f64..2.0, 1..6), k in 1usize..4) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(x.clone()));
        let once = {
            let mut g = Graph::new();
            let w = g.param(&store, id);
            let y = g.tanh(w);
            let loss = g.sum(y);
            g.backward(loss, &mut store).unwrap();
            store.grad(id).unwrap().data().to_vec()
        };
        for _ in 1..k {
            let mut g = Graph::new();
            let w = g.param(&store, id);
            let y = g.tanh(w);
            let loss = g.sum(y);
            g.backward(loss, &mut store).unwrap();
        }
        let total = store.grad(id).unwrap().data().to_vec();
        for (a, b) in once.iter().zip(&total) {
            prop_assert!((a * k as f64 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn topic_loss_in_range(
        src in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..6),
        sum in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..6),
        idf in prop::collection::vec(0.0f64..5.0, 6),
    ) {
        let mut g = Graph::new();
        let s: Vec<_> = src.iter().map(|v| g.input(Tensor::vector(v.clone()))).collect();
        let y: Vec<_> = sum.iter().map(|v| g.input(Tensor::vector(v.clone()))).collect();
        let l = topic_loss(&mut g, &s, &idf[..s.len()], &y).unwrap();
        let v = g.scalar(l);
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&v));
    }

    #[test]
    fn rouge_scores_are_bounded(c in sentence(10), r in sentence(10)) {
        prop_assume!(!r.is_empty());
        let s = rouge_all(&c, &[r.clone()], false).unwrap();
        for p in [s.r1, s.r2, s.rl] {
            for v in [p.precision, p.recall, p.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        // LCS never exceeds unigram overlap.
        prop_assert!(s.rl.f1 <= s.r1.f1 + 1e-12);
    }

    #[test]
    fn rouge_swaps_precision_and_recall(c in sentence(10), r in sentence(10)) {
        prop_assume!(!c.is_empty() && !r.is_empty());
        let ab = rouge_n(&c, &[r.clone()], 1, false).unwrap();
        let ba = rouge_n(&r, &[c.clone()], 1, false).unwrap();
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.recall, ba.precision);
        prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);
    }

    #[test]
    fn identical_text_scores_one(c in sentence(10)) {
        prop_assume!(c.len() >= 2);
        let s = rouge_all(&c, &[c.clone()], true).unwrap();
        prop_assert_eq!((s.r1.f1, s.r2.f1, s.rl.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn lcs_is_symmetric_and_bounded(a in sentence(12), b in sentence(12)) {
        let l = lcs_len(&a, &b);
        prop_assert_eq!(l, lcs_len(&b, &a));
        prop_assert!(l <= a.len().min(b.len()));
    }

    #[test]
    fn target_length_stays_in_band(n in 1usize..80, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = sample_target_length(n, 0.4, 0.6, 5, &mut rng);
        let lo = ((0.4 * n as f64) + 0.5).floor() as usize;
        let hi = ((0.6 * n as f64) + 0.5).floor() as usize;
        prop_assert!(m == 5.max(m) && (m == 5 || (lo..=hi).contains(&m)));
        prop_assert!(inference_length(n, 0.5, 5) >= 5);
    }

    #[test]
    fn word_dropout_keeps_sos(ids in prop::collection::vec(0usize..30, 1..20), rate in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = word_dropout(&ids, rate, &mut rng);
        prop_assert_eq!(out.len(), ids.len());
        for (a, b) in ids.iter().zip(&out) {
            prop_assert!(a == b || *b == UNK);
            if *a == SOS {
                prop_assert_eq!(*b, SOS);
            }
        }
        prop_assert_eq!(word_dropout(&ids, 0.0, &mut rng), ids);
    }

    #[test]
    fn oov_round_trip(words in prop::collection::vec(prop::sample::select(
        vec!["the", "cat", "John", "Rome", "Paris", "x1", "x2", "x3"]), 1..15)) {
        let vocab = Vocabulary::from_content(["the", "cat"]);
        let (ids, oov) = encode_with_oov(&words, &vocab);
        let back = decode_restore(&ids, &oov, &vocab);
        prop_assert_eq!(back, words);
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), desk in any::<bool>(), lr in 1e-5f64..1.0) {
        let mut c = RunConfig::base(seed, desk);
        c.seq3.lr = lr;
        let text = c.to_text();
        let pairs = parse_pairs(&text, std::path::Path::new("echo")).unwrap();
        prop_assert_eq!(RunConfig::from_pairs(&pairs).unwrap(), c);
    }
}
