//! Adam with bias correction.

use crate::tensor::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments, indexed like the store's parameters.
    pub moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: store
                .iter()
                .map(|(_, p)| (vec![0.0; p.value.len()], vec![0.0; p.value.len()]))
                .collect(),
        }
    }

    /// One update from the gradients currently held in `store`. Parameters
    /// without a gradient are left untouched, but their moments still decay.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = &mut self.moments[id.index()];
            let Some(grad) = p.grad.as_ref() else {
                continue;
            };
            let grad = grad.data();
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let gi = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                value[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![1.0, -1.0]));
        store.accumulate_grad(w, &[0.5, -2.0]);
        let mut adam = Adam::new(0.001, &store);
        adam.step(&mut store);
        let v = store.value(w).data();
        assert!((v[0] - (1.0 - 0.001)).abs() < 1e-9);
        assert!((v[1] - (-1.0 + 0.001)).abs() < 1e-9);
        assert_eq!((adam.beta1, adam.beta2, adam.eps), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![3.0]));
        let mut adam = Adam::new(0.1, &store);
        for _ in 0..500 {
            store.zero_grad();
            let x = store.value(w).data()[0];
            store.accumulate_grad(w, &[2.0 * x]);
            adam.step(&mut store);
        }
        assert!(store.value(w).data()[0].abs() < 1e-2);
    }
}
