use crate::{ParamId, ParamStore, Real, Tensor};

/// Adam with bias correction. Moment buffers are allocated lazily per
/// parameter the first time it receives a gradient.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) {
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step_size = T::lit(self.lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(self.eps);
        for (id, grad) in grads {
            if !store.entry(*id).trainable {
                continue;
            }
            let i = id.index();
            let shape = grad.shape().to_vec();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(&shape));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(&shape));
            let w = store.get_mut(*id);
            for (((w, m), v), &g) in w
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
                .zip(grad.data())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [(ParamId, Tensor<T>)], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.sum_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
