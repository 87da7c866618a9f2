use crate::tensor::{ParamId, ParamStore};

/// Adam over the trainable parameters of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64) -> Self {
        let ids = store.trainable_ids();
        let zeros = |id: &ParamId| vec![0.0; store.get(*id).value.numel()];
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update from the accumulated gradients.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, &id) in self.ids.iter().enumerate() {
            let p = store.get_mut(id);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, x) in p.value.data_mut().iter_mut().enumerate() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Global L2 norm of all trainable gradients.
pub fn grad_norm(store: &ParamStore) -> f64 {
    store
        .trainable_ids()
        .iter()
        .flat_map(|&id| store.get(id).grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all trainable gradients so their global norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grad_norm(store);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for id in store.trainable_ids() {
            store.get_mut(id).grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}
