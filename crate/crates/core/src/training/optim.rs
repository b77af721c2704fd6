//! Adam / AdamW and the warmup-cosine learning rate schedule.

use ecat_runtime::{ParamId, ParamKind, ParamStore, Scalar};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam with optional decoupled weight decay, applied to `Weight` parameters only.
#[derive(Debug, Clone)]
pub struct Adam {
    pub weight_decay: f64,
    step: u64,
    params: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(store: &ParamStore<T>, params: Vec<ParamId>, weight_decay: f64) -> Self {
        let m = params.iter().map(|&id| vec![0.0; store.value(id).len()]).collect::<Vec<_>>();
        Self { weight_decay, step: 0, v: m.clone(), m, params }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the gradients held in the store.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (k, &id) in self.params.iter().enumerate() {
            let param = store.get_mut(id);
            let decay = if param.kind == ParamKind::Weight { self.weight_decay } else { 0.0 };
            let grad: Vec<f64> = param.grad.data().iter().map(|g| g.as_f64()).collect();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let value = std::sync::Arc::make_mut(&mut param.value);
            for (i, w) in value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let mut x = w.as_f64();
                x -= lr * decay * x;
                x -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                *w = T::from_f64(x);
            }
        }
    }
}

/// Linear warmup from 0 to `base`, then cosine decay to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base * step as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        0.5 * self.base * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ecat_runtime::Tensor;

    fn scalar_store(value: f64, kind: ParamKind) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(value), kind);
        (s, id)
    }

    #[test]
    fn hand_computed_trajectory() {
        let (mut store, id) = scalar_store(1.0, ParamKind::Weight);
        let mut opt = Adam::new(&store, vec![id], 0.0);
        let (lr, g) = (0.1, 0.5);
        // Written out by hand: m_t, v_t, bias corrections, update.
        let mut w = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=3 {
            store.get_mut(id).grad = Tensor::scalar(g);
            opt.step(&mut store, lr);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            w -= lr * mhat / (vhat.sqrt() + 1e-8);
            assert!((store.value(id).item() - w).abs() < 1e-12);
        }
        // With a constant gradient every bias-corrected step is ~lr.
        assert!((store.value(id).item() - 0.7).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_moves_only_by_decay() {
        let (mut store, id) = scalar_store(2.0, ParamKind::Weight);
        let mut opt = Adam::new(&store, vec![id], 0.0);
        opt.step(&mut store, 0.1);
        assert_eq!(store.value(id).item(), 2.0);
        let mut opt = Adam::new(&store, vec![id], 0.05);
        opt.step(&mut store, 0.1);
        assert!((store.value(id).item() - 2.0 * (1.0 - 0.1 * 0.05)).abs() < 1e-15);
        let (mut store, id) = scalar_store(2.0, ParamKind::NoDecay);
        let mut opt = Adam::new(&store, vec![id], 0.05);
        opt.step(&mut store, 0.1);
        assert_eq!(store.value(id).item(), 2.0);
    }

    #[test]
    fn schedule_endpoints() {
        let s = CosineSchedule { base: 1e-3, warmup_steps: 10, total_steps: 110 };
        assert_eq!(s.lr(0), 0.0);
        assert!((s.lr(5) - 5e-4).abs() < 1e-18);
        assert_eq!(s.lr(10), 1e-3);
        assert!((s.lr(60) - 5e-4).abs() < 1e-15);
        assert!(s.lr(110) < 1e-18);
        let mut prev = s.lr(10);
        for k in 11..=110 {
            assert!(s.lr(k) <= prev);
            prev = s.lr(k);
        }
    }
}
