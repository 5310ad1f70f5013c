//! Named parameter storage, gradients, and the Adam optimizer.
//!
//! Parameters live in a flat slot vector; registration order is the
//! canonical order used for checkpoints and optimizer state, so two
//! processes that register the same names in the same order are bit-exact
//! reproducible.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, value: Mat) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name: {name}"
        );
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> ParamId {
        ParamId(*self.index.get(name).unwrap_or_else(|| {
            panic!("unknown parameter: {name}");
        }))
    }

    pub fn try_id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(self.values.iter())
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            slots: vec![None; self.values.len()],
        }
    }

    /// Replaces every value with the matching entry of `other` (shapes must
    /// agree). Used for checkpoint restore.
    pub fn load_values(&mut self, values: Vec<Mat>) {
        assert_eq!(values.len(), self.values.len(), "parameter count mismatch");
        for (cur, new) in self.values.iter_mut().zip(values) {
            assert_eq!(
                (cur.rows(), cur.cols()),
                (new.rows(), new.cols()),
                "parameter shape mismatch"
            );
            *cur = new;
        }
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }
}

/// Gradient sink aligned with a `ParamStore`. Slots stay `None` until the
/// first accumulation so untouched parameters cost nothing.
pub struct Gradients {
    slots: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        match &mut self.slots[id.0] {
            Some(existing) => existing.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.slots[id.0].as_ref()
    }

    pub fn scale(&mut self, s: f64) {
        for slot in self.slots.iter_mut().flatten() {
            slot.scale_assign(s);
        }
    }

    /// Global L2 norm over all accumulated gradients.
    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|m| m.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scales all gradients so the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    pub fn has_nan(&self) -> bool {
        self.slots.iter().flatten().any(|m| m.has_nan())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Mat>)> {
        self.slots
            .iter()
            .enumerate()
            .map(|(i, s)| (ParamId(i), s.as_ref()))
    }
}

/// Xavier/Glorot uniform initialization.
pub fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

/// Small-scale normal initialization for embedding tables.
pub fn normal_scaled(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        // Box-Muller keeps us off rand_distr for one sampler.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

/// Adam optimizer state, one moment pair per parameter slot.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: store
                .values()
                .iter()
                .map(|p| Mat::zeros(p.rows(), p.cols()))
                .collect(),
            v: store
                .values()
                .iter()
                .map(|p| Mat::zeros(p.rows(), p.cols()))
                .collect(),
        }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, grad) in grads.iter() {
            let Some(grad) = grad else { continue };
            let i = id.index();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = store.value_mut(id);
            for k in 0..grad.len() {
                let g = grad.data()[k];
                let mk = self.beta1 * m.data()[k] + (1.0 - self.beta1) * g;
                let vk = self.beta2 * v.data()[k] + (1.0 - self.beta2) * g * g;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let m_hat = mk / bc1;
                let v_hat = vk / bc2;
                p.data_mut()[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }

    pub fn moments(&self) -> (&[Mat], &[Mat]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, m: Vec<Mat>, v: Vec<Mat>, step: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.step = step;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn adam_moves_param_against_gradient() {
        let mut store = ParamStore::new();
        let id = store.register("w", Mat::from_vec(1, 1, vec![1.0]));
        let mut adam = Adam::new(&store, 0.1);
        let mut grads = store.zero_gradients();
        grads.accumulate(id, &Mat::from_vec(1, 1, vec![2.0]));
        adam.apply(&mut store, &grads);
        assert!(store.value(id).get(0, 0) < 1.0);
    }

    #[test]
    fn xavier_is_deterministic_per_seed() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(xavier(&mut r1, 3, 4), xavier(&mut r2, 3, 4));
    }

    #[test]
    fn clip_reduces_global_norm() {
        let mut store = ParamStore::new();
        let id = store.register("w", Mat::zeros(2, 2));
        let mut grads = store.zero_gradients();
        grads.accumulate(id, &Mat::from_vec(2, 2, vec![3.0, 4.0, 0.0, 0.0]));
        grads.clip_global_norm(1.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
        let _ = id;
    }
}
