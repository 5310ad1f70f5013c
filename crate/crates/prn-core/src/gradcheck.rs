//! Central-finite-difference gradient verification.
//!
//! Every differentiable block in this crate is checked by rebuilding its
//! forward pass twice per perturbed parameter entry and comparing the
//! numeric slope against the tape gradient.

use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Compares analytic gradients against central finite differences.
///
/// `loss_fn` must rebuild the full forward pass from the store and return
/// the scalar loss. `analytic` holds the tape gradients for the same store.
/// Entries where both gradients are below 1e-10 are counted but not scored;
/// elsewhere the relative error is |a - n| / max(|a|, |n|, 1e-8).
pub fn check_against_fd(
    store: &mut ParamStore,
    params: &[ParamId],
    analytic: &dyn Fn(ParamId, usize) -> f64,
    loss_fn: &dyn Fn(&ParamStore) -> f64,
    epsilon: f64,
) -> GradCheckReport {
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0;
    for &pid in params {
        let n_entries = store.value(pid).len();
        for k in 0..n_entries {
            let orig = store.value(pid).data()[k];

            store.value_mut(pid).data_mut()[k] = orig + epsilon;
            let plus = loss_fn(store);
            store.value_mut(pid).data_mut()[k] = orig - epsilon;
            let minus = loss_fn(store);
            store.value_mut(pid).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic(pid, k);
            checked += 1;
            if a.abs() < 1e-10 && numeric.abs() < 1e-10 {
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{}[{}]", store.name(pid), k);
            }
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        worst_param: worst,
        checked,
    }
}

/// Convenience wrapper: runs `build` once to get analytic gradients, then
/// checks every entry of every registered parameter.
pub fn check_all_params(
    store: &mut ParamStore,
    build: &dyn Fn(&ParamStore) -> (f64, crate::params::Gradients),
    epsilon: f64,
) -> GradCheckReport {
    let (_, grads) = build(store);
    let ids: Vec<ParamId> = store.iter().map(|(id, _, _)| id).collect();
    let zero = Mat::zeros(1, 1);
    let _ = zero;
    let analytic = move |pid: ParamId, k: usize| -> f64 {
        grads.get(pid).map(|m| m.data()[k]).unwrap_or(0.0)
    };
    let loss_fn = |s: &ParamStore| build(s).0;
    check_against_fd(store, &ids, &analytic, &loss_fn, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention;
    use crate::encoders::BiLstm;
    use crate::graph::Graph;
    use crate::params::Gradients;
    use crate::scoring;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// End-to-end tape check on a composed chain: BiLSTM over a short
    /// sequence, affinity + both attention flows, fusion, cosine scoring,
    /// and the margin loss.
    #[test]
    fn composed_chain_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let bilstm = BiLstm::register(&mut store, &mut rng, "enc", 3, 2);
        let w_aff = store.register("w_aff", crate::params::xavier(&mut rng, 12, 1));
        let proj = store.register("proj", crate::params::xavier(&mut rng, 4, 16));

        let xs_mat = Mat::from_fn(3, 5, |i, j| ((i * 5 + j) as f64 * 0.13).sin());
        let q_mat = Mat::from_fn(4, 4, |i, j| ((i * 4 + j) as f64 * 0.17).cos());
        let a_pos_mat = Mat::from_fn(4, 1, |i, _| ((i + 1) as f64 * 0.3).sin());
        let a_neg_mat = Mat::from_fn(4, 1, |i, _| ((i + 2) as f64 * 0.7).cos());

        let build = |s: &ParamStore| -> (f64, Gradients) {
            let g = Graph::new();
            let xs = g.constant(xs_mat.clone());
            let q = g.constant(q_mat.clone());
            let out = bilstm.run(&g, s, xs);
            let w = g.param(s, w_aff);
            let s_aff = attention::affinity(&g, out.hidden, q, w).unwrap();
            let qt = attention::recipe_to_question(&g, s_aff, q);
            let rt = attention::question_to_recipe(&g, s_aff, out.hidden);
            let fused = attention::fuse(&g, out.hidden, qt, rt);
            let pooled = g.sum_cols(fused);
            let p = g.param(s, proj);
            let o = g.tanh(g.matmul(p, pooled));
            let cp = scoring::cosine(&g, o, g.constant(a_pos_mat.clone())).unwrap();
            let cn = scoring::cosine(&g, o, g.constant(a_neg_mat.clone())).unwrap();
            let loss = scoring::hinge_loss(&g, cp, &[cn], 0.7).unwrap();
            let mut grads = s.zero_gradients();
            g.backward(loss, &mut grads);
            (g.value(loss).get(0, 0), grads)
        };

        let report = check_all_params(&mut store, &build, 1e-5);
        assert!(
            report.max_rel_error < 1e-6,
            "max rel error {} at {}",
            report.max_rel_error,
            report.worst_param
        );
        assert!(report.checked > 100);
    }

    /// The fused LSTM step against finite differences, including flow
    /// through x, h, and c inputs across two chained steps.
    #[test]
    fn fused_lstm_step_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let hidden = 3;
        let input = 4;
        let w = store.register("w", crate::params::xavier(&mut rng, 4 * hidden, input + hidden));
        let b = store.register("b", crate::params::xavier(&mut rng, 4 * hidden, 1));
        let x1 = Mat::from_fn(input, 1, |i, _| ((i + 1) as f64 * 0.37).sin());
        let x2 = Mat::from_fn(input, 1, |i, _| ((i + 2) as f64 * 0.53).cos());

        let build = |s: &ParamStore| -> (f64, Gradients) {
            let g = Graph::new();
            let wv = g.param(s, w);
            let bv = g.param(s, b);
            let h0 = g.zeros(hidden, 1);
            let c0 = g.zeros(hidden, 1);
            let (h1, c1) = g.lstm_step(wv, bv, g.constant(x1.clone()), h0, c0);
            let (h2, c2) = g.lstm_step(wv, bv, g.constant(x2.clone()), h1, c1);
            let loss = g.add(g.sum(g.tanh(h2)), g.sum(c2));
            let mut grads = s.zero_gradients();
            g.backward(loss, &mut grads);
            (g.value(loss).get(0, 0), grads)
        };
        let report = check_all_params(&mut store, &build, 1e-6);
        assert!(
            report.max_rel_error < 1e-6,
            "max rel error {} at {}",
            report.max_rel_error,
            report.worst_param
        );
    }

    /// RowMax/ColMax subgradients away from ties.
    #[test]
    fn max_ops_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = store.register(
            "w",
            Mat::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0)),
        );
        let build = |s: &ParamStore| -> (f64, Gradients) {
            let g = Graph::new();
            let wv = g.param(s, w);
            let rm = g.row_max(wv);
            let cm = g.col_max(g.tanh(wv));
            let loss = g.add(g.sum(rm), g.sum(cm));
            let mut grads = s.zero_gradients();
            g.backward(loss, &mut grads);
            (g.value(loss).get(0, 0), grads)
        };
        let report = check_all_params(&mut store, &build, 1e-6);
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }
}
