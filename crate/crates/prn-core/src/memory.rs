//! Relational entity memory: K memory rows updated after each recipe step
//! through multi-head self-attention over the rows plus the projected step
//! embedding, followed by a gated recurrent update shared across rows.

use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::encoders::CharCnn;
use crate::error::{PrnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{xavier, ParamId, ParamStore};
use crate::tensor::Mat;

/// Inputs for one entity's initial memory row.
#[derive(Clone, Debug)]
pub struct EntityInput {
    /// Character ids of the full surface form.
    pub chars: Vec<usize>,
    /// Average of member-word vectors (OOV words use the corpus average).
    pub word_avg: Vec<f64>,
}

/// Snapshots and attention maps recorded over one reasoning pass.
#[derive(Clone, Debug, Default)]
pub struct MemoryTrace {
    /// E_0..E_T, each K x d_E.
    pub snapshots: Vec<Mat>,
    /// Per step, per head: K x (K+1) row-stochastic map. The extra column
    /// is the step-input offset column. Empty when memory is static.
    pub attention: Vec<Vec<Mat>>,
}

#[derive(Clone, Debug)]
pub struct MemoryBlock {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub wo_b: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct RelationalMemory {
    /// Projects [char embedding; word embedding] to a memory row.
    pub init_w: ParamId,
    pub init_b: ParamId,
    /// Projects a 2d step embedding into memory width.
    pub step_w: ParamId,
    pub step_b: ParamId,
    pub blocks: Vec<MemoryBlock>,
    /// Gate weights over [h_prev; attended], rows shared across entities;
    /// gate order [input; forget; output; candidate].
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub heads: usize,
    pub d_e: usize,
}

impl RelationalMemory {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        token_dim: usize,
    ) -> Self {
        let d_e = cfg.d_e;
        let init_w = store.register("memory.init.w", xavier(rng, d_e, token_dim));
        let init_b = store.register("memory.init.b", Mat::zeros(d_e, 1));
        let step_w = store.register("memory.step.w", xavier(rng, d_e, 2 * cfg.d));
        let step_b = store.register("memory.step.b", Mat::zeros(d_e, 1));
        let blocks = (0..cfg.memory_blocks)
            .map(|bi| MemoryBlock {
                wq: store.register(&format!("memory.block{bi}.wq"), xavier(rng, d_e, d_e)),
                wk: store.register(&format!("memory.block{bi}.wk"), xavier(rng, d_e, d_e)),
                wv: store.register(&format!("memory.block{bi}.wv"), xavier(rng, d_e, d_e)),
                wo: store.register(&format!("memory.block{bi}.wo"), xavier(rng, d_e, d_e)),
                wo_b: store.register(&format!("memory.block{bi}.wo_b"), Mat::zeros(1, d_e)),
                ff1_w: store.register(&format!("memory.block{bi}.ff1_w"), xavier(rng, d_e, d_e)),
                ff1_b: store.register(&format!("memory.block{bi}.ff1_b"), Mat::zeros(1, d_e)),
                ff2_w: store.register(&format!("memory.block{bi}.ff2_w"), xavier(rng, d_e, d_e)),
                ff2_b: store.register(&format!("memory.block{bi}.ff2_b"), Mat::zeros(1, d_e)),
            })
            .collect();
        let gate_w = store.register("memory.gate.w", xavier(rng, 2 * d_e, 4 * d_e));
        let mut gate_bias = Mat::zeros(1, 4 * d_e);
        for j in d_e..2 * d_e {
            gate_bias.set(0, j, 1.0); // forget gate open at start
        }
        let gate_b = store.register("memory.gate.b", gate_bias);
        RelationalMemory {
            init_w,
            init_b,
            step_w,
            step_b,
            blocks,
            gate_w,
            gate_b,
            heads: cfg.heads,
            d_e,
        }
    }

    /// Builds E_0 (K x d_E) from entity name embeddings and H_0 = 0.
    pub fn init_memory(
        &self,
        g: &Graph,
        store: &ParamStore,
        char_cnn: &CharCnn,
        entities: &[EntityInput],
    ) -> Result<(Var, Var)> {
        if entities.is_empty() {
            return Err(PrnError::Data("no entities to initialize memory".into()));
        }
        let w = g.param(store, self.init_w);
        let b = g.param(store, self.init_b);
        let rows: Vec<Var> = entities
            .iter()
            .map(|ent| {
                let cc = char_cnn.forward(g, store, &ent.chars);
                let wv = g.constant(Mat::col_vec(&ent.word_avg));
                let feat = g.concat_rows(&[cc, wv]);
                let row = g.add(g.matmul(w, feat), b);
                g.transpose(row)
            })
            .collect();
        let e0 = g.concat_rows(&rows);
        let h0 = g.zeros(entities.len(), self.d_e);
        Ok((e0, h0))
    }

    /// One memory update. Queries come from the K memory rows; keys and
    /// values from the rows plus the projected step embedding appended as
    /// row K+1. Returns the new (E, H) and per-head attention maps.
    /// With `update` false (static-memory ablation) the memory passes
    /// through untouched and no maps are produced.
    pub fn memory_step(
        &self,
        g: &Graph,
        store: &ParamStore,
        e: Var,
        h: Var,
        s_t: Var,
        update: bool,
    ) -> Result<(Var, Var, Vec<Mat>)> {
        if g.value_ref(s_t).has_nan() || g.value_ref(e).has_nan() {
            return Err(PrnError::Numeric(
                "non-finite input to memory update".into(),
            ));
        }
        if !update {
            return Ok((e, h, Vec::new()));
        }
        let d_e = self.d_e;
        let k = e.rows;
        let d_k = d_e / self.heads;

        let step_w = g.param(store, self.step_w);
        let step_b = g.param(store, self.step_b);
        let step_row = g.transpose(g.add(g.matmul(step_w, s_t), step_b));

        let mut cur = e;
        let mut maps = Vec::new();
        for block in &self.blocks {
            let all = g.concat_rows(&[cur, step_row]);
            let wq = g.param(store, block.wq);
            let wk = g.param(store, block.wk);
            let wv = g.param(store, block.wv);
            let q_all = g.matmul(cur, wq);
            let k_all = g.matmul(all, wk);
            let v_all = g.matmul(all, wv);

            maps.clear();
            let mut head_outs = Vec::with_capacity(self.heads);
            for hd in 0..self.heads {
                let q = g.slice_cols(q_all, hd * d_k, d_k);
                let kk = g.slice_cols(k_all, hd * d_k, d_k);
                let v = g.slice_cols(v_all, hd * d_k, d_k);
                let scores = g.scale(g.matmul(q, g.transpose(kk)), 1.0 / (d_k as f64).sqrt());
                let att = g.softmax_rows(scores);
                maps.push(g.value(att));
                head_outs.push(g.matmul(att, v));
            }
            let concat = g.concat_cols(&head_outs);
            let wo = g.param(store, block.wo);
            let wo_b = g.param(store, block.wo_b);
            let attended = g.add_row_bias(g.matmul(concat, wo), wo_b);

            let u = g.add(cur, attended);
            let ff1_w = g.param(store, block.ff1_w);
            let ff1_b = g.param(store, block.ff1_b);
            let ff2_w = g.param(store, block.ff2_w);
            let ff2_b = g.param(store, block.ff2_b);
            let ff = g.add_row_bias(
                g.matmul(g.tanh(g.add_row_bias(g.matmul(u, ff1_w), ff1_b)), ff2_w),
                ff2_b,
            );
            cur = g.add(u, ff);
        }

        // Gated update from [h_prev; attended memory], shared across rows.
        let gate_w = g.param(store, self.gate_w);
        let gate_b = g.param(store, self.gate_b);
        let gate_in = g.concat_cols(&[h, cur]);
        let z = g.add_row_bias(g.matmul(gate_in, gate_w), gate_b);
        let i_g = g.sigmoid(g.slice_cols(z, 0, d_e));
        let f_g = g.sigmoid(g.slice_cols(z, d_e, d_e));
        let o_g = g.sigmoid(g.slice_cols(z, 2 * d_e, d_e));
        let cand = g.tanh(g.slice_cols(z, 3 * d_e, d_e));
        let e_new = g.add(g.mul(f_g, e), g.mul(i_g, cand));
        let h_new = g.mul(o_g, g.tanh(e_new));
        let _ = k;
        Ok((e_new, h_new, maps))
    }

    /// Folds `memory_step` over the step embeddings in order, recording a
    /// snapshot after every step (plus the initial one).
    pub fn run_reasoning(
        &self,
        g: &Graph,
        store: &ParamStore,
        steps: &[Var],
        e0: Var,
        h0: Var,
        update: bool,
    ) -> Result<(Var, MemoryTrace)> {
        if steps.is_empty() {
            return Err(PrnError::Data("reasoning needs at least one step".into()));
        }
        let mut trace = MemoryTrace {
            snapshots: vec![g.value(e0)],
            attention: Vec::new(),
        };
        let mut e = e0;
        let mut h = h0;
        for &s_t in steps {
            let (ne, nh, maps) = self.memory_step(g, store, e, h, s_t, update)?;
            e = ne;
            h = nh;
            trace.snapshots.push(g.value(e));
            if update {
                trace.attention.push(maps);
            }
        }
        Ok((e, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Vocabulary;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    fn setup(d: usize, d_e: usize, heads: usize) -> (ModelConfig, ParamStore, CharCnn, RelationalMemory) {
        let mut cfg = ModelConfig::tiny(d, 6, 77);
        cfg.d_e = d_e;
        cfg.heads = heads;
        cfg.glove_dim = 6;
        cfg.char_filters_per_width = 4;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let char_cnn = CharCnn::register(
            &mut store,
            &mut rng,
            "text.char_cnn",
            40,
            cfg.char_dim,
            &cfg.char_filter_widths,
            cfg.char_filters_per_width,
        );
        let token_dim = cfg.char_out_dim() + cfg.glove_dim;
        let mem = RelationalMemory::register(&mut store, &mut rng, &cfg, token_dim);
        (cfg, store, char_cnn, mem)
    }

    fn vocab() -> Vocabulary {
        let toks: BTreeSet<String> = ["minced", "garlic", "salt", "onion"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        Vocabulary::random(&toks, 6, 9)
    }

    fn entity(vocab: &Vocabulary, surface: &str) -> EntityInput {
        let tokens: Vec<String> = surface.split(' ').map(|s| s.to_string()).collect();
        EntityInput {
            chars: vocab.char_ids(surface, 16),
            word_avg: vocab.average_vector(&tokens),
        }
    }

    #[test]
    fn identical_names_give_identical_rows() {
        let (_, store, cnn, mem) = setup(3, 6, 2);
        let v = vocab();
        let g = Graph::new();
        let ents = vec![entity(&v, "salt"), entity(&v, "salt")];
        let (e0, _) = mem.init_memory(&g, &store, &cnn, &ents).unwrap();
        let ev = g.value(e0);
        assert_eq!(ev.row(0), ev.row(1));
    }

    #[test]
    fn init_shapes() {
        let (_, store, cnn, mem) = setup(3, 6, 2);
        let v = vocab();
        let g = Graph::new();
        let ents = vec![
            entity(&v, "salt"),
            entity(&v, "onion"),
            entity(&v, "garlic"),
        ];
        let (e0, h0) = mem.init_memory(&g, &store, &cnn, &ents).unwrap();
        assert_eq!((e0.rows, e0.cols), (3, 6));
        assert_eq!((h0.rows, h0.cols), (3, 6));
        assert!(g.value(h0).data().iter().all(|&x| x == 0.0));
    }

    /// Direct recomputation oracle for a multi-word entity row.
    #[test]
    fn init_row_matches_manual_projection() {
        let (_, store, cnn, mem) = setup(3, 6, 2);
        let v = vocab();
        let g = Graph::new();
        let ent = entity(&v, "minced garlic");
        let (e0, _) = mem.init_memory(&g, &store, &cnn, &[ent.clone()]).unwrap();
        let row = g.value(e0);

        // Recompute: charcnn output, concat word average, affine project.
        let g2 = Graph::new();
        let cc = cnn.forward(&g2, &store, &ent.chars);
        let ccv = g2.value(cc);
        let mut feat: Vec<f64> = ccv.data().to_vec();
        feat.extend_from_slice(&ent.word_avg);
        let w = store.value(mem.init_w);
        let b = store.value(mem.init_b);
        for i in 0..mem.d_e {
            let manual: f64 =
                b.get(i, 0) + feat.iter().enumerate().map(|(j, &x)| w.get(i, j) * x).sum::<f64>();
            assert!((row.get(0, i) - manual).abs() < 1e-12);
        }
    }

    fn random_memory_dims(
        g: &Graph,
        k: usize,
        d_e: usize,
        step_dim: usize,
        seed: u64,
    ) -> (Var, Var, Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = g.constant(Mat::from_fn(k, d_e, |_, _| rng.gen_range(-1.0..1.0)));
        let h = g.constant(Mat::from_fn(k, d_e, |_, _| rng.gen_range(-1.0..1.0)));
        let s = g.constant(Mat::from_fn(step_dim, 1, |_, _| rng.gen_range(-1.0..1.0)));
        (e, h, s)
    }

    fn random_memory(g: &Graph, k: usize, d_e: usize, seed: u64) -> (Var, Var, Var) {
        random_memory_dims(g, k, d_e, 6, seed)
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (_, store, _, mem) = setup(3, 6, 2);
        let g = Graph::new();
        let (e, h, s) = random_memory(&g, 4, 6, 1);
        let (_, _, maps) = mem.memory_step(&g, &store, e, h, s, true).unwrap();
        assert_eq!(maps.len(), 2);
        for m in &maps {
            assert_eq!((m.rows(), m.cols()), (4, 5));
            for i in 0..m.rows() {
                let sum: f64 = m.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn saturated_gates_leave_memory_unchanged() {
        let (_, mut store, _, mem) = setup(3, 6, 2);
        {
            let gb = store.value_mut(mem.gate_b);
            for j in 0..6 {
                gb.set(0, j, -1e4); // input gate closed
                gb.set(0, 6 + j, 1e4); // forget gate saturated open
            }
        }
        let g = Graph::new();
        let (e, h, s) = random_memory(&g, 3, 6, 2);
        let (e2, _, _) = mem.memory_step(&g, &store, e, h, s, true).unwrap();
        let before = g.value(e);
        let after = g.value(e2);
        for i in 0..before.rows() {
            for j in 0..before.cols() {
                assert!((before.get(i, j) - after.get(i, j)).abs() < 1e-9);
            }
        }
    }

    /// Brute-force oracle: single head, K=2, d_E=4, attended rows equal
    /// softmax(QK^T / sqrt(d_k)) V computed by direct matrix arithmetic.
    #[test]
    fn single_head_attention_matches_direct_arithmetic() {
        let (_, store, _, mem) = setup(2, 4, 1);
        let g = Graph::new();
        let (e, h, s) = random_memory_dims(&g, 2, 4, 4, 3);
        let (_, _, maps) = mem.memory_step(&g, &store, e, h, s, true).unwrap();

        let ev = g.value(e);
        let sv = g.value(s);
        let step_w = store.value(mem.step_w);
        let step_b = store.value(mem.step_b);
        let proj = step_w.matmul(&sv).add(step_b).transpose(); // 1 x d_E
        let all = Mat::concat_rows(&[&ev, &proj]); // 3 x 4

        let block = &mem.blocks[0];
        let q = ev.matmul(store.value(block.wq));
        let kk = all.matmul(store.value(block.wk));
        let v = all.matmul(store.value(block.wv));
        let scores = q.matmul(&kk.transpose()).scale(1.0 / 2.0); // sqrt(4) = 2
        let mut att = Mat::zeros(2, 3);
        for i in 0..2 {
            let m = scores.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.row(i).iter().map(|&x| (x - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (j, ex) in exps.iter().enumerate() {
                att.set(i, j, ex / z);
            }
        }
        for i in 0..2 {
            for j in 0..3 {
                assert!((att.get(i, j) - maps[0].get(i, j)).abs() < 1e-12);
            }
        }
        let attended = att.matmul(&v);
        assert!(!attended.has_nan());
    }

    #[test]
    fn entity_permutation_equivariance() {
        let (_, store, _, mem) = setup(3, 6, 2);
        let g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e_mat = Mat::from_fn(3, 6, |_, _| rng.gen_range(-1.0..1.0));
        let h_mat = Mat::from_fn(3, 6, |_, _| rng.gen_range(-1.0..1.0));
        let s_mat = Mat::from_fn(6, 1, |_, _| rng.gen_range(-1.0..1.0));
        // Permutation (2, 0, 1).
        let perm = [2usize, 0, 1];
        let permute = |m: &Mat| {
            Mat::from_fn(3, 6, |i, j| m.get(perm[i], j))
        };

        let e = g.constant(e_mat.clone());
        let h = g.constant(h_mat.clone());
        let s = g.constant(s_mat.clone());
        let (e1, _, _) = mem.memory_step(&g, &store, e, h, s, true).unwrap();

        let ep = g.constant(permute(&e_mat));
        let hp = g.constant(permute(&h_mat));
        let (e2, _, _) = mem.memory_step(&g, &store, ep, hp, s, true).unwrap();

        let out1 = g.value(e1);
        let out2 = g.value(e2);
        for i in 0..3 {
            for j in 0..6 {
                assert!((out1.get(perm[i], j) - out2.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_counts_and_fold_equivalence() {
        let (_, store, _, mem) = setup(3, 6, 2);
        let g = Graph::new();
        let (e, h, s1) = random_memory(&g, 2, 6, 7);
        let s2 = {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            g.constant(Mat::from_fn(6, 1, |_, _| rng.gen_range(-1.0..1.0)))
        };

        let (ef, trace) = mem
            .run_reasoning(&g, &store, &[s1, s2], e, h, true)
            .unwrap();
        assert_eq!(trace.snapshots.len(), 3);
        assert_eq!(trace.attention.len(), 2);

        // Manual fold.
        let (e1, h1, _) = mem.memory_step(&g, &store, e, h, s1, true).unwrap();
        let (e2, _, _) = mem.memory_step(&g, &store, e1, h1, s2, true).unwrap();
        assert_eq!(g.value(ef), g.value(e2));

        // T=1 trace has 2 snapshots.
        let (_, t1) = mem.run_reasoning(&g, &store, &[s1], e, h, true).unwrap();
        assert_eq!(t1.snapshots.len(), 2);
    }

    #[test]
    fn static_mode_is_identity() {
        let (_, store, _, mem) = setup(3, 6, 2);
        let g = Graph::new();
        let (e, h, s) = random_memory(&g, 3, 6, 11);
        let (ef, trace) = mem.run_reasoning(&g, &store, &[s], e, h, false).unwrap();
        assert_eq!(g.value(ef), g.value(e));
        assert!(trace.attention.is_empty());
        assert_eq!(trace.snapshots.len(), 2);
    }

    #[test]
    fn nan_input_fails_fast() {
        let (_, store, _, mem) = setup(3, 6, 2);
        let g = Graph::new();
        let e = g.constant(Mat::zeros(2, 6));
        let h = g.constant(Mat::zeros(2, 6));
        let s = g.constant(Mat::from_vec(6, 1, vec![f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert!(mem.memory_step(&g, &store, e, h, s, true).is_err());
    }

    #[test]
    fn step_locality_in_trace() {
        let (_, store, _, mem) = setup(3, 6, 2);
        let g = Graph::new();
        let (e, h, s1) = random_memory(&g, 2, 6, 13);
        let mk = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            g.constant(Mat::from_fn(6, 1, |_, _| rng.gen_range(-1.0..1.0)))
        };
        let s2 = mk(14);
        let s2_alt = mk(15);
        let (_, tr_a) = mem.run_reasoning(&g, &store, &[s1, s2], e, h, true).unwrap();
        let (_, tr_b) = mem
            .run_reasoning(&g, &store, &[s1, s2_alt], e, h, true)
            .unwrap();
        // E_1 depends only on s_1.
        assert_eq!(tr_a.snapshots[1], tr_b.snapshots[1]);
        assert_ne!(tr_a.snapshots[2], tr_b.snapshots[2]);
    }
}
