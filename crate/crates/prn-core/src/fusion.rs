//! Modeling module: recurrent summarization of the fused recipe and entity
//! representations, and projection to the joint output vector o.

use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::encoders::{BiLstm, Mlp};
use crate::error::{PrnError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct Fusion {
    pub recipe_l1: BiLstm,
    pub recipe_l2: BiLstm,
    pub entity_l1: Option<BiLstm>,
    pub entity_l2: Option<BiLstm>,
    pub out_mlp: Mlp,
}

impl Fusion {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        entity_path: bool,
    ) -> Self {
        let recipe_l1 = BiLstm::register(store, rng, "fusion.recipe_l1", 8 * cfg.d, cfg.d);
        let recipe_l2 = BiLstm::register(store, rng, "fusion.recipe_l2", 2 * cfg.d, cfg.d);
        let (entity_l1, entity_l2) = if entity_path {
            (
                Some(BiLstm::register(
                    store,
                    rng,
                    "fusion.entity_l1",
                    4 * cfg.d_e,
                    cfg.d_e,
                )),
                Some(BiLstm::register(
                    store,
                    rng,
                    "fusion.entity_l2",
                    2 * cfg.d_e,
                    cfg.d_e,
                )),
            )
        } else {
            (None, None)
        };
        let in_dim = if entity_path {
            2 * cfg.d + 2 * cfg.d_e
        } else {
            2 * cfg.d
        };
        let out_mlp = Mlp::register(
            store,
            rng,
            "fusion.out_mlp",
            &[in_dim, cfg.output_mlp_hidden, 2 * cfg.d],
            cfg.output_mlp_final_tanh,
        );
        Fusion {
            recipe_l1,
            recipe_l2,
            entity_l1,
            entity_l2,
            out_mlp,
        }
    }

    /// Recipe summary c (2d x 1): a two-layer recurrent read of G, taking
    /// the forward state after the last token and the backward state after
    /// the first.
    pub fn summarize_recipe(&self, g: &Graph, store: &ParamStore, fused: Var) -> Result<Var> {
        self.summarize_recipe_masked(g, store, fused, fused.cols)
    }

    /// As [`summarize_recipe`](Self::summarize_recipe) but reading only the
    /// first `valid_len` columns, so padded positions cannot leak.
    pub fn summarize_recipe_masked(
        &self,
        g: &Graph,
        store: &ParamStore,
        fused: Var,
        valid_len: usize,
    ) -> Result<Var> {
        if fused.cols == 0 || valid_len == 0 {
            return Err(PrnError::Data("cannot summarize an empty sequence".into()));
        }
        let view = if valid_len < fused.cols {
            g.slice_cols(fused, 0, valid_len)
        } else {
            fused
        };
        let h1 = self.recipe_l1.run(g, store, view).hidden;
        Ok(self.recipe_l2.run(g, store, h1).final_hidden)
    }

    /// Entity summary f (2*d_E x 1) over the K columns of Y, in extraction
    /// order.
    pub fn summarize_entities(&self, g: &Graph, store: &ParamStore, y: Var) -> Result<Var> {
        let (l1, l2) = match (&self.entity_l1, &self.entity_l2) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(PrnError::Config(
                    "entity summarization requested but entity path disabled".into(),
                ))
            }
        };
        if y.cols == 0 {
            return Err(PrnError::Data("no entities to summarize".into()));
        }
        let h1 = l1.run(g, store, y).hidden;
        Ok(l2.run(g, store, h1).final_hidden)
    }

    /// Joint output o (2d x 1) from the tanh MLP over [c; f] (or c alone
    /// when the entity path is off).
    pub fn project(&self, g: &Graph, store: &ParamStore, c: Var, f: Option<Var>) -> Var {
        let joint = match f {
            Some(f) => g.concat_rows(&[c, f]),
            None => c,
        };
        self.out_mlp.forward(g, store, joint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;
    use rand::{Rng, SeedableRng};

    fn setup(d: usize) -> (ModelConfig, ParamStore, Fusion) {
        let mut cfg = ModelConfig::tiny(d, 6, 41);
        cfg.output_mlp_hidden = 2 * d;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let fusion = Fusion::register(&mut store, &mut rng, &cfg, true);
        (cfg, store, fusion)
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn recipe_summary_shape() {
        let (cfg, store, fusion) = setup(3);
        let g = Graph::new();
        let fused = g.constant(rand_mat(8 * cfg.d, 5, 1));
        let c = fusion.summarize_recipe(&g, &store, fused).unwrap();
        assert_eq!((c.rows, c.cols), (2 * cfg.d, 1));
    }

    #[test]
    fn single_token_sequence_works() {
        let (cfg, store, fusion) = setup(3);
        let g = Graph::new();
        let fused = g.constant(rand_mat(8 * cfg.d, 1, 2));
        let c = fusion.summarize_recipe(&g, &store, fused).unwrap();
        assert!(!g.value(c).has_nan());
    }

    /// Direct recurrence oracle at d=2, N=3: replay both layers by hand.
    #[test]
    fn recipe_summary_matches_manual_recurrence() {
        let (cfg, store, fusion) = setup(2);
        let g = Graph::new();
        let fused_mat = rand_mat(8 * cfg.d, 3, 3);
        let fused = g.constant(fused_mat.clone());
        let c = fusion.summarize_recipe(&g, &store, fused).unwrap();
        let got = g.value(c);

        let manual_layer = |bilstm: &BiLstm, x: &Mat| -> (Mat, Vec<f64>, Vec<f64>) {
            let hdim = bilstm.hidden;
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let run = |w: &Mat, b: &Mat, reverse: bool| -> Vec<Vec<f64>> {
                let mut h = vec![0.0; hdim];
                let mut c = vec![0.0; hdim];
                let mut per_pos = vec![vec![0.0; hdim]; x.cols()];
                let cols: Vec<usize> = if reverse {
                    (0..x.cols()).rev().collect()
                } else {
                    (0..x.cols()).collect()
                };
                for t in cols {
                    let mut xh: Vec<f64> = (0..x.rows()).map(|i| x.get(i, t)).collect();
                    xh.extend_from_slice(&h);
                    let z: Vec<f64> = (0..4 * hdim)
                        .map(|r| {
                            b.get(r, 0)
                                + xh.iter()
                                    .enumerate()
                                    .map(|(k, &v)| w.get(r, k) * v)
                                    .sum::<f64>()
                        })
                        .collect();
                    for r in 0..hdim {
                        let i_g = sig(z[r]);
                        let f_g = sig(z[hdim + r]);
                        let o_g = sig(z[2 * hdim + r]);
                        let cand = z[3 * hdim + r].tanh();
                        c[r] = f_g * c[r] + i_g * cand;
                        h[r] = o_g * c[r].tanh();
                    }
                    per_pos[t] = h.clone();
                }
                per_pos
            };
            let fw = run(
                store.value(bilstm.fwd.w),
                store.value(bilstm.fwd.b),
                false,
            );
            let bw = run(store.value(bilstm.bwd.w), store.value(bilstm.bwd.b), true);
            let mut hidden = Mat::zeros(2 * hdim, x.cols());
            for t in 0..x.cols() {
                for r in 0..hdim {
                    hidden.set(r, t, fw[t][r]);
                    hidden.set(hdim + r, t, bw[t][r]);
                }
            }
            (hidden, fw[x.cols() - 1].clone(), bw[0].clone())
        };

        let (h1, _, _) = manual_layer(&fusion.recipe_l1, &fused_mat);
        let (_, last_f, first_b) = manual_layer(&fusion.recipe_l2, &h1);
        let mut expect = last_f;
        expect.extend(first_b);
        for (i, e) in expect.iter().enumerate() {
            assert!(
                (got.get(i, 0) - e).abs() < 1e-12,
                "mismatch at {i}: {} vs {e}",
                got.get(i, 0)
            );
        }
    }

    #[test]
    fn entity_summary_shape_and_k1() {
        let (cfg, store, fusion) = setup(3);
        let g = Graph::new();
        let y = g.constant(rand_mat(4 * cfg.d_e, 2, 4));
        let f = fusion.summarize_entities(&g, &store, y).unwrap();
        assert_eq!((f.rows, f.cols), (2 * cfg.d_e, 1));

        let y1 = g.constant(rand_mat(4 * cfg.d_e, 1, 5));
        let f1 = fusion.summarize_entities(&g, &store, y1).unwrap();
        assert!(!g.value(f1).has_nan());
    }

    #[test]
    fn zero_mlp_weights_give_zero_output() {
        let (cfg, mut store, fusion) = setup(3);
        for (w, b) in fusion.out_mlp.layers.clone() {
            let wv = store.value_mut(w);
            *wv = Mat::zeros(wv.rows(), wv.cols());
            let bv = store.value_mut(b);
            *bv = Mat::zeros(bv.rows(), bv.cols());
        }
        let g = Graph::new();
        let c = g.constant(rand_mat(2 * cfg.d, 1, 6));
        let f = g.constant(rand_mat(2 * cfg.d_e, 1, 7));
        let o = fusion.project(&g, &store, c, Some(f));
        assert!(g.value(o).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn output_bounded_by_tanh() {
        let (cfg, store, fusion) = setup(3);
        let g = Graph::new();
        let c = g.constant(rand_mat(2 * cfg.d, 1, 8).scale(10.0));
        let f = g.constant(rand_mat(2 * cfg.d_e, 1, 9).scale(10.0));
        let o = fusion.project(&g, &store, c, Some(f));
        let ov = g.value(o);
        assert_eq!(ov.rows(), 2 * cfg.d);
        assert!(ov.data().iter().all(|&x| x > -1.0 && x < 1.0));
    }

    /// Explicit two-layer matrix arithmetic oracle for the projection.
    #[test]
    fn projection_matches_explicit_arithmetic() {
        let (cfg, store, fusion) = setup(2);
        let g = Graph::new();
        let c_mat = rand_mat(2 * cfg.d, 1, 10);
        let f_mat = rand_mat(2 * cfg.d_e, 1, 11);
        let c = g.constant(c_mat.clone());
        let f = g.constant(f_mat.clone());
        let o = fusion.project(&g, &store, c, Some(f));
        let got = g.value(o);

        let mut x: Vec<f64> = c_mat.data().to_vec();
        x.extend_from_slice(f_mat.data());
        for (w, b) in &fusion.out_mlp.layers {
            let wv = store.value(*w);
            let bv = store.value(*b);
            x = (0..wv.rows())
                .map(|r| {
                    (bv.get(r, 0)
                        + x.iter()
                            .enumerate()
                            .map(|(k, &v)| wv.get(r, k) * v)
                            .sum::<f64>())
                    .tanh()
                })
                .collect();
        }
        for (i, e) in x.iter().enumerate() {
            assert!((got.get(i, 0) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn padded_columns_do_not_change_summary() {
        let (cfg, store, fusion) = setup(3);
        let g = Graph::new();
        let real = rand_mat(8 * cfg.d, 4, 12);
        let mut padded = Mat::zeros(8 * cfg.d, 6);
        for i in 0..real.rows() {
            for j in 0..4 {
                padded.set(i, j, real.get(i, j));
            }
            padded.set(i, 4, 5.0);
            padded.set(i, 5, -5.0);
        }
        let a = fusion
            .summarize_recipe(&g, &store, g.constant(real))
            .unwrap();
        let b = fusion
            .summarize_recipe_masked(&g, &store, g.constant(padded), 4)
            .unwrap();
        assert_eq!(g.value(a), g.value(b));
    }
}
