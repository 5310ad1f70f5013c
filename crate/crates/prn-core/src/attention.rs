//! Four-way attention flow between the recipe text, the question images,
//! and the entity memory: affinity scoring, both attention directions, and
//! the fused question-aware representations G and Y.

use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{PrnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{xavier, ParamId, ParamStore};
use crate::tensor::Mat;

const MASK_FILL: f64 = -1e9;

/// Affinity between context columns and query columns:
/// `S[i][j] = w^T [C_i ; Q_j ; C_i * Q_j]`, shape N x M.
pub fn affinity(g: &Graph, context: Var, query: Var, w: Var) -> Result<Var> {
    affinity_masked(g, context, query, w, None, None)
}

/// Affinity with optional position masks; masked positions receive a large
/// negative score so downstream softmaxes ignore them.
pub fn affinity_masked(
    g: &Graph,
    context: Var,
    query: Var,
    w: Var,
    context_mask: Option<&[bool]>,
    query_mask: Option<&[bool]>,
) -> Result<Var> {
    let dim = context.rows;
    if query.rows != dim {
        return Err(PrnError::Dimension(format!(
            "affinity: context width {dim} != query width {}",
            query.rows
        )));
    }
    if w.rows != 3 * dim || w.cols != 1 {
        return Err(PrnError::Dimension(format!(
            "affinity: weight must be {}x1, got {}x{}",
            3 * dim,
            w.rows,
            w.cols
        )));
    }
    let n = context.cols;
    let m = query.cols;
    let w1 = g.slice_rows(w, 0, dim);
    let w2 = g.slice_rows(w, dim, dim);
    let w3 = g.slice_rows(w, 2 * dim, dim);

    let term1 = g.broadcast_col(g.matmul(g.transpose(context), w1), m);
    let term2 = g.broadcast_row(g.transpose(g.matmul(g.transpose(query), w2)), n);
    let weighted = g.mul(context, g.broadcast_col(w3, n));
    let term3 = g.matmul(g.transpose(weighted), query);
    let mut s = g.add(g.add(term1, term2), term3);

    if context_mask.is_some() || query_mask.is_some() {
        let fill = Mat::from_fn(n, m, |i, j| {
            let row_ok = context_mask.map_or(true, |mk| mk[i]);
            let col_ok = query_mask.map_or(true, |mk| mk[j]);
            if row_ok && col_ok {
                0.0
            } else {
                MASK_FILL
            }
        });
        s = g.add(s, g.constant(fill));
    }
    Ok(s)
}

/// Context-to-query attention: column i is the softmax-weighted combination
/// of query columns under affinity row i. Output dim x N.
pub fn recipe_to_question(g: &Graph, s: Var, query: Var) -> Var {
    let a = g.softmax_rows(s);
    g.matmul(query, g.transpose(a))
}

/// Query-to-context attention: softmax over the row-wise maxima picks the
/// context columns closest to any query column; the attended vector is
/// replicated across all N positions.
pub fn question_to_recipe(g: &Graph, s: Var, context: Var) -> Var {
    let maxes = g.row_max(s);
    let b = g.softmax_rows(g.transpose(maxes));
    let attended = g.matmul(context, g.transpose(b));
    g.broadcast_col(attended, context.cols)
}

/// Question-aware fusion: `G_i = [C_i ; Q~_i ; C_i * Q~_i ; C_i * R~_i]`,
/// shape 4*dim x N.
pub fn fuse(g: &Graph, context: Var, q_tilde: Var, r_tilde: Var) -> Var {
    let cq = g.mul(context, q_tilde);
    let cr = g.mul(context, r_tilde);
    g.concat_rows(&[context, q_tilde, cq, cr])
}

/// Parameters for both attention paths: the recipe affinity weight and,
/// when the entity path is active, the entity affinity weight plus an
/// optional projection of the question into memory width.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub w_r: ParamId,
    pub entity: Option<EntityAttention>,
}

#[derive(Clone, Debug)]
pub struct EntityAttention {
    pub w_e: ParamId,
    /// Maps Q' (2d) into memory width d_E when they differ.
    pub q_proj: Option<(ParamId, ParamId)>,
}

impl CrossAttention {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        entity_path: bool,
    ) -> Self {
        let w_r = store.register("attention.w_r", xavier(rng, 6 * cfg.d, 1));
        let entity = entity_path.then(|| {
            let w_e = store.register("attention.w_e", xavier(rng, 3 * cfg.d_e, 1));
            let q_proj = (cfg.d_e != 2 * cfg.d).then(|| {
                (
                    store.register("attention.q_proj.w", xavier(rng, cfg.d_e, 2 * cfg.d)),
                    store.register("attention.q_proj.b", Mat::zeros(cfg.d_e, 1)),
                )
            });
            EntityAttention { w_e, q_proj }
        });
        CrossAttention { w_r, entity }
    }

    /// Recipe path: S_R, then G (8d x N).
    pub fn recipe_attention(
        &self,
        g: &Graph,
        store: &ParamStore,
        r_prime: Var,
        q_prime: Var,
    ) -> Result<(Var, Var)> {
        let w = g.param(store, self.w_r);
        let s_r = affinity(g, r_prime, q_prime, w)?;
        let q_tilde = recipe_to_question(g, s_r, q_prime);
        let r_tilde = question_to_recipe(g, s_r, r_prime);
        let fused = fuse(g, r_prime, q_tilde, r_tilde);
        Ok((s_r, fused))
    }

    /// Entity path: the same four-step recipe with the memory rows in the
    /// context role, yielding S_E (K x M) and Y (4*d_E x K).
    pub fn entity_attention(
        &self,
        g: &Graph,
        store: &ParamStore,
        e_rows: Var,
        q_prime: Var,
    ) -> Result<(Var, Var)> {
        let params = self.entity.as_ref().ok_or_else(|| {
            PrnError::Config("entity attention requested but entity path disabled".into())
        })?;
        let e_cols = g.transpose(e_rows); // d_E x K
        let q = match &params.q_proj {
            Some((w, b)) => {
                let wv = g.param(store, *w);
                let bv = g.param(store, *b);
                g.add_col_bias(g.matmul(wv, q_prime), bv)
            }
            None => {
                if q_prime.rows != e_cols.rows {
                    return Err(PrnError::Dimension(format!(
                        "entity attention: memory width {} != question width {} and no projection registered",
                        e_cols.rows, q_prime.rows
                    )));
                }
                q_prime
            }
        };
        let w = g.param(store, params.w_e);
        let s_e = affinity(g, e_cols, q, w)?;
        let q_tilde = recipe_to_question(g, s_e, q);
        let e_tilde = question_to_recipe(g, s_e, e_cols);
        let y = fuse(g, e_cols, q_tilde, e_tilde);
        Ok((s_e, y))
    }
}
