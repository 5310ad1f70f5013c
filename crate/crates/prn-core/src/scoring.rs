//! Output module: cosine scoring of answer candidates, the margin ranking
//! loss, and prediction.

use crate::error::{PrnError, Result};
use crate::graph::{Graph, Var};

/// Cosine similarity between two column vectors on the tape. Errors when
/// either vector has zero norm.
pub fn cosine(g: &Graph, a: Var, b: Var) -> Result<Var> {
    if a.rows != b.rows || a.cols != 1 || b.cols != 1 {
        return Err(PrnError::Dimension(format!(
            "cosine expects equal-length column vectors, got {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let norm_a_sq = g.matmul(g.transpose(a), a);
    let norm_b_sq = g.matmul(g.transpose(b), b);
    if g.value_ref(norm_a_sq).get(0, 0) <= 0.0 || g.value_ref(norm_b_sq).get(0, 0) <= 0.0 {
        return Err(PrnError::Numeric(
            "cosine similarity undefined for zero-norm vector".into(),
        ));
    }
    let dot = g.matmul(g.transpose(a), b);
    let denom = g.mul(g.sqrt(norm_a_sq), g.sqrt(norm_b_sq));
    Ok(g.div(dot, denom))
}

/// Plain-value cosine similarity, for heuristics and reports.
pub fn cosine_value(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PrnError::Dimension(
            "cosine_value: length mismatch".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(PrnError::Numeric(
            "cosine similarity undefined for zero-norm vector".into(),
        ));
    }
    Ok(dot / (na * nb))
}

/// Margin ranking loss, averaged over the negatives:
/// `mean_j max(0, gamma - cos_pos + cos_neg_j)`.
pub fn hinge_loss(g: &Graph, cos_pos: Var, cos_negs: &[Var], gamma: f64) -> Result<Var> {
    if cos_negs.is_empty() {
        return Err(PrnError::Data("hinge loss needs at least one negative".into()));
    }
    let mut total: Option<Var> = None;
    for &cn in cos_negs {
        let margin = g.max0(g.add_const(g.sub(cn, cos_pos), gamma));
        total = Some(match total {
            Some(t) => g.add(t, margin),
            None => margin,
        });
    }
    Ok(g.scale(total.unwrap(), 1.0 / cos_negs.len() as f64))
}

/// Experimental alternative: softmax cross-entropy over candidate scores.
pub fn softmax_ce_loss(g: &Graph, scores: &[Var], gold: usize) -> Result<Var> {
    if gold >= scores.len() {
        return Err(PrnError::Data(format!(
            "gold index {gold} out of range for {} candidates",
            scores.len()
        )));
    }
    let row = g.concat_cols(scores);
    let probs = g.softmax_rows(row);
    let p_gold = g.slice_cols(probs, gold, 1);
    Ok(g.scale(g.ln(p_gold), -1.0))
}

/// Argmax with lowest-index tie-breaking.
pub fn predict(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;

    fn var(g: &Graph, v: &[f64]) -> Var {
        g.constant(Mat::col_vec(v))
    }

    #[test]
    fn cosine_of_self_is_one() {
        let g = Graph::new();
        let v = var(&g, &[1.0, 2.0, -3.0]);
        let c = cosine(&g, v, v).unwrap();
        assert!((g.value(c).get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_of_negation_is_minus_one() {
        let g = Graph::new();
        let v = var(&g, &[1.0, 2.0, -3.0]);
        let n = var(&g, &[-1.0, -2.0, 3.0]);
        let c = cosine(&g, v, n).unwrap();
        assert!((g.value(c).get(0, 0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_hand_case() {
        let g = Graph::new();
        let o = var(&g, &[1.0, 0.0]);
        let a = var(&g, &[1.0, 1.0]);
        let c = cosine(&g, o, a).unwrap();
        assert!((g.value(c).get(0, 0) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_rejected() {
        let g = Graph::new();
        let o = var(&g, &[0.0, 0.0]);
        let a = var(&g, &[1.0, 1.0]);
        assert!(cosine(&g, o, a).is_err());
        assert!(cosine_value(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn hinge_satisfied_margin_is_zero() {
        // cos+ = 0.9, cos- = 0.2, gamma = 0.5 -> max(0, 0.5-0.9+0.2) = 0.
        let g = Graph::new();
        let cp = g.scalar(0.9);
        let cn = g.scalar(0.2);
        let loss = hinge_loss(&g, cp, &[cn], 0.5).unwrap();
        assert_eq!(g.value(loss).get(0, 0), 0.0);
    }

    #[test]
    fn hinge_equal_scores_give_gamma() {
        let g = Graph::new();
        let cp = g.scalar(0.4);
        let cn = g.scalar(0.4);
        let loss = hinge_loss(&g, cp, &[cn], 0.3).unwrap();
        assert!((g.value(loss).get(0, 0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn hinge_three_negatives_mean() {
        // negatives {-1, 0, 0.8}, cos+ = 0.5, gamma = 0.3:
        // terms {0, 0, 0.6}, mean 0.2.
        let g = Graph::new();
        let cp = g.scalar(0.5);
        let negs = [g.scalar(-1.0), g.scalar(0.0), g.scalar(0.8)];
        let loss = hinge_loss(&g, cp, &negs, 0.3).unwrap();
        assert!((g.value(loss).get(0, 0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn hinge_loss_is_nonnegative() {
        let g = Graph::new();
        for (p, n, gamma) in [(0.9, -0.9, 0.1), (-0.5, 0.9, 1.0), (0.0, 0.0, 2.0)] {
            let cp = g.scalar(p);
            let cn = g.scalar(n);
            let loss = hinge_loss(&g, cp, &[cn], gamma).unwrap();
            assert!(g.value(loss).get(0, 0) >= 0.0);
        }
    }

    #[test]
    fn predict_cases() {
        assert_eq!(predict(&[0.1, 0.9, 0.3, 0.2]), 1);
        assert_eq!(predict(&[0.5, 0.5, 0.5, 0.5]), 0);
        assert_eq!(predict(&[-1.0, -1.0, -0.5, -1.0]), 2);
    }

    #[test]
    fn predict_invariant_to_positive_scaling() {
        // Cosine is scale-invariant in o; verify at the argmax level.
        let o = [0.3, -0.2, 0.9];
        let cands = [
            vec![0.1, 0.2, 0.3],
            vec![0.3, -0.2, 0.91],
            vec![-0.3, 0.2, -0.9],
            vec![1.0, 0.0, 0.0],
        ];
        let score = |ov: &[f64]| -> Vec<f64> {
            cands
                .iter()
                .map(|c| cosine_value(ov, c).unwrap())
                .collect()
        };
        let scaled: Vec<f64> = o.iter().map(|x| x * 37.5).collect();
        assert_eq!(predict(&score(&o)), predict(&score(&scaled)));
    }

    #[test]
    fn softmax_ce_decreases_with_gold_score() {
        let g = Graph::new();
        let lo = [g.scalar(0.1), g.scalar(0.2), g.scalar(0.3), g.scalar(0.1)];
        let hi = [g.scalar(0.9), g.scalar(0.2), g.scalar(0.3), g.scalar(0.1)];
        let l_lo = softmax_ce_loss(&g, &lo, 0).unwrap();
        let l_hi = softmax_ce_loss(&g, &hi, 0).unwrap();
        assert!(g.value(l_hi).get(0, 0) < g.value(l_lo).get(0, 0));
    }
}
