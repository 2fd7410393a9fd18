use crate::error::{Error, Result};
use crate::neural::tape::{attention_row_weights, RowMode};
use crate::neural::Matrix;

/// Query budget `ceil(c * ln L)`, clamped to `1..=L`.
pub fn query_budget(factor: f64, queries: usize) -> usize {
    if queries <= 1 {
        return queries;
    }
    let u = (factor * (queries as f64).ln()).ceil();
    if u.is_finite() {
        (u as usize).clamp(1, queries)
    } else {
        queries
    }
}

/// Per-query sparsity measure: row max of the scaled scores minus the row mean.
pub fn sparsity_measure(scores: &Matrix) -> Vec<f64> {
    (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            max - mean
        })
        .collect()
}

/// Indices of the `u` largest measures, ties broken toward the lower index,
/// returned in ascending index order.
pub fn select_top_queries(measure: &[f64], u: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..measure.len()).collect();
    order.sort_by(|&a, &b| measure[b].total_cmp(&measure[a]).then(a.cmp(&b)));
    let mut chosen = order[..u.min(measure.len())].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Row modes for a probsparse layer: softmax rows for selected queries,
/// uniform (column mean of V) rows for the rest.
pub fn probsparse_modes(selected: &[usize], queries: usize, keys: usize) -> Vec<RowMode> {
    let mut modes = vec![RowMode::Uniform { keys }; queries];
    for &i in selected {
        modes[i] = RowMode::Softmax { keys };
    }
    modes
}

/// Probsparse self-attention: full softmax rows `softmax(q K^T / sqrt(d)) V`
/// for the `u` most informative queries, the column mean of `V` elsewhere.
pub fn probsparse_attention(q: &Matrix, k: &Matrix, v: &Matrix, u: usize) -> Result<Matrix> {
    if q.cols() != k.cols() || k.rows() != v.rows() || k.rows() == 0 {
        return Err(Error::Shape(format!(
            "Q {:?}, K {:?}, V {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if u == 0 || u > q.rows() {
        return Err(Error::InvalidInput(format!(
            "query budget {u} outside 1..={}",
            q.rows()
        )));
    }
    let mut scores = q.matmul_t(k)?;
    scores.scale(1.0 / (q.cols() as f64).sqrt());
    let selected = select_top_queries(&sparsity_measure(&scores), u);
    let weights = attention_row_weights(&scores, &probsparse_modes(&selected, q.rows(), k.rows()))?;
    weights.matmul(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_law() {
        assert_eq!(query_budget(5.0, 64), 21);
        assert_eq!(query_budget(5.0, 8), 8);
        assert_eq!(query_budget(1.0, 6), 2);
        assert_eq!(query_budget(1.0, 1), 1);
    }

    #[test]
    fn single_query_single_key_returns_value_row() {
        let q = Matrix::row_vector(&[0.3, -1.2]);
        let k = Matrix::row_vector(&[2.0, 0.5]);
        let v = Matrix::row_vector(&[4.0, 5.0, 6.0]);
        assert_eq!(probsparse_attention(&q, &k, &v, 1).unwrap(), v);
    }

    #[test]
    fn ties_choose_lower_index() {
        assert_eq!(select_top_queries(&[1.0, 2.0, 2.0, 0.5], 2), vec![1, 2]);
        assert_eq!(select_top_queries(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn out_of_range_budget_rejected() {
        let m = Matrix::filled(3, 2, 1.0);
        assert!(probsparse_attention(&m, &m, &m, 0).is_err());
        assert!(probsparse_attention(&m, &m, &m, 4).is_err());
    }
}
