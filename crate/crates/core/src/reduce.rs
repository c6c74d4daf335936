//! Order-fixed reductions.
//!
//! Every sum over samples goes through [`pairwise_sum`] so results never
//! depend on how many threads produced the summands.

/// Leaves below this length are summed sequentially.
pub const LEAF: usize = 8;

/// Pairwise (binary-tree) summation with a fixed split rule.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        let mut acc = 0.0;
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Component-wise pairwise sum of equally sized rows.
pub fn pairwise_sum_rows(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    if rows.is_empty() {
        return vec![0.0; width];
    }
    if rows.len() <= LEAF {
        let mut acc = vec![0.0; width];
        for row in rows {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        return acc;
    }
    let mid = rows.len() / 2;
    let mut left = pairwise_sum_rows(&rows[..mid], width);
    let right = pairwise_sum_rows(&rows[mid..], width);
    for (a, b) in left.iter_mut().zip(right) {
        *a += b;
    }
    left
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_on_short_input() {
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0]), 6.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn rows_agree_with_scalar_version() {
        let rows: Vec<Vec<f64>> = (0..37).map(|i| vec![i as f64 * 0.1, 1.0 / (i + 1) as f64]).collect();
        let col0: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let col1: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let sum = pairwise_sum_rows(&rows, 2);
        assert_eq!(sum[0], pairwise_sum(&col0));
        assert_eq!(sum[1], pairwise_sum(&col1));
    }
}
