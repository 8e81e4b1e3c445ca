use serde::{Deserialize, Serialize};

use super::encoder::TransformerClassifier;
use super::tensor::{dot, Matrix};
use crate::nttp::SPECIAL_TOKENS;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats<T> {
    pub n_rows: usize,
    pub mean_pairwise_cosine: T,
    pub per_dimension_variance: Vec<T>,
    /// `sigma_1^2 / sum sigma_i^2` of the column-centred matrix.
    pub top_singular_share: T,
}

/// Statistics over the non-special token embeddings (all rows if fewer than
/// two content tokens exist).
pub fn embedding_stats<T: Scalar>(model: &TransformerClassifier<T>) -> EmbeddingStats<T> {
    let e = &model.params.token_embeddings;
    let skip = SPECIAL_TOKENS.len();
    if e.rows >= skip + 2 {
        let rows = Matrix::from_vec(e.rows - skip, e.cols, e.data[skip * e.cols..].to_vec());
        matrix_stats(&rows)
    } else {
        matrix_stats(e)
    }
}

pub fn matrix_stats<T: Scalar>(m: &Matrix<T>) -> EmbeddingStats<T> {
    let norms: Vec<f64> = (0..m.rows).map(|r| dot(m.row(r), m.row(r)).as_f64().sqrt()).collect();
    let (mut total, mut pairs) = (0.0f64, 0usize);
    for i in 0..m.rows {
        for j in i + 1..m.rows {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let c = dot(m.row(i), m.row(j)).as_f64() / (norms[i] * norms[j]);
            total += c.clamp(-1.0, 1.0);
            pairs += 1;
        }
    }
    let mean_pairwise_cosine = if pairs == 0 { 0.0 } else { total / pairs as f64 };

    let n = m.rows.max(1) as f64;
    let means: Vec<f64> = (0..m.cols)
        .map(|c| (0..m.rows).map(|r| m.at(r, c).as_f64()).sum::<f64>() / n)
        .collect();
    let centred: Vec<Vec<f64>> = (0..m.rows)
        .map(|r| (0..m.cols).map(|c| m.at(r, c).as_f64() - means[c]).collect())
        .collect();
    let variance: Vec<f64> = (0..m.cols)
        .map(|c| centred.iter().map(|row| row[c] * row[c]).sum::<f64>() / n)
        .collect();

    let d = m.cols;
    let mut gram = vec![vec![0.0f64; d]; d];
    for row in &centred {
        for a in 0..d {
            for b in 0..d {
                gram[a][b] += row[a] * row[b];
            }
        }
    }
    let eig = symmetric_eigenvalues(gram);
    let sum: f64 = eig.iter().map(|x| x.max(0.0)).sum();
    let top = eig.iter().copied().fold(0.0f64, f64::max);
    let share = if sum > 0.0 { (top / sum).min(1.0) } else { 1.0 };

    EmbeddingStats {
        n_rows: m.rows,
        mean_pairwise_cosine: T::of(mean_pairwise_cosine),
        per_dimension_variance: variance.into_iter().map(T::of).collect(),
        top_singular_share: T::of(share),
    }
}

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows() {
        let m = Matrix::from_vec(4, 3, [0.2, -1.0, 3.0].repeat(4));
        let s = matrix_stats(&m);
        assert!((s.mean_pairwise_cosine - 1.0f64).abs() < 1e-12);
        assert!(s.per_dimension_variance.iter().all(|&v| v.abs() < 1e-24));
        assert!((s.top_singular_share - 1.0f64).abs() < 1e-12);
    }

    #[test]
    fn one_hot_rows() {
        let mut m = Matrix::<f64>::zeros(5, 5);
        for i in 0..5 {
            *m.at_mut(i, i) = 1.0;
        }
        let s = matrix_stats(&m);
        assert_eq!(s.mean_pairwise_cosine, 0.0);
        // Centring removes one direction; the remaining four are equal.
        assert!((s.top_singular_share - 0.25).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        let mut e = symmetric_eigenvalues(vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
        e.sort_by(f64::total_cmp);
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
    }
}
