use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenpairs of a symmetric matrix, eigenvalues nonincreasing.
///
/// Each eigenvector's largest-magnitude entry is made positive so results do
/// not depend on the solver's sign choice.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Columns are eigenvectors, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> SortedEigen {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        values.push(eig.eigenvalues[src]);
    }
    fix_signs(&mut vectors);
    SortedEigen { values, vectors }
}

/// Flips columns so that each one's largest-magnitude entry is positive.
pub fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut v in vectors.column_iter_mut() {
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `log Σ exp(v)` computed stably.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

pub fn euclidean_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm()
}
