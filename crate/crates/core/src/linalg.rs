use nalgebra::{DMatrix, SymmetricEigen};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order (negative round-off clamped to zero) and eigenvectors as
/// the matching columns.
pub(crate) fn sorted_eigen(sym: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Leading `r` left singular directions of `m` (rows x cols) scaled to unit
/// norm, together with the full sorted spectrum of `m m'`. Uses whichever Gram
/// matrix is smaller.
pub(crate) fn leading_row_space(m: &DMatrix<f64>, r: usize) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let (rows, cols) = m.shape();
    if rows <= cols {
        let (values, vecs) = sorted_eigen(m * m.transpose());
        Some((values, vecs.columns(0, r).into_owned()))
    } else {
        let (values, vecs) = sorted_eigen(m.transpose() * m);
        let mut u = DMatrix::zeros(rows, r);
        for j in 0..r {
            let lambda = values[j];
            if lambda <= f64::EPSILON * values[0].max(f64::MIN_POSITIVE) * cols as f64 {
                return None;
            }
            let col = m * vecs.column(j) / lambda.sqrt();
            u.set_column(j, &col);
        }
        let mut full = values;
        full.resize(rows.min(cols), 0.0);
        Some((full, u))
    }
}

/// Cumulative eigenvalue shares.
pub(crate) fn cumulative_shares(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum();
    let mut acc = 0.0;
    values
        .iter()
        .map(|v| {
            acc += v;
            if total > 0.0 {
                acc / total
            } else {
                0.0
            }
        })
        .collect()
}

/// OLS slope of `y` against `0, 1, ..., n-1`.
pub(crate) fn trend_slope(y: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = y.len() as f64;
    let tbar = (n - 1.0) / 2.0;
    let ybar = y.clone().sum::<f64>() / n;
    let (num, den) = y.enumerate().fold((0.0, 0.0), |(num, den), (i, v)| {
        let dt = i as f64 - tbar;
        (num + dt * (v - ybar), den + dt * dt)
    });
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}
