//! Small dense helpers shared by the solver modules.

use nalgebra::{DMatrix, DVector};

/// Condition-number ceiling above which an effective control weight is
/// treated as singular.
pub const CONDITION_GUARD: f64 = 1e12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Largest entry of `|M - M'|` divided by `max(1, max|M|)`.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    let scale = max_abs(m).max(1.0);
    max_abs_diff(m, &m.transpose()) / scale
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.is_empty() {
        return f64::INFINITY;
    }
    if sym.iter().any(|x| !x.is_finite()) {
        return f64::NEG_INFINITY;
    }
    symmetrize(sym)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Number of negative eigenvalues of a symmetric matrix.
pub fn negative_count(sym: &DMatrix<f64>) -> usize {
    symmetrize(sym).symmetric_eigenvalues().iter().filter(|&&x| x < 0.0).count()
}

/// 2-norm condition number; infinite for singular or non-finite input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|x| !x.is_finite()) {
        return f64::INFINITY;
    }
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a x = b` by LU; `None` when `a` is singular.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().lu().solve(b)
}

pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

pub fn bilinear(x: &DVector<f64>, m: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    x.dot(&(m * y))
}

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (lo, hi) = xs.split_at(xs.len() / 2);
    pairwise_sum(lo) + pairwise_sum(hi)
}

/// Sample mean and standard error of the mean (`std / sqrt(N)`, with the
/// unbiased `N - 1` variance).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
