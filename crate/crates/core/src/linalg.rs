//! Dense linear-algebra helpers: matrix exponential, integer powers,
//! Gauss-Legendre nodes and PSD square roots.

use nalgebra::{DMatrix, SymmetricEigen};

fn norm_1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(A)` by scaling and squaring with a truncated Taylor series.
///
/// The squaring count `s` is the smallest with `‖A / 2^s‖_1 <= 0.5`; the series
/// stops once a term's 1-norm falls below `1e-16` times the partial sum's.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let norm = norm_1(a);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = a / 2f64.powi(squarings as i32);

    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..64 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if norm_1(&term) < 1e-16 * norm_1(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `A^k` by binary powering.
pub fn matrix_power(a: &DMatrix<f64>, mut k: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = a.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Symmetric square root with negative eigenvalues clipped to zero.
/// Returns `None` if the eigendecomposition is not finite.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if a.nrows() == 1 {
        let v = a[(0, 0)];
        return v.is_finite().then(|| DMatrix::from_element(1, 1, v.max(0.0).sqrt()));
    }
    let eig = SymmetricEigen::new(a.clone());
    if !eig.eigenvalues.iter().all(|v| v.is_finite()) {
        return None;
    }
    let q = &eig.eigenvectors;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Some(q * DMatrix::from_diagonal(&roots) * q.transpose())
}
