//! Small dense linear-algebra helpers shared across the crate: ordered
//! factorizations, least-squares solves with a pseudoinverse fallback, and
//! quadratic forms against shifted pseudoinverses.

use nalgebra::{DMatrix, DVector};

/// Relative spectral cutoff used when deciding whether a direction is
/// numerically zero inside a pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-12;

/// Thin SVD with singular values sorted in descending order.
///
/// Returns `(u, sigma, v_t)` so that `a ≈ u * diag(sigma) * v_t`.
pub fn thin_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    (u, svd.singular_values, v_t)
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let svd = a.clone().svd(false, false);
    let s = svd.singular_values;
    let smax = s.max();
    if smax <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * smax).count()
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and eigenvectors in matching column order.
pub fn sym_eig_desc(sym: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = sym.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Quadratic forms `v^T (M + shift*I)^+ v` for a symmetric PSD `M`, with the
/// eigendecomposition computed once and reused across many vectors.
pub struct ShiftedPinv {
    vectors: DMatrix<f64>,
    inv_values: DVector<f64>,
}

impl ShiftedPinv {
    pub fn new(sym: &DMatrix<f64>, shift: f64) -> Self {
        let (values, vectors) = sym_eig_desc(sym);
        let max_shifted = values
            .iter()
            .map(|v| (v + shift).abs())
            .fold(0.0_f64, f64::max);
        let cutoff = PINV_CUTOFF * max_shifted;
        let inv_values = values.map(|v| {
            let s = v + shift;
            if s > cutoff && s > 0.0 {
                1.0 / s
            } else {
                0.0
            }
        });
        ShiftedPinv {
            vectors,
            inv_values,
        }
    }

    /// `v^T (M + shift*I)^+ v`; non-negative by construction.
    pub fn quadform(&self, v: &DVector<f64>) -> f64 {
        let z = self.vectors.tr_mul(v);
        z.iter()
            .zip(self.inv_values.iter())
            .map(|(zi, wi)| zi * zi * wi)
            .sum()
    }
}

/// Minimum-norm least-squares solution of `min ||a x - b||_F` via SVD.
///
/// Returns the solution and the numerical rank used.
pub fn svd_lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let (n, rhs) = (a.ncols(), b.ncols());
    if n == 0 {
        return (DMatrix::zeros(0, rhs), 0);
    }
    let (u, s, v_t) = thin_svd(a);
    let smax = s.max();
    let mut rank = 0;
    let mut utb = u.tr_mul(b);
    for i in 0..s.len() {
        if smax > 0.0 && s[i] > rel_tol * smax {
            rank += 1;
            let mut row = utb.row_mut(i);
            row /= s[i];
        } else {
            utb.row_mut(i).fill(0.0);
        }
    }
    (v_t.tr_mul(&utb), rank)
}

/// Moore-Penrose pseudoinverse with a relative spectral cutoff.
///
/// Returns the pseudoinverse and the numerical rank.
pub fn pinv(a: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (DMatrix::zeros(n, m), 0);
    }
    let (u, s, v_t) = thin_svd(a);
    let smax = s.max();
    let mut rank = 0;
    let mut ut = u.transpose();
    for i in 0..s.len() {
        if smax > 0.0 && s[i] > rel_tol * smax {
            rank += 1;
            let mut row = ut.row_mut(i);
            row /= s[i];
        } else {
            ut.row_mut(i).fill(0.0);
        }
    }
    (v_t.tr_mul(&ut), rank)
}

/// Least-squares solve `min ||a x - b||_F` with a QR fast path.
///
/// Falls back to the minimum-norm SVD solution when the columns of `a` are
/// numerically rank deficient; the returned flag is `true` in that case.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, bool) {
    let (m, n) = a.shape();
    if n == 0 {
        return (DMatrix::zeros(0, b.ncols()), false);
    }
    if m >= n {
        let qr = a.clone().qr();
        let r = qr.r();
        let mut max_diag = 0.0_f64;
        let mut min_diag = f64::INFINITY;
        for i in 0..n {
            let d = r[(i, i)].abs();
            max_diag = max_diag.max(d);
            min_diag = min_diag.min(d);
        }
        if max_diag > 0.0 && min_diag > rel_tol * max_diag {
            let qtb = qr.q().tr_mul(b);
            if let Some(x) = r.solve_upper_triangular(&qtb) {
                return (x, false);
            }
        }
    }
    let (x, rank) = svd_lstsq(a, b, rel_tol);
    (x, rank < n)
}

/// Squared Frobenius norm.
pub fn frob2(a: &DMatrix<f64>) -> f64 {
    a.norm_squared()
}

/// Relative Frobenius distance `||a - b||_F / max(||a||_F, tiny)`.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = a.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}
