//! Offline low-rank references for benchmarking: truncated SVD, an
//! interpolative decomposition from column-pivoted QR, and a two-sketch
//! single-pass randomized SVD.

use nalgebra::{DMatrix, DVector};

use crate::config::{check_budget, Scaling, DEFAULT_ORACLE_BUDGET};
use crate::error::{Error, Result};
use crate::linalg::{self, PINV_CUTOFF};
use crate::rng::{self, tag};
use crate::sketching::Projection;
use crate::stream_io::ColumnSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowRankKind {
    TruncatedSvd,
    CpqrId,
    RandomizedSvd,
}

/// Rank-k factors together with the achieved relative Frobenius error.
#[derive(Debug, Clone)]
pub struct LowRankFactors {
    pub kind: LowRankKind,
    pub factors: Factors,
    /// Relative Frobenius error against the dense data, when available.
    pub rel_error: Option<f64>,
    /// True when a pseudoinverse fallback was taken.
    pub degraded: bool,
}

#[derive(Debug, Clone)]
pub enum Factors {
    Spectral {
        u: DMatrix<f64>,
        sigma: DVector<f64>,
        v_t: DMatrix<f64>,
    },
    Interpolative {
        indices: Vec<usize>,
        basis: DMatrix<f64>,
        coefficients: DMatrix<f64>,
    },
}

impl LowRankFactors {
    pub fn rank(&self) -> usize {
        match &self.factors {
            Factors::Spectral { sigma, .. } => sigma.len(),
            Factors::Interpolative { indices, .. } => indices.len(),
        }
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        match &self.factors {
            Factors::Spectral { u, sigma, v_t } => {
                let mut us = u.clone();
                for (j, s) in sigma.iter().enumerate() {
                    us.column_mut(j).scale_mut(*s);
                }
                us * v_t
            }
            Factors::Interpolative {
                basis,
                coefficients,
                ..
            } => basis * coefficients,
        }
    }
}

/// Best rank-k approximation by singular value truncation. The error follows
/// from the discarded spectrum: `sqrt(sum_{i>k} sigma_i^2) / ||A||_F`.
pub fn truncated_svd(a: &DMatrix<f64>, k: usize) -> Result<LowRankFactors> {
    check_budget(a.nrows() * a.ncols(), DEFAULT_ORACLE_BUDGET)?;
    if k == 0 || k > a.nrows().min(a.ncols()) {
        return Err(Error::Config(format!("rank k = {k} out of range")));
    }
    let (u, s, v_t) = linalg::thin_svd(a);
    let total: f64 = s.iter().map(|v| v * v).sum();
    let tail: f64 = s.iter().skip(k).map(|v| v * v).sum();
    let rel_error = if total > 0.0 {
        (tail / total).sqrt()
    } else {
        0.0
    };
    Ok(LowRankFactors {
        kind: LowRankKind::TruncatedSvd,
        factors: Factors::Spectral {
            u: u.columns(0, k).into_owned(),
            sigma: DVector::from_iterator(k, s.iter().take(k).copied()),
            v_t: v_t.rows(0, k).into_owned(),
        },
        rel_error: Some(rel_error),
        degraded: false,
    })
}

/// Interpolative decomposition from column-pivoted QR: the first k pivots
/// form the basis and the coefficient block on the selected columns is the
/// identity by construction.
pub fn cpqr_id(a: &DMatrix<f64>, k: usize) -> Result<LowRankFactors> {
    check_budget(a.nrows() * a.ncols(), DEFAULT_ORACLE_BUDGET)?;
    let n = a.ncols();
    if k == 0 || k > a.nrows().min(n) {
        return Err(Error::Config(format!("rank k = {k} out of range")));
    }
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    // Pivot order: position j holds the original column index.
    let mut order = DMatrix::from_fn(1, n, |_, j| j as f64);
    qr.p().permute_columns(&mut order);
    let pivots: Vec<usize> = (0..n).map(|j| order[(0, j)] as usize).collect();
    let indices: Vec<usize> = pivots[..k].to_vec();

    let r11 = r.view((0, 0), (k, k)).into_owned();
    let r12 = r.view((0, k), (k, n - k)).into_owned();
    let mut degraded = false;
    let x = match r11.solve_upper_triangular(&r12) {
        Some(x) => x,
        None => {
            degraded = true;
            linalg::svd_lstsq(&r11, &r12, PINV_CUTOFF).0
        }
    };
    // Coefficients in original column order: identity on the pivots, the
    // solved block elsewhere.
    let mut coefficients = DMatrix::zeros(k, n);
    for (row, &j) in indices.iter().enumerate() {
        coefficients[(row, j)] = 1.0;
    }
    for (col, &j) in pivots[k..].iter().enumerate() {
        coefficients.set_column(j, &x.column(col));
    }
    let basis = a.select_columns(&indices);
    let rel_error = linalg::rel_diff(a, &(&basis * &coefficients));
    Ok(LowRankFactors {
        kind: LowRankKind::CpqrId,
        factors: Factors::Interpolative {
            indices,
            basis,
            coefficients,
        },
        rel_error: Some(rel_error),
        degraded,
    })
}

/// Residual of the column-pivoted QR at rank k, `||R22||_F`; equals the
/// reconstruction residual of the rank-k interpolative decomposition.
pub fn cpqr_residual(a: &DMatrix<f64>, k: usize) -> Result<f64> {
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let n = a.ncols();
    let rows = r.nrows();
    if k >= rows.min(n) {
        return Ok(0.0);
    }
    Ok(r.view((k, k), (rows - k, n - k)).norm())
}

/// Single-pass randomized SVD from two sketches: a row sketch `Omega A`
/// accumulated column-by-column and a co-sketch `A Phi^T` accumulated as a
/// rank-one update per column. Factors are recovered from the sketches alone;
/// the error is evaluated against `oracle` when provided.
pub fn randomized_svd_single_pass(
    stream: &mut impl ColumnSource,
    k: usize,
    l: usize,
    seed: u64,
    oracle: Option<&DMatrix<f64>>,
) -> Result<LowRankFactors> {
    let (m, n) = (stream.rows(), stream.cols());
    if k == 0 || l < k {
        return Err(Error::Config(format!(
            "need l >= k >= 1, got k = {k}, l = {l}"
        )));
    }
    let proj = Projection::gaussian(
        l,
        m,
        rng::derive_seed(seed, tag::PROJECTION),
        Scaling::Scaled,
    )?;
    let mut co_rng = rng::rng_for(seed, tag::BASELINE);
    let phi = rng::gaussian_matrix(l, n, &mut co_rng) / (l as f64).sqrt();

    let mut row_sketch = DMatrix::zeros(l, n);
    let mut co_sketch = DMatrix::zeros(m, l);
    let mut j = 0usize;
    while let Some(a) = stream.next_column()? {
        if j >= n {
            return Err(Error::Format(
                "stream yielded more columns than declared".into(),
            ));
        }
        row_sketch.set_column(j, &proj.sketch_column(&a)?);
        // co_sketch += a * phi(:, j)^T
        co_sketch.ger(1.0, &a, &phi.column(j).into_owned(), 1.0);
        j += 1;
    }
    if j != n {
        return Err(Error::Format(format!(
            "stream ended early: {j} of {n} columns"
        )));
    }

    // Range basis from the co-sketch, then solve for its row coefficients in
    // sketch space: Omega A ≈ (Omega Q) (Q^T A).
    let qr = co_sketch.qr();
    let q = qr.q();
    let omega_q = proj.sketch_matrix(&q)?;
    let (x, x_rank) = linalg::svd_lstsq(&omega_q, &row_sketch, PINV_CUTOFF);
    let degraded = x_rank < q.ncols().min(k);
    let (ux, sx, vx_t) = linalg::thin_svd(&x);
    let keep = k.min(sx.len());
    let u = &q * ux.columns(0, keep).into_owned();
    let sigma = DVector::from_iterator(keep, sx.iter().take(keep).copied());
    let v_t = vx_t.rows(0, keep).into_owned();

    let rel_error = oracle.map(|a| {
        let mut us = u.clone();
        for (col, s) in sigma.iter().enumerate() {
            us.column_mut(col).scale_mut(*s);
        }
        linalg::rel_diff(a, &(us * &v_t))
    });
    Ok(LowRankFactors {
        kind: LowRankKind::RandomizedSvd,
        factors: Factors::Spectral { u, sigma, v_t },
        rel_error,
        degraded,
    })
}
