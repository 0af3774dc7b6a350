//! Single-pass Frobenius-error estimation.
//!
//! The squared reconstruction error expands as
//! `||A||_F^2 - 2 tr(A (A_J P)^T) + ||A_J P||_F^2`; the first term is tracked
//! while streaming, the last is a small dense trace, and the cross term is
//! estimated from sketch rows only: a pseudoinverse low-rank term over two
//! disjoint row blocks plus a Monte-Carlo debiasing correction on a third.
//! The same estimator scores the four coefficient candidates each epoch and
//! picks the winner.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::SplitFractions;
use crate::error::{Error, Result};
use crate::linalg::{self, PINV_CUTOFF};
use crate::rng::{self, tag};

/// Disjoint row index sets partitioning the sketch rows for the estimator.
#[derive(Debug, Clone)]
pub struct EstimatorSplit {
    pub i1: Vec<usize>,
    pub i2: Vec<usize>,
    pub i3: Vec<usize>,
}

impl EstimatorSplit {
    /// Draws the three disjoint row sets from `0..l` without replacement.
    /// Sizes are `floor(c1*l)` and `floor(c2*l)` (at least one each) with the
    /// remainder going to the third set.
    pub fn new(l: usize, fractions: &SplitFractions, seed: u64) -> Result<Self> {
        fractions.validate()?;
        if l < 3 {
            return Err(Error::Config(
                "estimator needs at least 3 sketch rows".into(),
            ));
        }
        let n1 = ((fractions.c1 * l as f64).floor() as usize).max(1);
        let n2 = ((fractions.c2 * l as f64).floor() as usize).max(1);
        if n1 + n2 >= l {
            return Err(Error::Config(format!(
                "split sizes {n1}+{n2} leave no rows for the Monte-Carlo block (l = {l})"
            )));
        }
        let mut rows: Vec<usize> = (0..l).collect();
        let mut rng = rng::rng_for(seed, tag::ESTIMATOR_SPLIT);
        rows.shuffle(&mut rng);
        Ok(EstimatorSplit {
            i1: rows[0..n1].to_vec(),
            i2: rows[n1..n1 + n2].to_vec(),
            i3: rows[n1 + n2..].to_vec(),
        })
    }
}

/// Error estimate with its ingredients.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// Estimated absolute Frobenius error.
    pub est_abs: f64,
    /// Estimated error relative to the data norm.
    pub est_rel: f64,
    /// Streamed `||A_obs||_F^2`.
    pub frob2: f64,
    /// Estimated cross trace `tr(A (A_J P)^T)`.
    pub cross_estimate: f64,
    /// `||A_J P||_F^2`, evaluated densely from the basis Gram matrix.
    pub basis_energy: f64,
    /// True when the squared estimate went negative and was clamped to zero.
    pub clamped: bool,
    /// True when the inner pseudoinverse was degenerate and the low-rank
    /// term was dropped.
    pub degraded: bool,
}

/// Plain Hutchinson trace estimate of an implicit square matrix: the mean of
/// `omega^T B omega` over `queries` Gaussian probes of dimension `dim`.
pub fn hutchinson_trace<F>(query: F, dim: usize, queries: usize, seed: u64) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    if queries == 0 {
        return Err(Error::Config("need at least one probe".into()));
    }
    let mut rng = rng::rng_for(seed, tag::ESTIMATOR_SPLIT);
    let mut acc = 0.0;
    for _ in 0..queries {
        let omega = rng::gaussian_vector(dim, &mut rng);
        acc += query(&omega);
    }
    Ok(acc / queries as f64)
}

/// Sum of elementwise products, i.e. `tr(a b^T)`.
fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Estimates the cross trace `tr(A (A_J P)^T)` from sketch rows only.
///
/// `s` is the full sketch (l x n), `s_j` the sketched basis (l x t), `p` the
/// coefficients (t x n) and `gram_basis` the unsketched `A_J^T A_J`. Returns
/// the estimate and a degraded flag for a collapsed inner pseudoinverse.
pub fn estimate_cross_trace(
    s: &DMatrix<f64>,
    s_j: &DMatrix<f64>,
    p: &DMatrix<f64>,
    gram_basis: &DMatrix<f64>,
    split: &EstimatorSplit,
    probe_scale2: f64,
) -> Result<(f64, bool)> {
    let l = s.nrows();
    if s_j.nrows() != l {
        return Err(Error::Dimension(
            "sketch and sketched basis row counts differ".into(),
        ));
    }
    if p.nrows() != s_j.ncols() || p.ncols() != s.ncols() {
        return Err(Error::Dimension("coefficient shape mismatch".into()));
    }
    for set in [&split.i1, &split.i2, &split.i3] {
        if set.iter().any(|&r| r >= l) {
            return Err(Error::Dimension("split row index out of range".into()));
        }
    }

    let s1 = s.select_rows(&split.i1);
    let s2 = s.select_rows(&split.i2);
    let s3 = s.select_rows(&split.i3);
    let sj2 = s_j.select_rows(&split.i2);
    let sj3 = s_j.select_rows(&split.i3);
    let n3 = split.i3.len() as f64;

    // Reconstruction rows on the second and third blocks.
    let rec2 = &sj2 * p; // n2 x n
    let rec3 = &sj3 * p; // n3 x n

    // Inner matrix of the low-rank term: (Omega_1 A)(Omega_2 A_J P)^T.
    let w = &s1 * rec2.transpose(); // n1 x n2
    let (w_pinv, w_rank) = linalg::pinv(&w, PINV_CUTOFF);
    let degraded = w_rank == 0;

    let low_rank = if degraded {
        0.0
    } else {
        // tr(W^+ (S1 P^T) G (S2 P^T)^T), evaluated without any m-sized object.
        let x1 = &s1 * p.transpose(); // n1 x t
        let x2 = &s2 * p.transpose(); // n2 x t
        let m = &w_pinv * x1 * gram_basis; // n2 x t
        trace_of_product(&m, &x2)
    };

    // Monte-Carlo debias on the third block.
    let direct = trace_of_product(&s3, &rec3);
    let correction = if degraded {
        0.0
    } else {
        // tr((Omega_3 A_J P)(Omega_2 A)^T W^+ (Omega_1 A)(Omega_3 A_J P)^T)
        let u = &rec3 * s2.transpose(); // n3 x n2
        let v = &s1 * rec3.transpose(); // n1 x n3
        let uw = &u * &w_pinv; // n3 x n1
        trace_of_product(&uw, &v.transpose())
    };

    Ok((
        low_rank + (direct - correction) / (n3 * probe_scale2),
        degraded,
    ))
}

/// Estimates the relative Frobenius reconstruction error of coefficients `p`
/// from the sketch alone.
pub fn estimate_frobenius_error(
    s: &DMatrix<f64>,
    s_j: &DMatrix<f64>,
    gram_basis: &DMatrix<f64>,
    frob2: f64,
    p: &DMatrix<f64>,
    split: &EstimatorSplit,
    probe_scale2: f64,
) -> Result<ErrorReport> {
    let (cross, degraded) = estimate_cross_trace(s, s_j, p, gram_basis, split, probe_scale2)?;
    let basis_energy = trace_of_product(&(gram_basis * p), p);
    let mut err2 = frob2 - 2.0 * cross + basis_energy;
    let clamped = err2 < 0.0;
    if clamped {
        err2 = 0.0;
    }
    let est_abs = err2.sqrt();
    let est_rel = if frob2 > 0.0 {
        est_abs / frob2.sqrt()
    } else {
        0.0
    };
    Ok(ErrorReport {
        est_abs,
        est_rel,
        frob2,
        cross_estimate: cross,
        basis_energy,
        clamped,
        degraded,
    })
}

/// Scores each coefficient candidate with the same split (common random
/// numbers) and returns the argmin index with all reports. Ties break toward
/// the earliest candidate.
pub fn select_best_coefficients(
    s: &DMatrix<f64>,
    s_j: &DMatrix<f64>,
    gram_basis: &DMatrix<f64>,
    frob2: f64,
    candidates: &[DMatrix<f64>],
    split: &EstimatorSplit,
    probe_scale2: f64,
) -> Result<(usize, Vec<ErrorReport>)> {
    if candidates.is_empty() {
        return Err(Error::Config("no coefficient candidates".into()));
    }
    let reports: Vec<ErrorReport> = candidates
        .par_iter()
        .map(|p| estimate_frobenius_error(s, s_j, gram_basis, frob2, p, split, probe_scale2))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, report) in reports.iter().enumerate() {
        if report.est_abs < reports[best].est_abs {
            best = i;
        }
    }
    Ok((best, reports))
}

/// Dense oracle: `||A - A_J P||_F`.
pub fn exact_frobenius_error(a: &DMatrix<f64>, a_j: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    (a - a_j * p).norm()
}
