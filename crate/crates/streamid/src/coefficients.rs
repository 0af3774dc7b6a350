//! Coefficient computation for the streaming decomposition.
//!
//! Four strategies compute the coefficient matrix from the sketch and the
//! retained basis: a direct sketched least-squares solve, a partial-sketch
//! normal-equation solve using the unsketched basis Gram matrix, a residual
//! update reusing the previous coefficients, and a basis-transform update via
//! QR. A dense least-squares oracle backs the tests.
//!
//! Every strategy returns a `t x n_obs` matrix whose rows for vacant basis
//! slots are exactly zero, plus a flag marking pseudoinverse fallbacks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{check_budget, DEFAULT_ORACLE_BUDGET};
use crate::error::{Error, Result};
use crate::linalg::{self, PINV_CUTOFF};

/// Strategy identifier, in the fixed order candidates are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffAlgo {
    /// Least squares on the sketched basis and sketched data.
    FullSketch,
    /// Unsketched basis Gram with a sketched cross term.
    PartialSketch,
    /// Residual correction of the previous coefficients.
    ResidualUpdate,
    /// Old coefficients mapped through a new-basis transform.
    QrTransform,
}

impl CoeffAlgo {
    pub const ALL: [CoeffAlgo; 4] = [
        CoeffAlgo::FullSketch,
        CoeffAlgo::PartialSketch,
        CoeffAlgo::ResidualUpdate,
        CoeffAlgo::QrTransform,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CoeffAlgo::FullSketch => "full_sketch",
            CoeffAlgo::PartialSketch => "partial_sketch",
            CoeffAlgo::ResidualUpdate => "residual_update",
            CoeffAlgo::QrTransform => "qr_transform",
        }
    }
}

/// Previous-epoch state needed by the residual and QR-transform updates.
#[derive(Debug, Clone)]
pub struct PrevEpoch {
    /// Basis slot indices at the previous update.
    pub indices: Vec<Option<usize>>,
    /// Previous basis columns, m x t.
    pub basis: DMatrix<f64>,
    /// Previous coefficients, t x n_prev.
    pub coefficients: DMatrix<f64>,
}

/// Inputs shared by all coefficient updates for one epoch.
pub struct CoeffContext<'a> {
    /// Current basis slot indices into the stream.
    pub indices: &'a [Option<usize>],
    /// Current basis columns, m x t; vacant slots hold zeros.
    pub basis: &'a DMatrix<f64>,
    /// Accumulated sketch of all observed columns, l x n_obs.
    pub sketch: &'a DMatrix<f64>,
    /// Sketched basis, l x t: columns of `sketch` at the basis indices.
    pub sketch_basis: DMatrix<f64>,
    /// Unsketched basis Gram matrix `A_J^T A_J`, t x t.
    pub gram_basis: DMatrix<f64>,
    /// Previous epoch, absent on the first update.
    pub prev: Option<&'a PrevEpoch>,
}

impl<'a> CoeffContext<'a> {
    /// Assembles the per-epoch context; the sketched basis is pulled out of
    /// the sketch by index, so it stays consistent with the data sketch.
    pub fn new(
        indices: &'a [Option<usize>],
        basis: &'a DMatrix<f64>,
        sketch: &'a DMatrix<f64>,
        prev: Option<&'a PrevEpoch>,
    ) -> Result<Self> {
        let t = indices.len();
        if basis.ncols() != t {
            return Err(Error::Dimension(
                "basis width must equal index count".into(),
            ));
        }
        let l = sketch.nrows();
        let n_obs = sketch.ncols();
        let mut sketch_basis = DMatrix::zeros(l, t);
        for (slot, idx) in indices.iter().enumerate() {
            if let Some(j) = idx {
                if *j >= n_obs {
                    return Err(Error::Dimension(format!(
                        "basis index {j} not yet observed (n_obs = {n_obs})"
                    )));
                }
                sketch_basis.set_column(slot, &sketch.column(*j));
            }
        }
        let gram_basis = basis.tr_mul(basis);
        Ok(CoeffContext {
            indices,
            basis,
            sketch,
            sketch_basis,
            gram_basis,
            prev,
        })
    }

    pub fn t(&self) -> usize {
        self.indices.len()
    }

    pub fn n_obs(&self) -> usize {
        self.sketch.ncols()
    }

    fn occupied_slots(&self) -> Vec<usize> {
        (0..self.t())
            .filter(|&i| self.indices[i].is_some())
            .collect()
    }
}

/// Spreads rows computed for the occupied slots back into a full `t x n`
/// matrix, leaving vacant-slot rows exactly zero.
fn scatter_rows(x: &DMatrix<f64>, slots: &[usize], t: usize) -> DMatrix<f64> {
    let mut full = DMatrix::zeros(t, x.ncols());
    for (row, &slot) in slots.iter().enumerate() {
        full.set_row(slot, &x.row(row));
    }
    full
}

/// Coefficients from the fully sketched least-squares problem
/// `min ||S_J X - S||_F`.
pub fn coeff_full_sketch(ctx: &CoeffContext) -> Result<(DMatrix<f64>, bool)> {
    let slots = ctx.occupied_slots();
    if slots.is_empty() {
        return Ok((DMatrix::zeros(ctx.t(), ctx.n_obs()), true));
    }
    let s_occ = ctx.sketch_basis.select_columns(&slots);
    let (x, degraded) = linalg::lstsq(&s_occ, ctx.sketch, PINV_CUTOFF);
    Ok((scatter_rows(&x, &slots, ctx.t()), degraded))
}

/// Coefficients from the partial-sketch normal equations: the unsketched
/// basis Gram `G = A_J^T A_J` against the sketched cross term
/// `Y = (Omega A_J)^T (Omega A_obs)`, solving `G X = Y`.
pub fn coeff_partial_sketch(ctx: &CoeffContext) -> Result<(DMatrix<f64>, bool)> {
    let slots = ctx.occupied_slots();
    if slots.is_empty() {
        return Ok((DMatrix::zeros(ctx.t(), ctx.n_obs()), true));
    }
    let s_occ = ctx.sketch_basis.select_columns(&slots);
    let g_occ = ctx.gram_basis.select_columns(&slots).select_rows(&slots);
    let y = s_occ.tr_mul(ctx.sketch);
    let (x, degraded) = match g_occ.clone().cholesky() {
        Some(chol) => (chol.solve(&y), false),
        None => {
            let (x, rank) = linalg::svd_lstsq(&g_occ, &y, PINV_CUTOFF);
            (x, rank < slots.len())
        }
    };
    Ok((scatter_rows(&x, &slots, ctx.t()), degraded))
}

/// Residual update: rows of the previous coefficients belonging to replaced
/// slots are zeroed, the sketched residual is re-fit with the current basis,
/// and the correction is added to the carried-over coefficients.
pub fn coeff_residual(ctx: &CoeffContext) -> Result<(DMatrix<f64>, bool)> {
    let t = ctx.t();
    let n_obs = ctx.n_obs();
    let slots = ctx.occupied_slots();
    if slots.is_empty() {
        return Ok((DMatrix::zeros(t, n_obs), true));
    }

    // Previous coefficients, zero-padded to n_obs columns, with rows kept
    // only where the slot still holds the same stream column.
    let mut carried = DMatrix::zeros(t, n_obs);
    if let Some(prev) = ctx.prev {
        if prev.coefficients.nrows() != t {
            return Err(Error::Dimension(
                "previous coefficients have wrong row count".into(),
            ));
        }
        let n_prev = prev.coefficients.ncols().min(n_obs);
        for i in 0..t {
            let unchanged = matches!(
                (ctx.indices[i], prev.indices.get(i).copied().flatten()),
                (Some(a), Some(b)) if a == b
            );
            if unchanged {
                for j in 0..n_prev {
                    carried[(i, j)] = prev.coefficients[(i, j)];
                }
            }
        }
    }

    let residual = ctx.sketch - &ctx.sketch_basis * &carried;
    let s_occ = ctx.sketch_basis.select_columns(&slots);
    let (delta, degraded) = linalg::lstsq(&s_occ, &residual, PINV_CUTOFF);
    Ok((carried + scatter_rows(&delta, &slots, ctx.t()), degraded))
}

/// QR-transform update: expresses the previous basis in the current one via
/// `T = A_J^+ A_Jprev` (computed through a QR solve), maps the previous
/// coefficients as `T P_prev`, and fits columns observed since the previous
/// update with the fully sketched least squares.
pub fn coeff_qr_transform(ctx: &CoeffContext) -> Result<(DMatrix<f64>, bool)> {
    let t = ctx.t();
    let n_obs = ctx.n_obs();
    let slots = ctx.occupied_slots();
    if slots.is_empty() {
        return Ok((DMatrix::zeros(t, n_obs), true));
    }
    let prev = match ctx.prev {
        Some(prev) => prev,
        // No previous epoch: every column is new, so this reduces to the
        // fully sketched solve.
        None => return coeff_full_sketch(ctx),
    };
    if prev.coefficients.nrows() != t {
        return Err(Error::Dimension(
            "previous coefficients have wrong row count".into(),
        ));
    }
    let n_prev = prev.coefficients.ncols();
    if n_prev > n_obs {
        return Err(Error::Dimension(
            "previous epoch saw more columns than current".into(),
        ));
    }

    let basis_occ = ctx.basis.select_columns(&slots);
    let (t_occ, mut degraded) = linalg::lstsq(&basis_occ, &prev.basis, PINV_CUTOFF);
    let transform = scatter_rows(&t_occ, &slots, t);
    let covered = &transform * &prev.coefficients;

    let mut p = DMatrix::zeros(t, n_obs);
    p.columns_mut(0, n_prev).copy_from(&covered);
    if n_prev < n_obs {
        let s_new = ctx.sketch.columns(n_prev, n_obs - n_prev).into_owned();
        let s_occ = ctx.sketch_basis.select_columns(&slots);
        let (x_new, deg_new) = linalg::lstsq(&s_occ, &s_new, PINV_CUTOFF);
        degraded |= deg_new;
        p.columns_mut(n_prev, n_obs - n_prev)
            .copy_from(&scatter_rows(&x_new, &slots, t));
    }
    Ok((p, degraded))
}

/// Runs one strategy.
pub fn compute(algo: CoeffAlgo, ctx: &CoeffContext) -> Result<(DMatrix<f64>, bool)> {
    match algo {
        CoeffAlgo::FullSketch => coeff_full_sketch(ctx),
        CoeffAlgo::PartialSketch => coeff_partial_sketch(ctx),
        CoeffAlgo::ResidualUpdate => coeff_residual(ctx),
        CoeffAlgo::QrTransform => coeff_qr_transform(ctx),
    }
}

/// Dense minimum-norm least-squares oracle `P = A_J^+ A`; rows for vacant
/// (zero) basis slots are exactly zero.
pub fn exact_least_squares(a_j: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_budget(a.nrows() * a.ncols(), DEFAULT_ORACLE_BUDGET)?;
    if a_j.nrows() != a.nrows() {
        return Err(Error::Dimension("basis and data heights differ".into()));
    }
    let t = a_j.ncols();
    let slots: Vec<usize> = (0..t).filter(|&i| a_j.column(i).norm() > 0.0).collect();
    let occ = a_j.select_columns(&slots);
    let (x, _) = linalg::svd_lstsq(&occ, a, PINV_CUTOFF);
    Ok(scatter_rows(&x, &slots, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scaling;
    use crate::rng::{self, tag};
    use crate::sketching::Projection;
    use crate::stream_io::gen_lowrank;

    fn all_occupied(t: usize) -> Vec<Option<usize>> {
        (0..t).map(Some).collect()
    }

    /// Context over dense data with an identity projection: the sketch is the
    /// data itself, so sketched solves must match the dense oracle.
    struct DenseCase {
        indices: Vec<Option<usize>>,
        basis: DMatrix<f64>,
        sketch: DMatrix<f64>,
    }

    impl DenseCase {
        fn new(a: &DMatrix<f64>, picked: &[usize]) -> Self {
            let basis = a.select_columns(picked);
            DenseCase {
                indices: picked.iter().map(|&j| Some(j)).collect(),
                basis,
                sketch: a.clone(),
            }
        }

        fn ctx<'a>(&'a self, prev: Option<&'a PrevEpoch>) -> CoeffContext<'a> {
            CoeffContext::new(&self.indices, &self.basis, &self.sketch, prev).unwrap()
        }
    }

    #[test]
    fn full_sketch_identity_projection_matches_oracle() {
        for seed in 0..5 {
            let a = gen_lowrank(12, 9, 5, 0.3, seed).unwrap();
            let case = DenseCase::new(&a, &[0, 3, 6]);
            let (p, degraded) = coeff_full_sketch(&case.ctx(None)).unwrap();
            assert!(!degraded);
            let expect = exact_least_squares(&case.basis, &a).unwrap();
            assert!((p - &expect).norm() <= 1e-10 * expect.norm().max(1.0));
        }
    }

    #[test]
    fn full_sketch_self_representation_is_identity() {
        let a = gen_lowrank(10, 4, 4, 0.1, 2).unwrap();
        let case = DenseCase::new(&a, &[0, 1, 2, 3]);
        let (p, _) = coeff_full_sketch(&case.ctx(None)).unwrap();
        assert!((p - DMatrix::identity(4, 4)).norm() < 1e-10);
    }

    #[test]
    fn full_sketch_recovers_exact_rank_under_gaussian_projection() {
        let (m, n, t) = (40, 30, 6);
        let a = gen_lowrank(m, n, t, 0.0, 7).unwrap();
        let proj = Projection::gaussian(t + 10, m, 3, Scaling::Scaled).unwrap();
        let sketch = proj.sketch_matrix(&a).unwrap();
        // Use the first t columns as the basis; generic rank-t data makes
        // them a full-rank basis for the column space.
        let picked: Vec<usize> = (0..t).collect();
        let basis = a.select_columns(&picked);
        let indices = all_occupied(t);
        let ctx = CoeffContext::new(&indices, &basis, &sketch, None).unwrap();
        let (p, degraded) = coeff_full_sketch(&ctx).unwrap();
        assert!(!degraded);
        let err = (&basis * &p - &a).norm() / a.norm();
        assert!(err <= 1e-8, "relative error {err}");
    }

    #[test]
    fn partial_sketch_identity_projection_matches_oracle() {
        for seed in 0..5 {
            let a = gen_lowrank(11, 8, 5, 0.25, seed).unwrap();
            let case = DenseCase::new(&a, &[1, 4, 5]);
            let (p, degraded) = coeff_partial_sketch(&case.ctx(None)).unwrap();
            assert!(!degraded);
            let expect = exact_least_squares(&case.basis, &a).unwrap();
            assert!((p - &expect).norm() <= 1e-10 * expect.norm().max(1.0));
        }
    }

    #[test]
    fn partial_sketch_orthonormal_basis_gives_projection_coefficients() {
        // Identity basis columns: G = I, so P = A_J^T A_obs.
        let mut a = DMatrix::zeros(5, 6);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 1.0;
        for j in 2..6 {
            for i in 0..5 {
                a[(i, j)] = (i * j) as f64 / 10.0 + 0.1;
            }
        }
        let case = DenseCase::new(&a, &[0, 1]);
        let (p, _) = coeff_partial_sketch(&case.ctx(None)).unwrap();
        let expect = case.basis.tr_mul(&a);
        assert!((p - expect).norm() < 1e-12);
    }

    #[test]
    fn partial_sketch_cross_term_is_unbiased() {
        // The sketched cross term Y averages to the dense A_J^T A_obs over
        // independent scaled projections.
        let a = gen_lowrank(16, 6, 4, 0.2, 9).unwrap();
        let basis = a.select_columns(&[0, 2]);
        let dense = basis.tr_mul(&a);
        let seeds = 200;
        let mut sum = DMatrix::zeros(2, 6);
        let mut sumsq = DMatrix::zeros(2, 6);
        for seed in 0..seeds {
            let proj = Projection::gaussian(8, 16, seed, Scaling::Scaled).unwrap();
            let s = proj.sketch_matrix(&a).unwrap();
            let s_j = proj.sketch_matrix(&basis).unwrap();
            let y = s_j.tr_mul(&s);
            sum += &y;
            sumsq += y.map(|v| v * v);
        }
        let n = seeds as f64;
        for i in 0..2 {
            for j in 0..6 {
                let mean = sum[(i, j)] / n;
                let var = (sumsq[(i, j)] / n - mean * mean).max(0.0);
                let se = (var / n).sqrt();
                let diff = (mean - dense[(i, j)]).abs();
                assert!(
                    diff <= 3.0 * se + 1e-9,
                    "entry ({i},{j}): mean {mean} vs {} (se {se})",
                    dense[(i, j)]
                );
            }
        }
    }

    #[test]
    fn residual_update_is_fixed_point_at_optimum() {
        let a = gen_lowrank(10, 7, 4, 0.2, 4).unwrap();
        let case = DenseCase::new(&a, &[0, 2, 5]);
        let optimal = exact_least_squares(&case.basis, &a).unwrap();
        let prev = PrevEpoch {
            indices: case.indices.clone(),
            basis: case.basis.clone(),
            coefficients: optimal.clone(),
        };
        let (p, degraded) = coeff_residual(&case.ctx(Some(&prev))).unwrap();
        assert!(!degraded);
        assert!((p - optimal).norm() < 1e-10);
    }

    #[test]
    fn residual_update_with_zero_prev_equals_full_sketch() {
        let a = gen_lowrank(9, 6, 3, 0.3, 5).unwrap();
        let case = DenseCase::new(&a, &[1, 3]);
        let prev = PrevEpoch {
            indices: case.indices.clone(),
            basis: case.basis.clone(),
            coefficients: DMatrix::zeros(2, 6),
        };
        let (p_res, _) = coeff_residual(&case.ctx(Some(&prev))).unwrap();
        let (p_full, _) = coeff_full_sketch(&case.ctx(None)).unwrap();
        assert!((p_res - p_full).norm() < 1e-10);
    }

    #[test]
    fn residual_update_after_slot_replacement_matches_full_sketch() {
        let (m, n, t) = (20, 12, 4usize);
        let _ = t;
        let a = gen_lowrank(m, n, 6, 0.4, 6).unwrap();
        let proj = Projection::gaussian(10, m, 4, Scaling::Scaled).unwrap();
        let sketch = proj.sketch_matrix(&a).unwrap();

        let old_picked = [0usize, 1, 2, 3];
        let old_basis = a.select_columns(&old_picked);
        let old_indices: Vec<Option<usize>> = old_picked.iter().map(|&j| Some(j)).collect();
        let old_ctx = CoeffContext::new(&old_indices, &old_basis, &sketch, None).unwrap();
        let (old_p, _) = coeff_full_sketch(&old_ctx).unwrap();

        // Replace slot 2 with a later column.
        let new_picked = [0usize, 1, 9, 3];
        let new_basis = a.select_columns(&new_picked);
        let new_indices: Vec<Option<usize>> = new_picked.iter().map(|&j| Some(j)).collect();
        let prev = PrevEpoch {
            indices: old_indices.clone(),
            basis: old_basis.clone(),
            coefficients: old_p,
        };
        let ctx = CoeffContext::new(&new_indices, &new_basis, &sketch, Some(&prev)).unwrap();
        let (p_res, _) = coeff_residual(&ctx).unwrap();
        let (p_full, _) = coeff_full_sketch(&ctx).unwrap();
        assert!(
            (&p_res - &p_full).norm() <= 1e-8 * p_full.norm().max(1.0),
            "residual and direct solutions diverge: {}",
            (&p_res - &p_full).norm()
        );
    }

    #[test]
    fn qr_transform_identity_when_basis_unchanged() {
        let a = gen_lowrank(14, 10, 5, 0.3, 8).unwrap();
        let case = DenseCase::new(&a, &[0, 4, 7]);
        let optimal = exact_least_squares(&case.basis, &a).unwrap();
        let prev = PrevEpoch {
            indices: case.indices.clone(),
            basis: case.basis.clone(),
            coefficients: optimal.clone(),
        };
        let (p, degraded) = coeff_qr_transform(&case.ctx(Some(&prev))).unwrap();
        assert!(!degraded);
        assert!((p - optimal).norm() < 1e-10);
    }

    #[test]
    fn qr_transform_recovers_permutation() {
        let a = gen_lowrank(12, 8, 5, 0.2, 10).unwrap();
        let old_picked = [0usize, 2, 5];
        let new_picked = [5usize, 0, 2];
        let old_basis = a.select_columns(&old_picked);
        let new_basis = a.select_columns(&new_picked);
        let old_indices: Vec<Option<usize>> = old_picked.iter().map(|&j| Some(j)).collect();
        let new_indices: Vec<Option<usize>> = new_picked.iter().map(|&j| Some(j)).collect();
        let p_prev = exact_least_squares(&old_basis, &a).unwrap();
        let prev = PrevEpoch {
            indices: old_indices,
            basis: old_basis.clone(),
            coefficients: p_prev,
        };
        let ctx = CoeffContext::new(&new_indices, &new_basis, &a, Some(&prev)).unwrap();
        let (p, _) = coeff_qr_transform(&ctx).unwrap();
        // The transform realigns slots, so the reconstruction is unchanged.
        let recon_new = &new_basis * &p;
        let recon_old = &old_basis * &prev.coefficients;
        assert!((recon_new - recon_old).norm() < 1e-8);
        // And T itself is the slot permutation.
        let (t_occ, _) = linalg::lstsq(&new_basis, &old_basis, PINV_CUTOFF);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if new_picked[i] == old_picked[j] {
                    1.0
                } else {
                    0.0
                };
                assert!((t_occ[(i, j)] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn qr_transform_exact_when_old_basis_in_new_span() {
        let new_basis = gen_lowrank(15, 4, 4, 0.0, 11).unwrap();
        let mix = gen_lowrank(4, 4, 4, 0.0, 12).unwrap();
        let old_basis = &new_basis * &mix;
        let indices = all_occupied(4);
        let (t_occ, _) = linalg::lstsq(&new_basis, &old_basis, PINV_CUTOFF);
        assert!((&new_basis * &t_occ - &old_basis).norm() <= 1e-8 * old_basis.norm());
        let _ = indices;
    }

    #[test]
    fn qr_transform_fits_new_columns_with_sketch() {
        let (m, n_prev, n) = (18, 6, 10);
        let a = gen_lowrank(m, n, 4, 0.2, 13).unwrap();
        let picked = [0usize, 2, 4, 5];
        let basis = a.select_columns(&picked);
        let indices: Vec<Option<usize>> = picked.iter().map(|&j| Some(j)).collect();
        let head = a.columns(0, n_prev).into_owned();
        let p_prev = exact_least_squares(&basis, &head).unwrap();
        let prev = PrevEpoch {
            indices: indices.clone(),
            basis: basis.clone(),
            coefficients: p_prev.clone(),
        };
        let ctx = CoeffContext::new(&indices, &basis, &a, Some(&prev)).unwrap();
        let (p, _) = coeff_qr_transform(&ctx).unwrap();
        // Covered block carried over, new block solved against the sketch
        // (identity projection here, so it is the dense solution).
        assert!((p.columns(0, n_prev).clone_owned() - &p_prev).norm() < 1e-10);
        let tail = a.columns(n_prev, n - n_prev).into_owned();
        let expect_tail = exact_least_squares(&basis, &tail).unwrap();
        assert!((p.columns(n_prev, n - n_prev).clone_owned() - expect_tail).norm() < 1e-9);
    }

    #[test]
    fn exact_ls_oracle_cases() {
        // Full basis: P is the identity.
        let a = gen_lowrank(8, 5, 5, 0.2, 14).unwrap();
        let p = exact_least_squares(&a, &a).unwrap();
        assert!((p - DMatrix::identity(5, 5)).norm() < 1e-9);

        // Hand case: basis e1, data [[2,0],[0,3]] -> P = [2, 0].
        let a_j = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let p = exact_least_squares(&a_j, &a).unwrap();
        assert_eq!(p.nrows(), 1);
        assert!((p[(0, 0)] - 2.0).abs() < 1e-12 && p[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn exact_ls_is_residual_minimizer() {
        let a = gen_lowrank(10, 8, 4, 0.3, 15).unwrap();
        let basis = a.select_columns(&[0, 3, 6]);
        let p = exact_least_squares(&basis, &a).unwrap();
        let best = (&basis * &p - &a).norm();
        let mut rng = rng::rng_for(16, tag::GENERATOR);
        for _ in 0..100 {
            let delta = rng::gaussian_matrix(3, 8, &mut rng) * 1e-3;
            let perturbed = &p + &delta;
            let worse = (&basis * perturbed - &a).norm();
            assert!(worse >= best - 1e-12);
        }
    }

    #[test]
    fn vacant_rows_are_exactly_zero() {
        let a = gen_lowrank(10, 6, 3, 0.2, 17).unwrap();
        let mut basis = a.select_columns(&[0, 1, 2]).insert_column(1, 0.0);
        basis.column_mut(1).fill(0.0);
        let indices = vec![Some(0), None, Some(1), Some(2)];
        let prev = PrevEpoch {
            indices: indices.clone(),
            basis: basis.clone(),
            coefficients: DMatrix::from_fn(4, 6, |i, j| (i + j) as f64 * 0.1),
        };
        let ctx = CoeffContext::new(&indices, &basis, &a, Some(&prev)).unwrap();
        for algo in CoeffAlgo::ALL {
            let (p, _) = compute(algo, &ctx).unwrap();
            assert_eq!(p.nrows(), 4);
            for j in 0..p.ncols() {
                assert_eq!(p[(1, j)], 0.0, "{} leaked into a vacant row", algo.label());
            }
        }
        let p = exact_least_squares(&basis, &a).unwrap();
        for j in 0..p.ncols() {
            assert_eq!(p[(1, j)], 0.0);
        }
    }

    #[test]
    fn all_strategies_reduce_to_oracle_under_identity_projection() {
        for seed in 0..10 {
            let m = 8 + (seed as usize % 25);
            let n = 10 + (seed as usize % 55);
            let t = 2 + (seed as usize % 7);
            let a = gen_lowrank(m, n, t.min(m).min(n), 0.3, seed).unwrap();
            let picked: Vec<usize> = (0..t.min(n)).collect();
            let case = DenseCase::new(&a, &picked);
            let optimal = exact_least_squares(&case.basis, &a).unwrap();
            let prev = PrevEpoch {
                indices: case.indices.clone(),
                basis: case.basis.clone(),
                coefficients: optimal.clone(),
            };
            for algo in CoeffAlgo::ALL {
                let (p, _) = compute(algo, &case.ctx(Some(&prev))).unwrap();
                let diff = (&p - &optimal).norm() / optimal.norm().max(1.0);
                assert!(
                    diff <= 1e-9,
                    "{} differs from oracle by {diff}",
                    algo.label()
                );
            }
        }
    }

    #[test]
    fn sketched_strategies_exact_on_exact_rank_data() {
        // The direct, residual and transform updates solve consistent sketched
        // systems and recover exact-rank data exactly. The partial-sketch
        // update estimates the cross term with a finite sketch, so it is
        // unbiased but carries O(sqrt(t/l)) noise; its exactness is covered by
        // the identity-projection tests instead.
        let (m, n, t) = (30, 24, 5);
        let a = gen_lowrank(m, n, t, 0.0, 18).unwrap();
        let proj = Projection::gaussian(t + 10, m, 7, Scaling::Scaled).unwrap();
        let sketch = proj.sketch_matrix(&a).unwrap();
        let picked: Vec<usize> = (0..t).collect();
        let basis = a.select_columns(&picked);
        let indices: Vec<Option<usize>> = picked.iter().map(|&j| Some(j)).collect();
        let optimal = exact_least_squares(&basis, &a).unwrap();
        let prev = PrevEpoch {
            indices: indices.clone(),
            basis: basis.clone(),
            coefficients: optimal,
        };
        let ctx = CoeffContext::new(&indices, &basis, &sketch, Some(&prev)).unwrap();
        for algo in [
            CoeffAlgo::FullSketch,
            CoeffAlgo::ResidualUpdate,
            CoeffAlgo::QrTransform,
        ] {
            let (p, degraded) = compute(algo, &ctx).unwrap();
            assert!(!degraded);
            let err = (&basis * &p - &a).norm() / a.norm();
            assert!(err <= 1e-6, "{}: relative error {err}", algo.label());
        }
        let (p, _) = coeff_partial_sketch(&ctx).unwrap();
        let err = (&basis * &p - &a).norm() / a.norm();
        assert!(err <= 1.0, "partial sketch unexpectedly diverged: {err}");
    }
}
