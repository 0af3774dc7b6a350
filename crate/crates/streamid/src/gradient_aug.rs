//! Gradient estimation on lattice graphs and gradient-aware compression.
//!
//! Per-node gradients are least-squares fits over 1-ring neighbor differences,
//! assembled into one sparse operator per spatial dimension. The operators
//! feed three consumers: gradient-augmented column scoring, a
//! gradient-regularized sketched coefficient solve, and a generalized
//! cross-validation search for the regularization weight.

use nalgebra::{DMatrix, DVector};

use crate::config::GridSpec;
use crate::error::{Error, Result};
use crate::linalg::{self, PINV_CUTOFF};
use crate::sketching::Projection;

/// Compressed sparse row matrix; rows hold the per-node stencils.
#[derive(Debug, Clone)]
pub struct SparseOp {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOp {
    fn from_rows(rows: usize, cols: usize, entries: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in entries {
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseOp {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_nnz(&self, row: usize) -> usize {
        self.row_ptr[row + 1] - self.row_ptr[row]
    }

    pub fn row_sum(&self, row: usize) -> f64 {
        self.values[self.row_ptr[row]..self.row_ptr[row + 1]]
            .iter()
            .sum()
    }

    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows);
        for r in 0..self.rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * v[self.col_idx[k]];
            }
            out[r] = acc;
        }
        out
    }

    pub fn apply_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, m.ncols());
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[k];
                let c = self.col_idx[k];
                for j in 0..m.ncols() {
                    out[(r, j)] += v * m[(c, j)];
                }
            }
        }
        out
    }

    /// Dense copy, for small oracles and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[(r, self.col_idx[k])] = self.values[k];
            }
        }
        out
    }
}

/// Per-dimension sparse gradient estimation operators over a lattice.
#[derive(Debug, Clone)]
pub struct GradientOperator {
    grid: GridSpec,
    ops: Vec<SparseOp>,
}

impl GradientOperator {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Spatial dimension.
    pub fn dims(&self) -> usize {
        self.ops.len()
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    /// Operator for spatial dimension `p`.
    pub fn op(&self, p: usize) -> &SparseOp {
        &self.ops[p]
    }

    pub fn ops(&self) -> &[SparseOp] {
        &self.ops
    }
}

fn node_coords(idx: usize, dims: &[usize]) -> Vec<usize> {
    let mut rest = idx;
    dims.iter()
        .map(|&d| {
            let c = rest % d;
            rest /= d;
            c
        })
        .collect()
}

fn node_index(coords: &[usize], dims: &[usize]) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    for (c, d) in coords.iter().zip(dims.iter()) {
        idx += c * stride;
        stride *= d;
    }
    idx
}

/// Builds the per-dimension gradient estimation operators for a lattice.
///
/// At each node the axis neighbors present on the lattice form a difference
/// system; its pseudoinverse fills one stencil row per dimension, with the
/// diagonal set to minus the stencil sum so constant fields map to zero.
pub fn build_gradient_operator(grid: &GridSpec) -> Result<GradientOperator> {
    grid.validate()?;
    let dims = &grid.dims;
    let d = dims.len();
    let m = grid.node_count();

    let mut rows: Vec<Vec<Vec<(usize, f64)>>> = vec![Vec::with_capacity(m); d];
    for q in 0..m {
        let coords = node_coords(q, dims);
        let mut neighbors = Vec::with_capacity(2 * d);
        for axis in 0..d {
            for dir in [-1isize, 1] {
                let c = coords[axis] as isize + dir;
                if c >= 0 && (c as usize) < dims[axis] {
                    let mut ncoords = coords.clone();
                    ncoords[axis] = c as usize;
                    let mut offset = vec![0.0; d];
                    offset[axis] = dir as f64 * grid.spacing[axis];
                    neighbors.push((node_index(&ncoords, dims), offset));
                }
            }
        }
        let n_q = neighbors.len();
        let mut k_q = DMatrix::zeros(n_q, d);
        for (r, (_, offset)) in neighbors.iter().enumerate() {
            for p in 0..d {
                k_q[(r, p)] = offset[p];
            }
        }
        let (k_pinv, rank) = linalg::pinv(&k_q, PINV_CUTOFF);
        if rank < d {
            return Err(Error::Numerical(format!(
                "gradient stencil at node {q} has rank {rank} < {d}"
            )));
        }
        for p in 0..d {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(n_q + 1);
            let mut diag = 0.0;
            for (kk, (nidx, _)) in neighbors.iter().enumerate() {
                let w = k_pinv[(p, kk)];
                diag -= w;
                row.push((*nidx, w));
            }
            row.push((q, diag));
            row.sort_by_key(|(c, _)| *c);
            rows[p].push(row);
        }
    }

    let ops = rows
        .into_iter()
        .map(|entries| SparseOp::from_rows(m, m, entries))
        .collect();
    Ok(GradientOperator {
        grid: grid.clone(),
        ops,
    })
}

/// Estimated gradient fields of one snapshot, one per spatial dimension.
pub fn estimate_gradient(op: &GradientOperator, a: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    if a.len() != op.node_count() {
        return Err(Error::Dimension(format!(
            "field length {} does not match grid nodes {}",
            a.len(),
            op.node_count()
        )));
    }
    Ok(op.ops.iter().map(|g| g.apply_vec(a)).collect())
}

/// Concatenates a column with its weighted gradient estimates,
/// `[a; sqrt(w) G^1 a; ...; sqrt(w) G^d a]`, for ridge-score computation.
pub fn augment_for_css(
    a: &DVector<f64>,
    op: &GradientOperator,
    weight: f64,
) -> Result<DVector<f64>> {
    let grads = estimate_gradient(op, a)?;
    let m = a.len();
    let d = grads.len();
    let w = weight.max(0.0).sqrt();
    let mut out = DVector::zeros(m * (d + 1));
    out.rows_mut(0, m).copy_from(a);
    for (p, g) in grads.iter().enumerate() {
        let mut block = out.rows_mut(m * (p + 1), m);
        block.copy_from(g);
        block *= w;
    }
    Ok(out)
}

/// Sketched gradient operators: `Omega G^p` for streaming per-column gradient
/// sketches and `Omega G^p Omega^T` for the cross-validation path.
#[derive(Debug, Clone)]
pub struct SketchedGradientOps {
    omega_g: Vec<DMatrix<f64>>,
    omega_g_omega_t: Vec<DMatrix<f64>>,
}

impl SketchedGradientOps {
    pub fn new(op: &GradientOperator, proj: &Projection) -> Result<Self> {
        let m = op.node_count();
        if proj.data_rows() != m {
            return Err(Error::Dimension(
                "projection width must match grid nodes".into(),
            ));
        }
        let l = proj.rows();
        let omega = proj.matrix();
        let mut omega_g = Vec::with_capacity(op.dims());
        for g in op.ops() {
            let mut og = DMatrix::zeros(l, m);
            for q in 0..m {
                for k in g.row_ptr[q]..g.row_ptr[q + 1] {
                    let c = g.col_idx[k];
                    let v = g.values[k];
                    for i in 0..l {
                        og[(i, c)] += omega[(i, q)] * v;
                    }
                }
            }
            omega_g.push(og);
        }
        let omega_g_omega_t = omega_g.iter().map(|og| og * omega.transpose()).collect();
        Ok(SketchedGradientOps {
            omega_g,
            omega_g_omega_t,
        })
    }

    pub fn dims(&self) -> usize {
        self.omega_g.len()
    }

    /// `Omega G^p a` for an arriving column.
    pub fn sketch_gradient(&self, p: usize, a: &DVector<f64>) -> DVector<f64> {
        &self.omega_g[p] * a
    }

    pub fn omega_g(&self, p: usize) -> &DMatrix<f64> {
        &self.omega_g[p]
    }

    pub fn omega_g_omega_t(&self, p: usize) -> &DMatrix<f64> {
        &self.omega_g_omega_t[p]
    }
}

/// Gradient-regularized sketched coefficients: minimizes
/// `||S_J X - S||_F^2 + lambda * sum_p ||S^p_J X - S^p||_F^2`
/// through one stacked least-squares solve. Rows of vacant slots stay zero.
pub fn coeff_gradient_augmented(
    indices: &[Option<usize>],
    value_basis: &DMatrix<f64>,
    value_sketch: &DMatrix<f64>,
    grad_basis: &[DMatrix<f64>],
    grad_sketch: &[DMatrix<f64>],
    lambda: f64,
) -> Result<(DMatrix<f64>, bool)> {
    if lambda < 0.0 {
        return Err(Error::Config("lambda must be non-negative".into()));
    }
    if grad_basis.len() != grad_sketch.len() {
        return Err(Error::Dimension("gradient block count mismatch".into()));
    }
    let t = indices.len();
    let l = value_sketch.nrows();
    let n = value_sketch.ncols();
    let d = grad_basis.len();
    let slots: Vec<usize> = (0..t).filter(|&i| indices[i].is_some()).collect();
    if slots.is_empty() {
        return Ok((DMatrix::zeros(t, n), true));
    }
    let sqrt_l = lambda.sqrt();
    let mut stacked_a = DMatrix::zeros(l * (d + 1), slots.len());
    let mut stacked_b = DMatrix::zeros(l * (d + 1), n);
    stacked_a
        .rows_mut(0, l)
        .copy_from(&value_basis.select_columns(&slots));
    stacked_b.rows_mut(0, l).copy_from(value_sketch);
    for p in 0..d {
        let mut block_a = stacked_a.rows_mut(l * (p + 1), l);
        block_a.copy_from(&grad_basis[p].select_columns(&slots));
        block_a *= sqrt_l;
        let mut block_b = stacked_b.rows_mut(l * (p + 1), l);
        block_b.copy_from(&grad_sketch[p]);
        block_b *= sqrt_l;
    }
    let (x, degraded) = linalg::lstsq(&stacked_a, &stacked_b, PINV_CUTOFF);
    let mut p_full = DMatrix::zeros(t, n);
    for (row, &slot) in slots.iter().enumerate() {
        p_full.set_row(slot, &x.row(row));
    }
    Ok((p_full, degraded))
}

/// Reusable, weight-independent factors of the sketched cross-validation
/// objective. Evaluating one weight costs a small dense solve.
pub struct GcvCache {
    /// `S_J^T S_J` over occupied slots.
    g0: DMatrix<f64>,
    /// `sum_p (S^p_J)^T S^p_J`.
    g_grad: DMatrix<f64>,
    /// `S_J^T S`, q x n.
    sjt_s: DMatrix<f64>,
    /// `H^T S` with `H = sum_p (Omega G^p Omega^T)^T S^p_J`.
    ht_s: DMatrix<f64>,
    /// `H^T S_J`.
    ht_sj: DMatrix<f64>,
    /// `||S||_F^2`.
    s_frob2: f64,
    l: usize,
}

impl GcvCache {
    pub fn new(
        indices: &[Option<usize>],
        value_basis: &DMatrix<f64>,
        value_sketch: &DMatrix<f64>,
        grad_basis: &[DMatrix<f64>],
        sketched_ops: &SketchedGradientOps,
    ) -> Result<Self> {
        let t = indices.len();
        let slots: Vec<usize> = (0..t).filter(|&i| indices[i].is_some()).collect();
        if slots.is_empty() {
            return Err(Error::Numerical(
                "cross-validation needs an occupied basis".into(),
            ));
        }
        let sj = value_basis.select_columns(&slots);
        let l = sj.nrows();
        let q = slots.len();
        let g0 = sj.tr_mul(&sj);
        let mut g_grad = DMatrix::zeros(q, q);
        let mut h = DMatrix::zeros(l, q);
        for p in 0..sketched_ops.dims() {
            let gb = grad_basis[p].select_columns(&slots);
            g_grad += gb.tr_mul(&gb);
            h += sketched_ops.omega_g_omega_t(p).tr_mul(&gb);
        }
        Ok(GcvCache {
            sjt_s: sj.tr_mul(value_sketch),
            ht_s: h.tr_mul(value_sketch),
            ht_sj: h.tr_mul(&sj),
            s_frob2: value_sketch.norm_squared(),
            g0,
            g_grad,
            l,
        })
    }

    /// Cross-validation objective at one regularization weight: sketched
    /// residual energy over squared residual degrees of freedom. The flag
    /// marks a pseudoinverse fallback on a degenerate normal matrix.
    pub fn value(&self, lambda: f64) -> Result<(f64, bool)> {
        let q = self.g0.nrows();
        let m_mat = &self.g0 + &self.g_grad * lambda;
        let nt_s = &self.sjt_s + &self.ht_s * lambda;
        let nt_sj = &self.g0 + &self.ht_sj * lambda;
        let (x, xj, degraded) = match m_mat.clone().cholesky() {
            Some(chol) => (chol.solve(&nt_s), chol.solve(&nt_sj), false),
            None => {
                let (x, rank) = linalg::svd_lstsq(&m_mat, &nt_s, PINV_CUTOFF);
                let (xj, _) = linalg::svd_lstsq(&m_mat, &nt_sj, PINV_CUTOFF);
                (x, xj, rank < q)
            }
        };
        // ||S - S_J X||_F^2 expanded through the cached Gram blocks.
        let fit = self.s_frob2 - 2.0 * dot_all(&x, &self.sjt_s) + dot_all(&(&self.g0 * &x), &x);
        let denom = self.l as f64 - xj.trace();
        if denom <= 0.0 {
            return Err(Error::Numerical(format!(
                "non-positive effective degrees of freedom at lambda = {lambda}"
            )));
        }
        Ok((fit.max(0.0) / (denom * denom), degraded))
    }
}

fn dot_all(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Direct evaluation of the sketched cross-validation objective with the
/// smoother matrix materialized; the reference for the cached path.
pub fn gcv_value_direct(
    indices: &[Option<usize>],
    value_basis: &DMatrix<f64>,
    value_sketch: &DMatrix<f64>,
    grad_basis: &[DMatrix<f64>],
    sketched_ops: &SketchedGradientOps,
    lambda: f64,
) -> Result<f64> {
    let t = indices.len();
    let slots: Vec<usize> = (0..t).filter(|&i| indices[i].is_some()).collect();
    let sj = value_basis.select_columns(&slots);
    let l = sj.nrows();
    let q = slots.len();
    let mut m_mat = sj.tr_mul(&sj);
    let mut n_mat = sj.clone();
    for p in 0..sketched_ops.dims() {
        let gb = grad_basis[p].select_columns(&slots);
        m_mat += gb.tr_mul(&gb) * lambda;
        n_mat += sketched_ops.omega_g_omega_t(p).tr_mul(&gb) * lambda;
    }
    let (minv_nt, rank) = linalg::svd_lstsq(&m_mat, &n_mat.transpose(), PINV_CUTOFF);
    if rank < q {
        return Err(Error::Numerical("singular normal matrix".into()));
    }
    let c = &sj * &minv_nt;
    let resid = value_sketch - &c * value_sketch;
    let denom = l as f64 - c.trace();
    if denom <= 0.0 {
        return Err(Error::Numerical("non-positive degrees of freedom".into()));
    }
    Ok(resid.norm_squared() / (denom * denom))
}

/// Golden-section minimization over `log10(lambda)` on `[lo, hi]`.
///
/// Returns the midpoint of the final bracket, its objective value, and a flag
/// that is false when the iteration budget ran out before the bracket shrank
/// below `tol` (in log10 units).
pub fn golden_section_min<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64, bool)>
where
    F: FnMut(f64) -> f64,
{
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Config("need 0 < lo < hi".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut a = lo.log10();
    let mut b = hi.log10();
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(10f64.powf(x1));
    let mut f2 = f(10f64.powf(x2));
    for _ in 0..max_iter {
        if (b - a).abs() <= tol {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(10f64.powf(x1));
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(10f64.powf(x2));
        }
    }
    let converged = (b - a).abs() <= tol;
    let mid = 10f64.powf(0.5 * (a + b));
    let fmid = f(mid);
    Ok((mid, fmid, converged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{coeff_full_sketch, CoeffContext};
    use crate::config::Scaling;
    use crate::rng::{self, tag};
    use crate::stream_io::gen_lowrank;

    fn grid_1d(n: usize, h: f64) -> GridSpec {
        GridSpec {
            dims: vec![n],
            spacing: vec![h],
        }
    }

    fn grid_2d(nx: usize, ny: usize) -> GridSpec {
        GridSpec::with_unit_spacing(vec![nx, ny])
    }

    #[test]
    fn one_dimensional_interior_stencil_is_central_difference() {
        let op = build_gradient_operator(&grid_1d(3, 1.0)).unwrap();
        let dense = op.op(0).to_dense();
        assert!((dense[(1, 0)] + 0.5).abs() < 1e-14);
        assert!(dense[(1, 1)].abs() < 1e-14);
        assert!((dense[(1, 2)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn constant_fields_have_zero_gradient() {
        let op = build_gradient_operator(&grid_2d(5, 4)).unwrap();
        let ones = DVector::from_element(20, 3.7);
        for g in estimate_gradient(&op, &ones).unwrap() {
            assert!(g.abs().max() < 1e-13);
        }
        for p in 0..op.dims() {
            for q in 0..op.node_count() {
                assert!(op.op(p).row_sum(q).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn affine_fields_are_recovered_exactly() {
        let (nx, ny) = (5, 5);
        let op = build_gradient_operator(&grid_2d(nx, ny)).unwrap();
        let mut f = DVector::zeros(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                f[i + j * nx] = 2.0 * i as f64 + 3.0 * j as f64 + 1.0;
            }
        }
        let grads = estimate_gradient(&op, &f).unwrap();
        for v in grads[0].iter() {
            assert!((v - 2.0).abs() < 1e-10);
        }
        for v in grads[1].iter() {
            assert!((v - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn affine_exactness_in_three_dimensions() {
        let dims = [4usize, 3, 5];
        let grid = GridSpec::with_unit_spacing(dims.to_vec());
        let op = build_gradient_operator(&grid).unwrap();
        let m = grid.node_count();
        let mut f = DVector::zeros(m);
        for idx in 0..m {
            let c = super::node_coords(idx, &dims);
            f[idx] = 1.5 * c[0] as f64 - 2.5 * c[1] as f64 + 0.5 * c[2] as f64;
        }
        let grads = estimate_gradient(&op, &f).unwrap();
        for (p, expect) in [(0usize, 1.5), (1, -2.5), (2, 0.5)] {
            for v in grads[p].iter() {
                assert!((v - expect).abs() < 1e-10, "dim {p}: {v} vs {expect}");
            }
        }
    }

    #[test]
    fn sparsity_matches_neighbor_counts() {
        let (nx, ny) = (6, 5);
        let op = build_gradient_operator(&grid_2d(nx, ny)).unwrap();
        for p in 0..2 {
            let g = op.op(p);
            for q in 0..op.node_count() {
                let coords = super::node_coords(q, &[nx, ny]);
                let mut n_q = 0;
                for (axis, &dim) in [nx, ny].iter().enumerate() {
                    if coords[axis] > 0 {
                        n_q += 1;
                    }
                    if coords[axis] + 1 < dim {
                        n_q += 1;
                    }
                }
                assert!(g.row_nnz(q) <= n_q + 1);
            }
        }
    }

    #[test]
    fn interior_error_is_second_order() {
        // Cubic field: interior central differences err by exactly h^2, so
        // halving h divides the worst interior error by four.
        let errs: Vec<f64> = [33usize, 65]
            .iter()
            .map(|&n| {
                let h = 1.0 / (n - 1) as f64;
                let op = build_gradient_operator(&grid_1d(n, h)).unwrap();
                let f = DVector::from_fn(n, |i, _| (i as f64 * h).powi(3));
                let g = &estimate_gradient(&op, &f).unwrap()[0];
                (1..n - 1)
                    .map(|i| {
                        let x = i as f64 * h;
                        (g[i] - 3.0 * x * x).abs()
                    })
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_field_augments_to_zero_and_weight_zero_appends_zeros() {
        let op = build_gradient_operator(&grid_2d(4, 4)).unwrap();
        let zero = DVector::zeros(16);
        assert!(augment_for_css(&zero, &op, 1.0).unwrap().abs().max() == 0.0);

        let mut rng = rng::rng_for(1, tag::GENERATOR);
        let a = rng::gaussian_vector(16, &mut rng);
        let aug = augment_for_css(&a, &op, 0.0).unwrap();
        assert_eq!(aug.rows(0, 16).into_owned(), a);
        assert!(aug.rows(16, 32).abs().max() == 0.0);

        // Constant fields gain only zero blocks, so augmented and plain
        // ridge scores coincide.
        let c = DVector::from_element(16, 2.0);
        let aug_c = augment_for_css(&c, &op, 5.0).unwrap();
        assert!(aug_c.rows(16, 32).abs().max() < 1e-12);
    }

    #[test]
    fn augmented_scores_follow_gradient_energy() {
        // Two equal-norm columns on a 1-D grid: a smooth low-frequency mode
        // and an oscillatory one. With gradient augmentation the oscillatory
        // column carries more augmented energy and outranks the smooth one.
        let n = 32;
        let h = 1.0 / (n - 1) as f64;
        let grid = grid_1d(n, h);
        let op = build_gradient_operator(&grid).unwrap();
        let smooth = DVector::from_fn(n, |i, _| (std::f64::consts::PI * i as f64 * h).sin());
        let rough = DVector::from_fn(n, |i, _| (7.0 * std::f64::consts::PI * i as f64 * h).sin());
        let rough = &rough * (smooth.norm() / rough.norm());
        assert!((smooth.norm() - rough.norm()).abs() < 1e-12);

        let weight = 1e-3; // keep augmented norms comparable
        let aug_smooth = augment_for_css(&smooth, &op, weight).unwrap();
        let aug_rough = augment_for_css(&rough, &op, weight).unwrap();
        let mut pack = DMatrix::zeros(2 * n, 2);
        pack.set_column(0, &aug_smooth);
        pack.set_column(1, &aug_rough);
        let scores = crate::column_select::generalized_ridge_scores(&pack, &pack, 1).unwrap();
        assert!(
            scores[1] > scores[0],
            "oscillatory column should outrank: {scores:?}"
        );

        // Plain scores of the equal-norm pair are symmetric.
        let mut plain = DMatrix::zeros(n, 2);
        plain.set_column(0, &smooth);
        plain.set_column(1, &rough);
        let plain_scores =
            crate::column_select::generalized_ridge_scores(&plain, &plain, 1).unwrap();
        assert!((plain_scores[0] - plain_scores[1]).abs() < 1e-9);
    }

    struct GradCase {
        indices: Vec<Option<usize>>,
        basis: DMatrix<f64>,
        a: DMatrix<f64>,
        s: DMatrix<f64>,
        sj: DMatrix<f64>,
        grad_basis: Vec<DMatrix<f64>>,
        grad_sketch: Vec<DMatrix<f64>>,
        sketched_ops: SketchedGradientOps,
    }

    impl GradCase {
        fn new(nx: usize, ny: usize, n: usize, t: usize, proj: Projection, seed: u64) -> Self {
            let m = nx * ny;
            let a = gen_lowrank(m, n, t, 0.1, seed).unwrap();
            let grid = grid_2d(nx, ny);
            let op = build_gradient_operator(&grid).unwrap();
            let sketched_ops = SketchedGradientOps::new(&op, &proj).unwrap();
            let picked: Vec<usize> = (0..t).collect();
            let basis = a.select_columns(&picked);
            let s = proj.sketch_matrix(&a).unwrap();
            let sj = proj.sketch_matrix(&basis).unwrap();
            let grad_sketch: Vec<DMatrix<f64>> =
                (0..2).map(|p| sketched_ops.omega_g(p) * &a).collect();
            let grad_basis: Vec<DMatrix<f64>> =
                (0..2).map(|p| sketched_ops.omega_g(p) * &basis).collect();
            GradCase {
                indices: picked.iter().map(|&j| Some(j)).collect(),
                basis,
                a,
                s,
                sj,
                grad_basis,
                grad_sketch,
                sketched_ops,
            }
        }
    }

    #[test]
    fn zero_weight_reduces_to_full_sketch() {
        let proj = Projection::gaussian(14, 36, 2, Scaling::Scaled).unwrap();
        let case = GradCase::new(6, 6, 20, 4, proj, 3);
        let (p_grad, _) = coeff_gradient_augmented(
            &case.indices,
            &case.sj,
            &case.s,
            &case.grad_basis,
            &case.grad_sketch,
            0.0,
        )
        .unwrap();
        let ctx = CoeffContext::new(&case.indices, &case.basis, &case.s, None).unwrap();
        let (p_full, _) = coeff_full_sketch(&ctx).unwrap();
        assert!((p_grad - &p_full).norm() <= 1e-9 * p_full.norm().max(1.0));
    }

    #[test]
    fn huge_weight_approaches_gradient_only_solution() {
        let proj = Projection::gaussian(20, 36, 4, Scaling::Scaled).unwrap();
        let case = GradCase::new(6, 6, 18, 4, proj, 5);
        let (p_big, _) = coeff_gradient_augmented(
            &case.indices,
            &case.sj,
            &case.s,
            &case.grad_basis,
            &case.grad_sketch,
            1e6,
        )
        .unwrap();
        // Gradient-only least squares over the stacked gradient blocks.
        let l = case.s.nrows();
        let mut ga = DMatrix::zeros(2 * l, 4);
        let mut gb = DMatrix::zeros(2 * l, 18);
        for p in 0..2 {
            ga.rows_mut(p * l, l).copy_from(&case.grad_basis[p]);
            gb.rows_mut(p * l, l).copy_from(&case.grad_sketch[p]);
        }
        let (p_grad_only, _) = linalg::lstsq(&ga, &gb, 1e-10);
        let diff = (&p_big - &p_grad_only).norm() / p_grad_only.norm().max(1.0);
        assert!(diff <= 1e-4, "difference {diff}");
    }

    #[test]
    fn identity_projection_exact_rank_zero_residual_for_any_weight() {
        let proj = Projection::identity(25);
        let m = 25;
        let t = 3;
        let basis = gen_lowrank(m, t, t, 0.0, 6).unwrap();
        let mix = gen_lowrank(t, 12, t, 0.0, 7).unwrap();
        let a = &basis * &mix;
        let grid = grid_2d(5, 5);
        let op = build_gradient_operator(&grid).unwrap();
        let sk = SketchedGradientOps::new(&op, &proj).unwrap();
        let indices: Vec<Option<usize>> = (0..t).map(Some).collect();
        let grad_basis: Vec<DMatrix<f64>> = (0..2).map(|p| sk.omega_g(p) * &basis).collect();
        let grad_sketch: Vec<DMatrix<f64>> = (0..2).map(|p| sk.omega_g(p) * &a).collect();
        for lambda in [0.0, 1.0, 100.0] {
            let (p, _) =
                coeff_gradient_augmented(&indices, &basis, &a, &grad_basis, &grad_sketch, lambda)
                    .unwrap();
            let err = (&basis * &p - &a).norm() / a.norm();
            assert!(err <= 1e-8, "lambda {lambda}: residual {err}");
        }
    }

    #[test]
    fn gcv_cache_matches_direct_evaluation() {
        let proj = Projection::gaussian(16, 36, 8, Scaling::Scaled).unwrap();
        let case = GradCase::new(6, 6, 22, 4, proj, 9);
        let cache = GcvCache::new(
            &case.indices,
            &case.sj,
            &case.s,
            &case.grad_basis,
            &case.sketched_ops,
        )
        .unwrap();
        for lambda in [1e-3, 1e-1, 1.0, 10.0, 1e3] {
            let (cached, degraded) = cache.value(lambda).unwrap();
            assert!(!degraded);
            let direct = gcv_value_direct(
                &case.indices,
                &case.sj,
                &case.s,
                &case.grad_basis,
                &case.sketched_ops,
                lambda,
            )
            .unwrap();
            assert!(
                (cached - direct).abs() <= 1e-12 * direct.max(1e-12),
                "lambda {lambda}: cached {cached} vs direct {direct}"
            );
        }
    }

    #[test]
    fn gcv_denominator_positive_across_weight_range() {
        for seed in 0..5 {
            let proj = Projection::gaussian(18, 36, seed, Scaling::Scaled).unwrap();
            let case = GradCase::new(6, 6, 25, 4, proj, seed);
            let cache = GcvCache::new(
                &case.indices,
                &case.sj,
                &case.s,
                &case.grad_basis,
                &case.sketched_ops,
            )
            .unwrap();
            for exp in -3..=3 {
                let lambda = 10f64.powi(exp);
                let (v, _) = cache.value(lambda).unwrap();
                assert!(v.is_finite() && v >= 0.0);
            }
        }
    }

    #[test]
    fn smoother_identity_holds_in_dense_analogue() {
        // With the identity projection the regularized coefficients satisfy
        // A_J P(lambda) = C(lambda) A for the materialized smoother C.
        let proj = Projection::identity(25);
        let case = GradCase::new(5, 5, 14, 3, proj, 11);
        for lambda in [1e-2, 1.0, 50.0] {
            let (p, _) = coeff_gradient_augmented(
                &case.indices,
                &case.sj,
                &case.s,
                &case.grad_basis,
                &case.grad_sketch,
                lambda,
            )
            .unwrap();
            let lhs = &case.basis * &p;

            let slots: Vec<usize> = (0..3).collect();
            let sj = case.sj.select_columns(&slots);
            let mut m_mat = sj.tr_mul(&sj);
            let mut n_mat = sj.clone();
            for pdim in 0..2 {
                let gb = case.grad_basis[pdim].select_columns(&slots);
                m_mat += gb.tr_mul(&gb) * lambda;
                n_mat += case.sketched_ops.omega_g_omega_t(pdim).tr_mul(&gb) * lambda;
            }
            let (minv_nt, _) = linalg::svd_lstsq(&m_mat, &n_mat.transpose(), 1e-12);
            let c = &sj * &minv_nt;
            let rhs = &c * &case.a;
            let diff = (&lhs - &rhs).norm() / rhs.norm().max(1.0);
            assert!(diff <= 1e-8, "lambda {lambda}: identity violated by {diff}");
        }
    }

    #[test]
    fn golden_section_finds_known_minimum() {
        let f = |x: f64| (x.log10() - 0.3).powi(2);
        let (xmin, _, converged) = golden_section_min(f, 1e-3, 1e3, 1e-6, 200).unwrap();
        assert!(converged);
        assert!((xmin - 10f64.powf(0.3)).abs() <= 1e-4 * 10f64.powf(0.3));
    }

    #[test]
    fn golden_section_monotone_returns_endpoint() {
        let inc = |x: f64| x.log10();
        let (xmin, _, _) = golden_section_min(inc, 1e-3, 1e3, 1e-6, 200).unwrap();
        assert!((xmin.log10() - (-3.0)).abs() < 1e-3);

        let dec = |x: f64| -x.log10();
        let (xmax, _, _) = golden_section_min(dec, 1e-3, 1e3, 1e-6, 200).unwrap();
        assert!((xmax.log10() - 3.0).abs() < 1e-3);

        // Minimizer exactly on the lower boundary.
        let boundary = |x: f64| (x.log10() + 3.0).powi(2);
        let (xb, _, _) = golden_section_min(boundary, 1e-3, 1e3, 1e-6, 200).unwrap();
        assert!((xb.log10() + 3.0).abs() < 1e-3);
    }

    #[test]
    fn golden_section_budget_exhaustion_is_flagged() {
        let f = |x: f64| (x.log10() - 0.3).powi(2);
        let (_, _, converged) = golden_section_min(f, 1e-3, 1e3, 1e-9, 3).unwrap();
        assert!(!converged);
    }
}
