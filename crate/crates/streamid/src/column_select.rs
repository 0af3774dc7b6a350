//! Streaming column subset selection.
//!
//! The main selector keeps a fixed-size basis and scores candidate columns by
//! approximate ridge leverage scores computed from the running sketch Gram
//! matrix. Occupied slots are probabilistically vacated when their score
//! drops; vacant slots sample replacements from the buffered new columns.
//! A residual-projection online selector and dense score oracles are provided
//! for benchmarking and tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{check_budget, DEFAULT_ORACLE_BUDGET};
use crate::error::{Error, Result};
use crate::linalg::{self, ShiftedPinv};
use crate::rng::{self, tag};
use crate::sketching::{topk_energy_of_gram, Projection, SketchState};
use crate::stream_io::ColumnSource;

/// Parameters of the streaming ridge-leverage selector.
#[derive(Debug, Clone)]
pub struct CssParams {
    /// Target rank.
    pub k: usize,
    /// Basis size (and buffer size).
    pub t: usize,
    /// Accuracy parameter.
    pub epsilon: f64,
    /// Failure probability.
    pub delta: f64,
    /// Sampling constant scaling the admission budget.
    pub c: f64,
}

impl CssParams {
    pub fn new(k: usize, t: usize) -> Self {
        CssParams {
            k,
            t,
            epsilon: 0.5,
            delta: 0.05,
            c: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.t < self.k {
            return Err(Error::Config("basis size t must be >= k".into()));
        }
        if !(self.epsilon > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) || !(self.c > 0.0) {
            return Err(Error::Config("epsilon, delta, c out of range".into()));
        }
        Ok(())
    }

    /// Multiplier applied to a candidate's score to form its admission
    /// probability: `c * (k ln k + k ln(1/delta) / epsilon) / t`.
    pub fn admission_factor(&self) -> f64 {
        let k = self.k as f64;
        self.c * (k * k.ln().max(0.0) + k * (1.0 / self.delta).ln() / self.epsilon) / self.t as f64
    }
}

/// Current selection state: retained columns, their indices and scores, plus
/// the buffer of unprocessed new columns.
#[derive(Debug, Clone)]
pub struct BasisState {
    columns: DMatrix<f64>,
    indices: Vec<Option<usize>>,
    tau_old: Vec<f64>,
    buffer: DMatrix<f64>,
    buffer_indices: Vec<usize>,
    count: usize,
}

impl BasisState {
    pub fn new(m: usize, t: usize) -> Self {
        BasisState {
            columns: DMatrix::zeros(m, t),
            indices: vec![None; t],
            tau_old: vec![1.0; t],
            buffer: DMatrix::zeros(m, t),
            buffer_indices: vec![0; t],
            count: 0,
        }
    }

    pub fn t(&self) -> usize {
        self.indices.len()
    }

    pub fn m(&self) -> usize {
        self.columns.nrows()
    }

    /// Buffered, not yet processed columns.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn buffer_full(&self) -> bool {
        self.count == self.t()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn indices(&self) -> &[Option<usize>] {
        &self.indices
    }

    pub fn tau_old(&self) -> &[f64] {
        &self.tau_old
    }

    pub fn occupied(&self) -> usize {
        self.indices.iter().filter(|i| i.is_some()).count()
    }

    /// Slot positions currently holding a column.
    pub fn occupied_slots(&self) -> Vec<usize> {
        (0..self.t())
            .filter(|&i| self.indices[i].is_some())
            .collect()
    }

    /// Stores an arriving column in the buffer. The buffer must not be full;
    /// run an epoch first.
    pub fn push_buffer(&mut self, a: &DVector<f64>, index: usize) -> Result<()> {
        if self.buffer_full() {
            return Err(Error::Config(
                "buffer full; run an epoch before pushing".into(),
            ));
        }
        if a.len() != self.m() {
            return Err(Error::Dimension(format!(
                "column length {} does not match basis height {}",
                a.len(),
                self.m()
            )));
        }
        self.buffer.set_column(self.count, a);
        self.buffer_indices[self.count] = index;
        self.count += 1;
        Ok(())
    }

    fn clear_buffer(&mut self) {
        self.count = 0;
    }

    #[cfg(test)]
    pub(crate) fn force_slot(&mut self, slot: usize, col: &DVector<f64>, index: usize, tau: f64) {
        self.columns.set_column(slot, col);
        self.indices[slot] = Some(index);
        self.tau_old[slot] = tau;
    }
}

/// Approximate ridge leverage scores of the columns of `pack` with respect to
/// the sketch Gram matrix `gram` of the observed data.
///
/// The regularizer is `(||A_obs||_F^2 - ||S_k||_F^2) / k`, clamped at zero;
/// each score is the quadratic form of the sketched column against the
/// shifted pseudoinverse. Zero columns score zero.
pub fn approx_ridge_scores_sketch(
    gram: &DMatrix<f64>,
    proj: &Projection,
    pack: &DMatrix<f64>,
    frob2: f64,
    k: usize,
) -> Result<Vec<f64>> {
    let sketched: Vec<DVector<f64>> = (0..pack.ncols())
        .map(|j| proj.sketch_column(&pack.column(j).into_owned()))
        .collect::<Result<_>>()?;
    ridge_scores_of_sketched(gram, &sketched, frob2, k)
}

/// Same scores, taking already-sketched candidate columns.
pub fn ridge_scores_of_sketched(
    gram: &DMatrix<f64>,
    sketched: &[DVector<f64>],
    frob2: f64,
    k: usize,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let topk = topk_energy_of_gram(gram, k.min(gram.nrows()))?;
    let lambda = (frob2 - topk).max(0.0) / k as f64;
    let pinv = ShiftedPinv::new(gram, lambda);
    Ok(sketched
        .iter()
        .map(|s| {
            if s.iter().all(|&v| v == 0.0) {
                0.0
            } else {
                pinv.quadform(s).max(0.0)
            }
        })
        .collect())
}

/// One selection epoch driven by externally supplied scores.
///
/// `scorer` is invoked twice: first on the current basis pack, then on the
/// valid prefix of the buffer. Occupied slot `i` is vacated with probability
/// `1 - tau_i / tau_old_i` where `tau_i = min(tau_old_i, fresh_i)`; vacant
/// slots scan the buffer in arrival order and admit candidate `r` with
/// probability `min(1, score_r * admission_factor)`. An admitted buffer entry
/// is consumed and cannot fill a second slot. The buffer is cleared.
pub fn css_epoch_with_scorer<F>(
    basis: &mut BasisState,
    params: &CssParams,
    rng: &mut ChaCha8Rng,
    mut scorer: F,
) -> Result<()>
where
    F: FnMut(&DMatrix<f64>) -> Result<Vec<f64>>,
{
    let t = basis.t();
    let fresh_c = scorer(&basis.columns)?;
    if fresh_c.len() != t {
        return Err(Error::Dimension(
            "scorer returned wrong basis score count".into(),
        ));
    }
    let buffer_pack = basis.buffer.columns(0, basis.count).into_owned();
    let fresh_d = scorer(&buffer_pack)?;
    if fresh_d.len() != basis.count {
        return Err(Error::Dimension(
            "scorer returned wrong buffer score count".into(),
        ));
    }

    let factor = params.admission_factor();
    let mut consumed = vec![false; basis.count];

    for i in 0..t {
        if basis.indices[i].is_some() {
            let tau = basis.tau_old[i].min(fresh_c[i]);
            let p_evict = 1.0 - tau / basis.tau_old[i];
            if rng.gen::<f64>() < p_evict {
                basis.columns.column_mut(i).fill(0.0);
                basis.indices[i] = None;
                basis.tau_old[i] = 1.0;
            } else {
                basis.tau_old[i] = tau;
            }
        }
        if basis.indices[i].is_none() {
            for r in 0..basis.count {
                if consumed[r] {
                    continue;
                }
                let p_admit = (fresh_d[r] * factor).min(1.0);
                if rng.gen::<f64>() < p_admit {
                    let candidate = basis.buffer.column(r).into_owned();
                    basis.columns.set_column(i, &candidate);
                    basis.indices[i] = Some(basis.buffer_indices[r]);
                    basis.tau_old[i] = fresh_d[r].min(1.0);
                    consumed[r] = true;
                    break;
                }
            }
        }
    }
    basis.clear_buffer();
    Ok(())
}

/// One epoch of the streaming ridge-leverage selector, scoring candidates
/// against the current sketch Gram matrix.
pub fn ridge_css_epoch(
    basis: &mut BasisState,
    gram: &DMatrix<f64>,
    proj: &Projection,
    frob2: f64,
    params: &CssParams,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    css_epoch_with_scorer(basis, params, rng, |pack| {
        approx_ridge_scores_sketch(gram, proj, pack, frob2, params.k)
    })
}

/// Runs the selection half of the streaming pipeline over a whole stream:
/// every column is sketched and buffered, an epoch fires each `t` columns,
/// and a final epoch flushes a non-empty partial buffer.
pub fn run_streaming_css(
    stream: &mut impl ColumnSource,
    proj: &Projection,
    params: &CssParams,
    seed: u64,
) -> Result<(BasisState, SketchState)> {
    params.validate()?;
    let m = stream.rows();
    if proj.data_rows() != m {
        return Err(Error::Dimension(
            "projection width must match stream rows".into(),
        ));
    }
    let mut rng = rng::rng_for(seed, tag::CSS);
    let mut sketch = SketchState::new(proj.rows());
    let mut basis = BasisState::new(m, params.t);

    let mut j = 0usize;
    while let Some(a) = stream.next_column()? {
        let s = proj.sketch_column(&a)?;
        sketch.update(&a, s)?;
        basis.push_buffer(&a, j)?;
        if basis.buffer_full() {
            ridge_css_epoch(
                &mut basis,
                sketch.gram(),
                proj,
                sketch.frob2(),
                params,
                &mut rng,
            )?;
        }
        j += 1;
    }
    if basis.count() > 0 {
        ridge_css_epoch(
            &mut basis,
            sketch.gram(),
            proj,
            sketch.frob2(),
            params,
            &mut rng,
        )?;
    }
    Ok((basis, sketch))
}

/// Online residual-projection selector state.
///
/// New columns are admitted with probability proportional to their squared
/// residual against the span of previously committed columns; accumulated
/// residual mass triggers merging the current batch into the committed set.
/// Selection stops growing once `k` columns are held, matching the fixed
/// memory budget of the other selectors.
#[derive(Debug, Clone)]
pub struct ResidualCssState {
    committed: Vec<(usize, DVector<f64>)>,
    current: Vec<(usize, DVector<f64>)>,
    /// Orthonormal basis for the span of the committed columns.
    q: DMatrix<f64>,
    sigma: f64,
    xi: f64,
    k: usize,
    m: usize,
}

impl ResidualCssState {
    pub fn new(m: usize, k: usize, xi: f64) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(Error::Config("xi must be positive".into()));
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(ResidualCssState {
            committed: Vec::new(),
            current: Vec::new(),
            q: DMatrix::zeros(m, 0),
            sigma: 0.0,
            xi,
            k,
            m,
        })
    }

    /// Accumulated residual mass in the current step.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// All selected columns so far, committed batch first.
    pub fn selected(&self) -> Vec<(usize, DVector<f64>)> {
        let mut out = self.committed.clone();
        out.extend(self.current.iter().cloned());
        out
    }

    pub fn selected_count(&self) -> usize {
        self.committed.len() + self.current.len()
    }

    pub fn committed_rank(&self) -> usize {
        self.q.ncols()
    }

    fn residual(&self, a: &DVector<f64>) -> DVector<f64> {
        if self.q.ncols() == 0 {
            return a.clone();
        }
        let mut r = a - &self.q * self.q.tr_mul(a);
        // Second projection pass keeps the residual numerically orthogonal.
        r -= &self.q * self.q.tr_mul(&r);
        r
    }

    fn merge_current(&mut self) {
        let batch = std::mem::take(&mut self.current);
        for (_, col) in &batch {
            let r = self.residual(col);
            let norm = r.norm();
            if norm > 1e-12 * col.norm().max(1.0) {
                let ncols = self.q.ncols();
                self.q = self.q.clone().insert_column(ncols, 0.0);
                self.q.set_column(ncols, &(r / norm));
            }
        }
        self.committed.extend(batch);
        self.sigma = 0.0;
    }

    /// Processes one arriving column with its stream index.
    pub fn update(&mut self, a: &DVector<f64>, index: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        if a.len() != self.m {
            return Err(Error::Dimension("column length mismatch".into()));
        }
        let p_a = self.k as f64 * self.residual(a).norm_squared() / self.xi;
        if self.selected_count() < self.k && rng.gen::<f64>() < p_a.min(1.0) {
            self.current.push((index, a.clone()));
        }
        if p_a < 1.0 {
            self.sigma += p_a;
        }
        if p_a >= 1.0 || self.sigma >= 1.0 {
            self.merge_current();
        }
        Ok(())
    }
}

/// Dense-oracle ridge leverage scores with the data-dependent regularizer
/// `||A - A_k||_F^2 / k`, computed from a full eigendecomposition of `A A^T`.
pub fn exact_ridge_scores(a: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    check_budget(a.nrows() * a.ncols(), DEFAULT_ORACLE_BUDGET)?;
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let gram = a * a.transpose();
    let (eigs, _) = linalg::sym_eig_desc(&gram);
    let tail: f64 = eigs.iter().skip(k).map(|&v| v.max(0.0)).sum();
    let lambda = tail / k as f64;
    let pinv = ShiftedPinv::new(&gram, lambda);
    Ok((0..a.ncols())
        .map(|j| pinv.quadform(&a.column(j).into_owned()))
        .collect())
}

/// Generalized ridge leverage scores of the columns of `pack` with respect to
/// a reference matrix `b`: quadratic forms against
/// `(B B^T + ||B - B_k||_F^2 / k * I)^+`. Columns with significant mass
/// outside the range of a singular reference score infinity.
pub fn generalized_ridge_scores(
    pack: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: usize,
) -> Result<Vec<f64>> {
    check_budget(b.nrows() * b.ncols(), DEFAULT_ORACLE_BUDGET)?;
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if pack.nrows() != b.nrows() {
        return Err(Error::Dimension(
            "column pack and reference heights differ".into(),
        ));
    }
    let gram = b * b.transpose();
    let (eigs, vecs) = linalg::sym_eig_desc(&gram);
    let tail: f64 = eigs.iter().skip(k).map(|&v| v.max(0.0)).sum();
    let lambda = tail / k as f64;
    let eig_max = eigs[0].max(0.0);
    let cutoff = linalg::PINV_CUTOFF * (eig_max + lambda);
    let singular = lambda <= cutoff;
    let pinv = ShiftedPinv::new(&gram, lambda);
    Ok((0..pack.ncols())
        .map(|j| {
            let col = pack.column(j).into_owned();
            if singular {
                // With a zero shift, mass outside the numerical range of the
                // reference makes the score infinite.
                let z = vecs.tr_mul(&col);
                let in_range: f64 = z
                    .iter()
                    .zip(eigs.iter())
                    .filter(|(_, &e)| e > cutoff)
                    .map(|(zi, _)| zi * zi)
                    .sum();
                if col.norm_squared() - in_range > 1e-8 * col.norm_squared().max(1e-300) {
                    return f64::INFINITY;
                }
            }
            pinv.quadform(&col)
        })
        .collect())
}

/// Offline rank-k leverage-score column sampling: scores are row norms of the
/// top-k right singular subspace (degenerate directions split their weight
/// across ties), and `k` columns are drawn without replacement proportionally.
pub fn offline_leverage_css(a: &DMatrix<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    check_budget(a.nrows() * a.ncols(), DEFAULT_ORACLE_BUDGET)?;
    let n = a.ncols();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} out of range for n = {n}")));
    }
    let scores = rank_k_leverage_scores(a, k);
    let mut rng = rng::rng_for(seed, tag::BASELINE);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|&j| scores[j]).sum();
        let choice = if total <= 0.0 {
            rng.gen_range(0..remaining.len())
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = remaining.len() - 1;
            for (pos, &j) in remaining.iter().enumerate() {
                u -= scores[j];
                if u <= 0.0 {
                    idx = pos;
                    break;
                }
            }
            idx
        };
        picked.push(remaining.remove(choice));
    }
    Ok(picked)
}

/// Rank-k leverage scores with tie-aware weighting of degenerate singular
/// directions, so exactly `k` units of score mass are distributed.
pub fn rank_k_leverage_scores(a: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let n = a.ncols();
    let (_, s, v_t) = linalg::thin_svd(a);
    let r = s.len().min(n);
    let k = k.min(r);
    if k == 0 {
        return vec![0.0; n];
    }
    let smax = s[0];
    if smax <= 0.0 {
        return vec![0.0; n];
    }
    let tol = 1e-9 * smax;
    let s_k = s[k - 1];
    // Directions strictly above the k-th value get weight 1; the tie group
    // around the k-th value shares the remaining weight.
    let strict: Vec<usize> = (0..r).filter(|&i| s[i] > s_k + tol).collect();
    let ties: Vec<usize> = (0..r)
        .filter(|&i| (s[i] - s_k).abs() <= tol && s[i] > tol)
        .collect();
    let tie_weight = if ties.is_empty() {
        0.0
    } else {
        (k - strict.len()) as f64 / ties.len() as f64
    };
    (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for &i in &strict {
                acc += v_t[(i, j)] * v_t[(i, j)];
            }
            for &i in &ties {
                acc += tie_weight * v_t[(i, j)] * v_t[(i, j)];
            }
            acc
        })
        .collect()
}
