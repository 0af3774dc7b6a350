//! End-to-end single-pass compression: streaming column selection, per-epoch
//! coefficient updates with estimator-driven selection, optional gradient
//! augmentation, and model assembly.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{self, CoeffAlgo, CoeffContext, PrevEpoch};
use crate::column_select::{
    css_epoch_with_scorer, ridge_scores_of_sketched, BasisState, CssParams,
};
use crate::config::{CoeffStrategy, GradientMode, RunConfig};
use crate::error::{Error, Result};
use crate::error_estimate::{
    estimate_frobenius_error, select_best_coefficients, ErrorReport, EstimatorSplit,
};
use crate::gradient_aug::{
    build_gradient_operator, coeff_gradient_augmented, golden_section_min, GcvCache,
    GradientOperator, SketchedGradientOps,
};
use crate::rng::{self, tag};
use crate::sketching::{Projection, SketchState};
use crate::stream_io::{ColumnSource, CountingStream, EpochDecision, IDModel, ModelTrailer};

/// Model plus the last error report, for callers that want the ingredients.
#[derive(Debug)]
pub struct CompressOutcome {
    pub model: IDModel,
    pub final_report: ErrorReport,
}

/// Gradient-mode state carried through the pass.
struct GradState {
    op: GradientOperator,
    sketched: SketchedGradientOps,
    /// Per-dimension sketched gradient columns, accumulated when the
    /// coefficient path needs them.
    grad_cols: Vec<Vec<DVector<f64>>>,
    /// Gram of the stacked value-plus-gradient sketches, for augmented
    /// column scores.
    aug_gram: DMatrix<f64>,
    /// Running squared norm of the augmented (unsketched) columns.
    aug_frob2: f64,
    weight: f64,
}

impl GradState {
    fn new(config: &RunConfig, proj: &Projection) -> Result<Option<Self>> {
        if config.gradient == GradientMode::None {
            return Ok(None);
        }
        let grid = config
            .grid
            .as_ref()
            .ok_or_else(|| Error::Config("gradient modes require a grid".into()))?;
        let op = build_gradient_operator(grid)?;
        let sketched = SketchedGradientOps::new(&op, proj)?;
        let d = op.dims();
        let l = proj.rows();
        let aug_rows = if config.gradient.augments_css() {
            l * (d + 1)
        } else {
            0
        };
        Ok(Some(GradState {
            op,
            sketched,
            grad_cols: vec![Vec::new(); d],
            aug_gram: DMatrix::zeros(aug_rows, aug_rows),
            aug_frob2: 0.0,
            weight: config.gradient_weight,
        }))
    }

    /// Stacked sketch of a column and its weighted gradient sketches.
    fn augmented_sketch(
        &self,
        value_sketch: &DVector<f64>,
        grad_sketches: &[DVector<f64>],
    ) -> DVector<f64> {
        let l = value_sketch.len();
        let d = grad_sketches.len();
        let w = self.weight.max(0.0).sqrt();
        let mut out = DVector::zeros(l * (d + 1));
        out.rows_mut(0, l).copy_from(value_sketch);
        for (p, g) in grad_sketches.iter().enumerate() {
            let mut block = out.rows_mut(l * (p + 1), l);
            block.copy_from(g);
            block *= w;
        }
        out
    }

    /// Per-dimension sketch matrices, l x n_obs each.
    fn grad_matrices(&self) -> Vec<DMatrix<f64>> {
        self.grad_cols
            .iter()
            .map(|cols| {
                let l = cols.first().map(|c| c.len()).unwrap_or(0);
                let mut m = DMatrix::zeros(l, cols.len());
                for (j, c) in cols.iter().enumerate() {
                    m.set_column(j, c);
                }
                m
            })
            .collect()
    }
}

/// Compresses a column stream into an interpolative model in one forward
/// traversal. The stream is wrapped in a pass guard; the exact number of
/// columns pulled is recorded in the model trailer.
pub fn compress_stream<S: ColumnSource>(stream: S, config: &RunConfig) -> Result<CompressOutcome> {
    let mut stream = CountingStream::new(stream);
    let (m, n) = (stream.rows(), stream.cols());
    config.validate(m, n)?;

    let l = config.sketch_rows();
    let proj = Projection::gaussian(
        l,
        m,
        rng::derive_seed(config.seed, tag::PROJECTION),
        config.scaling,
    )?;
    let params = CssParams {
        k: config.k,
        t: config.t,
        epsilon: config.epsilon,
        delta: config.delta,
        c: config.c,
    };
    params.validate()?;
    let split = EstimatorSplit::new(l, &config.split, config.seed)?;
    let mut rng_css = rng::rng_for(config.seed, tag::CSS);

    let mut sketch = SketchState::new(l);
    let mut basis = BasisState::new(m, config.t);
    let mut grad = GradState::new(config, &proj)?;
    let store_grad_cols = config.gradient.augments_coefficients();

    let mut prev: Option<PrevEpoch> = None;
    let mut decisions: Vec<EpochDecision> = Vec::new();
    let mut last_report: Option<ErrorReport> = None;

    let mut j = 0usize;
    while let Some(a) = stream.next_column()? {
        let s = proj.sketch_column(&a)?;
        if let Some(g) = grad.as_mut() {
            let grad_sketches: Vec<DVector<f64>> = (0..g.op.dims())
                .map(|p| g.sketched.sketch_gradient(p, &a))
                .collect();
            if config.gradient.augments_css() {
                let aug = g.augmented_sketch(&s, &grad_sketches);
                g.aug_gram.ger(1.0, &aug, &aug, 1.0);
                let mut aug_norm2 = a.norm_squared();
                for gp in g.op.ops() {
                    aug_norm2 += g.weight.max(0.0) * gp.apply_vec(&a).norm_squared();
                }
                g.aug_frob2 += aug_norm2;
            }
            if store_grad_cols {
                for (p, gs) in grad_sketches.into_iter().enumerate() {
                    g.grad_cols[p].push(gs);
                }
            }
        }
        sketch.update(&a, s)?;
        basis.push_buffer(&a, j)?;
        if basis.buffer_full() {
            run_epoch(
                config,
                &params,
                &proj,
                &sketch,
                &mut basis,
                grad.as_ref(),
                &split,
                &mut rng_css,
                &mut prev,
                &mut decisions,
                &mut last_report,
            )?;
        }
        j += 1;
    }
    if basis.count() > 0 {
        run_epoch(
            config,
            &params,
            &proj,
            &sketch,
            &mut basis,
            grad.as_ref(),
            &split,
            &mut rng_css,
            &mut prev,
            &mut decisions,
            &mut last_report,
        )?;
    }

    let prev = prev.ok_or_else(|| Error::Numerical("stream produced no epochs".into()))?;
    let mut coefficients = prev.coefficients.clone();
    let mut final_report =
        last_report.ok_or_else(|| Error::Numerical("no error report produced".into()))?;

    // Gradient-regularized final coefficients with a cross-validated weight,
    // evaluated once at end of stream.
    let mut lambda_star = None;
    let mut gcv_trace: Vec<(f64, f64)> = Vec::new();
    if let Some(g) = grad.as_ref() {
        if config.gradient.augments_coefficients() {
            let s_mat = sketch.matrix();
            let indices = basis.indices().to_vec();
            let s_basis = sketch_basis_by_index(&s_mat, &indices);
            let grad_mats = g.grad_matrices();
            let grad_basis: Vec<DMatrix<f64>> = grad_mats
                .iter()
                .map(|gm| sketch_basis_by_index(gm, &indices))
                .collect();
            let cache = GcvCache::new(&indices, &s_basis, &s_mat, &grad_basis, &g.sketched)?;
            let mut trace: Vec<(f64, f64)> = Vec::new();
            let (best_lambda, _, _) = golden_section_min(
                |lambda| match cache.value(lambda) {
                    Ok((v, _)) => {
                        trace.push((lambda, v));
                        v
                    }
                    Err(_) => f64::INFINITY,
                },
                config.gcv.lambda_lo,
                config.gcv.lambda_hi,
                config.gcv.tol,
                config.gcv.max_iter,
            )?;
            let (p_grad, _) = coeff_gradient_augmented(
                &indices,
                &s_basis,
                &s_mat,
                &grad_basis,
                &grad_mats,
                best_lambda,
            )?;
            let gram_basis = basis.columns().tr_mul(basis.columns());
            final_report = estimate_frobenius_error(
                &s_mat,
                &s_basis,
                &gram_basis,
                sketch.frob2(),
                &p_grad,
                &split,
                proj.probe_scale2(),
            )?;
            coefficients = p_grad;
            lambda_star = Some(best_lambda);
            gcv_trace = trace;
        }
    }

    let trailer = ModelTrailer {
        config: config.clone(),
        epoch_decisions: decisions,
        est_rel_error: final_report.est_rel,
        est_abs_error: final_report.est_abs,
        clamped: final_report.clamped,
        lambda_star,
        gcv_trace,
        columns_read: stream.columns_read(),
    };
    let model = IDModel {
        indices: basis.indices().to_vec(),
        basis: basis.columns().clone(),
        coefficients,
        k: config.k,
        sketch_rows: l,
        seed: config.seed,
        gradient_mode: config.gradient,
        trailer,
    };
    Ok(CompressOutcome {
        model,
        final_report,
    })
}

/// Sketched basis columns pulled from a sketch matrix by stream index;
/// vacant slots stay zero.
fn sketch_basis_by_index(sketch: &DMatrix<f64>, indices: &[Option<usize>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(sketch.nrows(), indices.len());
    for (slot, idx) in indices.iter().enumerate() {
        if let Some(j) = idx {
            out.set_column(slot, &sketch.column(*j));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    config: &RunConfig,
    params: &CssParams,
    proj: &Projection,
    sketch: &SketchState,
    basis: &mut BasisState,
    grad: Option<&GradState>,
    split: &EstimatorSplit,
    rng_css: &mut ChaCha8Rng,
    prev: &mut Option<PrevEpoch>,
    decisions: &mut Vec<EpochDecision>,
    last_report: &mut Option<ErrorReport>,
) -> Result<()> {
    // Selection: scores come from the value sketch, or from the stacked
    // value-plus-gradient sketch in gradient-aware selection modes.
    if let Some(g) = grad.filter(|_| config.gradient.augments_css()) {
        css_epoch_with_scorer(basis, params, rng_css, |pack| {
            let sketched: Vec<DVector<f64>> = (0..pack.ncols())
                .map(|c| {
                    let col = pack.column(c).into_owned();
                    let vs = proj.sketch_column(&col)?;
                    let gs: Vec<DVector<f64>> = (0..g.op.dims())
                        .map(|p| g.sketched.sketch_gradient(p, &col))
                        .collect();
                    Ok(g.augmented_sketch(&vs, &gs))
                })
                .collect::<Result<_>>()?;
            ridge_scores_of_sketched(&g.aug_gram, &sketched, g.aug_frob2, params.k)
        })?;
    } else {
        css_epoch_with_scorer(basis, params, rng_css, |pack| {
            crate::column_select::approx_ridge_scores_sketch(
                sketch.gram(),
                proj,
                pack,
                sketch.frob2(),
                params.k,
            )
        })?;
    }

    // Coefficients: all four updates (or one pinned update), scored by the
    // estimator with common random numbers.
    let s_mat = sketch.matrix();
    let indices = basis.indices().to_vec();
    let ctx = CoeffContext::new(&indices, basis.columns(), &s_mat, prev.as_ref())?;

    let algos: Vec<CoeffAlgo> = match config.strategy {
        CoeffStrategy::SelectBest => CoeffAlgo::ALL.to_vec(),
        CoeffStrategy::Fixed(algo) => vec![algo],
    };
    let candidates: Vec<(DMatrix<f64>, bool)> = algos
        .par_iter()
        .map(|&algo| coefficients::compute(algo, &ctx))
        .collect::<Result<_>>()?;

    let matrices: Vec<DMatrix<f64>> = candidates.iter().map(|(p, _)| p.clone()).collect();
    let (best, reports) = select_best_coefficients(
        &s_mat,
        &ctx.sketch_basis,
        &ctx.gram_basis,
        sketch.frob2(),
        &matrices,
        split,
        proj.probe_scale2(),
    )?;

    let (chosen_p, chosen_degraded) = &candidates[best];
    decisions.push(EpochDecision {
        n_obs: sketch.n_obs(),
        chosen: algos[best].label().to_string(),
        est_rel_error: reports[best].est_rel,
        degraded: *chosen_degraded || reports[best].degraded,
    });
    *prev = Some(PrevEpoch {
        indices,
        basis: basis.columns().clone(),
        coefficients: chosen_p.clone(),
    });
    *last_report = Some(reports[best].clone());
    Ok(())
}

/// Streaming evaluation of a model against the original data: one extra pass
/// accumulating the true squared error column by column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub m: usize,
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub true_rel_error: f64,
    pub est_rel_error: f64,
    pub epoch_decisions: Vec<EpochDecision>,
    pub lambda_star: Option<f64>,
}

pub fn evaluate_model(model: &IDModel, stream: &mut impl ColumnSource) -> Result<EvalReport> {
    if stream.rows() != model.m() {
        return Err(Error::Dimension(format!(
            "model rows {} vs stream rows {}",
            model.m(),
            stream.rows()
        )));
    }
    if stream.cols() != model.n() {
        return Err(Error::Dimension(format!(
            "model columns {} vs stream columns {}",
            model.n(),
            stream.cols()
        )));
    }
    let mut err2 = 0.0;
    let mut frob2 = 0.0;
    let mut j = 0usize;
    while let Some(a) = stream.next_column()? {
        let recon = &model.basis * model.coefficients.column(j).into_owned();
        err2 += (a.clone() - recon).norm_squared();
        frob2 += a.norm_squared();
        j += 1;
    }
    let true_rel_error = if frob2 > 0.0 {
        (err2 / frob2).sqrt()
    } else {
        0.0
    };
    Ok(EvalReport {
        m: model.m(),
        n: model.n(),
        t: model.t(),
        k: model.k,
        true_rel_error,
        est_rel_error: model.trailer.est_rel_error,
        epoch_decisions: model.trailer.epoch_decisions.clone(),
        lambda_star: model.trailer.lambda_star,
    })
}
