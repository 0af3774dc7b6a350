//! Random projections, incremental sketch accumulation and the
//! frequent-directions sketch used by the baseline column selector.

use nalgebra::{DMatrix, DVector};

use crate::config::Scaling;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, tag};

/// Materialized random projection applied to every arriving column.
#[derive(Debug, Clone)]
pub struct Projection {
    matrix: DMatrix<f64>,
    scaling: Scaling,
    seed: u64,
}

impl Projection {
    /// Seeded Gaussian projection with `rows` sketch rows for length-`m`
    /// columns. In scaled mode entries are divided by sqrt(rows) so that
    /// sketched squared norms are unbiased.
    pub fn gaussian(rows: usize, m: usize, seed: u64, scaling: Scaling) -> Result<Self> {
        if rows == 0 {
            return Err(Error::Config("projection needs at least one row".into()));
        }
        let mut rng = rng::rng_for(seed, tag::PROJECTION);
        let mut matrix = rng::gaussian_matrix(rows, m, &mut rng);
        if scaling == Scaling::Scaled {
            matrix /= (rows as f64).sqrt();
        }
        Ok(Projection {
            matrix,
            scaling,
            seed,
        })
    }

    /// Identity projection: the sketch equals the data and every downstream
    /// sketched computation becomes exact. Used by oracles and tests.
    pub fn identity(m: usize) -> Self {
        Projection {
            matrix: DMatrix::identity(m, m),
            scaling: Scaling::Unscaled,
            seed: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn data_rows(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Variance of a single projection entry: 1 for unit-variance rows,
    /// 1/rows in scaled mode. Stochastic trace probes built from the rows
    /// must divide by this to stay unbiased.
    pub fn probe_scale2(&self) -> f64 {
        match self.scaling {
            Scaling::Scaled => 1.0 / self.rows() as f64,
            Scaling::Unscaled => 1.0,
        }
    }

    /// Sketches one column: `Omega * a`.
    pub fn sketch_column(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        if a.len() != self.data_rows() {
            return Err(Error::Dimension(format!(
                "column length {} does not match projection width {}",
                a.len(),
                self.data_rows()
            )));
        }
        Ok(&self.matrix * a)
    }

    /// Sketches a matrix block column-by-column.
    pub fn sketch_matrix(&self, block: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if block.nrows() != self.data_rows() {
            return Err(Error::Dimension(format!(
                "block height {} does not match projection width {}",
                block.nrows(),
                self.data_rows()
            )));
        }
        Ok(&self.matrix * block)
    }
}

/// Accumulated sketch of the observed columns: the sketch columns themselves,
/// their Gram matrix, and the running squared Frobenius norm of the data.
#[derive(Debug, Clone)]
pub struct SketchState {
    rows: usize,
    columns: Vec<DVector<f64>>,
    gram: DMatrix<f64>,
    frob2: f64,
}

impl SketchState {
    pub fn new(rows: usize) -> Self {
        SketchState {
            rows,
            columns: Vec::new(),
            gram: DMatrix::zeros(rows, rows),
            frob2: 0.0,
        }
    }

    /// Records one observed column `a` with its sketch `s = Omega * a`.
    pub fn update(&mut self, a: &DVector<f64>, s: DVector<f64>) -> Result<()> {
        if s.len() != self.rows {
            return Err(Error::Dimension(format!(
                "sketch length {} does not match state rows {}",
                s.len(),
                self.rows
            )));
        }
        self.gram.ger(1.0, &s, &s, 1.0);
        self.frob2 += a.norm_squared();
        self.columns.push(s);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n_obs(&self) -> usize {
        self.columns.len()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Running `||A_obs||_F^2` over the unsketched data.
    pub fn frob2(&self) -> f64 {
        self.frob2
    }

    pub fn column(&self, j: usize) -> &DVector<f64> {
        &self.columns[j]
    }

    /// Assembles the sketch as a dense `rows x n_obs` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.rows, self.columns.len());
        for (j, col) in self.columns.iter().enumerate() {
            s.set_column(j, col);
        }
        s
    }
}

/// Sum of the `k` largest eigenvalues of the sketch Gram matrix, i.e. the
/// squared Frobenius norm of the best rank-k approximation of the sketch.
pub fn topk_energy(state: &SketchState, k: usize) -> Result<f64> {
    topk_energy_of_gram(state.gram(), k)
}

pub fn topk_energy_of_gram(gram: &DMatrix<f64>, k: usize) -> Result<f64> {
    if k > gram.nrows() {
        return Err(Error::Config(format!(
            "k = {k} exceeds sketch rows {}",
            gram.nrows()
        )));
    }
    let (values, _) = linalg::sym_eig_desc(gram);
    Ok(values.iter().take(k).sum())
}

/// Frequent-directions sketch: a fixed-width shadow of the observed columns
/// with `B B^T` dominated by `A A^T` and a bounded spectral deficit.
#[derive(Debug, Clone)]
pub struct FDSketch {
    b: DMatrix<f64>,
    width: usize,
}

impl FDSketch {
    pub fn new(m: usize, width: usize) -> Result<Self> {
        if width < 2 {
            return Err(Error::Config(
                "frequent-directions width must be >= 2".into(),
            ));
        }
        Ok(FDSketch {
            b: DMatrix::zeros(m, width),
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Inserts a column into the spare slot, then rotates and shrinks the
    /// sketch so the last column is zero again.
    pub fn update(&mut self, a: &DVector<f64>) -> Result<()> {
        if a.len() != self.b.nrows() {
            return Err(Error::Dimension(format!(
                "column length {} does not match sketch height {}",
                a.len(),
                self.b.nrows()
            )));
        }
        self.b.set_column(self.width - 1, a);
        let (u, s, _) = linalg::thin_svd(&self.b);
        // Shrink every direction by the width-th squared singular value; the
        // thin SVD may report fewer directions than the sketch width.
        let shrink = if s.len() >= self.width {
            s[self.width - 1] * s[self.width - 1]
        } else {
            0.0
        };
        let mut next = DMatrix::zeros(self.b.nrows(), self.width);
        for i in 0..s.len().min(self.width) {
            let shrunk = (s[i] * s[i] - shrink).max(0.0).sqrt();
            if shrunk > 0.0 {
                let mut col = next.column_mut(i);
                col.copy_from(&u.column(i));
                col *= shrunk;
            }
        }
        self.b = next;
        Ok(())
    }
}
