//! Binary matrix-stream and compressed-model formats, column streaming, and
//! synthetic dataset generators.
//!
//! Matrix stream format v1 (`DMS1`):
//!
//! ```text
//! magic  "DMS1"           4 bytes
//! version u32 = 1         little-endian
//! m       u64             rows per column
//! n       u64             number of columns
//! dtype   u8  = 0         f64 little-endian
//! pad     7 bytes         zero
//! payload n columns of m f64 values, column-major
//! ```
//!
//! Model format v1 (`IDZ1`):
//!
//! ```text
//! magic  "IDZ1", version u32 = 1
//! m, n, t, k, l, seed     u64 each
//! gradient_mode u8, pad 7 bytes
//! indices  t * u64        u64::MAX marks a vacant slot
//! basis    m*t f64        column-major
//! coeffs   t*n f64        column-major
//! trailer  u64 byte length + UTF-8 JSON
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{GradientMode, RunConfig};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

const MATRIX_MAGIC: &[u8; 4] = b"DMS1";
const MODEL_MAGIC: &[u8; 4] = b"IDZ1";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

/// Sentinel index marking an unfilled basis slot on disk.
pub const VACANT_SENTINEL: u64 = u64::MAX;

/// Header of a matrix stream file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixHeader {
    pub m: usize,
    pub n: usize,
    pub dtype: u8,
    pub column_major: bool,
}

/// Sequential source of length-m columns; the only access path to the full
/// data in streaming mode.
pub trait ColumnSource {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// Next column in storage order, or `None` once exhausted.
    fn next_column(&mut self) -> Result<Option<DVector<f64>>>;
}

/// File-backed column stream over the `DMS1` format.
pub struct ColumnStream {
    header: MatrixHeader,
    cursor: usize,
    reader: BufReader<File>,
    path: PathBuf,
}

impl ColumnStream {
    pub fn header(&self) -> &MatrixHeader {
        &self.header
    }

    /// Index of the next column to be yielded.
    pub fn cursor(&self) -> usize {
        self.cursor
    }
}

impl ColumnSource for ColumnStream {
    fn rows(&self) -> usize {
        self.header.m
    }

    fn cols(&self) -> usize {
        self.header.n
    }

    fn next_column(&mut self) -> Result<Option<DVector<f64>>> {
        if self.cursor >= self.header.n {
            return Ok(None);
        }
        let mut buf = vec![0u8; self.header.m * 8];
        self.reader.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format(format!(
                    "truncated payload in {:?} at column {}",
                    self.path, self.cursor
                ))
            } else {
                Error::io(&self.path, e)
            }
        })?;
        let col = DVector::from_iterator(
            self.header.m,
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
        );
        self.cursor += 1;
        Ok(Some(col))
    }
}

/// Opens a `DMS1` file for column-by-column streaming.
pub fn open_column_stream(path: impl AsRef<Path>) -> Result<ColumnStream> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut reader, &mut magic, &path)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Format(format!("bad magic in {path:?}")));
    }
    let version = read_u32(&mut reader, &path)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported matrix format version {version}"
        )));
    }
    let m = read_u64(&mut reader, &path)? as usize;
    let n = read_u64(&mut reader, &path)? as usize;
    let dtype = read_u8(&mut reader, &path)?;
    let mut pad = [0u8; 7];
    read_exact(&mut reader, &mut pad, &path)?;
    if dtype != DTYPE_F64 {
        return Err(Error::Format(format!("unsupported dtype tag {dtype}")));
    }
    if m == 0 || n == 0 {
        return Err(Error::Format(format!(
            "truncated/invalid dimensions m={m} n={n}"
        )));
    }
    Ok(ColumnStream {
        header: MatrixHeader {
            m,
            n,
            dtype,
            column_major: true,
        },
        cursor: 0,
        reader,
        path,
    })
}

/// Writes a `DMS1` file from a slice of equal-length columns.
pub fn write_matrix(path: impl AsRef<Path>, columns: &[DVector<f64>]) -> Result<()> {
    let path = path.as_ref();
    let m = match columns.first() {
        Some(c) if !c.is_empty() => c.len(),
        _ => {
            return Err(Error::Dimension(
                "need at least one non-empty column".into(),
            ))
        }
    };
    if let Some(bad) = columns.iter().find(|c| c.len() != m) {
        return Err(Error::Dimension(format!(
            "inconsistent column lengths: {} vs {}",
            bad.len(),
            m
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MATRIX_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(m as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(columns.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&[DTYPE_F64]).map_err(io)?;
    w.write_all(&[0u8; 7]).map_err(io)?;
    for col in columns {
        for v in col.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Writes a dense matrix as a `DMS1` file, one column per snapshot.
pub fn write_matrix_dense(path: impl AsRef<Path>, a: &DMatrix<f64>) -> Result<()> {
    let columns: Vec<DVector<f64>> = (0..a.ncols()).map(|j| a.column(j).into_owned()).collect();
    write_matrix(path, &columns)
}

/// Reads an entire `DMS1` file into a dense matrix.
pub fn read_matrix_dense(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let mut stream = open_column_stream(path)?;
    let (m, n) = (stream.rows(), stream.cols());
    let mut a = DMatrix::zeros(m, n);
    let mut j = 0;
    while let Some(col) = stream.next_column()? {
        a.set_column(j, &col);
        j += 1;
    }
    if j != n {
        return Err(Error::Format(format!("expected {n} columns, read {j}")));
    }
    Ok(a)
}

/// In-memory column source over a dense matrix.
pub struct MemoryColumns {
    data: DMatrix<f64>,
    cursor: usize,
}

impl MemoryColumns {
    pub fn new(data: DMatrix<f64>) -> Self {
        MemoryColumns { data, cursor: 0 }
    }
}

impl ColumnSource for MemoryColumns {
    fn rows(&self) -> usize {
        self.data.nrows()
    }

    fn cols(&self) -> usize {
        self.data.ncols()
    }

    fn next_column(&mut self) -> Result<Option<DVector<f64>>> {
        if self.cursor >= self.data.ncols() {
            return Ok(None);
        }
        let col = self.data.column(self.cursor).into_owned();
        self.cursor += 1;
        Ok(Some(col))
    }
}

/// Pass guard: counts yielded columns and rejects any read attempt after the
/// stream has reported end-of-data, so a second traversal cannot go unnoticed.
pub struct CountingStream<S: ColumnSource> {
    inner: S,
    yielded: u64,
    finished: bool,
}

impl<S: ColumnSource> CountingStream<S> {
    pub fn new(inner: S) -> Self {
        CountingStream {
            inner,
            yielded: 0,
            finished: false,
        }
    }

    /// Columns yielded so far; equals `n` after exactly one full traversal.
    pub fn columns_read(&self) -> u64 {
        self.yielded
    }

    pub fn finished(&self) -> bool {
        self.finished
    }
}

impl<S: ColumnSource> ColumnSource for CountingStream<S> {
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    fn cols(&self) -> usize {
        self.inner.cols()
    }

    fn next_column(&mut self) -> Result<Option<DVector<f64>>> {
        if self.finished {
            return Err(Error::SecondPass);
        }
        let col = self.inner.next_column()?;
        match col {
            Some(c) => {
                self.yielded += 1;
                Ok(Some(c))
            }
            None => {
                self.finished = true;
                Ok(None)
            }
        }
    }
}

/// Per-epoch record of which coefficient update won the estimator vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDecision {
    /// Column count observed when the epoch ran.
    pub n_obs: usize,
    /// Chosen update strategy.
    pub chosen: String,
    /// Estimated relative error of the chosen coefficients.
    pub est_rel_error: f64,
    /// True when any solve in this epoch fell back to a pseudoinverse.
    pub degraded: bool,
}

/// JSON trailer persisted at the end of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTrailer {
    /// Full configuration of the producing run.
    pub config: RunConfig,
    pub epoch_decisions: Vec<EpochDecision>,
    /// Final estimated relative Frobenius error.
    pub est_rel_error: f64,
    pub est_abs_error: f64,
    /// True when the squared error estimate was clamped at zero.
    pub clamped: bool,
    /// Chosen gradient regularization weight, when gradient coefficients ran.
    pub lambda_star: Option<f64>,
    /// Evaluated (lambda, gcv) pairs from the golden-section search.
    pub gcv_trace: Vec<(f64, f64)>,
    /// Columns pulled from the input stream; equals `n` for a single pass.
    pub columns_read: u64,
}

/// Final compression artifact: selected column indices, the basis columns
/// themselves, the coefficient matrix and run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct IDModel {
    /// Original stream index per basis slot; `None` marks a vacant slot.
    pub indices: Vec<Option<usize>>,
    /// m x t basis; vacant slots hold zero columns.
    pub basis: DMatrix<f64>,
    /// t x n coefficients; rows of vacant slots are zero.
    pub coefficients: DMatrix<f64>,
    pub k: usize,
    pub sketch_rows: usize,
    pub seed: u64,
    pub gradient_mode: GradientMode,
    pub trailer: ModelTrailer,
}

impl IDModel {
    pub fn m(&self) -> usize {
        self.basis.nrows()
    }

    pub fn n(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn t(&self) -> usize {
        self.basis.ncols()
    }

    /// Number of occupied basis slots.
    pub fn occupied(&self) -> usize {
        self.indices.iter().filter(|i| i.is_some()).count()
    }
}

/// Writes a model file in the `IDZ1` format.
pub fn write_id_model(path: impl AsRef<Path>, model: &IDModel) -> Result<()> {
    let path = path.as_ref();
    let (m, n, t) = (model.m(), model.n(), model.t());
    if model.indices.len() != t {
        return Err(Error::Dimension(format!(
            "index list has {} entries for t = {}",
            model.indices.len(),
            t
        )));
    }
    if model.coefficients.nrows() != t {
        return Err(Error::Dimension(
            "coefficient rows must equal basis columns".into(),
        ));
    }
    if let Some(bad) = model.indices.iter().flatten().find(|&&i| i >= n) {
        return Err(Error::Dimension(format!(
            "basis index {bad} out of range for n = {n}"
        )));
    }
    let trailer = serde_json::to_vec(&model.trailer)
        .map_err(|e| Error::Format(format!("trailer serialization failed: {e}")))?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MODEL_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    for v in [
        m as u64,
        n as u64,
        t as u64,
        model.k as u64,
        model.sketch_rows as u64,
        model.seed,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.write_all(&[model.gradient_mode.to_tag()]).map_err(io)?;
    w.write_all(&[0u8; 7]).map_err(io)?;
    for idx in &model.indices {
        let raw = idx.map(|i| i as u64).unwrap_or(VACANT_SENTINEL);
        w.write_all(&raw.to_le_bytes()).map_err(io)?;
    }
    for v in model.basis.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for v in model.coefficients.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.write_all(&(trailer.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&trailer).map_err(io)?;
    w.flush().map_err(io)
}

/// Reads a model file written by [`write_id_model`].
pub fn read_id_model(path: impl AsRef<Path>) -> Result<IDModel> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, &path)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format(format!("bad magic in {path:?}")));
    }
    let version = read_u32(&mut r, &path)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format version {version}"
        )));
    }
    let m = read_u64(&mut r, &path)? as usize;
    let n = read_u64(&mut r, &path)? as usize;
    let t = read_u64(&mut r, &path)? as usize;
    let k = read_u64(&mut r, &path)? as usize;
    let sketch_rows = read_u64(&mut r, &path)? as usize;
    let seed = read_u64(&mut r, &path)?;
    let mode_tag = read_u8(&mut r, &path)?;
    let mut pad = [0u8; 7];
    read_exact(&mut r, &mut pad, &path)?;
    let gradient_mode = GradientMode::from_tag(mode_tag)?;

    let mut indices = Vec::with_capacity(t);
    for _ in 0..t {
        let raw = read_u64(&mut r, &path)?;
        if raw == VACANT_SENTINEL {
            indices.push(None);
        } else {
            let idx = raw as usize;
            if idx >= n {
                return Err(Error::Format(format!(
                    "basis index {idx} out of range n = {n}"
                )));
            }
            indices.push(Some(idx));
        }
    }
    let basis = read_f64_matrix(&mut r, m, t, &path)?;
    let coefficients = read_f64_matrix(&mut r, t, n, &path)?;
    let trailer_len = read_u64(&mut r, &path)? as usize;
    let mut trailer_buf = vec![0u8; trailer_len];
    r.read_exact(&mut trailer_buf)
        .map_err(|_| Error::Format(format!("corrupted trailer in {path:?}")))?;
    let trailer: ModelTrailer = serde_json::from_slice(&trailer_buf)
        .map_err(|e| Error::Format(format!("corrupted trailer in {path:?}: {e}")))?;

    Ok(IDModel {
        indices,
        basis,
        coefficients,
        k,
        sketch_rows,
        seed,
        gradient_mode,
        trailer,
    })
}

/// Reconstructs the requested column interval as a dense `m x |range|` block.
pub fn reconstruct(model: &IDModel, range: std::ops::Range<usize>) -> Result<DMatrix<f64>> {
    if range.start > range.end || range.end > model.n() {
        return Err(Error::Dimension(format!(
            "range {}..{} out of bounds for n = {}",
            range.start,
            range.end,
            model.n()
        )));
    }
    let cols = range.len();
    let p_block = model.coefficients.columns(range.start, cols);
    Ok(&model.basis * p_block)
}

/// Low-rank-plus-noise synthetic snapshot matrix `U V^T + sigma * N`, all
/// entries seeded. Same arguments produce a bit-identical matrix.
pub fn gen_lowrank(m: usize, n: usize, r: usize, sigma: f64, seed: u64) -> Result<DMatrix<f64>> {
    if r > m.min(n) {
        return Err(Error::Config(format!(
            "rank {r} exceeds min(m, n) = {}",
            m.min(n)
        )));
    }
    if sigma < 0.0 {
        return Err(Error::Config("noise level must be non-negative".into()));
    }
    let mut rng = rng::rng_for(seed, tag::GENERATOR);
    let u = rng::gaussian_matrix(m, r, &mut rng);
    let v = rng::gaussian_matrix(n, r, &mut rng);
    let mut a = &u * v.transpose();
    if sigma > 0.0 {
        let noise = rng::gaussian_matrix(m, n, &mut rng);
        a += noise * sigma;
    }
    Ok(a)
}

/// Bump-track centers used by [`gen_advecting_bump`], exposed so callers can
/// verify frame extrema against the seeded path.
pub fn bump_path(nx: usize, ny: usize, n_steps: usize, seed: u64) -> Vec<(f64, f64)> {
    let sigma = bump_sigma(nx, ny);
    let margin = |extent: f64| (2.5 * sigma).min(0.45 * extent);
    let (ex, ey) = ((nx - 1) as f64, (ny - 1) as f64);
    let (mx, my) = (margin(ex), margin(ey));
    let (lo_x, hi_x) = (mx, ex - mx);
    let (lo_y, hi_y) = (my, ey - my);

    let mut rng = rng::rng_for(seed, tag::GENERATOR);
    let sample = |rng: &mut rand_chacha::ChaCha8Rng| {
        (rng.gen_range(lo_x..=hi_x), rng.gen_range(lo_y..=hi_y))
    };
    let start = sample(&mut rng);
    let box_diag = ((hi_x - lo_x).powi(2) + (hi_y - lo_y).powi(2)).sqrt();
    let target = (3.2 * sigma).min(0.85 * box_diag);
    let mut end = sample(&mut rng);
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut best = end;
    for _ in 0..64 {
        if dist(start, end) >= target {
            break;
        }
        end = sample(&mut rng);
        if dist(start, end) > dist(start, best) {
            best = end;
        }
    }
    if dist(start, end) < target {
        end = best;
    }

    (0..n_steps)
        .map(|s| {
            let f = if n_steps > 1 {
                s as f64 / (n_steps - 1) as f64
            } else {
                0.0
            };
            (
                start.0 + f * (end.0 - start.0),
                start.1 + f * (end.1 - start.1),
            )
        })
        .collect()
}

fn bump_sigma(nx: usize, ny: usize) -> f64 {
    ((nx.min(ny)) as f64 / 12.0).max(0.6)
}

/// Gaussian bump translated along a seeded path over an `nx x ny` grid; each
/// frame is vectorized column-major. The path is long relative to the bump
/// width, so early and late frames are weakly correlated.
pub fn gen_advecting_bump(nx: usize, ny: usize, n_steps: usize, seed: u64) -> Result<DMatrix<f64>> {
    if nx < 4 || ny < 4 {
        return Err(Error::Config("bump grid needs nx, ny >= 4".into()));
    }
    if n_steps == 0 {
        return Err(Error::Config("need at least one frame".into()));
    }
    let sigma = bump_sigma(nx, ny);
    let centers = bump_path(nx, ny, n_steps, seed);
    let m = nx * ny;
    let mut a = DMatrix::zeros(m, n_steps);
    for (s, &(cx, cy)) in centers.iter().enumerate() {
        let mut col = a.column_mut(s);
        for j in 0..ny {
            for i in 0..nx {
                let dx = i as f64 - cx;
                let dy = j as f64 - cy;
                col[i + j * nx] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    Ok(a)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated file {path:?}"))
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u8(r: &mut impl Read, path: &Path) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, path)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64_matrix(
    r: &mut impl Read,
    rows: usize,
    cols: usize,
    path: &Path,
) -> Result<DMatrix<f64>> {
    let mut buf = vec![0u8; rows * cols * 8];
    read_exact(r, &mut buf, path)?;
    Ok(DMatrix::from_iterator(
        rows,
        cols,
        buf.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
    ))
}
