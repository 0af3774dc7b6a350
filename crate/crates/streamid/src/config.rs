//! Run configuration shared by the compression pipeline, the file formats
//! (which persist it for provenance) and the CLI.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default cap on `m * n` for operations that materialize a dense copy.
pub const DEFAULT_ORACLE_BUDGET: usize = 10_000_000;

pub fn check_budget(elements: usize, budget: usize) -> Result<()> {
    if elements > budget {
        Err(Error::BudgetExceeded { elements, budget })
    } else {
        Ok(())
    }
}

/// How Gaussian projection entries are scaled.
///
/// `Scaled` divides entries by sqrt(l) so sketched column norms are unbiased
/// estimates of the true norms; `Unscaled` keeps unit-variance entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    Scaled,
    Unscaled,
}

/// Where estimated gradients participate in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    None,
    Css,
    Coeff,
    Both,
}

impl GradientMode {
    pub fn to_tag(self) -> u8 {
        match self {
            GradientMode::None => 0,
            GradientMode::Css => 1,
            GradientMode::Coeff => 2,
            GradientMode::Both => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(GradientMode::None),
            1 => Ok(GradientMode::Css),
            2 => Ok(GradientMode::Coeff),
            3 => Ok(GradientMode::Both),
            other => Err(Error::Format(format!("unknown gradient mode tag {other}"))),
        }
    }

    /// Gradient-augmented ridge scores during column selection.
    pub fn augments_css(self) -> bool {
        matches!(self, GradientMode::Css | GradientMode::Both)
    }

    /// Gradient-regularized final coefficient solve.
    pub fn augments_coefficients(self) -> bool {
        matches!(self, GradientMode::Coeff | GradientMode::Both)
    }
}

/// Row-count fractions for the three-way estimator split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            c1: 1.0 / 6.0,
            c2: 1.0 / 3.0,
            c3: 1.0 / 2.0,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let sum = self.c1 + self.c2 + self.c3;
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c3 > 0.0) {
            return Err(Error::Config("split fractions must be positive".into()));
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        if self.c2 <= self.c1 {
            return Err(Error::Config("split requires c2 > c1".into()));
        }
        Ok(())
    }
}

/// Golden-section search settings for the gradient regularization weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcvConfig {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GcvConfig {
    fn default() -> Self {
        GcvConfig {
            lambda_lo: 1e-3,
            lambda_hi: 1e3,
            tol: 1e-4,
            max_iter: 64,
        }
    }
}

impl GcvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_lo > 0.0 && self.lambda_hi > self.lambda_lo) {
            return Err(Error::Config(
                "gcv interval must be positive with lo < hi".into(),
            ));
        }
        if self.tol <= 0.0 {
            return Err(Error::Config("gcv tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Regular lattice the snapshots live on, for gradient estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Nodes per axis; one to three axes.
    pub dims: Vec<usize>,
    /// Uniform spacing per axis, same length as `dims`.
    pub spacing: Vec<f64>,
}

impl GridSpec {
    pub fn with_unit_spacing(dims: Vec<usize>) -> Self {
        let spacing = vec![1.0; dims.len()];
        GridSpec { dims, spacing }
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() > 3 {
            return Err(Error::Config("grid must have 1 to 3 axes".into()));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::Config(
                "every grid axis needs at least 2 nodes".into(),
            ));
        }
        if self.spacing.len() != self.dims.len() || self.spacing.iter().any(|&h| h <= 0.0) {
            return Err(Error::Config(
                "grid spacing must be positive per axis".into(),
            ));
        }
        Ok(())
    }
}

/// Which coefficient update family a run uses each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoeffStrategy {
    /// Run all four updates and keep the estimator's argmin.
    #[default]
    SelectBest,
    /// Pin one update family for the whole run.
    Fixed(crate::coefficients::CoeffAlgo),
}

/// Full parameter set of one compression run. Persisted verbatim in the
/// model trailer so a run can be reproduced from its output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Target rank.
    pub k: usize,
    /// Basis size (number of retained columns).
    pub t: usize,
    /// Oversampling; sketch rows are `l = k + p`.
    pub p: usize,
    pub seed: u64,
    /// CSS accuracy parameter.
    pub epsilon: f64,
    /// CSS failure probability.
    pub delta: f64,
    /// Sampling constant multiplying the admission budget.
    pub c: f64,
    pub scaling: Scaling,
    pub gradient: GradientMode,
    pub grid: Option<GridSpec>,
    pub gradient_weight: f64,
    pub gcv: GcvConfig,
    pub split: SplitFractions,
    pub oracle_budget: usize,
    pub strategy: CoeffStrategy,
}

impl RunConfig {
    pub fn new(k: usize, t: usize, seed: u64) -> Self {
        RunConfig {
            k,
            t,
            p: 10,
            seed,
            epsilon: 0.5,
            delta: 0.05,
            c: 1.0,
            scaling: Scaling::default(),
            gradient: GradientMode::default(),
            grid: None,
            gradient_weight: 1.0,
            gcv: GcvConfig::default(),
            split: SplitFractions::default(),
            oracle_budget: DEFAULT_ORACLE_BUDGET,
            strategy: CoeffStrategy::SelectBest,
        }
    }

    pub fn sketch_rows(&self) -> usize {
        self.k + self.p
    }

    /// Validates everything that can be checked before touching data.
    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.t < self.k {
            return Err(Error::Config(format!(
                "t = {} must be >= k = {}",
                self.t, self.k
            )));
        }
        if self.k > n {
            return Err(Error::Config(format!(
                "k = {} exceeds column count n = {}",
                self.k, n
            )));
        }
        if self.t > n {
            return Err(Error::Config(format!(
                "t = {} exceeds column count n = {}",
                self.t, n
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("delta must lie in (0, 1)".into()));
        }
        if !(self.c > 0.0) {
            return Err(Error::Config("sampling constant c must be positive".into()));
        }
        if self.sketch_rows() < 3 {
            return Err(Error::Config(
                "k + p must be at least 3 for the error estimator".into(),
            ));
        }
        self.split.validate()?;
        self.gcv.validate()?;
        if let Some(grid) = &self.grid {
            grid.validate()?;
            if grid.node_count() != m {
                return Err(Error::Config(format!(
                    "grid has {} nodes but snapshots have {} rows",
                    grid.node_count(),
                    m
                )));
            }
        } else if self.gradient != GradientMode::None {
            return Err(Error::Config("gradient modes require a grid".into()));
        }
        Ok(())
    }
}
