//! Sampled covariate curves and scalar responses.

use nalgebra::{DMatrix, DVector};

use crate::bspline::validate_grid;
use crate::error::{invalid, Result};

/// One covariate curve's grid samples plus its scalar response.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    pub values: Vec<f64>,
    pub response: f64,
}

/// `n` curves sampled on a common sorted grid inside `[domain.0, domain.1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    grid: Vec<f64>,
    domain: (f64, f64),
    values: DMatrix<f64>,
}

impl Curves {
    /// `values` is `n x K`; row `i` holds curve `i` at the `K` grid points.
    pub fn new(grid: Vec<f64>, domain: (f64, f64), values: DMatrix<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        if values.ncols() != grid.len() {
            return invalid(format!(
                "curves have {} samples but grid has {} points",
                values.ncols(),
                grid.len()
            ));
        }
        let (a, b) = domain;
        if !(b > a) {
            return invalid(format!("domain [{a}, {b}] must have positive length"));
        }
        let tol = 1e-9 * (b - a);
        if grid[0] < a - tol || grid[grid.len() - 1] > b + tol {
            return invalid("grid extends beyond the domain");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("curve samples must be finite");
        }
        Ok(Self { grid, domain, values })
    }

    /// Curves whose domain is spanned by the grid itself.
    pub fn on_grid(grid: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        let domain = (grid[0], grid[grid.len() - 1]);
        Self::new(grid, domain, values)
    }

    pub fn from_rows(grid: Vec<f64>, domain: (f64, f64), rows: &[Vec<f64>]) -> Result<Self> {
        let k = grid.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != k) {
            return invalid(format!("curve {bad} has {} samples, expected {k}", rows[bad].len()));
        }
        let values = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        Self::new(grid, domain, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            domain: self.domain,
            values: self.values.select_rows(rows),
        }
    }
}

/// Curves paired with responses.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalData {
    pub curves: Curves,
    pub responses: DVector<f64>,
}

impl FunctionalData {
    pub fn new(curves: Curves, responses: DVector<f64>) -> Result<Self> {
        if curves.len() != responses.len() {
            return invalid(format!("{} curves but {} responses", curves.len(), responses.len()));
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return invalid("responses must be finite");
        }
        Ok(Self { curves, responses })
    }

    pub fn from_samples(grid: Vec<f64>, domain: (f64, f64), samples: &[FunctionalSample]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.values.clone()).collect();
        let curves = Curves::from_rows(grid, domain, &rows)?;
        let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.response));
        Self::new(curves, y)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            curves: self.curves.select(rows),
            responses: self.responses.select_rows(rows),
        }
    }

    pub fn with_responses(&self, responses: DVector<f64>) -> Result<Self> {
        Self::new(self.curves.clone(), responses)
    }
}
