//! Piecewise-constant probability densities on a uniform grid.
//!
//! A density is stored by its value on each cell; the mass of cell `i` is
//! `values[i] * dx`. The total variation is the sum of interface jumps with no
//! boundary contribution, so it is exact for piecewise-constant densities whose
//! jumps sit on cell interfaces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest mass defect accepted by the checked constructors.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Uniform grid of `n_cells` cells on `[left, right]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub left: f64,
    pub right: f64,
    pub n_cells: usize,
}

impl GridSpec {
    pub fn new(left: f64, right: f64, n_cells: usize) -> Result<Self> {
        if !left.is_finite() || !right.is_finite() {
            return Err(Error::InvalidGrid("endpoints must be finite".into()));
        }
        if right <= left {
            return Err(Error::InvalidGrid(format!(
                "right endpoint {right} must exceed left endpoint {left}"
            )));
        }
        if n_cells < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 cells, got {n_cells}"
            )));
        }
        Ok(Self {
            left,
            right,
            n_cells,
        })
    }

    pub fn len(&self) -> usize {
        self.n_cells
    }

    pub fn is_empty(&self) -> bool {
        self.n_cells == 0
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn dx(&self) -> f64 {
        (self.right - self.left) / self.n_cells as f64
    }

    /// Cell center `a + (i + 1/2) dx`.
    pub fn center(&self, i: usize) -> f64 {
        self.left + (i as f64 + 0.5) * self.dx()
    }

    /// Cell edge `a + i dx`, `i` in `0..=N`. The last edge is pinned to `b`.
    pub fn edge(&self, i: usize) -> f64 {
        if i == self.n_cells {
            self.right
        } else {
            self.left + i as f64 * self.dx()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|i| self.edge(i)).collect()
    }

    pub(crate) fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// A probability density, constant on each grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: GridSpec,
    values: Vec<f64>,
    renormalization: f64,
}

impl GridDensity {
    /// Checked constructor: values must be finite and nonnegative and the
    /// mass must be within [`MASS_TOLERANCE`] of one. The residual defect is
    /// removed by rescaling; the factor is available from
    /// [`GridDensity::renormalization`].
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        let mass = validate(&grid, &values)?;
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::MassMismatch {
                mass,
                tolerance: MASS_TOLERANCE,
            });
        }
        Ok(Self::rescaled(grid, values, mass))
    }

    /// Normalizes an arbitrary nonnegative profile with positive mass.
    pub fn normalized(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        let mass = validate(&grid, &values)?;
        if mass <= 0.0 {
            return Err(Error::MassMismatch {
                mass,
                tolerance: MASS_TOLERANCE,
            });
        }
        Ok(Self::rescaled(grid, values, mass))
    }

    /// Samples `f` at cell centers and normalizes.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.centers().into_iter().map(f).collect();
        Self::normalized(grid, values)
    }

    pub fn uniform(grid: GridSpec) -> Self {
        let v = 1.0 / grid.width();
        Self::normalized(grid, vec![v; grid.n_cells]).expect("uniform density is valid")
    }

    fn rescaled(grid: GridSpec, mut values: Vec<f64>, mass: f64) -> Self {
        let factor = 1.0 / mass;
        if factor != 1.0 {
            for v in &mut values {
                *v *= factor;
            }
        }
        Self {
            grid,
            values,
            renormalization: factor,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Factor applied to the input values at construction.
    pub fn renormalization(&self) -> f64 {
        self.renormalization
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn masses(&self) -> Vec<f64> {
        let dx = self.grid.dx();
        self.values.iter().map(|v| v * dx).collect()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete total variation `sum_i |rho_{i+1} - rho_i|`.
    pub fn total_variation(&self) -> f64 {
        total_variation(&self.values)
    }

    /// `sum_i rho_i log rho_i dx`, with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        let dx = self.grid.dx();
        self.values
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v * v.ln())
            .sum::<f64>()
            * dx
    }

    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.dx())
    }

    pub fn cdf(&self) -> CdfFunction {
        CdfFunction::new(&self.grid, &self.values)
    }

    /// Generalized inverse of the CDF, see [`CdfFunction::quantile`].
    pub fn quantile(&self, s: f64) -> Result<f64> {
        self.cdf().quantile(s)
    }

    /// Smallest cell index and largest cell index with positive value.
    pub fn support(&self) -> Option<(usize, usize)> {
        let first = self.values.iter().position(|&v| v > 0.0)?;
        let last = self.values.iter().rposition(|&v| v > 0.0)?;
        Some((first, last))
    }
}

fn validate(grid: &GridSpec, values: &[f64]) -> Result<f64> {
    if values.len() != grid.n_cells {
        return Err(Error::LengthMismatch {
            expected: grid.n_cells,
            got: values.len(),
        });
    }
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidDensity { index, value });
        }
    }
    Ok(values.iter().sum::<f64>() * grid.dx())
}

/// Sum of absolute differences of consecutive entries.
pub fn total_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Interface-weighted total variation `sum_i w_i |v_{i+1} - v_i|`.
pub fn weighted_total_variation(values: &[f64], weights: &[f64]) -> f64 {
    values
        .windows(2)
        .zip(weights)
        .map(|(v, w)| w * (v[1] - v[0]).abs())
        .sum()
}

/// Exact CDF of a piecewise-constant density: piecewise linear between the
/// cell edges, with `F(a) = 0` and `F(b) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfFunction {
    edges: Vec<f64>,
    knots: Vec<f64>,
}

impl CdfFunction {
    pub(crate) fn new(grid: &GridSpec, values: &[f64]) -> Self {
        let edges = grid.edges();
        let mut knots = Vec::with_capacity(values.len() + 1);
        let mut acc = 0.0;
        knots.push(0.0);
        for v in values {
            acc += v;
            knots.push(acc);
        }
        // Dividing by the total pins F(b) = 1 while keeping flat segments flat.
        if acc > 0.0 {
            for k in &mut knots {
                *k /= acc;
            }
        }
        Self { edges, knots }
    }

    /// `F` at the cell edges, `F[0] = 0`, `F[N] = 1`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_cells(&self) -> usize {
        self.knots.len() - 1
    }

    /// Mass of cell `i` as seen by the CDF (`F[i+1] - F[i]`).
    pub fn cell_mass(&self, i: usize) -> f64 {
        self.knots[i + 1] - self.knots[i]
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.n_cells();
        if x <= self.edges[0] {
            return 0.0;
        }
        if x >= self.edges[n] {
            return 1.0;
        }
        let dx = (self.edges[n] - self.edges[0]) / n as f64;
        let i = (((x - self.edges[0]) / dx) as usize).min(n - 1);
        let t = ((x - self.edges[i]) / dx).clamp(0.0, 1.0);
        self.knots[i] + t * self.cell_mass(i)
    }

    /// Generalized inverse `inf { x : F(x) >= s }`. On a flat segment of `F`
    /// this is the left endpoint of the flat; `s = 0` maps to the left end of
    /// the support.
    pub fn quantile(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfRange(format!("quantile level {s} not in [0, 1]")));
        }
        Ok(self.quantile_unchecked(s))
    }

    pub(crate) fn quantile_unchecked(&self, s: f64) -> f64 {
        let n = self.n_cells();
        // smallest j with F[j+1] >= s
        let mut j = self.knots[1..].partition_point(|&f| f < s).min(n - 1);
        while j + 1 < n && self.cell_mass(j) <= 0.0 {
            j += 1;
        }
        self.quantile_in_cell(j, s)
    }

    /// Upper generalized inverse `sup { x : F(x) <= s }`; the right endpoint
    /// of a flat segment at level `s`.
    pub(crate) fn quantile_upper(&self, s: f64) -> f64 {
        let n = self.n_cells();
        let j = self.knots.partition_point(|&f| f <= s);
        if j == 0 {
            return self.edges[0];
        }
        let j = j - 1;
        if j >= n {
            return self.edges[n];
        }
        self.quantile_in_cell(j, s)
    }

    /// Quantile restricted to cell `j` (linear in `s` there).
    pub(crate) fn quantile_in_cell(&self, j: usize, s: f64) -> f64 {
        let m = self.cell_mass(j);
        let (e0, e1) = (self.edges[j], self.edges[j + 1]);
        if m <= 0.0 {
            return e0;
        }
        let t = ((s - self.knots[j]) / m).clamp(0.0, 1.0);
        e0 + t * (e1 - e0)
    }
}
