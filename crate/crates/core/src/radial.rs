//! Radially symmetric steps on a ball `B(0, R)` in dimension `d`, reduced to
//! a weighted problem in `r` on `[0, R]`:
//!
//! ```text
//! W2^2(m0, c_d r^{d-1} rho) / (2 tau) + c_d int r^{d-1} |D rho|
//! ```
//!
//! Cell weights are `c_d r_i^{d-1}` at cell centres, interface weights
//! `c_d r_{i+1/2}^{d-1}`. The origin is a domain end like `R`.

use std::io::{BufRead, Write};

use serde::Serialize;

use crate::certificate::DualCertificate;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, MASS_TOLERANCE};
use crate::jko::{JkoConfig, WeightedProblem};
use crate::transport::fmt;

/// Surface measure of the unit sphere `S^{d-1}`.
pub fn sphere_measure(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        0 => f64::NAN,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * sphere_measure(d - 2) / (d - 2) as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialDensity {
    dimension: usize,
    grid: GridSpec,
    values: Vec<f64>,
    renormalization: f64,
}

impl RadialDensity {
    /// Checked constructor: values must be finite, nonnegative, and carry
    /// mass `c_d sum r_i^{d-1} rho_i dr` within 1e-6 of one. The mass is then
    /// pinned to one and the factor recorded.
    pub fn new(dimension: usize, radius: f64, values: Vec<f64>) -> Result<Self> {
        let d = Self::unnormalized(dimension, radius, values)?;
        let mass = d.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::MassMismatch {
                mass,
                tolerance: MASS_TOLERANCE,
            });
        }
        Ok(d.rescaled())
    }

    /// Accepts any positive mass and rescales it to one.
    pub fn normalized(dimension: usize, radius: f64, values: Vec<f64>) -> Result<Self> {
        Ok(Self::unnormalized(dimension, radius, values)?.rescaled())
    }

    /// Samples `f(r)` at the cell centres and normalizes.
    pub fn from_fn(dimension: usize, radius: f64, n_cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = GridSpec::new(0.0, radius, n_cells)?;
        Self::normalized(dimension, radius, grid.centers().into_iter().map(f).collect())
    }

    fn unnormalized(dimension: usize, radius: f64, values: Vec<f64>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        let grid = GridSpec::new(0.0, radius, values.len())?;
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidDensity { index, value });
        }
        Ok(Self {
            dimension,
            grid,
            values,
            renormalization: 1.0,
        })
    }

    fn rescaled(mut self) -> Self {
        let mass = self.mass();
        if mass > 0.0 {
            for v in &mut self.values {
                *v /= mass;
            }
            self.renormalization = 1.0 / mass;
        }
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn radius(&self) -> f64 {
        self.grid.right
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn renormalization(&self) -> f64 {
        self.renormalization
    }

    pub fn cell_weights(&self) -> Vec<f64> {
        cell_weights(self.dimension, &self.grid)
    }

    /// Radial mass density `c_d r_i^{d-1} rho_i`.
    pub fn mass_density(&self) -> Vec<f64> {
        self.cell_weights().iter().zip(&self.values).map(|(w, v)| w * v).collect()
    }

    pub fn mass(&self) -> f64 {
        self.mass_density().iter().sum::<f64>() * self.grid.dx()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// `c_d sum r_{i+1/2}^{d-1} |rho_{i+1} - rho_i|`.
    pub fn weighted_total_variation(&self) -> f64 {
        let w = edge_weights(self.dimension, &self.grid);
        (1..self.values.len())
            .map(|i| w[i] * (self.values[i] - self.values[i - 1]).abs())
            .sum()
    }

    pub fn l1_distance(&self, other: &RadialDensity) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let w = self.cell_weights();
        Ok((0..self.values.len())
            .map(|i| w[i] * (self.values[i] - other.values[i]).abs())
            .sum::<f64>()
            * self.grid.dx())
    }

    /// Writes `r,rho`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "rho"])?;
        for (r, v) in self.grid.centers().iter().zip(&self.values) {
            w.write_record([fmt(*r), fmt(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `r,rho` rows at the cell centres of a uniform grid on `[0, R]`.
    pub fn read_csv<R: BufRead>(dimension: usize, input: R) -> Result<Self> {
        let (xs, values) = crate::io::read_columns(input, "r")?;
        let n = xs.len();
        if n < 2 {
            return Err(Error::InvalidInput("radial CSV needs at least two rows".into()));
        }
        let dr = (xs[n - 1] - xs[0]) / (n - 1) as f64;
        crate::io::check_uniform(&xs, dr)?;
        if (xs[0] - 0.5 * dr).abs() > 1e-9 * dr.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "first radius {} is not the centre of a cell starting at r = 0",
                xs[0]
            )));
        }
        Self::new(dimension, n as f64 * dr, values)
    }
}

pub(crate) fn cell_weights(d: usize, grid: &GridSpec) -> Vec<f64> {
    let c = sphere_measure(d);
    grid.centers().iter().map(|r| c * r.powi(d as i32 - 1)).collect()
}

pub(crate) fn edge_weights(d: usize, grid: &GridSpec) -> Vec<f64> {
    let c = sphere_measure(d);
    grid.edges().iter().map(|r| c * r.powi(d as i32 - 1)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RadialStepDiagnostics {
    pub w2_squared: f64,
    pub total_variation: f64,
    pub energy: f64,
    pub certificate: DualCertificate,
    /// Largest jump of `r^{d-1} z` across a cell, divided by `dr`.
    pub flux_lipschitz: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

/// One radial step.
pub fn radial_jko_step(rho0: &RadialDensity, config: &JkoConfig) -> Result<(RadialDensity, RadialStepDiagnostics)> {
    config.validate()?;
    let grid = rho0.grid;
    let d = rho0.dimension;
    let cw = cell_weights(d, &grid);
    let ew = edge_weights(d, &grid);
    let problem = WeightedProblem::new(grid, &cw, &ew, &rho0.values);
    let out = problem.solve(&rho0.values, config);
    let rho1 = RadialDensity::normalized(d, grid.right, out.u)?;
    let certificate = problem.certificate(&rho1.values, config);
    let (w2, tv) = problem.energy_parts(&rho1.values);
    let mut energy = w2 / (2.0 * config.tau) + tv;
    if config.entropy_h > 0.0 {
        let e: f64 = (0..rho1.values.len())
            .map(|i| {
                let v = rho1.values[i];
                if v > 0.0 {
                    cw[i] * v * v.ln()
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            * grid.dx();
        energy += config.entropy_h * e;
    }
    let dr = grid.dx();
    let flux_lipschitz = certificate
        .z_values
        .iter()
        .zip(&ew)
        .map(|(z, w)| z * w)
        .collect::<Vec<_>>()
        .windows(2)
        .map(|p| ((p[1] - p[0]) / dr).abs())
        .fold(0.0, f64::max);
    let converged = out.converged && certificate.optimality_gap() <= config.el_tolerance;
    Ok((
        rho1,
        RadialStepDiagnostics {
            w2_squared: w2,
            total_variation: tv,
            energy,
            certificate,
            flux_lipschitz,
            iterations_used: out.iterations,
            converged,
        },
    ))
}

/// Repeated radial steps; stops early with the partial trajectory if a step
/// fails to converge.
pub fn radial_flow(
    rho0: &RadialDensity,
    horizon: f64,
    config: &JkoConfig,
) -> Result<(Vec<RadialDensity>, Vec<RadialStepDiagnostics>, bool)> {
    let steps = crate::flow::step_count(horizon, config.tau)?;
    let mut densities = vec![rho0.clone()];
    let mut diags = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (next, diag) = radial_jko_step(densities.last().expect("nonempty"), config)?;
        let ok = diag.converged;
        densities.push(next);
        diags.push(diag);
        if !ok {
            return Ok((densities, diags, false));
        }
    }
    Ok((densities, diags, true))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinPrincipleReport {
    /// `None` when the precondition `min rho0 >= alpha > 0` is not met.
    pub skipped: Option<String>,
    pub alpha: f64,
    pub epsilon_grid: f64,
    pub min_value: f64,
    pub min_location: f64,
    pub margin: f64,
    pub passed: bool,
}

/// Checks `min rho1 >= alpha - eps_grid` given `min rho0 >= alpha > 0`.
pub fn radial_min_principle_check(
    rho0: &RadialDensity,
    result: &RadialDensity,
    alpha: f64,
    el_tolerance: f64,
) -> MinPrincipleReport {
    let eps = crate::properties::epsilon_grid(el_tolerance, rho0.max(), rho0.grid.dx());
    let (idx, min_value) = result
        .values
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let skipped = if !(alpha > 0.0) {
        Some(format!("precondition unmet: alpha = {alpha} is not positive"))
    } else if rho0.min() < alpha {
        Some(format!("precondition unmet: min rho0 = {} < alpha = {alpha}", rho0.min()))
    } else {
        None
    };
    let margin = min_value - (alpha - eps);
    MinPrincipleReport {
        passed: skipped.is_none() && margin >= 0.0,
        skipped,
        alpha,
        epsilon_grid: eps,
        min_value,
        min_location: result.grid.center(idx),
        margin,
    }
}
