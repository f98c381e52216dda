//! Closed-form one-step solutions used as ground truth: the expanding
//! uniform density and the hat density that develops a plateau.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridDensity, GridSpec};

/// Unique root `alpha > alpha_k` of `alpha^2 (alpha - alpha_k) = 3 tau`.
pub fn uniform_alpha_next(alpha_k: f64, tau: f64) -> f64 {
    let p = |a: f64| a * a * (a - alpha_k) - 3.0 * tau;
    // p is increasing and convex on (alpha_k, inf): Newton started to the
    // right of the root decreases monotonically onto it.
    let mut a = alpha_k + (3.0 * tau).cbrt() + 3.0 * tau / (alpha_k * alpha_k);
    while p(a) < 0.0 {
        a *= 2.0;
    }
    for _ in 0..200 {
        let step = p(a) / (a * (3.0 * a - 2.0 * alpha_k));
        if !(step > 1e-16 * a) {
            break;
        }
        a -= step;
    }
    a.max(alpha_k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformEvolution {
    pub alpha0: f64,
    pub tau: f64,
    /// `alpha_0, ..., alpha_K`.
    pub alphas: Vec<f64>,
}

impl UniformEvolution {
    pub fn new(alpha0: f64, tau: f64, steps: usize) -> Result<Self> {
        if !(alpha0 > 0.0 && tau > 0.0) {
            return Err(Error::OutOfRange("alpha0 and tau must be positive".into()));
        }
        let mut alphas = vec![alpha0];
        for k in 0..steps {
            alphas.push(uniform_alpha_next(alphas[k], tau));
        }
        Ok(Self { alpha0, tau, alphas })
    }

    /// Half-width of the continuous-time solution, `(alpha0^3 + 9 t)^(1/3)`.
    pub fn closed_form(&self, t: f64) -> f64 {
        (self.alpha0.powi(3) + 9.0 * t).cbrt()
    }
}

/// `tau` as a function of the plateau half-width `beta` for the hat density.
///
/// Evaluated in the factored form `beta^4 (5 - 2 beta) / (30 (2 - beta)^2)`,
/// which is free of cancellation near `beta = 0` and visibly increasing on
/// `(0, 1)`.
pub fn hat_tau_of_beta(beta: f64) -> f64 {
    beta.powi(4) * (5.0 - 2.0 * beta) / (30.0 * (2.0 - beta).powi(2))
}

/// Root of `hat_tau_of_beta(beta) = tau` in `(0, 1)` by bisection.
pub fn hat_beta_of_tau(tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 0.1) {
        return Err(Error::OutOfRange(format!("hat example needs 0 < tau < 1/10, got {tau}")));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if hat_tau_of_beta(mid) < tau {
            lo = mid;
        } else {
            hi = mid;
        }
        if mid == lo && mid == hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HatSolution {
    pub tau: f64,
    pub beta: f64,
    pub plateau_height: f64,
}

impl HatSolution {
    pub fn from_tau(tau: f64) -> Result<Self> {
        let beta = hat_beta_of_tau(tau)?;
        Ok(Self::from_beta(beta, tau))
    }

    fn from_beta(beta: f64, tau: f64) -> Self {
        Self {
            tau,
            beta,
            plateau_height: 1.0 - beta / 2.0,
        }
    }
}

/// Which closed-form pair to sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticKind {
    /// `rho0 = 1/(2 alpha0)` on `[-alpha0, alpha0]`, one step of size `tau`.
    Uniform { alpha0: f64, tau: f64 },
    /// `rho0 = (1 - |x|)_+`, step size `tau(beta)`.
    HatStep { beta: f64 },
}

/// A closed-form step `rho0 -> rho1` with its potential and dual field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticPair {
    pub kind: AnalyticKind,
    pub tau: f64,
    /// Half-width of the support of `rho1` (uniform) or of the plateau (hat).
    pub alpha1: f64,
}

impl AnalyticPair {
    pub fn new(kind: AnalyticKind) -> Result<Self> {
        match kind {
            AnalyticKind::Uniform { alpha0, tau } => {
                if !(alpha0 > 0.0 && tau > 0.0) {
                    return Err(Error::OutOfRange("alpha0 and tau must be positive".into()));
                }
                Ok(Self {
                    kind,
                    tau,
                    alpha1: uniform_alpha_next(alpha0, tau),
                })
            }
            AnalyticKind::HatStep { beta } => {
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(Error::OutOfRange(format!("beta must lie in (0, 1), got {beta}")));
                }
                Ok(Self {
                    kind,
                    tau: hat_tau_of_beta(beta),
                    alpha1: beta,
                })
            }
        }
    }

    pub fn rho0(&self, x: f64) -> f64 {
        match self.kind {
            AnalyticKind::Uniform { alpha0, .. } => block(x, alpha0),
            AnalyticKind::HatStep { .. } => (1.0 - x.abs()).max(0.0),
        }
    }

    pub fn rho1(&self, x: f64) -> f64 {
        match self.kind {
            AnalyticKind::Uniform { .. } => block(x, self.alpha1),
            AnalyticKind::HatStep { beta } => {
                if x.abs() < beta {
                    1.0 - beta / 2.0
                } else {
                    (1.0 - x.abs()).max(0.0)
                }
            }
        }
    }

    /// Points where `rho1` (and `rho0`) stop being linear.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            AnalyticKind::Uniform { alpha0, .. } => vec![-self.alpha1, -alpha0, alpha0, self.alpha1],
            AnalyticKind::HatStep { beta } => vec![-1.0, -beta, 0.0, beta, 1.0],
        }
    }

    /// Largest `|x|` in the support of either density.
    pub fn support_radius(&self) -> f64 {
        match self.kind {
            AnalyticKind::Uniform { .. } => self.alpha1,
            AnalyticKind::HatStep { .. } => 1.0,
        }
    }

    /// Backward optimal map from `rho1` to `rho0`.
    pub fn map(&self, x: f64) -> f64 {
        match self.kind {
            AnalyticKind::Uniform { alpha0, .. } => alpha0 / self.alpha1 * x,
            AnalyticKind::HatStep { beta } => {
                let a = x.abs();
                let t = if a < beta { 1.0 - (1.0 - a * (2.0 - beta)).sqrt() } else { a };
                t.copysign(x)
            }
        }
    }

    /// Kantorovich potential of the closed form (not mean-normalized).
    pub fn phi(&self, x: f64) -> f64 {
        match self.kind {
            AnalyticKind::Uniform { alpha0, tau } => {
                let a1 = self.alpha1;
                (a1 - alpha0) * x * x / (2.0 * a1) - 3.0 * tau / (2.0 * a1)
            }
            AnalyticKind::HatStep { beta } => {
                let a = x.abs();
                if a >= beta {
                    return 0.0;
                }
                let c = -beta * beta / 2.0 + beta + 2.0 * (1.0 - beta).powi(3) / (3.0 * (2.0 - beta));
                a * a / 2.0 - a - (1.0 - a * (2.0 - beta)).powf(1.5) / (3.0 * (1.0 - beta / 2.0)) + c
            }
        }
    }

    /// Dual field `z`, odd, extended by `+-1` outside the support (uniform)
    /// or the plateau (hat).
    pub fn z(&self, x: f64) -> f64 {
        let a = x.abs();
        if a >= self.alpha1 {
            return 1.0f64.copysign(x);
        }
        let v = match self.kind {
            AnalyticKind::Uniform { alpha0, tau } => {
                let a1 = self.alpha1;
                (-(a1 - alpha0) / (6.0 * a1) * a.powi(3) + 3.0 * tau * a / (2.0 * a1)) / tau
            }
            AnalyticKind::HatStep { beta } => {
                let k = 4.0 / (15.0 * (2.0 - beta).powi(2));
                let c = beta * beta / 2.0 - beta - 2.0 * (1.0 - beta).powi(3) / (3.0 * (2.0 - beta));
                (-a.powi(3) / 6.0 + a * a / 2.0 - k * (1.0 - (2.0 - beta) * a).powf(2.5) + c * a + k)
                    / self.tau
            }
        };
        if x < 0.0 {
            -v
        } else {
            v
        }
    }

    /// Exact cell averages of `rho0` and `rho1` on `grid`.
    pub fn densities(&self, grid: GridSpec) -> Result<(GridDensity, GridDensity)> {
        let r = self.support_radius();
        if grid.left >= -r || grid.right <= r {
            return Err(Error::InvalidGrid(format!(
                "grid [{}, {}] does not strictly contain the support [-{r}, {r}]",
                grid.left, grid.right
            )));
        }
        let bp = self.breakpoints();
        let avg = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            (0..grid.n_cells)
                .map(|i| cell_integral(f, grid.edge(i), grid.edge(i + 1), &bp) / grid.dx())
                .collect()
        };
        let r0 = GridDensity::new(grid, avg(&|x| self.rho0(x)))?;
        let r1 = GridDensity::new(grid, avg(&|x| self.rho1(x)))?;
        Ok((r0, r1))
    }

    /// Samples on `grid`: exact cell averages of `rho1`, `z` at interfaces
    /// and `phi` at centres.
    pub fn profiles(&self, grid: GridSpec) -> Result<AnalyticProfiles> {
        let (_, rho1) = self.densities(grid)?;
        Ok(AnalyticProfiles {
            rho1,
            z_interfaces: grid.edges().iter().map(|&x| self.z(x)).collect(),
            phi_centers: grid.centers().iter().map(|&x| self.phi(x)).collect(),
        })
    }

    /// Exact `L1` distance between a piecewise-constant density and `rho1`.
    pub fn l1_error(&self, rho: &GridDensity) -> f64 {
        let g = rho.grid();
        let mut bp = self.breakpoints();
        bp.push(0.0);
        let mut total = 0.0;
        for (i, &c) in rho.values().iter().enumerate() {
            total += abs_integral(|x| self.rho1(x) - c, g.edge(i), g.edge(i + 1), &bp);
        }
        total
    }
}

#[derive(Debug, Clone)]
pub struct AnalyticProfiles {
    pub rho1: GridDensity,
    pub z_interfaces: Vec<f64>,
    pub phi_centers: Vec<f64>,
}

/// `analytic_profiles(kind, grid)`.
pub fn analytic_profiles(kind: AnalyticKind, grid: GridSpec) -> Result<AnalyticProfiles> {
    AnalyticPair::new(kind)?.profiles(grid)
}

fn block(x: f64, alpha: f64) -> f64 {
    if x.abs() <= alpha {
        0.5 / alpha
    } else {
        0.0
    }
}

fn split(a: f64, b: f64, bp: &[f64]) -> Vec<f64> {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = bp.iter().cloned().filter(|&p| p > a && p < b).collect();
    inner.sort_by(f64::total_cmp);
    pts.extend(inner);
    pts.push(b);
    pts
}

/// Integral of a function that is linear between breakpoints (midpoint rule
/// per piece is exact).
fn cell_integral(f: &dyn Fn(f64) -> f64, a: f64, b: f64, bp: &[f64]) -> f64 {
    split(a, b, bp)
        .windows(2)
        .map(|w| (w[1] - w[0]) * f(0.5 * (w[0] + w[1])))
        .sum()
}

/// Integral of `|f|` for `f` linear between breakpoints; each piece is split
/// at its zero crossing.
fn abs_integral(f: impl Fn(f64) -> f64, a: f64, b: f64, bp: &[f64]) -> f64 {
    let mut total = 0.0;
    for w in split(a, b, bp).windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let l = x1 - x0;
        if l <= 0.0 {
            continue;
        }
        // one-sided limits keep jumps at the breakpoints out of the piece
        let eps = 1e-12 * l;
        let (f0, f1) = (f(x0 + eps), f(x1 - eps));
        if f0 * f1 >= 0.0 {
            total += 0.5 * l * (f0.abs() + f1.abs());
        } else {
            let t = f0 / (f0 - f1);
            total += 0.5 * l * (t * f0.abs() + (1.0 - t) * f1.abs());
        }
    }
    total
}
