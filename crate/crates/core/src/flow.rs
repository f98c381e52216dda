//! Time stepping: iterate JKO steps up to a horizon, keep the piecewise
//! constant interpolation, and record per-step diagnostics.

use std::io::Write;

use serde::Serialize;

use crate::certificate::{DualCertificate, VACUUM_FRACTION};
use crate::error::{Error, Result};
use crate::grid::GridDensity;
use crate::jko::{jko_step, JkoConfig};
use crate::transport::fmt;

/// `N_tau = floor(T / tau)`, with a little slack so that `T = k tau` in
/// floating point still counts `k` steps.
pub fn step_count(horizon: f64, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && horizon.is_finite() && horizon >= tau * (1.0 - 1e-12)) {
        return Err(Error::InvalidConfig(format!("horizon {horizon} must be at least tau = {tau}")));
    }
    Ok((horizon / tau + 1e-9).floor() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub k: usize,
    pub t: f64,
    pub w2sq_step: f64,
    pub tv: f64,
    pub energy: f64,
    pub min_rho: f64,
    pub max_rho: f64,
    pub max_abs_z: f64,
    pub el_residual: f64,
    pub complementarity: f64,
    pub jump_alignment: f64,
    /// `rho`-weighted L2 norm of `(x - T) + tau z''` on interior support cells.
    pub eulerk2_residual: f64,
    /// `sum z''^2 dx`.
    pub grad_div_z_l2: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub tau: f64,
    pub horizon: f64,
    /// `rho_0, rho_1, ..., rho_{N_tau}` (shorter if a step failed).
    pub densities: Vec<GridDensity>,
    /// Certificate of `rho_{k+1}`, one per step.
    pub certificates: Vec<DualCertificate>,
    pub steps: Vec<StepDiagnostics>,
    pub sum_w2sq: f64,
    /// `sum_k tau (||z'||^2 + ||z''||^2)`, the time integral of the squared
    /// H1 norm of `div z`.
    pub h1_div_z_integral: f64,
    /// Set when a step failed to converge; the trajectory stops there.
    pub failure: Option<String>,
}

impl FlowTrajectory {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    /// Writes `k,t,x,rho` in long form.
    pub fn write_trajectory_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "t", "x", "rho"])?;
        for (k, d) in self.densities.iter().enumerate() {
            let t = fmt(k as f64 * self.tau);
            for (x, r) in d.grid().centers().iter().zip(d.values()) {
                w.write_record([k.to_string(), t.clone(), fmt(*x), fmt(*r)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes one row per step.
    pub fn write_diagnostics_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "t",
            "w2sq_step",
            "tv",
            "energy",
            "min_rho",
            "max_rho",
            "max_abs_z",
            "el_residual",
            "complementarity",
            "eulerk2_residual",
        ])?;
        for s in &self.steps {
            w.write_record([
                s.k.to_string(),
                fmt(s.t),
                fmt(s.w2sq_step),
                fmt(s.tv),
                fmt(s.energy),
                fmt(s.min_rho),
                fmt(s.max_rho),
                fmt(s.max_abs_z),
                fmt(s.el_residual),
                fmt(s.complementarity),
                fmt(s.eulerk2_residual),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `N_tau` steps of size `tau` from `rho0`. `config.tau` is ignored.
pub fn run_flow(rho0: &GridDensity, tau: f64, horizon: f64, config: &JkoConfig) -> Result<FlowTrajectory> {
    let cfg = JkoConfig { tau, ..*config };
    cfg.validate()?;
    let steps = step_count(horizon, tau)?;
    let mut traj = FlowTrajectory {
        tau,
        horizon,
        densities: vec![rho0.clone()],
        certificates: Vec::with_capacity(steps),
        steps: Vec::with_capacity(steps),
        sum_w2sq: 0.0,
        h1_div_z_integral: 0.0,
        failure: None,
    };
    for k in 0..steps {
        let prev = traj.densities.last().expect("nonempty");
        let r = jko_step(prev, &cfg)?;
        let grid = *r.rho1.grid();
        let dx = grid.dx();
        let zp = r.certificate.z_prime(dx);
        let zpp = second_derivative(&zp, dx);
        let support = VACUUM_FRACTION * r.rho1.max();
        let mut ek2 = 0.0;
        for i in 1..grid.n_cells - 1 {
            let v = r.rho1.values();
            if v[i - 1] > support && v[i] > support && v[i + 1] > support {
                let e = grid.center(i) - r.transport.map_values[i] + tau * zpp[i];
                ek2 += v[i] * e * e * dx;
            }
        }
        let zpp_l2: f64 = zpp.iter().map(|v| v * v).sum::<f64>() * dx;
        let zp_l2: f64 = zp.iter().map(|v| v * v).sum::<f64>() * dx;
        let c = &r.certificate;
        traj.steps.push(StepDiagnostics {
            k: k + 1,
            t: (k + 1) as f64 * tau,
            w2sq_step: r.transport.w2_squared,
            tv: r.total_variation,
            energy: r.energy,
            min_rho: r.rho1.min(),
            max_rho: r.rho1.max(),
            max_abs_z: c.max_abs_z,
            el_residual: c.residual_el,
            complementarity: c.complementarity,
            jump_alignment: c.jump_alignment,
            eulerk2_residual: ek2.sqrt(),
            grad_div_z_l2: zpp_l2,
            iterations: r.iterations_used,
            converged: r.converged,
        });
        traj.sum_w2sq += r.transport.w2_squared;
        traj.h1_div_z_integral += tau * (zp_l2 + zpp_l2);
        traj.certificates.push(r.certificate);
        traj.densities.push(r.rho1);
        if !r.converged {
            traj.failure = Some(format!(
                "step {} did not converge after {} iterations (optimality gap {:.3e})",
                k + 1,
                r.iterations_used,
                traj.certificates[k].optimality_gap()
            ));
            break;
        }
    }
    Ok(traj)
}

/// Central differences of the cell values of `z'`; zero in the two end cells.
pub fn second_derivative(zp: &[f64], dx: f64) -> Vec<f64> {
    let n = zp.len();
    let mut out = vec![0.0; n];
    for i in 1..n.saturating_sub(1) {
        out[i] = (zp[i + 1] - zp[i - 1]) / (2.0 * dx);
    }
    out
}

/// Piecewise-constant interpolation: `rho_0` at `t = 0`, `rho_{k+1}` on
/// `(k tau, (k+1) tau]`, and the last density up to the horizon.
pub fn interpolate(traj: &FlowTrajectory, t: f64) -> Result<&GridDensity> {
    if !(0.0..=traj.horizon).contains(&t) {
        return Err(Error::OutOfRange(format!("time {t} not in [0, {}]", traj.horizon)));
    }
    let k = if t == 0.0 {
        0
    } else {
        ((t / traj.tau) * (1.0 - 1e-12)).ceil() as usize
    };
    Ok(&traj.densities[k.min(traj.densities.len() - 1)])
}

/// A test function `u(t, x)` on `[0, T] x [a, b]`.
pub trait TestFunction {
    fn value(&self, t: f64, x: f64) -> f64;
    fn dt(&self, t: f64, x: f64) -> f64;
    fn dx(&self, t: f64, x: f64) -> f64;
}

/// `u(t, x) = A (1 - s)^2 s^m (y (1 - y))^2 (2y - 1)^n` with `s = t / T`
/// and `y = (x - a) / (b - a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparableBump {
    pub horizon: f64,
    pub left: f64,
    pub right: f64,
    pub time_power: i32,
    pub space_power: i32,
    pub amplitude: f64,
}

impl SeparableBump {
    fn p(&self, t: f64) -> (f64, f64) {
        let s = t / self.horizon;
        let m = self.time_power;
        let v = (1.0 - s).powi(2) * s.powi(m);
        let d = -2.0 * (1.0 - s) * s.powi(m)
            + if m > 0 {
                (1.0 - s).powi(2) * m as f64 * s.powi(m - 1)
            } else {
                0.0
            };
        (v, d / self.horizon)
    }

    fn q(&self, x: f64) -> (f64, f64) {
        let l = self.right - self.left;
        let y = (x - self.left) / l;
        let n = self.space_power;
        let b = y * (1.0 - y);
        let c = 2.0 * y - 1.0;
        let v = b * b * c.powi(n);
        // d/dy [b^2 c^n] = 2 b (1 - 2y) c^n + b^2 n c^{n-1} 2
        let mut d = -2.0 * b * c.powi(n + 1);
        if n > 0 {
            d += 2.0 * n as f64 * b * b * c.powi(n - 1);
        }
        (v, d / l)
    }
}

impl TestFunction for SeparableBump {
    fn value(&self, t: f64, x: f64) -> f64 {
        self.amplitude * self.p(t).0 * self.q(x).0
    }

    fn dt(&self, t: f64, x: f64) -> f64 {
        self.amplitude * self.p(t).1 * self.q(x).0
    }

    fn dx(&self, t: f64, x: f64) -> f64 {
        self.amplitude * self.p(t).0 * self.q(x).1
    }
}

/// The fixed family of twelve bumps: time powers 0..3 times space powers 0..4.
pub fn builtin_family(horizon: f64, left: f64, right: f64) -> Vec<SeparableBump> {
    let mut out = Vec::with_capacity(12);
    for m in 0..3 {
        for n in 0..4 {
            out.push(SeparableBump {
                horizon,
                left,
                right,
                time_power: m,
                space_power: n,
                amplitude: 1.0,
            });
        }
    }
    out
}

/// Residual of the discrete weak formulation for one test function:
///
/// ```text
/// sum_k int [u(t_{k+1}) - u(t_k)] rho_{k+1}
///   - tau sum_k int rho_{k+1} z''_{k+1} u_x(t_{k+1/2}) + int u(0) rho_1
/// ```
///
/// The time derivative is integrated exactly over each step, `u_x` is taken
/// at the midpoint in time, and space integrals use cell centres.
pub fn weak_residual_single(traj: &FlowTrajectory, u: &dyn TestFunction) -> Result<f64> {
    let n_steps = traj.steps.len();
    if n_steps == 0 {
        return Err(Error::InvalidInput("trajectory has no steps".into()));
    }
    let grid = *traj.densities[0].grid();
    let tau = traj.tau;
    let t_end = n_steps as f64 * tau;
    check_vanishing(u, t_end, grid.left, grid.right, &grid.edges())?;
    let dx = grid.dx();
    let xs = grid.centers();
    let mut total = 0.0;
    for k in 0..n_steps {
        let rho = traj.densities[k + 1].values();
        let zpp = second_derivative(&traj.certificates[k].z_prime(dx), dx);
        let (t0, t1) = (k as f64 * tau, (k + 1) as f64 * tau);
        let tm = 0.5 * (t0 + t1);
        for (i, &x) in xs.iter().enumerate() {
            let du = u.value(t1, x) - u.value(t0, x);
            total += (du - tau * zpp[i] * u.dx(tm, x)) * rho[i] * dx;
        }
    }
    let rho1 = traj.densities[1].values();
    total += xs.iter().zip(rho1).map(|(&x, r)| u.value(0.0, x) * r * dx).sum::<f64>();
    Ok(total)
}

/// `max` over the family of `|R(u)|`.
pub fn weak_solution_residual<T: TestFunction>(traj: &FlowTrajectory, family: &[T]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for u in family {
        worst = worst.max(weak_residual_single(traj, u)?.abs());
    }
    Ok(worst)
}

fn check_vanishing(u: &dyn TestFunction, t_end: f64, a: f64, b: f64, xs: &[f64]) -> Result<()> {
    let scale = xs
        .iter()
        .map(|&x| u.value(0.0, x).abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let tol = 1e-12 * scale;
    if xs.iter().any(|&x| u.value(t_end, x).abs() > tol) {
        return Err(Error::InvalidInput("test function does not vanish at the final time".into()));
    }
    for j in 0..=16 {
        let t = t_end * j as f64 / 16.0;
        if u.value(t, a).abs() > tol || u.value(t, b).abs() > tol {
            return Err(Error::InvalidInput("test function does not vanish on the boundary".into()));
        }
    }
    Ok(())
}
