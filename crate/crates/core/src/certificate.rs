//! Dual certificates for a TV-JKO step.
//!
//! `z` lives on cell interfaces, `rho`, `phi` and `beta` at cell centres. The
//! certificate is rebuilt from `rho1` and its potential alone by integrating
//! the Euler-Lagrange relation
//!
//! ```text
//! phi / tau + h log rho + c + z' = beta,   beta >= 0,   beta rho = 0
//! ```
//!
//! cell by cell, so it never depends on the history of the solver that
//! produced `rho1`. Violations are reported as metrics, never as errors.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::grid::GridDensity;
use crate::transport::{fmt, kantorovich_potential};

/// Cells with `rho <= VACUUM_FRACTION * max rho` are treated as vacuum.
pub const VACUUM_FRACTION: f64 = 1e-10;
/// Interfaces with `|jump| > JUMP_FRACTION * max rho` carry a jump.
pub const JUMP_FRACTION: f64 = 1e-9;
/// Floor applied inside `log` for the entropic term.
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualCertificate {
    /// `z` at the `N + 1` interfaces; both boundary entries are zero.
    pub z_values: Vec<f64>,
    pub beta_values: Vec<f64>,
    /// Per-cell defect of the Euler-Lagrange relation.
    pub residual_cells: Vec<f64>,
    /// `rho`-weighted L2 norm of `residual_cells`.
    pub residual_el: f64,
    pub max_abs_z: f64,
    pub complementarity: f64,
    pub jump_alignment: f64,
    /// Largest negative `beta` that a vacuum run would have needed.
    pub vacuum_defect: f64,
    /// Mass multiplier `c`.
    pub multiplier: f64,
    /// Correction added to `phi / tau` where the potential is not unique
    /// (vacuum gaps facing vacuum gaps of the previous density); zero
    /// elsewhere.
    pub potential_shift: Vec<f64>,
}

impl DualCertificate {
    /// Single scalar used as the stopping test of the solver.
    pub fn optimality_gap(&self) -> f64 {
        self.residual_el
            .max(self.complementarity)
            .max(self.vacuum_defect)
            .max(self.max_abs_z - 1.0)
            .max(self.jump_alignment)
    }

    /// `z'` per cell (forward difference of the interface values).
    pub fn z_prime(&self, dx: f64) -> Vec<f64> {
        self.z_values.windows(2).map(|w| (w[1] - w[0]) / dx).collect()
    }

    /// Writes `x_interface,z`.
    pub fn write_z_csv<W: Write>(&self, edges: &[f64], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_interface", "z"])?;
        for (x, z) in edges.iter().zip(&self.z_values) {
            w.write_record([fmt(*x), fmt(*z)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `x_center,beta,residual_cell`.
    pub fn write_cells_csv<W: Write>(&self, centers: &[f64], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_center", "beta", "residual_cell"])?;
        for ((x, b), r) in centers.iter().zip(&self.beta_values).zip(&self.residual_cells) {
            w.write_record([fmt(*x), fmt(*b), fmt(*r)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the certificate of a 1D step from `rho1` and the zero-mean
/// potential `phi` between `rho1` and the previous density.
pub fn build_certificate(rho1: &GridDensity, phi: &[f64], tau: f64, h: f64) -> DualCertificate {
    let g = first_variation(rho1.values(), phi, tau, h);
    let n = rho1.len();
    let cell_w = vec![1.0; n];
    let edge_w = vec![1.0; n + 1];
    build_weighted(rho1.values(), &g, vec![0.0; n], &cell_w, &edge_w, rho1.grid().dx())
}

/// `phi / tau + h log rho`, with the log floored.
pub(crate) fn first_variation(rho: &[f64], phi: &[f64], tau: f64, h: f64) -> Vec<f64> {
    rho.iter()
        .zip(phi)
        .map(|(&r, &p)| {
            let mut v = p / tau;
            if h > 0.0 {
                v += h * r.max(LOG_FLOOR).ln();
            }
            v
        })
        .collect()
}

/// Maximal runs of cells with `rho > VACUUM_FRACTION * max rho`.
pub(crate) fn components(rho: &[f64]) -> Vec<(usize, usize)> {
    let n = rho.len();
    let rmax = rho.iter().cloned().fold(0.0, f64::max);
    let thr = VACUUM_FRACTION * rmax;
    let mut comps = Vec::new();
    let mut i = 0;
    while i < n {
        if rho[i] > thr {
            let s = i;
            while i + 1 < n && rho[i + 1] > thr {
                i += 1;
            }
            comps.push((s, i));
        }
        i += 1;
    }
    comps
}

/// Multiplier making the flux of one component go from its entry value to
/// its exit value, and the component's weighted length.
fn component_multiplier(s: usize, e: usize, g: &[f64], cell_w: &[f64], edge_w: &[f64], dx: f64) -> (f64, f64) {
    let n = g.len();
    let entry = if s == 0 { 0.0 } else { -edge_w[s] };
    let exit = if e + 1 == n { 0.0 } else { edge_w[e + 1] };
    let a: f64 = (s..=e).map(|j| cell_w[j]).sum::<f64>() * dx;
    let gs: f64 = (s..=e).map(|j| cell_w[j] * g[j]).sum::<f64>() * dx;
    ((entry - exit - gs) / a, a)
}

/// An interior vacuum run `first..=last` of the new density, spanning
/// `[left, right]`, whose mass level sits in a gap of the previous density.
/// There the map may take any nondecreasing values in `[t_lo, t_hi]`; the
/// reference potential used `t_base` throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PotentialGap {
    pub first: usize,
    pub last: usize,
    pub left: f64,
    pub right: f64,
    pub t_base: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl PotentialGap {
    /// Range of the jump of `phi` across the run relative to the reference.
    fn shift_range(&self) -> (f64, f64) {
        let len = self.right - self.left;
        ((self.t_base - self.t_hi) * len, (self.t_base - self.t_lo) * len)
    }

    /// Cell averages of the change of `phi` over the run when the total jump
    /// changes by `d`. The map is `t_lo` then `t_hi`, which gives the largest
    /// potential inside the run for that jump.
    fn profile(&self, d: f64, dx: f64) -> Vec<f64> {
        let (l, r) = (self.left, self.right);
        let (ka, kb) = (self.t_base - self.t_lo, self.t_base - self.t_hi);
        let s = if self.t_hi > self.t_lo {
            (l + (d - kb * (r - l)) / (self.t_hi - self.t_lo)).clamp(l, r)
        } else {
            l
        };
        let prim = |x: f64| {
            if x <= s {
                0.5 * ka * (x - l) * (x - l)
            } else {
                0.5 * ka * (s - l) * (s - l) + ka * (s - l) * (x - s) + 0.5 * kb * (x - s) * (x - s)
            }
        };
        (self.first..=self.last)
            .map(|j| {
                let x0 = l + (j - self.first) as f64 * dx;
                (prim(x0 + dx) - prim(x0)) / dx
            })
            .collect()
    }
}

/// Additive correction to `g` exploiting the freedom of the potential over
/// `gaps`: blocks of components separated by such a gap are shifted so that
/// their multipliers agree, as far as the admissible range allows. Also
/// returns, per gap actually separating two blocks, `(first, excess)` where
/// `excess` is the part of the multiplier mismatch the range could not absorb.
pub(crate) fn potential_adjustment(
    rho: &[f64],
    g: &[f64],
    cell_w: &[f64],
    edge_w: &[f64],
    dx: f64,
    tau: f64,
    gaps: &[PotentialGap],
) -> (Vec<f64>, Vec<(usize, f64)>) {
    let n = rho.len();
    let mut adj = vec![0.0; n];
    let mut excess = Vec::new();
    if gaps.is_empty() {
        return (adj, excess);
    }
    let comps = components(rho);
    // clusters of components, split at flexible gaps
    let mut clusters: Vec<(Vec<(usize, usize)>, Option<PotentialGap>)> = Vec::new();
    for (k, &(s, e)) in comps.iter().enumerate() {
        let gap = if k == 0 {
            None
        } else {
            let prev = comps[k - 1].1;
            gaps.iter().find(|gp| gp.first == prev + 1 && gp.last + 1 == s).copied()
        };
        if k == 0 || gap.is_some() {
            clusters.push((Vec::new(), gap));
        }
        clusters.last_mut().expect("cluster").0.push((s, e));
    }
    let multiplier = |members: &[(usize, usize)]| {
        let (mut num, mut den) = (0.0, 0.0);
        for &(s, e) in members {
            let (c, a) = component_multiplier(s, e, g, cell_w, edge_w, dx);
            num += a * a * c;
            den += a * a;
        }
        num / den
    };
    let c = multiplier(&clusters[0].0);
    let mut shift = 0.0;
    for (members, gap) in clusters.iter().skip(1) {
        let gap = gap.expect("clusters after the first start at a gap");
        let (lo, hi) = gap.shift_range();
        let want = (multiplier(members) - c) * tau;
        let d = (want - shift).clamp(lo, hi);
        excess.push((gap.first, (want - shift - d).abs() / tau));
        for (j, p) in (gap.first..=gap.last).zip(gap.profile(d, dx)) {
            adj[j] = shift / tau + p / tau;
        }
        shift += d;
        for a in &mut adj[gap.last + 1..] {
            *a = shift / tau;
        }
    }
    (adj, excess)
}

/// Weighted construction in flux form `zeta = w z`:
/// `zeta_{i+1} = zeta_i - dx cell_w_i (g_i + shift_i + c - beta_i)`.
///
/// `edge_w` has `N + 1` entries; only the interior ones are read.
pub(crate) fn build_weighted(
    rho: &[f64],
    g: &[f64],
    shift: Vec<f64>,
    cell_w: &[f64],
    edge_w: &[f64],
    dx: f64,
) -> DualCertificate {
    let g: Vec<f64> = g.iter().zip(&shift).map(|(a, b)| a + b).collect();
    let g = g.as_slice();
    let n = rho.len();
    let rmax = rho.iter().cloned().fold(0.0, f64::max);
    let thr = VACUUM_FRACTION * rmax;
    let on = |i: usize| rho[i] > thr;
    let comps = components(rho);

    let entry = |s: usize| if s == 0 { 0.0 } else { -edge_w[s] };
    let exit = |e: usize| if e + 1 == n { 0.0 } else { edge_w[e + 1] };

    // per-component multipliers, then a least-squares compromise
    let mut ck = Vec::with_capacity(comps.len());
    let (mut num, mut den) = (0.0, 0.0);
    for &(s, e) in &comps {
        let (c, a) = component_multiplier(s, e, g, cell_w, edge_w, dx);
        ck.push(c);
        num += a * a * c;
        den += a * a;
    }
    let c = if den > 0.0 { num / den } else { 0.0 };

    let mut zeta = vec![0.0; n + 1];
    let mut beta = vec![0.0; n];
    let mut res = vec![0.0; n];
    let mut defect: f64 = 0.0;

    let mut fill_vacuum = |a: usize, b: usize, zeta: &mut [f64], beta: &mut [f64], res: &mut [f64]| {
        let target = if b + 1 == n { 0.0 } else { -edge_w[b + 1] };
        for j in a..=b {
            let step = zeta[j] - dx * cell_w[j] * (g[j] + c);
            if j < b {
                let floor = -edge_w[j + 1];
                if step < floor {
                    beta[j] = (floor - step) / (dx * cell_w[j]);
                    zeta[j + 1] = floor;
                } else {
                    zeta[j + 1] = step;
                }
            } else {
                let need = (target - step) / (dx * cell_w[j]);
                if need >= 0.0 {
                    beta[j] = need;
                } else {
                    res[j] = need;
                    defect = defect.max(-need);
                }
                zeta[j + 1] = target;
            }
        }
    };

    let mut cursor = 0;
    for (k, &(s, e)) in comps.iter().enumerate() {
        if s > cursor {
            fill_vacuum(cursor, s - 1, &mut zeta, &mut beta, &mut res);
        }
        zeta[s] = entry(s);
        let r = ck[k] - c;
        for j in s..=e {
            res[j] = r;
            zeta[j + 1] = zeta[j] - dx * cell_w[j] * (g[j] + c + r);
        }
        zeta[e + 1] = exit(e);
        cursor = e + 1;
    }
    if cursor < n {
        fill_vacuum(cursor, n - 1, &mut zeta, &mut beta, &mut res);
    }

    let mut z = vec![0.0; n + 1];
    for j in 1..n {
        z[j] = if edge_w[j] > 0.0 { zeta[j] / edge_w[j] } else { 0.0 };
    }
    let max_abs_z = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let jthr = JUMP_FRACTION * rmax;
    let mut jump_alignment: f64 = 0.0;
    for j in 1..n {
        let d = rho[j] - rho[j - 1];
        if d.abs() > jthr {
            jump_alignment = jump_alignment.max((z[j] + d.signum()).abs());
        }
    }

    let mut complementarity = 0.0;
    let mut el = 0.0;
    for j in 0..n {
        complementarity += beta[j] * rho[j] * cell_w[j] * dx;
        if on(j) {
            el += rho[j] * cell_w[j] * res[j] * res[j] * dx;
        }
    }

    DualCertificate {
        z_values: z,
        beta_values: beta,
        residual_cells: res,
        residual_el: el.sqrt(),
        max_abs_z,
        complementarity,
        jump_alignment,
        vacuum_defect: defect,
        multiplier: c,
        potential_shift: shift,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficientReport {
    /// `min (phi/tau + c + z')` over all cells; condition (a) wants `>= -tol`.
    pub min_dual_slack: f64,
    /// `max |phi/tau + c + z'|` over support cells; condition (b).
    pub max_support_defect: f64,
    pub max_abs_z: f64,
    pub jump_alignment: f64,
    pub tolerance: f64,
    pub nonnegativity: bool,
    pub support_equality: bool,
    pub dual_feasibility: bool,
}

impl SufficientReport {
    pub fn passed(&self) -> bool {
        self.nonnegativity && self.support_equality && self.dual_feasibility
    }
}

/// Checks the discrete sufficient optimality conditions for the pair
/// `(rho1, cert)` against `rho0`:
/// (a) `phi/tau + c + z' >= -tol`, (b) equality on the support,
/// (c) `|z| <= 1 + tol` and `jump_alignment <= tol`.
pub fn check_sufficient_conditions(
    rho1: &GridDensity,
    rho0: &GridDensity,
    tau: f64,
    cert: &DualCertificate,
    tol: f64,
) -> Result<SufficientReport> {
    let phi = kantorovich_potential(rho1, rho0)?;
    let dx = rho1.grid().dx();
    let zp = cert.z_prime(dx);
    let rmax = rho1.max();
    let mut min_slack = f64::INFINITY;
    let mut max_defect: f64 = 0.0;
    for i in 0..rho1.len() {
        let s = phi[i] / tau + cert.potential_shift[i] + cert.multiplier + zp[i];
        min_slack = min_slack.min(s);
        if rho1.values()[i] > VACUUM_FRACTION * rmax {
            max_defect = max_defect.max(s.abs());
        }
    }
    Ok(SufficientReport {
        min_dual_slack: min_slack,
        max_support_defect: max_defect,
        max_abs_z: cert.max_abs_z,
        jump_alignment: cert.jump_alignment,
        tolerance: tol,
        nonnegativity: min_slack >= -tol,
        support_equality: max_defect <= tol,
        dual_feasibility: cert.max_abs_z <= 1.0 + tol && cert.jump_alignment <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn stationary_uniform_has_trivial_certificate() {
        let g = GridSpec::new(0.0, 1.0, 64).unwrap();
        let u = GridDensity::uniform(g);
        let phi = kantorovich_potential(&u, &u).unwrap();
        let cert = build_certificate(&u, &phi, 0.1, 0.0);
        assert!(cert.z_values.iter().all(|z| z.abs() < 1e-14));
        assert!(cert.beta_values.iter().all(|b| *b == 0.0));
        assert!(cert.optimality_gap() < 1e-14);
    }

    #[test]
    fn boundary_values_vanish_and_beta_is_nonnegative() {
        let g = GridSpec::new(-2.0, 2.0, 80).unwrap();
        let r0 = GridDensity::from_fn(g, |x| (1.0 - x.abs()).max(0.0)).unwrap();
        let r1 = GridDensity::from_fn(g, |x| if x.abs() < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let phi = kantorovich_potential(&r1, &r0).unwrap();
        let cert = build_certificate(&r1, &phi, 0.01, 0.0);
        assert_eq!(cert.z_values[0], 0.0);
        assert_eq!(cert.z_values[80], 0.0);
        assert!(cert.beta_values.iter().all(|b| *b >= 0.0));
        // entry and exit of the support are pinned
        assert_eq!(cert.z_values[30], -1.0);
        assert_eq!(cert.z_values[50], 1.0);
    }
}
