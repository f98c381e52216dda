//! One step of the TV-JKO scheme, plain or with an entropic term:
//!
//! ```text
//! min_rho  W2^2(rho0, rho) / (2 tau) + TV(rho) + h E(rho)
//! ```
//!
//! solved by forward-backward splitting. The forward step uses the exact
//! first variation of the transport term (the Kantorovich potential), the
//! backward step is the exact prox of TV plus the simplex constraint. The
//! solver stops when the dual certificate rebuilt from the iterate certifies
//! optimality.

use serde::{Deserialize, Serialize};

use crate::certificate::{build_weighted, first_variation, potential_adjustment, DualCertificate, PotentialGap, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::grid::{CdfFunction, GridDensity, GridSpec};
use crate::prox::solve_into;
use crate::transport::{potential_from_cdfs, w2_from_cdfs, TransportData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRule {
    /// Constant step `sigma`, no line search.
    Fixed { sigma: f64 },
    /// Sufficient-decrease backtracking starting at `sigma = tau`.
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JkoConfig {
    pub tau: f64,
    pub entropy_h: f64,
    pub max_outer_iter: usize,
    pub el_tolerance: f64,
    pub step_rule: StepRule,
    /// Floor applied inside `log` when `entropy_h > 0`; never below 1e-300.
    pub min_density_floor: f64,
    /// Monotone momentum on top of the proximal gradient step.
    pub accelerate: bool,
}

impl Default for JkoConfig {
    fn default() -> Self {
        Self {
            tau: 1e-2,
            entropy_h: 0.0,
            max_outer_iter: 20_000,
            el_tolerance: 1e-6,
            step_rule: StepRule::Backtracking,
            min_density_floor: 0.0,
            accelerate: true,
        }
    }
}

impl JkoConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }

    pub fn with_entropy(mut self, h: f64) -> Self {
        self.entropy_h = h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.entropy_h >= 0.0 && self.entropy_h.is_finite()) {
            return bad(format!("entropy_h must be nonnegative, got {}", self.entropy_h));
        }
        if self.max_outer_iter == 0 {
            return bad("max_outer_iter must be positive".into());
        }
        if !(self.el_tolerance > 0.0) {
            return bad(format!("el_tolerance must be positive, got {}", self.el_tolerance));
        }
        if !(self.min_density_floor >= 0.0) {
            return bad("min_density_floor must be nonnegative".into());
        }
        if let StepRule::Fixed { sigma } = self.step_rule {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return bad(format!("fixed step must be positive, got {sigma}"));
            }
        }
        Ok(())
    }

    fn log_floor(&self) -> f64 {
        self.min_density_floor.max(LOG_FLOOR)
    }
}

#[derive(Debug, Clone)]
pub struct JkoStepResult {
    pub rho1: GridDensity,
    pub transport: TransportData,
    /// `W2^2 / (2 tau) + TV (+ h E)` at `rho1`.
    pub energy: f64,
    pub entropy: f64,
    pub total_variation: f64,
    pub certificate: DualCertificate,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Solves one step starting from `rho0` itself.
pub fn jko_step(rho0: &GridDensity, config: &JkoConfig) -> Result<JkoStepResult> {
    jko_step_from(rho0, rho0, config)
}

/// Solves one step from an arbitrary feasible starting point.
pub fn jko_step_from(rho0: &GridDensity, init: &GridDensity, config: &JkoConfig) -> Result<JkoStepResult> {
    config.validate()?;
    rho0.grid().check_same(init.grid())?;
    let grid = *rho0.grid();
    let n = grid.n_cells;
    let cell_w = vec![1.0; n];
    let edge_w = vec![1.0; n + 1];
    let problem = WeightedProblem::new(grid, &cell_w, &edge_w, rho0.values());
    let out = problem.solve(init.values(), config);

    let candidate = finish(rho0, GridDensity::normalized(grid, out.u)?, config, &cell_w, &edge_w)?;
    // Taking rho = rho0 is feasible; never return anything worse as computed.
    let stay = finish(rho0, rho0.clone(), config, &cell_w, &edge_w)?;
    let mut result = if candidate.energy <= stay.energy { candidate } else { stay };
    result.iterations_used = out.iterations;
    result.converged = out.converged && result.certificate.optimality_gap() <= config.el_tolerance;
    Ok(result)
}

fn finish(
    rho0: &GridDensity,
    rho1: GridDensity,
    config: &JkoConfig,
    cell_w: &[f64],
    edge_w: &[f64],
) -> Result<JkoStepResult> {
    let transport = TransportData::between(&rho1, rho0)?;
    let entropy = rho1.entropy();
    let tv = rho1.total_variation();
    let mut energy = transport.w2_squared / (2.0 * config.tau) + tv;
    if config.entropy_h > 0.0 {
        energy += config.entropy_h * entropy;
    }
    let certificate = WeightedProblem::new(*rho0.grid(), cell_w, edge_w, rho0.values()).certificate(rho1.values(), config);
    Ok(JkoStepResult {
        rho1,
        transport,
        energy,
        entropy,
        total_variation: tv,
        certificate,
        iterations_used: 0,
        converged: false,
    })
}

#[derive(Debug, Clone)]
pub struct EntropicStep {
    pub h: f64,
    pub result: JkoStepResult,
    /// `min_i h log rho_h(x_i)`; `-inf` if some cell underflowed to zero.
    pub min_h_log_rho: f64,
}

/// Solves the entropic problem for each `h` of a strictly decreasing sweep.
pub fn entropic_step_family(
    rho0: &GridDensity,
    tau: f64,
    h_values: &[f64],
    base: &JkoConfig,
) -> Result<Vec<EntropicStep>> {
    if h_values.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidConfig("entropic weights must be positive".into()));
    }
    if h_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidConfig("entropic weights must be strictly decreasing".into()));
    }
    let mut out: Vec<EntropicStep> = Vec::with_capacity(h_values.len());
    for &h in h_values {
        let cfg = JkoConfig {
            tau,
            entropy_h: h,
            ..*base
        };
        let init = out.last().map_or(rho0, |s| &s.result.rho1);
        let result = jko_step_from(rho0, init, &cfg)?;
        let min_h_log_rho = result
            .rho1
            .values()
            .iter()
            .map(|&r| if r > 0.0 { h * r.ln() } else { f64::NEG_INFINITY })
            .fold(f64::INFINITY, f64::min);
        out.push(EntropicStep {
            h,
            result,
            min_h_log_rho,
        });
    }
    Ok(out)
}

/// Mass-level slack within which a vacuum gap of the iterate is considered
/// to face a vacuum gap of the previous density.
pub const GAP_LEVEL_TOLERANCE: f64 = 1e-9;

/// Relative slack of the sufficient-decrease test; the transport term is
/// only evaluated to about this accuracy.
const SMOOTH_ROUNDOFF: f64 = 1e-11;

/// Raw output of the weighted solver.
pub(crate) struct WeightedOutcome {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Step problem on a uniform grid with cell weights `omega` and interface
/// weights `w`: the unknown `u` carries mass `omega_i u_i dx` per cell,
///
/// ```text
/// F(u) = W2^2(m0, omega u) / (2 tau) + sum_i w_{i+1/2} |u_{i+1} - u_i|
///        + h sum_i omega_i u_i log u_i dx,
/// ```
///
/// and all inner products are `sum omega a b dx`. The 1D step is
/// `omega = w = 1`.
pub(crate) struct WeightedProblem<'a> {
    grid: GridSpec,
    cell_w: &'a [f64],
    edge_w: &'a [f64],
    m0: Vec<f64>,
    target: CdfFunction,
}

#[derive(Clone)]
struct Iterate {
    u: Vec<f64>,
    cdf: CdfFunction,
    smooth: f64,
    total: f64,
}

impl<'a> WeightedProblem<'a> {
    /// `m0_values` are the values of the previous iterate in the same units
    /// as `u` (masses `omega m0 dx`).
    pub fn new(grid: GridSpec, cell_w: &'a [f64], edge_w: &'a [f64], m0_values: &[f64]) -> Self {
        let target = CdfFunction::new(&grid, &weighted(cell_w, m0_values));
        Self {
            grid,
            cell_w,
            edge_w,
            m0: m0_values.to_vec(),
            target,
        }
    }

    fn dx(&self) -> f64 {
        self.grid.dx()
    }

    fn iterate(&self, u: Vec<f64>, cfg: &JkoConfig) -> Iterate {
        let cdf = CdfFunction::new(&self.grid, &weighted(self.cell_w, &u));
        let w2 = w2_from_cdfs(&self.target, &cdf);
        let mut smooth = w2 / (2.0 * cfg.tau);
        if cfg.entropy_h > 0.0 {
            smooth += cfg.entropy_h * self.entropy(&u);
        }
        let tv: f64 = (1..u.len()).map(|i| self.edge_w[i] * (u[i] - u[i - 1]).abs()).sum();
        Iterate {
            total: smooth + tv,
            u,
            cdf,
            smooth,
        }
    }

    fn entropy(&self, u: &[f64]) -> f64 {
        let dx = self.dx();
        u.iter()
            .zip(self.cell_w)
            .map(|(&v, &w)| if v > 0.0 { w * v * v.ln() * dx } else { 0.0 })
            .sum()
    }

    /// Interior runs of empty cells of `u`, with the range of map values
    /// the potential may use there.
    fn gaps(&self, u: &[f64], cdf: &CdfFunction) -> Vec<PotentialGap> {
        let n = u.len();
        let knots = cdf.knots();
        let edges = cdf.edges();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            if knots[i + 1] > knots[i] {
                i += 1;
                continue;
            }
            let first = i;
            while i + 1 < n && knots[i + 2] <= knots[i + 1] {
                i += 1;
            }
            let last = i;
            i += 1;
            if first == 0 || last + 1 == n {
                continue;
            }
            let m = knots[first];
            out.push(PotentialGap {
                first,
                last,
                left: edges[first],
                right: edges[last + 1],
                t_base: self.target.quantile_unchecked(m),
                t_lo: self.target.quantile_unchecked((m - GAP_LEVEL_TOLERANCE).max(0.0)),
                t_hi: self.target.quantile_upper((m + GAP_LEVEL_TOLERANCE).min(1.0)),
            });
        }
        out
    }

    /// `phi / tau + h log u` and the correction chosen for the potential on
    /// gaps.
    fn first_variation(&self, u: &[f64], cdf: &CdfFunction, cfg: &JkoConfig) -> (Vec<f64>, Vec<f64>) {
        let phi = potential_from_cdfs(cdf, &self.target);
        let g = first_variation(u, &phi, cfg.tau, cfg.entropy_h);
        let gaps = self.gaps(u, cdf);
        let (shift, _) = potential_adjustment(u, &g, self.cell_w, self.edge_w, self.dx(), cfg.tau, &gaps);
        (g, shift)
    }

    fn gradient(&self, it: &Iterate, cfg: &JkoConfig) -> Vec<f64> {
        let (g, shift) = self.first_variation(&it.u, &it.cdf, cfg);
        let floor = cfg.log_floor();
        g.iter()
            .zip(&shift)
            .zip(&it.u)
            .map(|((&g, &s), &v)| {
                let mut out = g + s;
                if cfg.entropy_h > 0.0 {
                    // `first_variation` floors at 1e-300; redo with the configured floor
                    out += cfg.entropy_h * (1.0 + v.max(floor).ln() - v.max(LOG_FLOOR).ln());
                }
                out
            })
            .collect()
    }

    pub fn certificate(&self, u: &[f64], cfg: &JkoConfig) -> DualCertificate {
        let cdf = CdfFunction::new(&self.grid, &weighted(self.cell_w, u));
        let (g, shift) = self.first_variation(u, &cdf, cfg);
        build_weighted(u, &g, shift, self.cell_w, self.edge_w, self.dx())
    }

    /// `(W2^2, weighted TV)` at `u`.
    pub fn energy_parts(&self, u: &[f64]) -> (f64, f64) {
        let cdf = CdfFunction::new(&self.grid, &weighted(self.cell_w, u));
        let tv = (1..u.len()).map(|i| self.edge_w[i] * (u[i] - u[i - 1]).abs()).sum();
        (w2_from_cdfs(&self.target, &cdf), tv)
    }

    /// Exact prox of `sigma (TV_w + simplex)` in the weighted metric.
    fn prox(&self, v: &[f64], sigma: f64, out: &mut [f64]) {
        let n = v.len();
        let dx = self.dx();
        solve_into(v, sigma / dx, Some(&self.edge_w[1..n]), Some(self.cell_w), out);
        project_mass(out, self.cell_w, dx);
    }

    /// Solves the step. Blocks of `m0` separated by empty cells are first
    /// solved on their own, which is exact when the minimizer keeps them
    /// apart since the problem is invariant under scaling of the mass; two
    /// neighbours are merged only when the combined density cannot be
    /// certified across the gap between them. `init` is used as given only
    /// when `m0` is a single block.
    pub fn solve(&self, init: &[f64], cfg: &JkoConfig) -> WeightedOutcome {
        let blocks = positive_runs(&self.m0);
        if blocks.len() < 2 {
            return self.solve_direct(init, cfg);
        }
        let n = self.m0.len();
        let dx = self.dx();
        let total: f64 = (0..n).map(|i| self.cell_w[i] * self.m0[i]).sum::<f64>() * dx;
        let mut groups: Vec<(usize, usize)> = (0..blocks.len()).map(|k| (k, k)).collect();
        let mut iterations = 0;
        loop {
            let mut u = vec![0.0; n];
            let mut parts = Vec::with_capacity(groups.len());
            let mut converged = true;
            for &(a, b) in &groups {
                let (lo, hi) = (blocks[a].0, blocks[b].1);
                let mut m0g = vec![0.0; n];
                m0g[lo..=hi].copy_from_slice(&self.m0[lo..=hi]);
                let mass = (lo..=hi).map(|i| self.cell_w[i] * self.m0[i]).sum::<f64>() * dx / total;
                let sub = WeightedProblem::new(self.grid, self.cell_w, self.edge_w, &m0g);
                let start = if a == b { m0g.clone() } else { filled(&m0g, lo, hi) };
                let out = sub.solve_direct(&start, cfg);
                iterations += out.iterations;
                converged &= out.converged;
                for (ui, pi) in u.iter_mut().zip(&out.u) {
                    *ui += mass * pi;
                }
                parts.push(out.u);
            }
            if groups.len() == 1 {
                return WeightedOutcome {
                    u,
                    iterations,
                    converged,
                };
            }
            let cdf = CdfFunction::new(&self.grid, &weighted(self.cell_w, &u));
            let phi = potential_from_cdfs(&cdf, &self.target);
            let g = first_variation(&u, &phi, cfg.tau, cfg.entropy_h);
            let gaps = self.gaps(&u, &cdf);
            let (shift, excess) = potential_adjustment(&u, &g, self.cell_w, self.edge_w, dx, cfg.tau, &gaps);
            let cert = build_weighted(&u, &g, shift, self.cell_w, self.edge_w, dx);
            if cert.optimality_gap() <= cfg.el_tolerance {
                return WeightedOutcome {
                    u,
                    iterations,
                    converged,
                };
            }
            // a boundary is kept only if the certificate holds across it;
            // the worst violation is merged first
            let violation: Vec<f64> = parts
                .windows(2)
                .map(|p| {
                    let last = p[0].iter().rposition(|&v| v > 0.0);
                    let first = p[1].iter().position(|&v| v > 0.0);
                    match (last, first) {
                        (Some(l), Some(f)) if l + 1 < f => {
                            let absorbed = excess
                                .iter()
                                .find(|&&(start, _)| start == l + 1)
                                .map_or(f64::INFINITY, |&(_, e)| e - cfg.el_tolerance);
                            let vacuum = cert.residual_cells[l + 1..f].iter().fold(0.0, |m: f64, r| m.max(r.abs()));
                            let bounded = cert.z_values[l + 1..=f].iter().fold(f64::NEG_INFINITY, |m: f64, z| m.max(z.abs()))
                                - 1.0
                                - cfg.el_tolerance;
                            absorbed.max(bounded).max(if vacuum > 0.0 { vacuum } else { f64::NEG_INFINITY })
                        }
                        _ => f64::INFINITY,
                    }
                })
                .collect();
            let Some((worst, _)) = violation
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .max_by(|a, b| a.1.total_cmp(b.1))
            else {
                return WeightedOutcome {
                    u,
                    iterations,
                    converged: false,
                };
            };
            let mut next = groups.clone();
            next[worst].1 = next[worst + 1].1;
            next.remove(worst + 1);
            groups = next;
        }
    }

    fn solve_direct(&self, init: &[f64], cfg: &JkoConfig) -> WeightedOutcome {
        let n = init.len();
        let dx = self.dx();
        let mut start = init.to_vec();
        project_mass(&mut start, self.cell_w, dx);
        let mut cur = self.iterate(start, cfg);
        let mut sigma = match cfg.step_rule {
            StepRule::Fixed { sigma } => sigma,
            StepRule::Backtracking => cfg.tau,
        };
        let mut v = vec![0.0; n];
        let mut cand = vec![0.0; n];

        if self.certificate(&cur.u, cfg).optimality_gap() <= cfg.el_tolerance {
            return WeightedOutcome {
                u: cur.u,
                iterations: 0,
                converged: true,
            };
        }

        // `y` is the extrapolated point; it equals `cur` without momentum.
        let mut y = cur.clone();
        let mut t: f64 = 1.0;
        for iter in 1..=cfg.max_outer_iter {
            let g = self.gradient(&y, cfg);
            let next = loop {
                for i in 0..n {
                    v[i] = y.u[i] - sigma * g[i];
                }
                self.prox(&v, sigma, &mut cand);
                let trial = self.iterate(cand.clone(), cfg);
                if let StepRule::Fixed { .. } = cfg.step_rule {
                    break trial;
                }
                let (mut lin, mut quad) = (0.0, 0.0);
                for i in 0..n {
                    let d = trial.u[i] - y.u[i];
                    lin += self.cell_w[i] * g[i] * d * dx;
                    quad += self.cell_w[i] * d * d * dx;
                }
                let bound = y.smooth + lin + quad / (2.0 * sigma);
                if trial.smooth <= bound + SMOOTH_ROUNDOFF * (1.0 + y.smooth.abs()) || sigma < 1e-30 {
                    break trial;
                }
                sigma *= 0.5;
            };
            if next.total > cur.total && y.u != cur.u {
                // momentum overshoot: restart from the last accepted iterate
                y = cur.clone();
                t = 1.0;
                continue;
            }
            let still = next.u == cur.u;
            let prev = std::mem::replace(&mut cur, next);
            let gap = self.certificate(&cur.u, cfg).optimality_gap();
            if gap <= cfg.el_tolerance || still {
                return WeightedOutcome {
                    u: cur.u,
                    iterations: iter,
                    converged: gap <= cfg.el_tolerance,
                };
            }
            if cfg.accelerate {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let mut beta: f64 = (t - 1.0) / t_next;
                for i in 0..n {
                    let d = cur.u[i] - prev.u[i];
                    if d < 0.0 {
                        beta = beta.min(cur.u[i] / -d);
                    }
                }
                let u: Vec<f64> = (0..n).map(|i| (cur.u[i] + beta * (cur.u[i] - prev.u[i])).max(0.0)).collect();
                y = self.iterate(u, cfg);
                t = t_next;
            } else {
                y = cur.clone();
            }
        }
        WeightedOutcome {
            u: cur.u,
            iterations: cfg.max_outer_iter,
            converged: false,
        }
    }
}

/// Maximal runs of strictly positive entries.
fn positive_runs(v: &[f64]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        if x > 0.0 {
            match out.last_mut() {
                Some(run) if run.1 + 1 == i => run.1 = i,
                _ => out.push((i, i)),
            }
        }
    }
    out
}

/// Copy of `v` with the empty cells of `lo..=hi` raised to the smallest
/// positive value there.
fn filled(v: &[f64], lo: usize, hi: usize) -> Vec<f64> {
    let floor = v[lo..=hi].iter().filter(|&&x| x > 0.0).fold(f64::INFINITY, |a, &b| a.min(b));
    let mut out = v.to_vec();
    for x in &mut out[lo..=hi] {
        if *x <= 0.0 {
            *x = floor;
        }
    }
    out
}

fn weighted(cell_w: &[f64], u: &[f64]) -> Vec<f64> {
    u.iter().zip(cell_w).map(|(a, b)| a * b).collect()
}

/// Shifts and clips `p` in place so that `sum omega max(p - c, 0) dx = 1`.
/// Applied to the TV prox output this is the exact prox of TV plus the
/// simplex indicator.
pub(crate) fn project_mass(p: &mut [f64], cell_w: &[f64], dx: f64) {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    let (mut a, mut b) = (0.0, 0.0);
    let mut c = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        a += cell_w[i] * dx;
        b += cell_w[i] * dx * p[i];
        c = (b - 1.0) / a;
        let next = idx.get(k + 1).map_or(f64::NEG_INFINITY, |&j| p[j]);
        if c >= next {
            break;
        }
    }
    for v in p.iter_mut() {
        *v = (*v - c).max(0.0);
    }
}
