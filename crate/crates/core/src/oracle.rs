//! Brute-force reference computations used to cross-check the exact
//! routines: quadrature and assignment oracles for `W2^2`, a dual QP oracle
//! for the TV prox, and central differences for the potential.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridDensity, GridSpec};
use crate::prox::{tv_prox, ProxProblem};
use crate::transport::{kantorovich_potential, w2_squared};

/// Midpoint rule for `int_0^1 |F0^{-1}(s) - F1^{-1}(s)|^2 ds` on `samples`
/// equispaced levels. The quantiles are recomputed here by a forward sweep.
pub fn quadrature_w2(rho0: &GridDensity, rho1: &GridDensity, samples: usize) -> f64 {
    let q0 = Sweep::new(rho0);
    let q1 = Sweep::new(rho1);
    let (mut a, mut b) = (q0.start(), q1.start());
    let mut sum = 0.0;
    for k in 0..samples {
        let s = (k as f64 + 0.5) / samples as f64;
        let d = q0.quantile(s, &mut a) - q1.quantile(s, &mut b);
        sum += d * d;
    }
    sum / samples as f64
}

struct Sweep {
    edges: Vec<f64>,
    cum: Vec<f64>,
    values: Vec<f64>,
}

impl Sweep {
    fn new(rho: &GridDensity) -> Self {
        let dx = rho.grid().dx();
        let mut cum = vec![0.0];
        for v in rho.values() {
            cum.push(cum.last().expect("nonempty") + v * dx);
        }
        Self {
            edges: rho.grid().edges(),
            cum,
            values: rho.values().to_vec(),
        }
    }

    fn start(&self) -> usize {
        0
    }

    /// Quantile at `s`, for nondecreasing `s` across calls.
    fn quantile(&self, s: f64, cell: &mut usize) -> f64 {
        let n = self.values.len();
        while *cell + 1 < n && (self.cum[*cell + 1] < s || self.values[*cell] == 0.0) {
            *cell += 1;
        }
        let i = *cell;
        if self.values[i] == 0.0 {
            return self.edges[i];
        }
        let t = ((s - self.cum[i]) / self.values[i]).clamp(0.0, self.edges[i + 1] - self.edges[i]);
        self.edges[i] + t
    }
}

/// `W2^2` as an optimal assignment of `atoms` equal-mass pieces.
///
/// Every cell must carry a mass that is an integer multiple of `1 / atoms`,
/// so each mass band `[j/M, (j+1)/M]` is a uniform piece of a single cell.
/// The optimal plan of the pair is then a plan between pieces, and the
/// assignment value is exact.
pub fn assignment_w2(rho0: &GridDensity, rho1: &GridDensity, atoms: usize) -> Result<f64> {
    let p0 = pieces(rho0, atoms)?;
    let p1 = pieces(rho1, atoms)?;
    let m = atoms as f64;
    let cost: Vec<Vec<f64>> = p0
        .iter()
        .map(|&(a, la)| {
            p1.iter()
                .map(|&(b, lb)| {
                    let mid = a + 0.5 * la - b - 0.5 * lb;
                    (mid * mid + (la - lb) * (la - lb) / 12.0) / m
                })
                .collect()
        })
        .collect();
    Ok(assignment(&cost).0)
}

/// `(left, length)` of each mass band.
fn pieces(rho: &GridDensity, atoms: usize) -> Result<Vec<(f64, f64)>> {
    let dx = rho.grid().dx();
    let mut out = Vec::with_capacity(atoms);
    for (i, v) in rho.values().iter().enumerate() {
        let k = v * dx * atoms as f64;
        let kr = k.round();
        if (k - kr).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "cell {i} carries {k} atoms, not an integer"
            )));
        }
        let len = dx / kr;
        for j in 0..kr as usize {
            out.push((rho.grid().edge(i) + j as f64 * len, len));
        }
    }
    if out.len() != atoms {
        return Err(Error::InvalidInput(format!("expected {atoms} atoms, got {}", out.len())));
    }
    Ok(out)
}

/// Minimum-cost perfect matching of a square cost matrix (Hungarian method
/// with potentials). Returns the cost and the column of each row.
pub fn assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        col[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i][col[i]]).sum();
    (total, col)
}

/// Solves the prox through its dual, a box-constrained QP in the interface
/// variables `q`, `|q_j| <= lambda w_j`: projected coordinate descent, then
/// an exact solve on the free set, repeated until the active set settles.
pub fn prox_qp(problem: &ProxProblem) -> Result<Vec<f64>> {
    problem.validate()?;
    let y = &problem.input;
    let n = y.len();
    if n < 2 {
        return Ok(y.clone());
    }
    let f: Vec<f64> = problem.fidelity.clone().unwrap_or_else(|| vec![1.0; n]);
    let w: Vec<f64> = problem.weights.clone().unwrap_or_else(|| vec![1.0; n - 1]);
    let m = n - 1;
    let bound: Vec<f64> = w.iter().map(|wj| problem.lambda * wj).collect();
    let dy: Vec<f64> = (0..m).map(|j| y[j + 1] - y[j]).collect();
    // H = D F^{-1} D^T, tridiagonal
    let diag: Vec<f64> = (0..m).map(|j| 1.0 / f[j] + 1.0 / f[j + 1]).collect();
    let off: Vec<f64> = (0..m.saturating_sub(1)).map(|j| -1.0 / f[j + 1]).collect();
    let grad = |q: &[f64], j: usize| {
        let mut g = diag[j] * q[j] - dy[j];
        if j > 0 {
            g += off[j - 1] * q[j - 1];
        }
        if j + 1 < m {
            g += off[j] * q[j + 1];
        }
        g
    };
    let mut q = vec![0.0; m];
    for _round in 0..50 {
        for _ in 0..20_000 {
            let mut change: f64 = 0.0;
            for j in 0..m {
                let next = (q[j] - grad(&q, j) / diag[j]).clamp(-bound[j], bound[j]);
                change = change.max((next - q[j]).abs());
                q[j] = next;
            }
            if change < 1e-15 {
                break;
            }
        }
        // exact solve with the active coordinates frozen at their bounds
        let free: Vec<usize> = (0..m).filter(|&j| q[j].abs() < bound[j] * (1.0 - 1e-12)).collect();
        let k = free.len();
        let mut a = vec![vec![0.0; k + 1]; k];
        for (r, &j) in free.iter().enumerate() {
            let mut rhs = dy[j];
            for (c, &l) in free.iter().enumerate() {
                a[r][c] = if l == j {
                    diag[j]
                } else if l + 1 == j {
                    off[l]
                } else if j + 1 == l {
                    off[j]
                } else {
                    0.0
                };
            }
            if j > 0 && !free.contains(&(j - 1)) {
                rhs -= off[j - 1] * q[j - 1];
            }
            if j + 1 < m && !free.contains(&(j + 1)) {
                rhs -= off[j] * q[j + 1];
            }
            a[r][k] = rhs;
        }
        let sol = gauss(a);
        let mut polished = q.clone();
        for (r, &j) in free.iter().enumerate() {
            polished[j] = sol[r];
        }
        let feasible = free.iter().all(|&j| polished[j].abs() <= bound[j]);
        // KKT on the active set: the gradient must point out of the box
        let kkt = (0..m)
            .filter(|j| !free.contains(j))
            .all(|j| grad(&polished, j) * polished[j].signum() <= 1e-12);
        if feasible {
            q = polished;
            if kkt {
                break;
            }
        }
    }
    Ok((0..n)
        .map(|i| {
            let left = if i > 0 { q[i - 1] } else { 0.0 };
            let right = if i < m { q[i] } else { 0.0 };
            y[i] - (left - right) / f[i]
        })
        .collect())
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn gauss(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let k = a.len();
    for c in 0..k {
        let p = (c..k)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .expect("nonempty");
        a.swap(c, p);
        for r in c + 1..k {
            let factor = a[r][c] / a[c][c];
            for cc in c..=k {
                a[r][cc] -= factor * a[c][cc];
            }
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][k] - s) / a[r][r];
    }
    x
}

/// `[W2^2(rho0, rho1 + eps mu) - W2^2(rho0, rho1 - eps mu)] / (4 eps)`, to be
/// compared with `sum phi mu dx`.
pub fn central_difference(rho0: &GridDensity, rho1: &GridDensity, mu: &[f64], eps: f64) -> Result<f64> {
    let shifted = |sign: f64| -> Result<GridDensity> {
        let v = rho1.values().iter().zip(mu).map(|(r, m)| r + sign * eps * m).collect();
        GridDensity::new(*rho1.grid(), v)
    };
    let plus = w2_squared(rho0, &shifted(1.0)?)?;
    let minus = w2_squared(rho0, &shifted(-1.0)?)?;
    Ok((plus - minus) / (4.0 * eps))
}

/// Tolerances of the four oracle families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleTolerances {
    /// Relative, against 10^6-sample quadrature.
    pub quadrature: f64,
    /// Relative, against the assignment of at most 64 atoms.
    pub assignment: f64,
    /// Absolute, prox against the dual QP.
    pub prox: f64,
    /// Relative, central differences against `sum phi mu dx`.
    pub gradient: f64,
}

impl Default for OracleTolerances {
    fn default() -> Self {
        Self {
            quadrature: 1e-5,
            assignment: 1e-8,
            prox: 1e-8,
            gradient: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub oracle: &'static str,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const QUADRATURE_SAMPLES: usize = 1_000_000;
pub const TRANSPORT_PAIRS: usize = 100;
pub const PROX_INSTANCES: usize = 100;
pub const GRADIENT_PAIRS: usize = 10;
pub const GRADIENT_DIRECTIONS: usize = 20;
pub const GRADIENT_EPS: f64 = 1e-5;

/// Runs all four oracle families on instances drawn from `seed`. The
/// families run on separate threads; each is deterministic given the seed.
pub fn run_oracles(seed: u64, tol: &OracleTolerances) -> Result<Vec<OracleReport>> {
    let jobs: [fn(u64, &OracleTolerances) -> Result<OracleReport>; 4] =
        [quadrature_family, assignment_family, prox_family, gradient_family];
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs.iter().map(|job| s.spawn(move || job(seed, tol))).collect();
        handles.into_iter().map(|h| h.join().expect("oracle thread")).collect()
    })
}

fn report(oracle: &'static str, instances: usize, max_deviation: f64, tolerance: f64) -> OracleReport {
    OracleReport {
        oracle,
        instances,
        max_deviation,
        tolerance,
        passed: max_deviation <= tolerance,
    }
}

/// Random density on `grid` with values in `[0.1, 2)`, and with zero cells
/// when `vacuum` is set.
pub fn random_density(rng: &mut ChaCha8Rng, grid: GridSpec, vacuum: bool) -> GridDensity {
    let mut v: Vec<f64> = (0..grid.n_cells)
        .map(|_| if vacuum && rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.1..2.0) })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    GridDensity::normalized(grid, v).expect("positive mass")
}

fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> GridSpec {
    let left = rng.gen_range(-3.0..0.0);
    let width = rng.gen_range(0.5..4.0);
    GridSpec::new(left, left + width, n).expect("valid grid")
}

fn quadrature_family(seed: u64, tol: &OracleTolerances) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51);
    let mut worst: f64 = 0.0;
    for k in 0..TRANSPORT_PAIRS {
        let n = rng.gen_range(4..48);
        let grid = random_grid(&mut rng, n);
        let a = random_density(&mut rng, grid, k % 2 == 1);
        let b = random_density(&mut rng, grid, k % 3 == 2);
        let exact = w2_squared(&a, &b)?;
        let quad = quadrature_w2(&a, &b, QUADRATURE_SAMPLES);
        worst = worst.max((exact - quad).abs() / exact.max(f64::MIN_POSITIVE));
    }
    Ok(report("w2_quadrature", TRANSPORT_PAIRS, worst, tol.quadrature))
}

/// Density whose cells carry integer numbers of `atoms`-th masses.
pub fn random_atomic_density(rng: &mut ChaCha8Rng, grid: GridSpec, atoms: usize) -> GridDensity {
    let n = grid.n_cells;
    let mut counts = vec![0usize; n];
    for _ in 0..atoms {
        counts[rng.gen_range(0..n)] += 1;
    }
    let dx = grid.dx();
    let v = counts.iter().map(|&c| c as f64 / (atoms as f64 * dx)).collect();
    GridDensity::new(grid, v).expect("unit mass")
}

fn assignment_family(seed: u64, tol: &OracleTolerances) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5);
    let mut worst: f64 = 0.0;
    for _ in 0..TRANSPORT_PAIRS {
        let atoms = rng.gen_range(8..=64);
        let n = rng.gen_range(3..24);
        let grid = random_grid(&mut rng, n);
        let a = random_atomic_density(&mut rng, grid, atoms);
        let b = random_atomic_density(&mut rng, grid, atoms);
        let exact = w2_squared(&a, &b)?;
        let lp = assignment_w2(&a, &b, atoms)?;
        worst = worst.max((exact - lp).abs() / exact.max(f64::MIN_POSITIVE));
    }
    Ok(report("w2_assignment", TRANSPORT_PAIRS, worst, tol.assignment))
}

/// Random prox instance with `n <= 16`, interface and fidelity weights.
pub fn random_prox_problem(rng: &mut ChaCha8Rng) -> ProxProblem {
    let n = rng.gen_range(2..=16);
    let y = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let lambda = 10f64.powf(rng.gen_range(-2.0..0.5));
    let mut p = ProxProblem::new(y, lambda);
    if rng.gen_bool(0.5) {
        p = p.with_weights((0..n - 1).map(|_| rng.gen_range(0.2..3.0)).collect());
    }
    if rng.gen_bool(0.5) {
        p = p.with_fidelity((0..n).map(|_| rng.gen_range(0.2..3.0)).collect());
    }
    p
}

fn prox_family(seed: u64, tol: &OracleTolerances) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3C);
    let mut worst: f64 = 0.0;
    for _ in 0..PROX_INSTANCES {
        let p = random_prox_problem(&mut rng);
        let exact = tv_prox(&p)?;
        let qp = prox_qp(&p)?;
        for (a, b) in exact.iter().zip(&qp) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(report("tv_prox_qp", PROX_INSTANCES, worst, tol.prox))
}

fn gradient_family(seed: u64, tol: &OracleTolerances) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x96);
    let mut worst: f64 = 0.0;
    for _ in 0..GRADIENT_PAIRS {
        let n = rng.gen_range(16..64);
        let grid = random_grid(&mut rng, n);
        let rho0 = random_density(&mut rng, grid, false);
        let rho1 = random_density(&mut rng, grid, false);
        let phi = kantorovich_potential(&rho1, &rho0)?;
        for _ in 0..GRADIENT_DIRECTIONS {
            let mut mu: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mean = mu.iter().sum::<f64>() / n as f64;
            mu.iter_mut().for_each(|m| *m -= mean);
            let analytic: f64 = phi.iter().zip(&mu).map(|(p, m)| p * m).sum::<f64>() * grid.dx();
            let fd = central_difference(&rho0, &rho1, &mu, GRADIENT_EPS)?;
            worst = worst.max((fd - analytic).abs() / analytic.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(report(
        "w2_gradient",
        GRADIENT_PAIRS * GRADIENT_DIRECTIONS,
        worst,
        tol.gradient,
    ))
}
