//! Exact quadratic optimal transport between piecewise-constant densities on
//! a common 1D grid.
//!
//! Both quantile functions are piecewise linear in the mass variable `s`, so
//! on the common refinement of their breakpoints the squared difference is a
//! quadratic and integrates in closed form. The monotone map and the
//! Kantorovich potential use the same refinement in the space variable.
//!
//! Orientation is always backward: the map sends the current density `rho1`
//! onto the previous one `rho0`, and the potential satisfies
//! `phi' = x - T(x)`.

use std::io::Write;

use crate::error::Result;
use crate::grid::{CdfFunction, GridDensity};

/// Map, potential and cost between `rho1` (source) and `rho0` (target).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportData {
    pub w2_squared: f64,
    /// `T(x_i) = F0^{-1}(F1(x_i))` at cell centers.
    pub map_values: Vec<f64>,
    /// Cell averages of the Kantorovich potential, zero mean on the grid.
    pub potential: Vec<f64>,
}

impl TransportData {
    pub fn between(rho1: &GridDensity, rho0: &GridDensity) -> Result<Self> {
        rho1.grid().check_same(rho0.grid())?;
        let f1 = rho1.cdf();
        let f0 = rho0.cdf();
        Ok(Self {
            w2_squared: w2_from_cdfs(&f0, &f1),
            map_values: map_from_cdfs(&f1, &f0),
            potential: potential_from_cdfs(&f1, &f0),
        })
    }

    /// Writes `x,T,phi` rows at cell centers.
    pub fn write_csv<W: Write>(&self, centers: &[f64], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "T", "phi"])?;
        for ((x, t), p) in centers.iter().zip(&self.map_values).zip(&self.potential) {
            w.write_record(&[fmt(*x), fmt(*t), fmt(*p)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// `W_2^2(rho0, rho1)`, symmetric in its arguments.
pub fn w2_squared(rho0: &GridDensity, rho1: &GridDensity) -> Result<f64> {
    rho0.grid().check_same(rho1.grid())?;
    Ok(w2_from_cdfs(&rho0.cdf(), &rho1.cdf()))
}

/// Monotone rearrangement `T = F0^{-1} o F1` sampled at the cell centers.
pub fn monotone_map(rho1: &GridDensity, rho0: &GridDensity) -> Result<Vec<f64>> {
    rho1.grid().check_same(rho0.grid())?;
    Ok(map_from_cdfs(&rho1.cdf(), &rho0.cdf()))
}

/// Kantorovich potential between `rho1` and `rho0` as cell averages,
/// normalized to zero mean.
///
/// `phi' = x - T(x)` is integrated exactly on the refinement where `T` is
/// linear, so the cell averages are the exact first variation of
/// `rho -> W_2^2(rho0, rho) / 2` with respect to the cell values.
pub fn kantorovich_potential(rho1: &GridDensity, rho0: &GridDensity) -> Result<Vec<f64>> {
    rho1.grid().check_same(rho0.grid())?;
    Ok(potential_from_cdfs(&rho1.cdf(), &rho0.cdf()))
}

pub(crate) fn w2_from_cdfs(f0: &CdfFunction, f1: &CdfFunction) -> f64 {
    let n = f0.n_cells();
    let (k0, k1) = (f0.knots(), f1.knots());
    let (mut i, mut j) = (0usize, 0usize);
    let mut s = 0.0;
    let mut total = 0.0;
    loop {
        while i < n && k0[i + 1] <= s {
            i += 1;
        }
        while j < n && k1[j + 1] <= s {
            j += 1;
        }
        if i >= n || j >= n {
            break;
        }
        let next = k0[i + 1].min(k1[j + 1]);
        let len = next - s;
        if len > 0.0 {
            let da = f0.quantile_in_cell(i, s) - f1.quantile_in_cell(j, s);
            let db = f0.quantile_in_cell(i, next) - f1.quantile_in_cell(j, next);
            total += len * (da * da + da * db + db * db) / 3.0;
        }
        s = next;
        if s >= 1.0 {
            break;
        }
    }
    total
}

pub(crate) fn map_from_cdfs(f1: &CdfFunction, f0: &CdfFunction) -> Vec<f64> {
    let k1 = f1.knots();
    (0..f1.n_cells())
        .map(|i| f0.quantile_unchecked(0.5 * (k1[i] + k1[i + 1])))
        .collect()
}

pub(crate) fn potential_from_cdfs(f1: &CdfFunction, f0: &CdfFunction) -> Vec<f64> {
    let n = f1.n_cells();
    let edges = f1.edges();
    let (k0, k1) = (f0.knots(), f1.knots());
    let dx = (edges[n] - edges[0]) / n as f64;
    let mut averages = Vec::with_capacity(n);
    let mut phi = 0.0;
    let mut j = 0usize;
    for i in 0..n {
        let (e0, e1) = (edges[i], edges[i + 1]);
        let m = k1[i + 1] - k1[i];
        let mut integral = 0.0;
        if m <= 0.0 {
            // vacuum cell: T frozen at the quantile of the current mass level
            let t = f0.quantile_unchecked(k1[i]);
            integral += piece(&mut phi, e0, e1, t, t);
        } else {
            let x_of = |s: f64| e0 + (e1 - e0) * ((s - k1[i]) / m).clamp(0.0, 1.0);
            let mut s = k1[i];
            while s < k1[i + 1] {
                while j + 1 < n && k0[j + 1] <= s {
                    j += 1;
                }
                let next = k0[j + 1].min(k1[i + 1]);
                let next = if next > s { next } else { k1[i + 1] };
                let (xa, xb) = (x_of(s), x_of(next));
                let ta = f0.quantile_in_cell(j, s);
                let tb = f0.quantile_in_cell(j, next);
                integral += piece(&mut phi, xa, xb, ta, tb);
                s = next;
            }
        }
        averages.push(integral / dx);
    }
    let mean = averages.iter().sum::<f64>() / n as f64;
    for a in &mut averages {
        *a -= mean;
    }
    averages
}

/// Integrates `phi` over `[xa, xb]` where `T` is linear from `ta` to `tb`,
/// and advances `phi` to `xb`.
fn piece(phi: &mut f64, xa: f64, xb: f64, ta: f64, tb: f64) -> f64 {
    let l = xb - xa;
    if l <= 0.0 {
        return 0.0;
    }
    let integral = *phi * l + 0.5 * l * l * (xa - ta) + l * l * l / 6.0 - l * l * (tb - ta) / 6.0;
    *phi += l * (0.5 * (xa + xb) - 0.5 * (ta + tb));
    integral
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(grid: GridSpec, lo: f64, hi: f64) -> GridDensity {
        GridDensity::from_fn(grid, |x| if x > lo && x < hi { 1.0 } else { 0.0 }).unwrap()
    }

    fn random_positive(rng: &mut ChaCha8Rng, grid: GridSpec) -> GridDensity {
        let v = (0..grid.n_cells).map(|_| 0.1 + rng.gen::<f64>()).collect();
        GridDensity::normalized(grid, v).unwrap()
    }

    #[test]
    fn identical_densities_have_zero_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GridSpec::new(-1.0, 1.0, 37).unwrap();
        let d = random_positive(&mut rng, g);
        assert_eq!(w2_squared(&d, &d).unwrap(), 0.0);
        let t = monotone_map(&d, &d).unwrap();
        for (ti, xi) in t.iter().zip(g.centers()) {
            assert!((ti - xi).abs() < 1e-12);
        }
        let phi = kantorovich_potential(&d, &d).unwrap();
        assert!(phi.iter().all(|p| p.abs() < 1e-13));
    }

    #[test]
    fn translation_costs_shift_squared() {
        let g = GridSpec::new(0.0, 3.0, 300).unwrap();
        let a = block(g, 0.0, 1.0);
        let b = block(g, 1.0, 2.0);
        assert!((w2_squared(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_dilation_cost() {
        // alpha0 = 1 vs alpha1 = 2: (alpha1 - alpha0)^2 / 3
        let g = GridSpec::new(-4.0, 4.0, 256).unwrap();
        let a = block(g, -1.0, 1.0);
        let b = block(g, -2.0, 2.0);
        assert!((w2_squared(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let t = monotone_map(&b, &a).unwrap();
        for (x, tx) in g.centers().into_iter().zip(&t) {
            if x.abs() < 2.0 {
                assert!((tx - 0.5 * x).abs() < 1e-12, "T({x}) = {tx}");
            }
        }
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = GridDensity::uniform(GridSpec::new(0.0, 1.0, 10).unwrap());
        let b = GridDensity::uniform(GridSpec::new(0.0, 1.0, 11).unwrap());
        assert!(w2_squared(&a, &b).is_err());
        assert!(monotone_map(&a, &b).is_err());
        assert!(kantorovich_potential(&a, &b).is_err());
    }

    #[test]
    fn uniform_pair_potential_matches_closed_form() {
        // phi(x) = (a1 - a0)/(2 a1) x^2 - 3 tau / (2 a1) on the support,
        // 3 tau = a1^2 (a1 - a0); compare up to the additive constant.
        let (a0, a1) = (1.0, 1.5);
        let tau = a1 * a1 * (a1 - a0) / 3.0;
        let g = GridSpec::new(-3.0, 3.0, 600).unwrap();
        let r0 = block(g, -a0, a0);
        let r1 = block(g, -a1, a1);
        let phi = kantorovich_potential(&r1, &r0).unwrap();
        let dx = g.dx();
        let exact = |x: f64| (a1 - a0) / (2.0 * a1) * x * x - 3.0 * tau / (2.0 * a1);
        // exact cell average of the quadratic
        let avg = |i: usize| {
            let (l, r) = (g.edge(i), g.edge(i + 1));
            (a1 - a0) / (2.0 * a1) * (r * r * r - l * l * l) / (3.0 * dx) - 3.0 * tau / (2.0 * a1)
        };
        let inside: Vec<usize> = (0..g.n_cells).filter(|&i| g.center(i).abs() < a1).collect();
        let shift = inside.iter().map(|&i| phi[i] - avg(i)).sum::<f64>() / inside.len() as f64;
        for &i in &inside {
            assert!((phi[i] - shift - avg(i)).abs() < 1e-10);
        }
        assert!(exact(a1).abs() < 1e-12);
    }

    #[test]
    fn potential_has_zero_mean_and_derivative_matches_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GridSpec::new(0.0, 2.0, 400).unwrap();
        let r0 = random_positive(&mut rng, g);
        let r1 = random_positive(&mut rng, g);
        let phi = kantorovich_potential(&r1, &r0).unwrap();
        assert!(phi.iter().sum::<f64>().abs() * g.dx() < 1e-12);

        // smooth pair: centered differences of the averages track x - T(x)
        let r0 = GridDensity::from_fn(g, |x| 1.0 + 0.5 * (3.0 * x).sin()).unwrap();
        let r1 = GridDensity::from_fn(g, |x| 1.0 + 0.4 * (2.0 * x).cos()).unwrap();
        let phi = kantorovich_potential(&r1, &r0).unwrap();
        let t = monotone_map(&r1, &r0).unwrap();
        let dx = g.dx();
        for i in 1..g.n_cells - 1 {
            let d = (phi[i + 1] - phi[i - 1]) / (2.0 * dx);
            let x = g.center(i);
            assert!((d - (x - t[i])).abs() < 1e-4, "i={i}");
        }
    }

    #[test]
    fn hat_pair_map_matches_closed_form() {
        // rho1 plateau 1 - beta/2 on |x| < beta, hat outside; T(x) = 1 - sqrt(1 - x (2 - beta))
        let beta = 0.5;
        let g = GridSpec::new(-2.0, 2.0, 2048).unwrap();
        let r0 = GridDensity::from_fn(g, |x| (1.0 - x.abs()).max(0.0)).unwrap();
        let r1 = GridDensity::from_fn(g, |x| {
            if x.abs() < beta {
                1.0 - beta / 2.0
            } else {
                (1.0 - x.abs()).max(0.0)
            }
        })
        .unwrap();
        let t = monotone_map(&r1, &r0).unwrap();
        for (x, tx) in g.centers().into_iter().zip(&t) {
            if (0.0..beta).contains(&x) {
                let exact = 1.0 - (1.0 - x * (2.0 - beta)).sqrt();
                assert!((tx - exact).abs() < 2e-5, "T({x}) = {tx} vs {exact}");
            } else if x >= beta && x < 1.0 {
                assert!((tx - x).abs() < 2e-5);
            }
        }
    }
}
