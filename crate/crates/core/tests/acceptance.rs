//! Acceptance gate: twelve criteria, each printed as one PASS/FAIL line.
//! Criteria run on separate threads; each criterion is itself
//! single-threaded and reports its own wall time.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tvjko::analytic::{hat_beta_of_tau, AnalyticKind, AnalyticPair, UniformEvolution};
use tvjko::certificate::DualCertificate;
use tvjko::flow::{builtin_family, run_flow, step_count, weak_solution_residual, FlowTrajectory};
use tvjko::grid::{GridDensity, GridSpec};
use tvjko::jko::{entropic_step_family, jko_step, JkoConfig};
use tvjko::oracle::{run_oracles, OracleReport, OracleTolerances};
use tvjko::properties::{epsilon_grid, random_blocks, TAUS};
use tvjko::radial::{radial_jko_step, radial_min_principle_check, RadialDensity};

const Z_SLACK: f64 = 1e-4;
const COMPLEMENTARITY: f64 = 1e-6;
const EL_RESIDUAL: f64 = 1e-6;
const JUMP_ALIGNMENT: f64 = 1e-3;

struct Verdict {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    limit: Option<Duration>,
}

/// Certificates of converged solves, gathered for the certificate criterion.
type Certs = Vec<(String, DualCertificate)>;

struct Outcome {
    verdicts: Vec<Verdict>,
    certs: Certs,
}

fn verdict(id: usize, name: &'static str, passed: bool, detail: String, start: Instant, limit: Option<u64>) -> Verdict {
    let elapsed = start.elapsed();
    let limit = limit.map(Duration::from_secs);
    Verdict {
        id,
        name,
        passed: passed && limit.is_none_or(|l| elapsed <= l),
        detail,
        elapsed,
        limit,
    }
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Half-width of the support, from its outer edges.
fn half_width(rho: &GridDensity) -> f64 {
    let (a, b) = rho.support().expect("nonempty support");
    0.5 * (rho.grid().edge(b + 1) - rho.grid().edge(a))
}

fn flow_certs(label: &str, traj: &FlowTrajectory, certs: &mut Certs) {
    for (k, (c, s)) in traj.certificates.iter().zip(&traj.steps).enumerate() {
        if s.converged {
            certs.push((format!("{label} step {k}"), c.clone()));
        }
    }
}

fn uniform_step() -> Outcome {
    let start = Instant::now();
    let tau = 1.0 / 3.0;
    let grid = GridSpec::new(-4.0, 4.0, 1024).unwrap();
    let pair = AnalyticPair::new(AnalyticKind::Uniform { alpha0: 1.0, tau }).unwrap();
    let (rho0, _) = pair.densities(grid).unwrap();
    let r = jko_step(&rho0, &JkoConfig::new(tau)).unwrap();
    let l1 = pair.l1_error(&r.rho1);
    let tol = 3.0 * grid.dx();
    let alpha_ok = (pair.alpha1 - 1.46557).abs() < 1e-5;
    let mut certs = Vec::new();
    if r.converged {
        certs.push(("uniform step".into(), r.certificate.clone()));
    }
    Outcome {
        verdicts: vec![verdict(
            1,
            "uniform-density step",
            r.converged && alpha_ok && l1 <= tol,
            format!("alpha1 {:.6}, L1 {l1:.3e} <= {tol:.3e}, converged {}", pair.alpha1, r.converged),
            start,
            Some(30),
        )],
        certs,
    }
}

fn uniform_flow(tau: f64, n: usize) -> FlowTrajectory {
    let grid = GridSpec::new(-4.0, 4.0, n).unwrap();
    let rho0 = GridDensity::from_fn(grid, |x| if x.abs() < 1.0 { 0.5 } else { 0.0 }).unwrap();
    run_flow(&rho0, tau, 1.0, &JkoConfig::default()).unwrap()
}

/// Criteria 2 and 11 share the finest uniform flow.
fn uniform_flows() -> Outcome {
    let start = Instant::now();
    let mut certs = Vec::new();
    let (fine, coarse) = std::thread::scope(|s| {
        let coarse: Vec<_> = [4e-2, 2e-2]
            .into_iter()
            .map(|tau| s.spawn(move || uniform_flow(tau, 2048)))
            .collect();
        let fine = uniform_flow(1e-2, 2048);
        let fine_time = start.elapsed();
        let coarse: Vec<_> = coarse.into_iter().map(|h| h.join().unwrap()).collect();
        ((fine, fine_time), coarse)
    });
    let (fine, fine_time) = fine;
    flow_certs("uniform flow tau 1e-2", &fine, &mut certs);
    for t in &coarse {
        flow_certs(&format!("uniform flow tau {:e}", t.tau), t, &mut certs);
    }

    let dx = fine.densities[0].grid().dx();
    let steps = step_count(1.0, 1e-2).unwrap();
    let alphas = UniformEvolution::new(1.0, 1e-2, steps).unwrap().alphas;
    let track = fine
        .densities
        .iter()
        .zip(&alphas)
        .map(|(d, a)| (half_width(d) - a).abs())
        .fold(0.0, f64::max);
    let terminal = half_width(fine.densities.last().unwrap());
    let target = 10f64.cbrt();
    let complete = fine.completed() && fine.densities.len() == steps + 1;
    let c2 = Verdict {
        id: 2,
        name: "uniform-density flow",
        passed: complete && (terminal - target).abs() <= 0.02 && track <= 2.0 * dx && fine_time <= Duration::from_secs(600),
        detail: format!(
            "terminal half-width {terminal:.5} vs {target:.5}, max per-step deviation {track:.3e} <= {:.3e}",
            2.0 * dx
        ),
        elapsed: fine_time,
        limit: Some(Duration::from_secs(600)),
    };

    let family = builtin_family(1.0, -4.0, 4.0);
    let mut residuals: Vec<f64> = coarse
        .iter()
        .map(|t| weak_solution_residual(t, &family).unwrap())
        .collect();
    residuals.push(weak_solution_residual(&fine, &family).unwrap());
    let ratios: Vec<f64> = residuals.windows(2).map(|w| w[0] / w[1]).collect();
    let all_complete = complete && coarse.iter().all(|t| t.completed());
    let c11 = verdict(
        11,
        "weak-residual tau scaling",
        all_complete && ratios.iter().all(|r| (1.5..=2.5).contains(r)),
        format!("residuals {}, ratios {ratios:.3?}", sci(&residuals)),
        start,
        None,
    );
    Outcome {
        verdicts: vec![c2, c11],
        certs,
    }
}

fn hat_step() -> Outcome {
    let start = Instant::now();
    let tau = 1.0 / 270.0;
    let beta = hat_beta_of_tau(tau).unwrap();
    let grid = GridSpec::new(-2.0, 2.0, 2048).unwrap();
    let dx = grid.dx();
    let pair = AnalyticPair::new(AnalyticKind::HatStep { beta }).unwrap();
    let (rho0, _) = pair.densities(grid).unwrap();
    let r = jko_step(&rho0, &JkoConfig::new(tau)).unwrap();
    let v = r.rho1.values();
    let n = v.len();
    let drop = |i: usize| (v[i - 1] - v[i]).abs();
    let left = (1..n / 2).max_by(|&a, &b| drop(a).total_cmp(&drop(b))).unwrap();
    let right = (n / 2..n).max_by(|&a, &b| drop(a).total_cmp(&drop(b))).unwrap();
    let (xl, xr) = (grid.edge(left), grid.edge(right));
    let inner = (0..n).filter(|&i| grid.center(i).abs() <= 0.5 - 2.0 * dx);
    let plateau_dev = inner.map(|i| (v[i] - 0.75).abs() / 0.75).fold(0.0, f64::max);
    let z = r.certificate.z_values[right].max(-r.certificate.z_values[left]);
    let z_dev = (r.certificate.z_values[right] - 1.0)
        .abs()
        .max((r.certificate.z_values[left] + 1.0).abs());
    let passed = r.converged
        && plateau_dev <= 0.02
        && (xl + 0.5).abs() <= 2.0 * dx
        && (xr - 0.5).abs() <= 2.0 * dx
        && z_dev <= 1e-2;
    let mut certs = Vec::new();
    if r.converged {
        certs.push(("hat step".into(), r.certificate.clone()));
    }
    Outcome {
        verdicts: vec![verdict(
            3,
            "discontinuity creation",
            passed,
            format!(
                "beta {beta:.6}, plateau deviation {plateau_dev:.3e}, jumps at {xl:.5} and {xr:.5}, |z| at jump {z:.7}"
            ),
            start,
            Some(60),
        )],
        certs,
    }
}

fn oracle_line(r: &OracleReport) -> String {
    format!("{} {:.2e} <= {:.0e} over {}", r.oracle, r.max_deviation, r.tolerance, r.instances)
}

fn oracles() -> Outcome {
    let start = Instant::now();
    let reports = run_oracles(0, &OracleTolerances::default()).unwrap();
    let find = |name: &str| reports.iter().find(|r| r.oracle == name).unwrap();
    let (quad, assign) = (find("w2_quadrature"), find("w2_assignment"));
    let (prox, grad) = (find("tv_prox_qp"), find("w2_gradient"));
    Outcome {
        verdicts: vec![
            verdict(
                4,
                "transport oracle",
                quad.passed && assign.passed,
                format!("{}; {}", oracle_line(quad), oracle_line(assign)),
                start,
                Some(60),
            ),
            verdict(5, "TV-prox oracle", prox.passed, oracle_line(prox), start, None),
            verdict(6, "gradient check", grad.passed, oracle_line(grad), start, None),
        ],
        certs: Vec::new(),
    }
}

fn grid_1d() -> GridSpec {
    GridSpec::new(-2.0, 2.0, 256).unwrap()
}

fn max_principle() -> Outcome {
    let start = Instant::now();
    let mut certs = Vec::new();
    let mut worst = f64::INFINITY;
    let mut unconverged = 0;
    let mut cases = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let rho0 = random_blocks(&mut rng, grid_1d(), true);
        let eps = epsilon_grid(1e-6, rho0.max(), grid_1d().dx());
        for tau in TAUS {
            for h in [0.0, 1e-2] {
                let r = jko_step(&rho0, &JkoConfig::new(tau).with_entropy(h)).unwrap();
                cases += 1;
                worst = worst.min(rho0.max() + eps - r.rho1.max());
                if r.converged {
                    certs.push((format!("max principle seed {seed} tau {tau:e} h {h:e}"), r.certificate));
                } else {
                    unconverged += 1;
                }
            }
        }
    }
    Outcome {
        verdicts: vec![verdict(
            7,
            "maximum principle",
            worst >= 0.0 && unconverged == 0,
            format!("{cases} steps, worst margin {worst:.3e}, unconverged {unconverged}"),
            start,
            None,
        )],
        certs,
    }
}

fn min_principle() -> Outcome {
    let start = Instant::now();
    let mut certs = Vec::new();
    let mut worst_1d = f64::INFINITY;
    let mut worst_radial = f64::INFINITY;
    let mut unconverged = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let rho0 = random_blocks(&mut rng, grid_1d(), true);
        let eps = epsilon_grid(1e-6, rho0.max(), grid_1d().dx());
        for tau in TAUS {
            let r = jko_step(&rho0, &JkoConfig::new(tau)).unwrap();
            worst_1d = worst_1d.min(r.rho1.min() - (rho0.min() - eps));
            if r.converged {
                certs.push((format!("min principle seed {seed} tau {tau:e}"), r.certificate));
            } else {
                unconverged += 1;
            }
        }
    }
    let rgrid = GridSpec::new(0.0, 1.0, 128).unwrap();
    for d in [2usize, 3] {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + 10 * d as u64 + seed);
            let base = random_blocks(&mut rng, rgrid, true);
            let rho0 = RadialDensity::normalized(d, 1.0, base.values().to_vec()).unwrap();
            for tau in TAUS {
                let (r, diag) = radial_jko_step(&rho0, &JkoConfig::new(tau)).unwrap();
                let rep = radial_min_principle_check(&rho0, &r, rho0.min(), 1e-6);
                worst_radial = worst_radial.min(rep.margin);
                if diag.converged {
                    certs.push((format!("radial d{d} seed {seed} tau {tau:e}"), diag.certificate));
                } else {
                    unconverged += 1;
                }
            }
        }
    }
    Outcome {
        verdicts: vec![verdict(
            8,
            "minimum principle, 1D and radial",
            worst_1d >= 0.0 && worst_radial >= 0.0 && unconverged == 0,
            format!("worst margin 1D {worst_1d:.3e}, radial {worst_radial:.3e}, unconverged {unconverged}"),
            start,
            None,
        )],
        certs,
    }
}

fn energy_estimate() -> Outcome {
    let start = Instant::now();
    let mut certs = Vec::new();
    let mut worst_dissipation = f64::INFINITY;
    let mut worst_sup = f64::INFINITY;
    let mut complete = true;
    let tau = 1e-2;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let rho0 = random_blocks(&mut rng, grid_1d(), true);
        let traj = run_flow(&rho0, tau, 0.2, &JkoConfig::default()).unwrap();
        complete &= traj.completed();
        flow_certs(&format!("random flow {seed}"), &traj, &mut certs);
        let j0 = rho0.total_variation();
        let sup = traj.densities.iter().map(|d| d.total_variation()).fold(0.0, f64::max);
        worst_dissipation = worst_dissipation.min(j0 - traj.sum_w2sq / (2.0 * tau));
        worst_sup = worst_sup.min(j0 - sup);
    }
    Outcome {
        verdicts: vec![verdict(
            10,
            "flow energy estimate",
            complete && worst_dissipation >= 0.0 && worst_sup >= 0.0,
            format!("min J0 - dissipation {worst_dissipation:.3e}, min J0 - sup J {worst_sup:.3e}"),
            start,
            None,
        )],
        certs,
    }
}

fn entropic_family() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1200);
    let rho0 = random_blocks(&mut rng, grid_1d(), true);
    let tau = 1e-2;
    let plain = jko_step(&rho0, &JkoConfig::new(tau)).unwrap();
    let hs = [1e-1, 1e-2, 1e-3];
    let family = entropic_step_family(&rho0, tau, &hs, &JkoConfig::default()).unwrap();
    let gaps: Vec<f64> = family
        .iter()
        .map(|s| s.result.rho1.l1_distance(&plain.rho1).unwrap())
        .collect();
    // z solves the relation exactly on positive densities, so the defect
    // shows up in the other terms of the gap
    let residuals: Vec<f64> = family.iter().map(|s| s.result.certificate.optimality_gap()).collect();
    let min_logs: Vec<f64> = family.iter().map(|s| s.min_h_log_rho).collect();
    let converged = plain.converged && family.iter().all(|s| s.result.converged);
    let mut certs = Vec::new();
    for s in &family {
        if s.result.converged {
            certs.push((format!("entropic h {:e}", s.h), s.result.certificate.clone()));
        }
    }
    Outcome {
        verdicts: vec![verdict(
            12,
            "entropic family",
            converged
                && gaps.windows(2).all(|w| w[1] < w[0])
                && residuals.iter().all(|r| *r <= EL_RESIDUAL)
                && min_logs.iter().all(|m| m.is_finite()),
            format!("L1 gaps {}, residuals {}, min h log rho {min_logs:.4?}", sci(&gaps), sci(&residuals)),
            start,
            None,
        )],
        certs,
    }
}

fn certificate_suite(certs: &Certs, start: Instant) -> Verdict {
    let mut worst = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut offenders = Vec::new();
    for (label, c) in certs {
        worst.0 = worst.0.max(c.max_abs_z);
        worst.1 = worst.1.max(c.complementarity);
        worst.2 = worst.2.max(c.residual_el);
        worst.3 = worst.3.max(c.jump_alignment);
        if c.max_abs_z > 1.0 + Z_SLACK
            || c.complementarity > COMPLEMENTARITY
            || c.residual_el > EL_RESIDUAL
            || c.jump_alignment > JUMP_ALIGNMENT
        {
            offenders.push(label.as_str());
        }
    }
    verdict(
        9,
        "certificate suite",
        offenders.is_empty() && !certs.is_empty(),
        format!(
            "{} solves, max |z| {:.7}, complementarity {:.2e}, residual {:.2e}, jump alignment {:.2e}{}",
            certs.len(),
            worst.0,
            worst.1,
            worst.2,
            worst.3,
            if offenders.is_empty() { String::new() } else { format!(", failing: {offenders:?}") }
        ),
        start,
        None,
    )
}

#[test]
fn acceptance_criteria() {
    let start = Instant::now();
    let jobs: [fn() -> Outcome; 8] = [
        uniform_step,
        uniform_flows,
        hat_step,
        oracles,
        max_principle,
        min_principle,
        energy_estimate,
        entropic_family,
    ];
    let outcomes: Vec<Outcome> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs.iter().map(|job| s.spawn(job)).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut verdicts = Vec::new();
    let mut certs = Vec::new();
    for o in outcomes {
        verdicts.extend(o.verdicts);
        certs.extend(o.certs);
    }
    verdicts.push(certificate_suite(&certs, Instant::now()));
    verdicts.sort_by_key(|v| v.id);
    for v in &verdicts {
        let limit = v.limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
        println!(
            "criterion {:>2} {} {}: {} [{:.2}s{limit}]",
            v.id,
            if v.passed { "PASS" } else { "FAIL" },
            v.name,
            v.detail,
            v.elapsed.as_secs_f64()
        );
    }
    println!("total wall time {:.1}s", start.elapsed().as_secs_f64());
    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
