use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tvjko::oracle::{prox_qp, random_prox_problem};
use tvjko::prox::{tv_prox, ProxProblem};

fn problem() -> impl Strategy<Value = ProxProblem> {
    (1usize..24, 0.001f64..3.0, any::<bool>(), any::<bool>()).prop_flat_map(|(n, lambda, weighted, fidelity)| {
        let y = prop::collection::vec(-3.0f64..3.0, n);
        let w = prop::collection::vec(0.2f64..3.0, n.saturating_sub(1));
        let f = prop::collection::vec(0.2f64..3.0, n);
        (y, w, f).prop_map(move |(y, w, f)| {
            let mut p = ProxProblem::new(y, lambda);
            if weighted {
                p = p.with_weights(w);
            }
            if fidelity {
                p = p.with_fidelity(f);
            }
            p
        })
    })
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn output_stays_within_the_input_range(p in problem()) {
        let u = tv_prox(&p).unwrap();
        let lo = p.input.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.input.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(u.iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
    }

    #[test]
    fn unweighted_prox_is_nonexpansive(
        pair in (1usize..24).prop_flat_map(|n| (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
        )),
        lambda in 0.001f64..3.0,
    ) {
        let (a, b) = pair;
        let ua = tv_prox(&ProxProblem::new(a.clone(), lambda)).unwrap();
        let ub = tv_prox(&ProxProblem::new(b.clone(), lambda)).unwrap();
        let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!(d(&ua, &ub) <= d(&a, &b) + 1e-12);
    }

    #[test]
    fn perturbations_do_not_decrease_the_objective(p in problem(), seed in any::<u64>()) {
        use rand::Rng;
        let u = tv_prox(&p).unwrap();
        let best = p.objective(&u);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let v: Vec<f64> = u.iter().map(|x| x + 1e-4 * rng.gen_range(-1.0..1.0)).collect();
            prop_assert!(p.objective(&v) >= best - 1e-12 * (1.0 + best.abs()));
        }
    }

    #[test]
    fn large_weight_returns_the_weighted_mean(y in prop::collection::vec(-3.0f64..3.0, 1..24)) {
        let u = tv_prox(&ProxProblem::new(y.clone(), 1e3)).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        prop_assert!(u.iter().all(|x| (x - mean).abs() < 1e-9));
    }
}

#[test]
fn exact_prox_matches_the_dual_qp_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = random_prox_problem(&mut rng);
        let exact = tv_prox(&p).unwrap();
        let qp = prox_qp(&p).unwrap();
        worst = worst.max(linf(&exact, &qp));
    }
    assert!(worst <= 1e-8, "max deviation {worst:e}");
}

#[test]
fn unit_step_shrinks_towards_the_mean() {
    // step 0,...,0,1,...,1 of length 2m with small lambda: both halves move
    // by lambda / m, from the QP oracle
    for m in [2usize, 5, 8] {
        let y: Vec<f64> = (0..2 * m).map(|i| if i < m { 0.0 } else { 1.0 }).collect();
        let lambda = 0.1;
        let p = ProxProblem::new(y, lambda);
        let u = tv_prox(&p).unwrap();
        let qp = prox_qp(&p).unwrap();
        let c = lambda / m as f64;
        assert!(linf(&u, &qp) < 1e-10);
        assert!(u[..m].iter().all(|x| (x - c).abs() < 1e-12));
        assert!(u[m..].iter().all(|x| (x - (1.0 - c)).abs() < 1e-12));
    }
}
