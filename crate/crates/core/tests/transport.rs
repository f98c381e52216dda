use proptest::prelude::*;
use tvjko::grid::{total_variation, GridDensity, GridSpec};
use tvjko::oracle::{assignment_w2, quadrature_w2, random_atomic_density};
use tvjko::transport::{kantorovich_potential, monotone_map, w2_squared, TransportData};

/// Cell values in `[0, 2)`, some exactly zero, with at least one positive.
fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.05f64..2.0], n)
        .prop_filter("positive mass", |v| v.iter().any(|&x| x > 0.0))
}

fn density(grid: GridSpec) -> impl Strategy<Value = GridDensity> {
    values(grid.n_cells).prop_map(move |v| GridDensity::normalized(grid, v).unwrap())
}

fn triple() -> impl Strategy<Value = (GridDensity, GridDensity, GridDensity)> {
    (3usize..40, -2.0f64..0.0, 0.5f64..4.0).prop_flat_map(|(n, left, width)| {
        let g = GridSpec::new(left, left + width, n).unwrap();
        (density(g), density(g), density(g))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cost_is_symmetric_and_vanishes_on_the_diagonal((a, b, _) in triple()) {
        let ab = w2_squared(&a, &b).unwrap();
        let ba = w2_squared(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        prop_assert!(ab >= 0.0);
        prop_assert!(w2_squared(&a, &a).unwrap() <= 1e-13);
    }

    #[test]
    fn distance_satisfies_the_triangle_inequality((a, b, c) in triple()) {
        let d = |x: &GridDensity, y: &GridDensity| w2_squared(x, y).unwrap().sqrt();
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn map_is_nondecreasing_and_stays_in_the_domain((a, b, _) in triple()) {
        let t = monotone_map(&a, &b).unwrap();
        let g = a.grid();
        prop_assert!(t.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        prop_assert!(t.iter().all(|&x| x >= g.left - 1e-12 && x <= g.right + 1e-12));
    }

    #[test]
    fn map_onto_itself_is_the_identity_on_the_support((a, _, _) in triple()) {
        let t = monotone_map(&a, &a).unwrap();
        for (i, x) in a.grid().centers().iter().enumerate() {
            if a.values()[i] > 0.0 {
                prop_assert!((t[i] - x).abs() < 1e-9, "cell {i}: {} vs {x}", t[i]);
            }
        }
    }

    #[test]
    fn potential_has_zero_mean((a, b, _) in triple()) {
        let phi = kantorovich_potential(&a, &b).unwrap();
        let scale = phi.iter().fold(1.0f64, |m, p| m.max(p.abs()));
        prop_assert!(phi.iter().sum::<f64>().abs() / phi.len() as f64 <= 1e-12 * scale);
        let data = TransportData::between(&a, &b).unwrap();
        prop_assert_eq!(&data.potential, &phi);
        prop_assert!((data.w2_squared - w2_squared(&a, &b).unwrap()).abs() <= 1e-14);
    }

    #[test]
    fn cdf_and_quantile_form_a_galois_pair((a, _, _) in triple(), s in 0.0f64..=1.0, x in -3.0f64..5.0) {
        let f = a.cdf();
        let q = f.quantile(s).unwrap();
        // F(x) >= s  iff  x >= F^{-1}(s), up to roundoff at the boundary
        if f.eval(x) >= s + 1e-12 {
            prop_assert!(x >= q - 1e-9);
        }
        if x >= q + 1e-9 {
            prop_assert!(f.eval(x) >= s - 1e-12);
        }
        prop_assert!((f.eval(q) - s).abs() <= 1e-12 || s == 0.0);
    }

    #[test]
    fn normalization_is_pinned((a, _, _) in triple()) {
        prop_assert!((a.mass() - 1.0).abs() <= 1e-12);
        let f = a.cdf();
        prop_assert_eq!(f.knots()[0], 0.0);
        prop_assert!((f.knots()[a.len()] - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn total_variation_is_a_seminorm(
        u in prop::collection::vec(-3.0f64..3.0, 2..30),
        shift in -5.0f64..5.0,
        scale in -4.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let n = u.len();
        let v: Vec<f64> = (0..n).map(|i| ((seed >> (i % 60)) & 7) as f64 - 3.5).collect();
        let tv_u = total_variation(&u);
        let shifted: Vec<f64> = u.iter().map(|x| x + shift).collect();
        prop_assert!((total_variation(&shifted) - tv_u).abs() <= 1e-12 * (1.0 + tv_u));
        let scaled: Vec<f64> = u.iter().map(|x| scale * x).collect();
        prop_assert!((total_variation(&scaled) - scale.abs() * tv_u).abs() <= 1e-12 * (1.0 + tv_u));
        let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        prop_assert!(total_variation(&sum) <= tv_u + total_variation(&v) + 1e-12);
    }

    #[test]
    fn clipping_does_not_increase_total_variation(
        u in prop::collection::vec(-3.0f64..3.0, 2..30),
        lo in -3.0f64..0.0,
        width in 0.0f64..3.0,
    ) {
        let clipped: Vec<f64> = u.iter().map(|x| x.clamp(lo, lo + width)).collect();
        prop_assert!(total_variation(&clipped) <= total_variation(&u) + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn exact_cost_agrees_with_quadrature((a, b, _) in triple()) {
        let exact = w2_squared(&a, &b).unwrap();
        let quad = quadrature_w2(&a, &b, 200_000);
        prop_assert!((exact - quad).abs() <= 1e-4 * exact.max(1e-3));
    }

    #[test]
    fn exact_cost_agrees_with_assignment(seed in any::<u64>(), n in 3usize..20, atoms in 4usize..40) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = GridSpec::new(0.0, 1.0, n).unwrap();
        let a = random_atomic_density(&mut rng, g, atoms);
        let b = random_atomic_density(&mut rng, g, atoms);
        let exact = w2_squared(&a, &b).unwrap();
        let lp = assignment_w2(&a, &b, atoms).unwrap();
        prop_assert!((exact - lp).abs() <= 1e-8 * exact.max(1e-12));
    }
}

#[test]
fn translated_block_costs_the_squared_shift() {
    // values frozen from the independent quadrature oracle at 10^6 samples
    let g = GridSpec::new(0.0, 4.0, 16).unwrap();
    let a = GridDensity::from_fn(g, |x| if x < 1.0 { 1.0 } else { 0.0 }).unwrap();
    let b = GridDensity::from_fn(g, |x| if (2.5..3.5).contains(&x) { 1.0 } else { 0.0 }).unwrap();
    assert!((w2_squared(&a, &b).unwrap() - 6.25).abs() < 1e-12);
    let quad = quadrature_w2(&a, &b, 1_000_000);
    assert!((quad - 6.25).abs() < 1e-9);
}
