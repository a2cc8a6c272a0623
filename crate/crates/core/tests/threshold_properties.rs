use flockcp_core::analytics::{
    compute_threshold, gw_extinction, offspring_pmf, simulate_gw, smallest_extinct_n, threshold, OffspringDist,
};
use flockcp_core::model::{site_rates, total_rate};
use flockcp_core::{Configuration, Geometry, ModelParams, Phi, Site};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Straight product with no log-space tricks.
fn naive_m(d: usize, n: u32, lambda: f64, phi: f64) -> f64 {
    let push = 2.0 * d as f64 * lambda;
    let mut m = push;
    for i in 1..n {
        let g = i as f64 * phi + push;
        m *= g / (1.0 + g);
    }
    m
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn m_decreases_in_n(d in 1usize..=4, n in 1u32..200, lambda in 0.01f64..10.0, phi in 0.0f64..10.0) {
        let a = threshold(d, n, lambda, phi).m;
        let b = threshold(d, n + 1, lambda, phi).m;
        prop_assert!(b < a, "m({}) = {} !> m({}) = {}", n, a, n + 1, b);
    }

    #[test]
    fn m_increases_in_lambda(d in 1usize..=4, n in 1u32..200, lambda in 0.01f64..10.0, phi in 0.0f64..10.0, bump in 1.001f64..3.0) {
        prop_assert!(threshold(d, n, lambda * bump, phi).m > threshold(d, n, lambda, phi).m);
    }

    #[test]
    fn m_increases_in_phi(d in 1usize..=4, n in 2u32..200, lambda in 0.01f64..10.0, phi in 0.0f64..10.0, bump in 0.01f64..3.0) {
        prop_assert!(threshold(d, n, lambda, phi + bump).m > threshold(d, n, lambda, phi).m);
    }

    #[test]
    fn log_space_matches_naive_product(d in 1usize..=6, n in 1u32..=1000, lambda in 0.001f64..50.0, phi in 0.0f64..50.0) {
        let r = threshold(d, n, lambda, phi);
        prop_assert!(rel_err(r.m, naive_m(d, n, lambda, phi)) < 1e-10);
        prop_assert!(rel_err(r.m, 2.0 * d as f64 * lambda * r.p_reach) < 1e-15);
    }

    #[test]
    fn pmf_mean_matches_m(d in 1usize..=3, n in 1u32..50, lambda in 0.01f64..3.0, phi in 0.0f64..5.0) {
        let params = ModelParams::sparse(d, n, lambda, phi).unwrap();
        let m = compute_threshold(&params).unwrap().m;
        let dist = offspring_pmf(&params, 4000).unwrap();
        let tabulated: f64 = dist.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        // Tail beyond k_max: p_reach * sum_{k > K} k p^k (1 - p), summed directly.
        let p = dist.p_geo().unwrap();
        let r = dist.p_reach().unwrap();
        let k0 = dist.pmf.len() - 1;
        let mut tail = 0.0;
        let mut pk = p.powi(k0 as i32 + 1);
        for k in (k0 + 1)..(k0 + 200_000) {
            let term = k as f64 * pk * (1.0 - p) * r;
            tail += term;
            if term < 1e-300 {
                break;
            }
            pk *= p;
        }
        prop_assert!((tabulated + tail - m).abs() < 1e-9 * m.max(1.0), "{} + {} vs {}", tabulated, tail, m);
        let total: f64 = dist.pmf.iter().sum::<f64>() + dist.remainder;
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn site_rates_are_bounded(states in prop::collection::vec(0u32..=4, 7), lambda in 0.0f64..5.0, phi in 0.0f64..5.0) {
        let params = ModelParams::new(1, 4, lambda, Phi::Finite(phi), Geometry::Torus { side: 7 }).unwrap();
        let config: Configuration = states.iter().enumerate().map(|(i, &s)| (Site::new(&[i as i32]), s)).collect();
        let mut brute = 0.0;
        for (i, &s) in states.iter().enumerate() {
            let rates = site_rates(&Site::new(&[i as i32]), &config, &params).unwrap();
            prop_assert!(rates.n_full <= 2);
            prop_assert!(rates.birth <= (4.0 - 1.0) * phi + 2.0 * lambda + 1e-12);
            prop_assert_eq!(rates.death, if s > 0 { 1.0 } else { 0.0 });
            // Independent recount of the rate table.
            let left = states[(i + 6) % 7];
            let right = states[(i + 1) % 7];
            let full = (left == 4) as u32 + (right == 4) as u32;
            let birth = if s < 4 { s as f64 * phi + lambda * full as f64 } else { 0.0 };
            prop_assert!((rates.birth - birth).abs() < 1e-12);
            brute += birth + if s > 0 { 1.0 } else { 0.0 };
        }
        prop_assert!((total_rate(&config, &params).unwrap() - brute).abs() < 1e-9);
    }
}

#[test]
fn telescoping_case_for_large_n() {
    for n in [2u32, 10, 1000, 100_000, 1_000_000] {
        let m = threshold(1, n, 1.0, 1.0).m;
        assert!(rel_err(m, 6.0 / (n as f64 + 2.0)) < 1e-9, "N = {n}: {m}");
    }
}

#[test]
fn extinction_is_certain_exactly_when_m_at_most_one() {
    // lambda grid straddling m = 1 for several (N, phi).
    for (n, phi) in [(1u32, 0.0), (2, 0.0), (3, 1.0), (5, 0.5), (8, 2.0)] {
        for step in 0..60 {
            let lambda = 0.05 + 0.05 * step as f64;
            let params = ModelParams::sparse(1, n, lambda, phi).unwrap();
            let m = naive_m(1, n, lambda, phi);
            let q = gw_extinction(&offspring_pmf(&params, 64).unwrap()).extinction_prob;
            if m <= 1.0 - 1e-9 {
                assert_eq!(q, 1.0, "N={n} phi={phi} lambda={lambda} m={m}");
            } else if m >= 1.0 + 1e-9 {
                assert!(q < 1.0, "N={n} phi={phi} lambda={lambda} m={m} q={q}");
            }
        }
    }
}

#[test]
fn supercritical_root_solves_the_pgf() {
    let params = ModelParams::sparse(1, 1, 1.0, 0.0).unwrap();
    let dist = offspring_pmf(&params, 64).unwrap();
    let q = gw_extinction(&dist).extinction_prob;
    // G(s) = 1 - r + r (1 - p) / (1 - p s) written out by hand: r = 1, p = 2/3.
    let g = |s: f64| (1.0 / 3.0) / (1.0 - 2.0 / 3.0 * s);
    assert!((g(q) - q).abs() < 1e-12);
    assert!((q - 0.5).abs() < 1e-12);
}

#[test]
fn generic_solver_agrees_with_closed_form() {
    let params = ModelParams::sparse(2, 3, 0.5, 1.0).unwrap();
    let founder = offspring_pmf(&params, 400).unwrap();
    let generic = OffspringDist::from_pmf(founder.pmf.clone());
    let a = gw_extinction(&founder);
    let b = gw_extinction(&generic);
    assert!(b.iterations > 0);
    assert!((a.extinction_prob - b.extinction_prob).abs() < 1e-9);
}

#[test]
fn gw_simulation_matches_extinction_probability() {
    let params = ModelParams::sparse(1, 1, 1.0, 0.0).unwrap();
    let dist = offspring_pmf(&params, 64).unwrap();
    let q = gw_extinction(&dist).extinction_prob;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let runs = 100_000;
    let extinct = (0..runs).filter(|_| simulate_gw(&dist, 500, 500, &mut rng).extinct).count();
    let freq = extinct as f64 / runs as f64;
    assert!((freq - q).abs() < 0.01, "{freq} vs {q}");
}

#[test]
fn subcritical_gw_simulation_dies() {
    let params = ModelParams::sparse(1, 1, 0.4, 0.0).unwrap();
    let dist = offspring_pmf(&params, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let extinct = (0..10_000).filter(|_| simulate_gw(&dist, 2000, 10_000, &mut rng).extinct).count();
    assert!(extinct >= 9_900, "{extinct}");
}

#[test]
fn schedules_below_the_growth_limit_reach_extinction() {
    // lambda(N) = c N^a with a < 1 / (1 + phi): m(N) eventually drops below 1.
    let phi = 1.0;
    let found = smallest_extinct_n(1, phi, |n| 0.8 * (n as f64).powf(0.3), 1_000_000);
    let n = found.expect("finite critical size");
    assert!(naive_m(1, n, 0.8 * (n as f64).powf(0.3), phi) <= 1.0 + 1e-9);
    assert!(naive_m(1, n - 1, 0.8 * ((n - 1) as f64).powf(0.3), phi) > 1.0);
}

#[test]
fn critical_growth_schedule_has_a_finite_limit() {
    // lambda(N) = c N^{1/(1+phi)}: m(N) settles.
    let phi = 1.0;
    let c = 0.7;
    let m_at = |n: u32| threshold(1, n, c * (n as f64).powf(1.0 / (1.0 + phi)), phi).m;
    let (a, b, e) = (m_at(10_000), m_at(100_000), m_at(1_000_000));
    assert!(a.is_finite() && b.is_finite() && e.is_finite());
    assert!((e - b).abs() < (b - a).abs() + 1e-6, "{a} {b} {e}");
    assert!((e - b).abs() / e < 0.05);
}
