use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use storemkt_core::config::random_pmf;
use storemkt_core::dispatch::{beta_bar, build_grid, evaluate_grid, q_star, q_star_minus, solve_outer, SolverConfig};
use storemkt_core::experiments::random_small;
use storemkt_core::mdp::EvSpec;
use storemkt_core::mechanism::day_ahead_payment;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outer_optimum_is_grid_minimum(seed in any::<u64>()) {
        let problem = random_small(&mut ChaCha8Rng::seed_from_u64(seed));
        let config = SolverConfig::default();
        let solved = solve_outer(&problem, &config).unwrap();
        let all = evaluate_grid(&problem, &build_grid(&problem, &config).unwrap()).unwrap();
        let min = all.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(solved.q_star.is_finite());
        prop_assert!((solved.q_star - min).abs() <= 1e-9);
        prop_assert!((beta_bar(&problem, &solved.g_star).unwrap() - solved.q_star).abs() <= 1e-9);
    }

    #[test]
    fn extra_ev_never_raises_cost(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = random_small(&mut rng);
        let mut bigger = problem.clone();
        bigger.evs.push(EvSpec::binary(10.0));
        bigger.params.push(random_pmf(&mut rng, problem.horizon(), 0.0));
        let config = SolverConfig::default();
        prop_assert!(q_star(&bigger, &config).unwrap() <= q_star(&problem, &config).unwrap() + 1e-9);
    }

    #[test]
    fn vcg_identity_holds(seed in any::<u64>()) {
        let problem = random_small(&mut ChaCha8Rng::seed_from_u64(seed));
        let config = SolverConfig::default();
        let solved = solve_outer(&problem, &config).unwrap();
        for i in 0..problem.evs.len() {
            let minus = q_star_minus(&problem, i, &config).unwrap();
            let p = day_ahead_payment(&problem, i, &solved, minus).unwrap();
            let lhs = p.p_da + problem.ev_energy_value * p.expected_charge + solved.q_star;
            prop_assert!((lhs - minus).abs() <= 1e-9, "EV {}: {} vs {}", i, lhs, minus);
        }
    }
}
