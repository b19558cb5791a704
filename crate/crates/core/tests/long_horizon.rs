//! The underbidding deviation from the single-EV market pays off over short
//! horizons, while its empirical report frequency still sits inside the
//! penalty window. Once the window narrows below the 0.02 bid gap the
//! penalty swamps the gain.

use storemkt_core::config::preset;
use storemkt_core::sim::verify_theorem1;

#[test]
fn underbidding_loses_once_window_closes() {
    let mut config = preset("theorem1").unwrap();
    config.simulation.adversaries.truncate(1);
    let problem = config.problem().unwrap();
    let adversaries = config.adversaries().unwrap();
    let solver = config.solver_config();
    let (j_m, _) = config.j_m(&problem).unwrap();

    let short = config.sim_settings(3, j_m);
    let r = verify_theorem1(&problem, 0, &adversaries, &solver, &short, &[3]).unwrap();
    let a = &r.adversaries[0];
    assert!((a.gain - 0.1).abs() < 1e-9, "short-horizon gain {}", a.gain);
    assert_eq!(a.penalty_count, 0);

    let long = storemkt_core::sim::SimSettings { days: 60_000, ..short };
    let r = verify_theorem1(&problem, 0, &adversaries, &solver, &long, &[3]).unwrap();
    let a = &r.adversaries[0];
    assert!(a.penalty_count > 0);
    assert!(!a.dsic_violation, "gain {} band {}", a.gain, a.band);
    assert!(r.ir.iter().all(|c| c.pass) && r.efficiency.iter().all(|c| c.pass));
}
