//! Physical sanity of the lattice Boltzmann solver.

use pistm_lbm::validation::{
    empirical_strouhal, measure_shedding, periodic_mass_drift, perturbed_periodic, poiseuille_error,
};
use pistm_lbm::{run, SimulationConfig};

#[test]
fn periodic_mass_is_conserved() {
    let one = periodic_mass_drift(32, 48, 0.6, 1).unwrap();
    assert!(one < 1e-12);
    let drift = periodic_mass_drift(32, 48, 0.6, 1000).unwrap();
    assert!(drift < 1e-10, "relative mass drift {drift:e}");
}

#[test]
fn bounce_back_has_zero_net_flux() {
    // Closed periodic box with a disk: fluid mass may only change through the
    // obstacle boundary, so it must be constant step by step.
    let cfg = SimulationConfig::cylinder(32, 32, 100.0);
    let mut s = perturbed_periodic(32, 32, 0.6)
        .unwrap()
        .with_solid(cfg.obstacle_mask())
        .unwrap();
    let mut prev = s.total_mass();
    for _ in 0..200 {
        s.step().unwrap();
        let m = s.total_mass();
        assert!(((m - prev) / prev).abs() < 1e-13);
        prev = m;
    }
}

#[test]
fn poiseuille_profile() {
    let rel = poiseuille_error(34, 0.8, 1e-6, 30_000).unwrap();
    assert!(rel < 0.02, "Poiseuille relative L2 error {rel:e}");
}

#[test]
fn cylinder_sheds_at_the_expected_strouhal_number() {
    let s = measure_shedding(64, 150.0, 256).unwrap();
    assert!(s.peak_to_median >= 5.0, "{s:?}");
    assert!((0.1..=0.3).contains(&s.strouhal), "{s:?}");
    assert!((s.strouhal - empirical_strouhal(150.0)).abs() < 0.06, "{s:?}");
}

fn steady_config(warmup: usize) -> SimulationConfig {
    let mut c = SimulationConfig::cylinder(64, 64, 20.0);
    c.warmup_steps = warmup;
    c.snapshots = 20;
    c
}

#[test]
fn low_reynolds_wake_becomes_steady() {
    let seq = run(&steady_config(8000)).unwrap();
    let n = seq.len();
    for i in n - 10..n {
        let a = seq.frame(i);
        let b = seq.frame(i - 1);
        let change = a.sub(&b).unwrap().frobenius_norm() / b.frobenius_norm();
        assert!(change < 1e-4, "snapshot {i}: change {change:e}");
    }
    // Doubling the warmup lands on the same fixed point.
    let longer = run(&steady_config(16000)).unwrap();
    let diff = seq
        .frame(n - 1)
        .sub(&longer.frame(n - 1))
        .unwrap()
        .max_abs();
    assert!(diff < 1e-6, "late-time difference {diff:e}");
}

#[test]
fn runs_are_deterministic_and_non_negative() {
    let mut c = SimulationConfig::cylinder(32, 32, 120.0);
    c.warmup_steps = 300;
    c.snapshots = 5;
    c.seed = 11;
    let a = run(&c).unwrap();
    let b = run(&c).unwrap();
    assert_eq!(a.tensor().data(), b.tensor().data());
    assert!(a.tensor().data().iter().all(|&v| v >= 0.0));
    assert_eq!(a.t_start(), c.t_start);
    c.seed = 12;
    let other = run(&c).unwrap();
    assert_ne!(a.tensor().data(), other.tensor().data());
}
