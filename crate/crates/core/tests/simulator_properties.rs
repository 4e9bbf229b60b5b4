use proptest::prelude::*;
use storage_reliability::sim::{simulate_replication, Horizon};
use storage_reliability::{simulate, ShockDistribution, SimConfig, SimPolicy, StageCost, SystemParams};

fn config(s_bar: f64, policy: SimPolicy, seed: u64) -> SimConfig {
    let params = SystemParams::new(0.1, 1.0, 0.8, s_bar, ShockDistribution::uniform(0.0, 1.0).unwrap()).unwrap();
    SimConfig::new(params, StageCost::quadratic(), policy, s_bar, seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn replication_is_reproducible_and_blackouts_feasible(seed in any::<u64>(), rep in 0u64..1000, s_bar in 0.0..3.0f64) {
        let mut cfg = config(s_bar, SimPolicy::Myopic, seed);
        cfg.burn_in = 0.0;
        cfg.horizon = Horizon::Time(50.0);
        let a = simulate_replication(&cfg, rep);
        prop_assert_eq!(&a, &simulate_replication(&cfg, rep));
        prop_assert_eq!(a.blackouts.len(), a.n_events);
        for &x in &a.blackouts {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        // Pre-shock storage never leaves [0, s̄].
        prop_assert!(a.storage_sum >= 0.0 && a.storage_sum <= s_bar * a.n_events as f64 + 1e-9);
    }
}

#[test]
fn stderr_shrinks_like_root_n() {
    let mut cfg = config(1.0, SimPolicy::Myopic, 5);
    cfg.replications = 4000;
    let a = simulate(&cfg).unwrap();
    cfg.replications = 16000;
    let b = simulate(&cfg).unwrap();
    let ratio = a.stderr / b.stderr;
    assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn parallel_aggregation_matches_sequential_replications() {
    let mut cfg = config(1.0, SimPolicy::Myopic, 9);
    cfg.replications = 64;
    let res = simulate(&cfg).unwrap();
    for (k, out) in res.replications.iter().enumerate() {
        assert_eq!(out, &simulate_replication(&cfg, k as u64));
    }
}

#[test]
fn storage_never_exceeds_capacity_with_fast_recharge() {
    let params = SystemParams::new(0.1, 50.0, 0.8, 0.5, ShockDistribution::uniform(0.0, 1.0).unwrap()).unwrap();
    let mut cfg = SimConfig::new(params, StageCost::quadratic(), SimPolicy::Zero, 0.0, 1);
    cfg.burn_in = 0.0;
    cfg.horizon = Horizon::Time(100.0);
    let r = simulate_replication(&cfg, 0);
    // Recharge is saturated at every arrival after the first few.
    assert!(r.storage_sum <= 0.5 * r.n_events as f64 + 1e-12);
    assert!(r.storage_sum >= 0.5 * (r.n_events as f64 - 3.0));
}
