//! Recomputes the frozen list-recovery radius constant from held-out instances.

use resil_core::norms::NormSpec;
use resil_core::resilience::{sigma_star, PointSet, SigmaOptions};
use resil_harness::acceptance::{list_instance, LIST_RADIUS_C};

/// 16 max sigma*(alpha / 4) / sigma over seeds the acceptance run never uses, rounded up to 0.5.
/// The good set is generated with sigma = 1.
fn simulate_radius_constant() -> f64 {
    let mut worst: f64 = 0.0;
    for count in [2usize, 4] {
        for seed in 5000..5010u64 {
            let ds = list_instance(count, seed).unwrap();
            let alpha = ds.alpha();
            let s = PointSet::with_center(ds.good_points(), ds.true_center.clone());
            let opts = SigmaOptions::default().with_budget(2000).with_seed(seed);
            let r = sigma_star(&s, alpha / 4.0, &NormSpec::Euclidean, &opts).unwrap();
            worst = worst.max(r.upper);
        }
    }
    (16.0 * worst * 2.0).ceil() / 2.0
}

#[test]
fn frozen_constant_matches_simulation() {
    let c = simulate_radius_constant();
    println!("simulated C = {c}");
    assert_eq!(c, LIST_RADIUS_C);
}
