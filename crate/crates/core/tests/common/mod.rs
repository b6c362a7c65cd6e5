#![allow(dead_code)]

use powerdl::{ActionId, SubsystemSpec, SystemSpec};
use rand::Rng;

/// A user with one to two transmit actions and moderate parameters.
pub fn random_subsystem<R: Rng>(rng: &mut R) -> SubsystemSpec {
    let actions = rng.random_range(2..=3);
    let mut phi = vec![0.0];
    let mut power = vec![0.0];
    for _ in 1..actions {
        phi.push(rng.random_range(0.01..=1.0));
        power.push(rng.random_range(0.05..=3.0));
    }
    SubsystemSpec::new(
        rng.random_range(0.01..=1.0),
        rng.random_range(0.5..=20.0),
        phi,
        power,
        rng.random_range(0.5..=3.0),
    )
    .unwrap()
}

/// `N` in `2..=max_users`, `M < N`, `beta` in `[0.1, 2]`, `V` in `[0, 200]`.
pub fn random_system<R: Rng>(rng: &mut R, max_users: usize) -> SystemSpec {
    let n = rng.random_range(2..=max_users);
    let subs = (0..n).map(|_| random_subsystem(rng)).collect();
    let m = rng.random_range(1..n);
    SystemSpec::new(subs, rng.random_range(0.1..=2.0), m, rng.random_range(0.0..=200.0)).unwrap()
}

/// Long-run throughput and power of the frame-level randomized policy that
/// transmits with probability `theta` at each active slot.
pub fn randomized_binary(spec: &SubsystemSpec, theta: f64) -> (f64, f64) {
    let a = ActionId(1);
    let phi = theta * spec.success_prob(a);
    let frame = 1.0 + phi / spec.idle_rate();
    (spec.mean_file_size() * phi / frame, theta * spec.power(a) / frame)
}

/// Best feasible throughput of [`randomized_binary`] over a uniform grid of
/// `steps + 1` transmit probabilities.
pub fn grid_optimum(spec: &SubsystemSpec, power_budget: f64, steps: u32) -> f64 {
    (0..=steps)
        .map(|k| randomized_binary(spec, k as f64 / steps as f64))
        .filter(|&(_, p)| p <= power_budget * (1.0 + 1e-12))
        .map(|(mu, _)| mu)
        .fold(0.0, f64::max)
}

pub fn baseline_user(n: usize) -> SubsystemSpec {
    powerdl::baseline_system(70.0).subsystem(n).clone()
}
