//! Exact offline optimum for small systems.
//!
//! The coupled file-state chains form an MDP over composite states (one bit
//! per user). Its constrained average-reward optimum is the linear program
//! over state-action occupation frequencies `x(s, a)`:
//!
//! ```text
//! maximize   sum x(s,a) r(s,a)
//! subject to sum_a x(s',a) = sum_{s,a} P(s'|s,a) x(s,a)   for every s'
//!            sum x(s,a) = 1
//!            sum x(s,a) p(s,a) <= beta
//!            x >= 0
//! ```
//!
//! Optimal occupations define a stationary randomized policy.

pub mod simplex;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ActionId, FileState, SystemSpec};
use crate::sim::SlotPolicy;
use simplex::{Constraint, LinearProgram, Relation, SimplexOptions};

/// Largest number of users the oracle accepts.
pub const MAX_ORACLE_USERS: usize = 12;

/// Default feasibility tolerance for [`solve_lp`].
pub const DEFAULT_LP_TOL: f64 = 1e-9;

/// Joint file state; bit `n` is set iff user `n` is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CompositeState(pub u32);

impl CompositeState {
    pub fn from_active(active: impl IntoIterator<Item = bool>) -> Self {
        Self(active.into_iter().enumerate().fold(0, |s, (n, a)| s | (u32::from(a) << n)))
    }

    #[inline]
    pub fn is_active(self, n: usize) -> bool {
        self.0 >> n & 1 == 1
    }

    /// User 1 first, e.g. `011` when users 2 and 3 are active.
    pub fn label(self, users: usize) -> String {
        (0..users).map(|n| if self.is_active(n) { '1' } else { '0' }).collect()
    }
}

/// One action per user.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CompositeAction(pub Vec<ActionId>);

impl CompositeAction {
    pub fn idle(users: usize) -> Self {
        Self(vec![ActionId::IDLE; users])
    }

    pub fn served(&self) -> usize {
        self.0.iter().filter(|a| !a.is_idle()).count()
    }
}

/// Actions allowed in `state`: only active users may transmit, at most
/// `max_concurrent` of them. The all-idle action comes first, then service
/// sets in increasing size and lexicographic user order.
pub fn feasible_actions(system: &SystemSpec, state: CompositeState) -> Vec<CompositeAction> {
    let n = system.len();
    let active: Vec<usize> = (0..n).filter(|&i| state.is_active(i)).collect();
    let mut out = vec![CompositeAction::idle(n)];
    for size in 1..=system.max_concurrent().min(active.len()) {
        for subset in combinations(&active, size) {
            let mut current = CompositeAction::idle(n);
            expand_actions(system, &subset, 0, &mut current, &mut out);
        }
    }
    out
}

fn expand_actions(
    system: &SystemSpec,
    users: &[usize],
    depth: usize,
    current: &mut CompositeAction,
    out: &mut Vec<CompositeAction>,
) {
    if depth == users.len() {
        out.push(current.clone());
        return;
    }
    let user = users[depth];
    for a in 1..system.subsystem(user).num_actions() {
        current.0[user] = ActionId(a);
        expand_actions(system, users, depth + 1, current, out);
    }
    current.0[user] = ActionId::IDLE;
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Product-form transition kernel over every feasible state-action pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionKernel {
    pub users: usize,
    pub pairs: Vec<(CompositeState, CompositeAction)>,
    /// Sparse next-state distribution of each pair.
    pub rows: Vec<Vec<(CompositeState, f64)>>,
}

impl TransitionKernel {
    pub fn num_states(&self) -> usize {
        1 << self.users
    }

    pub fn probability(&self, pair: usize, next: CompositeState) -> f64 {
        self.rows[pair].iter().filter(|(s, _)| *s == next).map(|(_, p)| p).sum()
    }
}

fn check_size(system: &SystemSpec) -> Result<()> {
    if system.len() > MAX_ORACLE_USERS {
        return Err(Error::TooLarge(format!("{} users exceed the oracle limit of {MAX_ORACLE_USERS}", system.len())));
    }
    Ok(())
}

/// Each user's bit moves independently given its own action: an active user
/// completes with probability `phi_n(a_n)` and is idle next slot, an idle
/// user activates with probability `lambda_n`.
pub fn build_transition_kernel(system: &SystemSpec) -> Result<TransitionKernel> {
    check_size(system)?;
    let n = system.len();
    let mut pairs = Vec::new();
    let mut rows = Vec::new();
    for s in 0..1u32 << n {
        let state = CompositeState(s);
        for action in feasible_actions(system, state) {
            let mut dist: Vec<(u32, f64)> = vec![(0, 1.0)];
            for (i, spec) in system.subsystems().iter().enumerate() {
                let p_active = if state.is_active(i) { 1.0 - spec.success_prob(action.0[i]) } else { spec.idle_rate() };
                let mut next = Vec::with_capacity(dist.len() * 2);
                for &(bits, p) in &dist {
                    if p_active > 0.0 {
                        next.push((bits | 1 << i, p * p_active));
                    }
                    if p_active < 1.0 {
                        next.push((bits, p * (1.0 - p_active)));
                    }
                }
                dist = next;
            }
            dist.sort_by_key(|&(b, _)| b);
            rows.push(dist.into_iter().map(|(b, p)| (CompositeState(b), p)).collect());
            pairs.push((state, action));
        }
    }
    Ok(TransitionKernel { users: n, pairs, rows })
}

/// Occupation-measure program of a system.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyLP {
    pub kernel: TransitionKernel,
    /// `sum_n c_n B_n phi_n(a_n)` per variable.
    pub reward: Vec<f64>,
    /// `sum_n p_n(a_n)` per variable.
    pub power: Vec<f64>,
    pub power_budget: f64,
}

pub fn build_occupancy_lp(system: &SystemSpec) -> Result<OccupancyLP> {
    let kernel = build_transition_kernel(system)?;
    let mut reward = Vec::with_capacity(kernel.pairs.len());
    let mut power = Vec::with_capacity(kernel.pairs.len());
    for (_, action) in &kernel.pairs {
        let (mut r, mut p) = (0.0, 0.0);
        for (spec, &a) in system.subsystems().iter().zip(&action.0) {
            r += spec.weight() * spec.mean_file_size() * spec.success_prob(a);
            p += spec.power(a);
        }
        reward.push(r);
        power.push(p);
    }
    Ok(OccupancyLP { kernel, reward, power, power_budget: system.power_budget() })
}

impl OccupancyLP {
    pub fn num_variables(&self) -> usize {
        self.kernel.pairs.len()
    }

    pub fn variable_name(&self, j: usize) -> String {
        let (s, a) = &self.kernel.pairs[j];
        let acts: Vec<String> = a.0.iter().map(|x| x.to_string()).collect();
        format!("x_{}_{}", s.label(self.kernel.users), acts.join(""))
    }

    /// Flow-balance rows (one per state), normalization, then power.
    pub fn to_linear_program(&self) -> LinearProgram {
        let nv = self.num_variables();
        let ns = self.kernel.num_states();
        let mut balance = vec![vec![0.0; nv]; ns];
        for (j, ((s, _), row)) in self.kernel.pairs.iter().zip(&self.kernel.rows).enumerate() {
            balance[s.0 as usize][j] += 1.0;
            for &(next, p) in row {
                balance[next.0 as usize][j] -= p;
            }
        }
        let users = self.kernel.users;
        let mut constraints: Vec<Constraint> = balance
            .into_iter()
            .enumerate()
            .map(|(s, coeffs)| Constraint {
                name: format!("balance_{}", CompositeState(s as u32).label(users)),
                coeffs,
                relation: Relation::Eq,
                rhs: 0.0,
            })
            .collect();
        constraints.push(Constraint {
            name: "normalize".into(),
            coeffs: vec![1.0; nv],
            relation: Relation::Eq,
            rhs: 1.0,
        });
        constraints.push(Constraint {
            name: "power".into(),
            coeffs: self.power.clone(),
            relation: Relation::Le,
            rhs: self.power_budget,
        });
        LinearProgram {
            var_names: (0..nv).map(|j| self.variable_name(j)).collect(),
            objective: self.reward.clone(),
            constraints,
        }
    }

    /// Largest flow-balance violation of an occupation vector.
    pub fn flow_residual(&self, x: &[f64]) -> f64 {
        let mut net = vec![0.0; self.kernel.num_states()];
        for (j, ((s, _), row)) in self.kernel.pairs.iter().zip(&self.kernel.rows).enumerate() {
            net[s.0 as usize] += x[j];
            for &(next, p) in row {
                net[next.0 as usize] -= p * x[j];
            }
        }
        net.iter().fold(0.0, |w, v| w.max(v.abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub opt_value: f64,
    pub occupation: Vec<f64>,
    pub variable_count: usize,
    pub duality_gap: f64,
    pub flow_residual: f64,
    /// Largest violation of any constraint, bounds included.
    pub max_residual: f64,
    pub dual_infeasibility: f64,
    /// Power spent by the optimal occupation.
    pub average_power: f64,
    pub iterations: usize,
}

/// Solves the occupation program. Fails if the returned point violates any
/// constraint by more than `tol`.
pub fn solve_lp(lp: &OccupancyLP, tol: f64) -> Result<OracleSolution> {
    let program = lp.to_linear_program();
    let opts = SimplexOptions { tol: tol.min(1e-10), ..Default::default() };
    let sol = program.solve(&opts)?;
    let flow_residual = lp.flow_residual(&sol.x);
    if sol.max_residual > tol || flow_residual > tol {
        return Err(Error::Numerical(format!(
            "occupancy residual {} (flow {}) exceeds tolerance {tol}",
            sol.max_residual, flow_residual
        )));
    }
    let average_power = lp.power.iter().zip(&sol.x).map(|(p, x)| p * x).sum();
    Ok(OracleSolution {
        opt_value: sol.objective,
        variable_count: lp.num_variables(),
        duality_gap: sol.duality_gap,
        flow_residual,
        max_residual: sol.max_residual,
        dual_infeasibility: sol.max_reduced_cost,
        average_power,
        iterations: sol.iterations,
        occupation: sol.x,
    })
}

/// Builds and solves the oracle for a system at the default tolerance.
pub fn solve_system(system: &SystemSpec) -> Result<(OccupancyLP, OracleSolution)> {
    let lp = build_occupancy_lp(system)?;
    let sol = solve_lp(&lp, DEFAULT_LP_TOL)?;
    Ok((lp, sol))
}

/// Per-state action distribution derived from an occupation measure.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryRandomizedPolicy {
    pub users: usize,
    /// Indexed by composite state; each entry lists actions with positive
    /// probability.
    pub per_state: Vec<Vec<(CompositeAction, f64)>>,
}

impl StationaryRandomizedPolicy {
    pub fn distribution(&self, state: CompositeState) -> &[(CompositeAction, f64)] {
        &self.per_state[state.0 as usize]
    }

    pub fn sample<'a, R: Rng + ?Sized>(&'a self, state: CompositeState, rng: &mut R) -> &'a CompositeAction {
        let dist = self.distribution(state);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in dist {
            acc += p;
            if u < acc {
                return a;
            }
        }
        &dist[dist.len() - 1].0
    }
}

/// Occupancy below this is treated as zero when conditioning.
const OCCUPANCY_FLOOR: f64 = 1e-12;

/// `theta(a | s) = x(s, a) / sum_a x(s, a)`. States with no occupancy get
/// the all-idle action.
pub fn extract_policy(lp: &OccupancyLP, occupation: &[f64]) -> StationaryRandomizedPolicy {
    let users = lp.kernel.users;
    let ns = lp.kernel.num_states();
    let mut per_state: Vec<Vec<(CompositeAction, f64)>> = vec![Vec::new(); ns];
    let mut mass = vec![0.0; ns];
    for ((s, _), &x) in lp.kernel.pairs.iter().zip(occupation) {
        mass[s.0 as usize] += x.max(0.0);
    }
    for ((s, a), &x) in lp.kernel.pairs.iter().zip(occupation) {
        let total = mass[s.0 as usize];
        if total > OCCUPANCY_FLOOR && x > 0.0 {
            per_state[s.0 as usize].push((a.clone(), x / total));
        }
    }
    for dist in per_state.iter_mut() {
        if dist.is_empty() {
            dist.push((CompositeAction::idle(users), 1.0));
        }
    }
    StationaryRandomizedPolicy { users, per_state }
}

/// Closed-loop driver for a stationary randomized policy.
pub struct RandomizedPolicyRunner<'a> {
    policy: &'a StationaryRandomizedPolicy,
}

impl<'a> RandomizedPolicyRunner<'a> {
    pub fn new(policy: &'a StationaryRandomizedPolicy) -> Self {
        Self { policy }
    }
}

impl SlotPolicy for RandomizedPolicyRunner<'_> {
    fn decide(
        &mut self,
        _slot: u64,
        files: &[FileState],
        rng: &mut ChaCha8Rng,
        actions: &mut [ActionId],
    ) -> Result<()> {
        let state = CompositeState::from_active(files.iter().map(|f| f.active));
        let chosen = self.policy.sample(state, rng);
        actions.copy_from_slice(&chosen.0);
        Ok(())
    }

    fn end_slot(&mut self, _slot: u64, _power: f64) -> Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{baseline_system, SubsystemSpec};

    #[test]
    fn baseline_has_twenty_variables() {
        let lp = build_occupancy_lp(&baseline_system(70.0)).unwrap();
        assert_eq!(lp.num_variables(), 20);
    }

    #[test]
    fn variable_counts_by_enumeration() {
        let s = SubsystemSpec::binary(0.5, 2.0, 0.3, 1.0, 1.0).unwrap();
        let one = SystemSpec::single(s.clone(), 1.0, 1.0).unwrap();
        assert_eq!(build_occupancy_lp(&one).unwrap().num_variables(), 3);
        let two = SystemSpec::new(vec![s.clone(), s], 1.0, 2, 1.0).unwrap();
        assert_eq!(build_occupancy_lp(&two).unwrap().num_variables(), 9);
    }

    #[test]
    fn single_user_kernel_examples() {
        let s = SubsystemSpec::binary(0.8, 10.0, 0.09, 2.0, 1.0).unwrap();
        let sys = SystemSpec::single(s, 1.0, 1.0).unwrap();
        let k = build_transition_kernel(&sys).unwrap();
        // pairs: (0, idle), (1, idle), (1, serve)
        assert_eq!(k.pairs.len(), 3);
        assert_eq!(k.probability(1, CompositeState(1)), 1.0);
        assert!((k.probability(0, CompositeState(1)) - 0.8).abs() < 1e-15);
        assert!((k.probability(0, CompositeState(0)) - 0.2).abs() < 1e-15);
        assert!((k.probability(2, CompositeState(0)) - 0.09).abs() < 1e-15);
    }

    #[test]
    fn kernel_rows_are_stochastic() {
        let k = build_transition_kernel(&baseline_system(1.0)).unwrap();
        for row in &k.rows {
            let total: f64 = row.iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_budget_forces_idle() {
        let sys = baseline_system(70.0).with_power_budget(0.0).unwrap();
        let (_, sol) = solve_system(&sys).unwrap();
        assert!(sol.opt_value.abs() < 1e-12);
    }

    #[test]
    fn extracted_policy_is_normalized() {
        let (lp, sol) = solve_system(&baseline_system(70.0)).unwrap();
        let policy = extract_policy(&lp, &sol.occupation);
        for dist in &policy.per_state {
            let total: f64 = dist.iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-9);
            for (a, _) in dist {
                assert!(a.served() <= 1);
            }
        }
    }

    #[test]
    fn all_idle_occupation_gives_idle_policy() {
        let lp = build_occupancy_lp(&baseline_system(70.0)).unwrap();
        // all mass on the all-active state with the idle action
        let mut x = vec![0.0; lp.num_variables()];
        let j = lp.kernel.pairs.iter().position(|(s, a)| s.0 == 0b111 && a.served() == 0).unwrap();
        x[j] = 1.0;
        assert!(lp.flow_residual(&x) < 1e-15);
        let policy = extract_policy(&lp, &x);
        for dist in &policy.per_state {
            assert_eq!(dist.len(), 1);
            assert_eq!(dist[0].0.served(), 0);
            assert_eq!(dist[0].1, 1.0);
        }
    }

    #[test]
    fn cplex_dump_names_variables() {
        let lp = build_occupancy_lp(&baseline_system(70.0)).unwrap();
        let text = lp.to_linear_program().to_cplex_lp();
        assert!(text.contains("x_011_001"));
        assert!(text.contains("balance_101:"));
        assert!(text.contains(" power:"));
    }

    #[test]
    fn size_guard() {
        let s = SubsystemSpec::binary(0.5, 2.0, 0.3, 1.0, 1.0).unwrap();
        let sys = SystemSpec::new(vec![s; 13], 1.0, 1, 1.0).unwrap();
        assert!(matches!(build_occupancy_lp(&sys), Err(Error::TooLarge(_))));
    }
}
