//! Lyapunov indexing heuristic for N users and M servers.
//!
//! Every slot each active user gets the index `max_a g_n(a)`, where `g_n` is
//! the weighted drift-plus-penalty ratio at the current queue. The M largest
//! indices are served with their maximizing actions and the single virtual
//! queue absorbs the slot's power: `Q <- max(Q + sum_n p_n - beta, 0)`.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    argmax_action, dpp_reward, ActionId, FileLengthModel, FileState, SubsystemSpec, SystemSpec, VirtualQueueState,
};
use crate::sim::{prefix_tolerance, simulate, RngStream, SimOptions, SimTrace, SlotPolicy, UserDynamics};
use crate::single_user::FrameClock;

/// Everything the scheduler observes at a slot boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerState {
    pub queue: VirtualQueueState,
    pub file_states: Vec<FileState>,
    pub frame_clocks: Vec<FrameClock>,
    started: Vec<bool>,
}

impl SchedulerState {
    pub fn new(system: &SystemSpec) -> Self {
        Self {
            queue: VirtualQueueState::new(queue_ceiling_multi(system)),
            file_states: vec![FileState::IDLE; system.len()],
            frame_clocks: vec![FrameClock::default(); system.len()],
            started: vec![false; system.len()],
        }
    }

    /// Copies the file states of a new slot and advances the frame clocks.
    /// Every active slot starts a renewal frame: an unserved active user
    /// stays active, so its frame lasts exactly one slot.
    pub fn observe(&mut self, slot: u64, files: &[FileState]) {
        self.file_states.copy_from_slice(files);
        for ((clock, f), started) in self.frame_clocks.iter_mut().zip(files).zip(self.started.iter_mut()) {
            if f.active {
                if *started {
                    clock.frame_index += 1;
                }
                *started = true;
                clock.frame_start_slot = slot;
                clock.in_idle = false;
            } else {
                clock.in_idle = true;
            }
        }
    }

    /// Users beginning a renewal frame this slot.
    pub fn frame_starts(&self) -> impl Iterator<Item = usize> + '_ {
        self.file_states.iter().enumerate().filter(|(_, f)| f.active).map(|(n, _)| n)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SlotDecision {
    pub actions: Vec<ActionId>,
    /// Users given a server this slot, in decreasing index order. A selected
    /// user whose best action is idle still appears here.
    pub active_set: Vec<usize>,
}

impl SlotDecision {
    pub fn idle(users: usize) -> Self {
        Self { actions: vec![ActionId::IDLE; users], active_set: Vec::new() }
    }

    pub fn transmitting(&self) -> usize {
        self.actions.iter().filter(|a| !a.is_idle()).count()
    }
}

/// Largest weighted reward of a user and the action attaining it. The index
/// is never negative since idling earns zero.
pub fn subsystem_index(spec: &SubsystemSpec, backlog: f64, tradeoff: f64) -> (f64, ActionId) {
    argmax_action(spec, |a| dpp_reward(spec, a, backlog, tradeoff))
}

/// Serves the `min(M, |active|)` active users with the largest indices.
/// Index ties go to the lower user id.
pub fn schedule_slot(state: &SchedulerState, system: &SystemSpec) -> SlotDecision {
    let mut decision = SlotDecision::idle(system.len());
    schedule_into(state, system, &mut Vec::new(), &mut decision);
    decision
}

fn schedule_into(
    state: &SchedulerState,
    system: &SystemSpec,
    scratch: &mut Vec<(f64, usize, ActionId)>,
    decision: &mut SlotDecision,
) {
    decision.actions.fill(ActionId::IDLE);
    decision.active_set.clear();
    scratch.clear();
    let q = state.queue.backlog;
    let v = system.tradeoff();
    for n in state.frame_starts() {
        let (gamma, a) = subsystem_index(system.subsystem(n), q, v);
        scratch.push((gamma, n, a));
    }
    scratch.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    for &(_, n, a) in scratch.iter().take(system.max_concurrent()) {
        decision.actions[n] = a;
        decision.active_set.push(n);
    }
}

/// Slot power of a decision.
pub fn decision_power(decision: &SlotDecision, system: &SystemSpec) -> f64 {
    system.subsystems().iter().zip(&decision.actions).map(|(s, &a)| s.power(a)).sum()
}

pub fn queue_update_slot(
    mut queue: VirtualQueueState,
    decision: &SlotDecision,
    system: &SystemSpec,
    slot: u64,
) -> Result<VirtualQueueState> {
    queue.update(decision_power(decision, system), system.power_budget(), slot)?;
    Ok(queue)
}

/// `max(V c_max B_max / p_min + sum_n p_n_max - beta, 0)`, with `p_min` the
/// smallest non-idle power over all users.
pub fn queue_ceiling_multi(system: &SystemSpec) -> f64 {
    let subs = system.subsystems();
    let Some(p_min) = subs.iter().filter_map(SubsystemSpec::min_active_power).reduce(f64::min) else {
        return 0.0;
    };
    let c_max = subs.iter().map(SubsystemSpec::weight).fold(0.0, f64::max);
    let b_max = subs.iter().map(SubsystemSpec::mean_file_size).fold(0.0, f64::max);
    let p_sum: f64 = subs.iter().filter_map(SubsystemSpec::max_active_power).sum();
    (system.tradeoff() * c_max * b_max / p_min + p_sum - system.power_budget()).max(0.0)
}

/// The indexing heuristic as a slot policy.
pub struct LyapunovIndexPolicy {
    system: SystemSpec,
    state: SchedulerState,
    decision: SlotDecision,
    scratch: Vec<(f64, usize, ActionId)>,
    spent: f64,
    check_prefix: bool,
}

impl LyapunovIndexPolicy {
    pub fn new(system: SystemSpec, check_prefix: bool) -> Self {
        let state = SchedulerState::new(&system);
        let decision = SlotDecision::idle(system.len());
        Self { system, state, decision, scratch: Vec::new(), spent: 0.0, check_prefix }
    }

    pub fn state(&self) -> &SchedulerState {
        &self.state
    }

    pub fn last_decision(&self) -> &SlotDecision {
        &self.decision
    }
}

impl SlotPolicy for LyapunovIndexPolicy {
    fn decide(
        &mut self,
        slot: u64,
        files: &[FileState],
        _rng: &mut ChaCha8Rng,
        actions: &mut [ActionId],
    ) -> Result<()> {
        self.state.observe(slot, files);
        schedule_into(&self.state, &self.system, &mut self.scratch, &mut self.decision);
        actions.copy_from_slice(&self.decision.actions);
        Ok(())
    }

    fn end_slot(&mut self, slot: u64, power: f64) -> Result<()> {
        self.state.queue.update(power, self.system.power_budget(), slot)?;
        if self.check_prefix {
            self.spent += power;
            let bound = self.system.power_budget() * (slot + 1) as f64 + self.state.queue.backlog;
            if self.spent > bound + prefix_tolerance(self.spent, bound) {
                return Err(Error::PowerBoundBreach { slot, spent: self.spent, bound });
            }
        }
        Ok(())
    }

    fn backlog(&self) -> f64 {
        self.state.queue.backlog
    }

    fn ceiling(&self) -> f64 {
        self.state.queue.ceiling
    }
}

/// Runs the heuristic for `horizon` slots. Without `file_models` each user's
/// truth is the memoryless model matching its spec.
pub fn run_multi_user(
    system: &SystemSpec,
    horizon: u64,
    seed: u64,
    file_models: Option<&[FileLengthModel]>,
) -> Result<SimTrace> {
    let dynamics = UserDynamics::for_system(system, file_models)?;
    run_multi_user_with(system, &dynamics, horizon, RngStream::new(seed), &SimOptions::default())
}

pub fn run_multi_user_with(
    system: &SystemSpec,
    dynamics: &[UserDynamics],
    horizon: u64,
    streams: RngStream,
    options: &SimOptions,
) -> Result<SimTrace> {
    let mut policy = LyapunovIndexPolicy::new(system.clone(), options.check_prefix_bound);
    simulate(system, dynamics, &mut policy, horizon, streams, options)
}
