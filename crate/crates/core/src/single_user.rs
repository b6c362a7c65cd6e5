//! Optimal single-user policy: one drift-plus-penalty ratio decision per
//! renewal frame and a frame-based virtual power queue.
//!
//! A frame starts every slot the file state is active. If the file does not
//! complete the frame lasts one slot, otherwise it also covers the idle
//! period that follows. The queue is updated when the next frame begins:
//! `Q <- max(Q + p(a) - beta * T, 0)`.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{argmax_action, weighted_ratio, ActionId, FileState, SubsystemSpec, SystemSpec, VirtualQueueState};
use crate::sim::{prefix_tolerance, simulate, RngStream, SimOptions, SimTrace, SlotPolicy, UserDynamics};

/// Renewal frame bookkeeping for one user.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FrameClock {
    pub frame_index: u64,
    pub frame_start_slot: u64,
    /// Set once the file of the current frame has completed.
    pub in_idle: bool,
}

/// Unweighted ratio `(V B phi(a) - Q p(a)) / (1 + phi(a) / lambda)`; the
/// single-user objective is plain throughput.
#[inline]
pub fn single_user_reward(spec: &SubsystemSpec, a: ActionId, backlog: f64, tradeoff: f64) -> f64 {
    weighted_ratio(spec, a, backlog, tradeoff)
}

/// Maximizes the ratio over the action set; ties go to the lowest id, so a
/// zero-reward tie idles.
pub fn choose_action_single(spec: &SubsystemSpec, backlog: f64, tradeoff: f64) -> ActionId {
    argmax_action(spec, |a| single_user_reward(spec, a, backlog, tradeoff)).1
}

/// Closes a frame of `frame_len` slots in which action `a` was taken.
pub fn queue_update_frame(
    mut queue: VirtualQueueState,
    spec: &SubsystemSpec,
    a: ActionId,
    frame_len: u64,
    power_budget: f64,
) -> Result<VirtualQueueState> {
    debug_assert!(frame_len >= 1);
    queue.update(spec.power(a), power_budget * frame_len as f64, frame_len)?;
    Ok(queue)
}

/// `max(V B / p_min + p_max - beta, 0)` over non-idle actions, zero when
/// the user can only idle.
pub fn queue_ceiling_single(spec: &SubsystemSpec, tradeoff: f64, power_budget: f64) -> f64 {
    match (spec.min_active_power(), spec.max_active_power()) {
        (Some(p_min), Some(p_max)) => (tradeoff * spec.mean_file_size() / p_min + p_max - power_budget).max(0.0),
        _ => 0.0,
    }
}

/// Frame-based drift-plus-penalty controller for user 0 of a one-user
/// system.
pub struct SingleUserPolicy {
    spec: SubsystemSpec,
    tradeoff: f64,
    power_budget: f64,
    queue: VirtualQueueState,
    clock: FrameClock,
    /// Action of the frame in progress.
    pending: Option<ActionId>,
    spent: f64,
    check_prefix: bool,
}

impl SingleUserPolicy {
    pub fn new(spec: SubsystemSpec, tradeoff: f64, power_budget: f64, check_prefix: bool) -> Self {
        let ceiling = queue_ceiling_single(&spec, tradeoff, power_budget);
        Self {
            spec,
            tradeoff,
            power_budget,
            queue: VirtualQueueState::new(ceiling),
            clock: FrameClock::default(),
            pending: None,
            spent: 0.0,
            check_prefix,
        }
    }

    pub fn queue(&self) -> VirtualQueueState {
        self.queue
    }

    pub fn clock(&self) -> FrameClock {
        self.clock
    }

    fn close_frame(&mut self, slot: u64, a: ActionId) -> Result<()> {
        let frame_len = slot - self.clock.frame_start_slot;
        self.queue.update(self.spec.power(a), self.power_budget * frame_len as f64, slot)?;
        self.clock.frame_index += 1;
        if self.check_prefix {
            let bound = self.power_budget * slot as f64 + self.queue.backlog;
            if self.spent > bound + prefix_tolerance(self.spent, bound) {
                return Err(Error::PowerBoundBreach { slot, spent: self.spent, bound });
            }
        }
        Ok(())
    }
}

impl SlotPolicy for SingleUserPolicy {
    fn decide(
        &mut self,
        slot: u64,
        files: &[FileState],
        _rng: &mut ChaCha8Rng,
        actions: &mut [ActionId],
    ) -> Result<()> {
        if !files[0].active {
            self.clock.in_idle = true;
            return Ok(());
        }
        if let Some(prev) = self.pending.take() {
            self.close_frame(slot, prev)?;
        }
        let a = choose_action_single(&self.spec, self.queue.backlog, self.tradeoff);
        self.clock.frame_start_slot = slot;
        self.clock.in_idle = false;
        self.pending = Some(a);
        self.spent += self.spec.power(a);
        actions[0] = a;
        Ok(())
    }

    fn end_slot(&mut self, _slot: u64, _power: f64) -> Result<()> {
        Ok(())
    }

    fn backlog(&self) -> f64 {
        self.queue.backlog
    }

    fn ceiling(&self) -> f64 {
        self.queue.ceiling
    }
}

/// Runs the single-user policy against memoryless dynamics matching `spec`.
/// Throughput in the trace is unweighted.
pub fn run_single_user(
    spec: &SubsystemSpec,
    tradeoff: f64,
    power_budget: f64,
    horizon: u64,
    seed: u64,
) -> Result<SimTrace> {
    let dynamics = UserDynamics::matched(spec);
    run_single_user_with(spec, tradeoff, power_budget, dynamics, horizon, RngStream::new(seed), &SimOptions::default())
}

pub fn run_single_user_with(
    spec: &SubsystemSpec,
    tradeoff: f64,
    power_budget: f64,
    dynamics: UserDynamics,
    horizon: u64,
    streams: RngStream,
    options: &SimOptions,
) -> Result<SimTrace> {
    let unweighted = spec.with_weight(1.0)?;
    let system = SystemSpec::single(unweighted.clone(), power_budget, tradeoff)?;
    let mut policy = SingleUserPolicy::new(unweighted, tradeoff, power_budget, options.check_prefix_bound);
    simulate(&system, &[dynamics], &mut policy, horizon, streams, options)
}
