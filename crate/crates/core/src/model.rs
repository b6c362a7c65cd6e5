//! Domain types and the closed-form quantities shared by the policies, the
//! oracle and the simulator.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack used when comparing a backlog against its ceiling.
pub const CEILING_TOLERANCE: f64 = 1e-9;

/// Index into a subsystem's action set. Index 0 is the idle action.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl ActionId {
    pub const IDLE: ActionId = ActionId(0);

    #[inline]
    pub fn is_idle(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Parameters of one downloading user.
///
/// `success_prob[a]` is the per-slot file completion probability under
/// action `a` and `power[a]` the power it spends. Both vectors include the
/// idle action at index 0, which must have zero success probability and
/// zero power.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsystemSpec {
    idle_rate: f64,
    mean_file_size: f64,
    success_prob: Vec<f64>,
    power: Vec<f64>,
    weight: f64,
}

impl SubsystemSpec {
    pub fn new(
        idle_rate: f64,
        mean_file_size: f64,
        success_prob: Vec<f64>,
        power: Vec<f64>,
        weight: f64,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidParameter(msg));
        if !(idle_rate > 0.0 && idle_rate <= 1.0) {
            return invalid(format!("idle_rate must lie in (0, 1], got {idle_rate}"));
        }
        if !(mean_file_size > 0.0 && mean_file_size.is_finite()) {
            return invalid(format!("mean_file_size must be positive, got {mean_file_size}"));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return invalid(format!("weight must be positive, got {weight}"));
        }
        if success_prob.is_empty() || success_prob.len() != power.len() {
            return invalid(format!(
                "success_prob ({}) and power ({}) must be non-empty and of equal length",
                success_prob.len(),
                power.len()
            ));
        }
        if success_prob[0] != 0.0 || power[0] != 0.0 {
            return invalid("the idle action (index 0) must have zero success probability and zero power".into());
        }
        for (a, (&phi, &p)) in success_prob.iter().zip(&power).enumerate().skip(1) {
            if !(0.0..=1.0).contains(&phi) {
                return invalid(format!("success_prob[{a}] = {phi} is not a probability"));
            }
            if !(p > 0.0 && p.is_finite()) {
                return invalid(format!("power[{a}] = {p} must be positive for a non-idle action"));
            }
        }
        Ok(Self { idle_rate, mean_file_size, success_prob, power, weight })
    }

    /// A two-action user (idle plus one transmit option).
    pub fn binary(idle_rate: f64, mean_file_size: f64, phi: f64, power: f64, weight: f64) -> Result<Self> {
        Self::new(idle_rate, mean_file_size, vec![0.0, phi], vec![0.0, power], weight)
    }

    pub fn idle_rate(&self) -> f64 {
        self.idle_rate
    }

    pub fn mean_file_size(&self) -> f64 {
        self.mean_file_size
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn num_actions(&self) -> usize {
        self.power.len()
    }

    pub fn actions(&self) -> impl Iterator<Item = ActionId> {
        (0..self.num_actions()).map(ActionId)
    }

    #[inline]
    pub fn success_prob(&self, a: ActionId) -> f64 {
        self.success_prob[a.0]
    }

    #[inline]
    pub fn power(&self, a: ActionId) -> f64 {
        self.power[a.0]
    }

    pub fn success_probs(&self) -> &[f64] {
        &self.success_prob
    }

    pub fn powers(&self) -> &[f64] {
        &self.power
    }

    pub fn has_transmit_action(&self) -> bool {
        self.num_actions() > 1
    }

    /// Smallest power among non-idle actions, `None` if only idle exists.
    pub fn min_active_power(&self) -> Option<f64> {
        self.power[1..].iter().copied().reduce(f64::min)
    }

    /// Largest power among non-idle actions, `None` if only idle exists.
    pub fn max_active_power(&self) -> Option<f64> {
        self.power[1..].iter().copied().reduce(f64::max)
    }

    pub fn with_weight(&self, weight: f64) -> Result<Self> {
        Self::new(self.idle_rate, self.mean_file_size, self.success_prob.clone(), self.power.clone(), weight)
    }
}

/// N users sharing one server with at most `max_concurrent` transmissions
/// per slot and a time-average power budget.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemSpec {
    subsystems: Vec<SubsystemSpec>,
    power_budget: f64,
    max_concurrent: usize,
    tradeoff: f64,
}

impl SystemSpec {
    pub fn new(
        subsystems: Vec<SubsystemSpec>,
        power_budget: f64,
        max_concurrent: usize,
        tradeoff: f64,
    ) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::InvalidParameter("a system needs at least one subsystem".into()));
        }
        if max_concurrent == 0 || max_concurrent > subsystems.len() {
            return Err(Error::InvalidParameter(format!(
                "max_concurrent must lie in [1, {}], got {max_concurrent}",
                subsystems.len()
            )));
        }
        if !(power_budget >= 0.0 && power_budget.is_finite()) {
            return Err(Error::InvalidParameter(format!("power_budget must be non-negative, got {power_budget}")));
        }
        check_tradeoff(tradeoff)?;
        Ok(Self { subsystems, power_budget, max_concurrent, tradeoff })
    }

    /// Embeds a single user as a one-server system.
    pub fn single(spec: SubsystemSpec, power_budget: f64, tradeoff: f64) -> Result<Self> {
        Self::new(vec![spec], power_budget, 1, tradeoff)
    }

    pub fn subsystems(&self) -> &[SubsystemSpec] {
        &self.subsystems
    }

    pub fn subsystem(&self, n: usize) -> &SubsystemSpec {
        &self.subsystems[n]
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn power_budget(&self) -> f64 {
        self.power_budget
    }

    pub fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }

    pub fn tradeoff(&self) -> f64 {
        self.tradeoff
    }

    pub fn with_tradeoff(&self, tradeoff: f64) -> Result<Self> {
        check_tradeoff(tradeoff)?;
        Ok(Self { tradeoff, ..self.clone() })
    }

    pub fn with_power_budget(&self, power_budget: f64) -> Result<Self> {
        Self::new(self.subsystems.clone(), power_budget, self.max_concurrent, self.tradeoff)
    }

    pub fn with_subsystems(&self, subsystems: Vec<SubsystemSpec>) -> Result<Self> {
        Self::new(subsystems, self.power_budget, self.max_concurrent, self.tradeoff)
    }
}

fn check_tradeoff(v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tradeoff V must be non-negative, got {v}")))
    }
}

/// Virtual power-deficit queue together with its deterministic ceiling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VirtualQueueState {
    pub backlog: f64,
    pub ceiling: f64,
}

impl VirtualQueueState {
    pub fn new(ceiling: f64) -> Self {
        Self { backlog: 0.0, ceiling }
    }

    /// `backlog <- max(backlog + arrival - service, 0)`, then checks the ceiling.
    pub fn update(&mut self, arrival: f64, service: f64, slot: u64) -> Result<()> {
        self.backlog = (self.backlog + arrival - service).max(0.0);
        if self.backlog > self.ceiling + CEILING_TOLERANCE {
            return Err(Error::CeilingBreach { slot, backlog: self.backlog, ceiling: self.ceiling });
        }
        Ok(())
    }
}

/// Download state of one user. `size` is the length of the file in
/// progress, `residual` what is left of it.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FileState {
    pub active: bool,
    pub residual: f64,
    pub size: f64,
}

impl FileState {
    pub const IDLE: FileState = FileState { active: false, residual: 0.0, size: 0.0 };

    pub fn with_file(size: f64) -> Self {
        Self { active: true, residual: size, size }
    }
}

/// Distribution of file lengths used by the simulator as ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FileLengthModel {
    /// Packets, geometric on {1, 2, ...} with success parameter `mu`.
    Geometric { mu: f64 },
    /// Bits, exponential with the given mean.
    Exponential { mean: f64 },
    /// Packets, uniform on the integers `lo..=hi`.
    Uniform { lo: u64, hi: u64 },
    /// Packets, Poisson clamped below at one packet. `mean` is the mean
    /// after clamping.
    Poisson { mean: f64 },
}

impl FileLengthModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            FileLengthModel::Geometric { mu } => mu > 0.0 && mu <= 1.0,
            FileLengthModel::Exponential { mean } => mean > 0.0 && mean.is_finite(),
            FileLengthModel::Uniform { lo, hi } => lo >= 1 && lo <= hi,
            FileLengthModel::Poisson { mean } => mean >= 1.0 && mean.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid file length model {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            FileLengthModel::Geometric { mu } => 1.0 / mu,
            FileLengthModel::Exponential { mean } => mean,
            FileLengthModel::Uniform { lo, hi } => (lo + hi) as f64 / 2.0,
            FileLengthModel::Poisson { mean } => mean,
        }
    }

    /// Whether the completion probability is history independent.
    pub fn is_memoryless(&self) -> bool {
        matches!(self, FileLengthModel::Geometric { .. } | FileLengthModel::Exponential { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            FileLengthModel::Geometric { .. } => "geometric",
            FileLengthModel::Exponential { .. } => "exponential",
            FileLengthModel::Uniform { .. } => "uniform",
            FileLengthModel::Poisson { .. } => "poisson",
        }
    }

    /// Builds a sampler. Fails on invalid parameters.
    pub fn sampler(&self) -> Result<FileLengthSampler> {
        self.validate()?;
        let inner = match *self {
            FileLengthModel::Geometric { mu } => {
                if mu >= 1.0 {
                    SamplerKind::Constant(1.0)
                } else {
                    SamplerKind::Geometric(Geometric::new(mu).map_err(|e| Error::InvalidParameter(e.to_string()))?)
                }
            }
            FileLengthModel::Exponential { mean } => {
                SamplerKind::Exponential(Exp::new(1.0 / mean).map_err(|e| Error::InvalidParameter(e.to_string()))?)
            }
            FileLengthModel::Uniform { lo, hi } => SamplerKind::Uniform(lo, hi),
            FileLengthModel::Poisson { mean } => {
                let rate = clamped_poisson_rate(mean)?;
                SamplerKind::Poisson(Poisson::new(rate).map_err(|e| Error::InvalidParameter(e.to_string()))?)
            }
        };
        Ok(FileLengthSampler { inner })
    }
}

#[derive(Clone, Debug)]
enum SamplerKind {
    Constant(f64),
    Geometric(Geometric),
    Exponential(Exp<f64>),
    Uniform(u64, u64),
    Poisson(Poisson<f64>),
}

#[derive(Clone, Debug)]
pub struct FileLengthSampler {
    inner: SamplerKind,
}

impl FileLengthSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.inner {
            SamplerKind::Constant(c) => *c,
            // rand_distr counts failures before the first success
            SamplerKind::Geometric(g) => (g.sample(rng) + 1) as f64,
            SamplerKind::Exponential(e) => e.sample(rng),
            SamplerKind::Uniform(lo, hi) => rng.random_range(*lo..=*hi) as f64,
            SamplerKind::Poisson(p) => p.sample(rng).max(1.0),
        }
    }
}

/// Rate `r` such that `E[max(X, 1)] = target` for `X ~ Poisson(r)`, i.e.
/// `r + exp(-r) = target`.
pub fn clamped_poisson_rate(target: f64) -> Result<f64> {
    if !(target > 1.0 && target.is_finite()) {
        return Err(Error::InvalidParameter(format!("clamped Poisson mean must exceed 1, got {target}")));
    }
    // f(r) = r + e^{-r} - target is increasing and convex for r > 0
    let mut r = target;
    for _ in 0..100 {
        let f = r + (-r).exp() - target;
        let df = 1.0 - (-r).exp();
        let next = r - f / df;
        if (next - r).abs() < 1e-14 * target.max(1.0) {
            return Ok(next);
        }
        r = next;
    }
    Ok(r)
}

/// Mean renewal frame length `1 + phi(a) / lambda` when `a` is chosen at the
/// frame start.
#[inline]
pub fn expected_frame_length(spec: &SubsystemSpec, a: ActionId) -> f64 {
    1.0 + spec.success_prob(a) / spec.idle_rate()
}

/// Completion probability of an exponentially sized file sent at rate
/// `rate` with transmission success probability `success`.
pub fn phi_from_exponential(mean_size: f64, rate: f64, success: f64) -> f64 {
    success * -(-rate / mean_size).exp_m1()
}

/// Completion probability of a geometric packet count with parameter
/// `packet_rate` when one packet is sent with success probability `success`.
pub fn phi_from_geometric(packet_rate: f64, success: f64) -> f64 {
    packet_rate * success
}

/// Weighted drift-plus-penalty ratio
/// `(V c B phi(a) - Q p(a)) / (1 + phi(a) / lambda)`.
#[inline]
pub fn dpp_reward(spec: &SubsystemSpec, a: ActionId, backlog: f64, tradeoff: f64) -> f64 {
    weighted_ratio(spec, a, backlog, tradeoff * spec.weight())
}

#[inline]
pub(crate) fn weighted_ratio(spec: &SubsystemSpec, a: ActionId, backlog: f64, scaled_tradeoff: f64) -> f64 {
    let phi = spec.success_prob(a);
    let numerator = scaled_tradeoff * spec.mean_file_size() * phi - backlog * spec.power(a);
    numerator / (1.0 + phi / spec.idle_rate())
}

/// Maximizes `reward` over the action set, ties to the lowest id.
#[inline]
pub(crate) fn argmax_action(spec: &SubsystemSpec, reward: impl Fn(ActionId) -> f64) -> (f64, ActionId) {
    let mut best = (0.0, ActionId::IDLE);
    for a in spec.actions().skip(1) {
        let r = reward(a);
        if r > best.0 {
            best = (r, a);
        }
    }
    best
}

/// The three-user instance used throughout the simulation study: geometric
/// packet counts with parameters (0.1, 0.2, 0.4), transmission success
/// (0.9, 0.8, 0.7), one server and unit power budget.
pub fn baseline_system(tradeoff: f64) -> SystemSpec {
    let users = [(0.8, 0.1, 0.9, 2.0, 1.0), (0.5, 0.2, 0.8, 1.5, 1.5), (0.1, 0.4, 0.7, 1.0, 2.0)];
    let subsystems = users
        .iter()
        .map(|&(lambda, mu, q, p, c)| {
            SubsystemSpec::binary(lambda, 1.0 / mu, phi_from_geometric(mu, q), p, c)
                .expect("baseline parameters are valid")
        })
        .collect();
    SystemSpec::new(subsystems, 1.0, 1, tradeoff).expect("baseline parameters are valid")
}
