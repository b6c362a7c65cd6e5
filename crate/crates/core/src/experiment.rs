//! Experiment drivers and result tables.
//!
//! Every driver is deterministic in its seed: independent runs are spread
//! over a worker pool when the `parallel` feature is on, but results are
//! collected in input order and each run owns its random streams.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::model::{FileLengthModel, SubsystemSpec, SystemSpec};
use crate::multi_user::run_multi_user_with;
use crate::oracle::{solve_system, OracleSolution, MAX_ORACLE_USERS};
use crate::sim::{relative_error, RngStream, SimOptions, SimTrace, UserDynamics};
use crate::single_user::run_single_user_with;

/// Default horizon of a full run.
pub const DEFAULT_HORIZON: u64 = 1_000_000;
/// Horizon used by `--fast` runs.
pub const FAST_HORIZON: u64 = 100_000;
/// Monte-Carlo parameter draws below this are rejected and redrawn.
pub const MIN_PARAMETER_DRAW: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    SingleRun,
    VSweep,
    MonteCarlo,
    OracleOnly,
    Robustness,
    SingleUser,
}

impl Mode {
    pub const ALL: [Mode; 6] =
        [Mode::SingleRun, Mode::VSweep, Mode::MonteCarlo, Mode::OracleOnly, Mode::Robustness, Mode::SingleUser];

    pub fn name(self) -> &'static str {
        match self {
            Mode::SingleRun => "single-run",
            Mode::VSweep => "v-sweep",
            Mode::MonteCarlo => "monte-carlo",
            Mode::OracleOnly => "oracle-only",
            Mode::Robustness => "robustness",
            Mode::SingleUser => "single-user",
        }
    }

    /// Tradeoff values used when the plan does not give any.
    pub fn default_v_grid(self, config: &SystemConfig) -> Vec<f64> {
        match self {
            Mode::VSweep | Mode::SingleUser => vec![5.0, 10.0, 20.0, 40.0, 70.0],
            Mode::Robustness => vec![10.0, 40.0, 70.0],
            Mode::MonteCarlo => vec![70.0],
            Mode::SingleRun | Mode::OracleOnly => vec![config.system.tradeoff()],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown mode {s:?}")))
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub config: SystemConfig,
    pub mode: Mode,
    pub v_grid: Vec<f64>,
    pub replicates: u64,
    pub horizon: u64,
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn new(config: SystemConfig, mode: Mode) -> Self {
        let v_grid = mode.default_v_grid(&config);
        Self { config, mode, v_grid, replicates: 100, horizon: DEFAULT_HORIZON, seed: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_grid.is_empty() {
            return Err(Error::InvalidParameter("tradeoff grid is empty".into()));
        }
        if let Some(v) = self.v_grid.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("tradeoff must be finite and non-negative, got {v}")));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        if self.mode == Mode::MonteCarlo && self.replicates == 0 {
            return Err(Error::InvalidParameter("replicates must be positive".into()));
        }
        Ok(())
    }

    fn system_at(&self, v: f64) -> Result<SystemSpec> {
        self.config.system.with_tradeoff(v)
    }
}

fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// One simulated run summarized as a table row.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub mode: Mode,
    pub variant: String,
    pub v: f64,
    pub replicate: u64,
    pub seed: u64,
    pub slots: u64,
    pub throughput_expected: f64,
    pub throughput_realized: f64,
    pub throughput_se: f64,
    pub realized_se: f64,
    pub avg_power: f64,
    pub power_se: f64,
    pub avg_queue: f64,
    pub max_queue: f64,
    pub ceiling: f64,
    pub opt: Option<f64>,
    pub relative_error: Option<f64>,
    /// `avg_power <= beta + ceiling / slots`.
    pub power_ok: bool,
}

impl RunRow {
    pub fn from_trace(
        mode: Mode,
        variant: impl Into<String>,
        v: f64,
        replicate: u64,
        seed: u64,
        trace: &SimTrace,
        power_budget: f64,
    ) -> Self {
        let slots = trace.slots.max(1) as f64;
        let limit = power_budget + trace.ceiling / slots;
        let power_ok = trace.average_power() <= limit + 1e-12 * limit.abs().max(1.0);
        Self {
            mode,
            variant: variant.into(),
            v,
            replicate,
            seed,
            slots: trace.slots,
            throughput_expected: trace.expected_throughput(),
            throughput_realized: trace.realized_throughput(),
            throughput_se: trace.expected_throughput_se(),
            realized_se: trace.realized_throughput_se(),
            avg_power: trace.average_power(),
            power_se: trace.average_power_se(),
            avg_queue: trace.average_queue(),
            max_queue: trace.max_queue,
            ceiling: trace.ceiling,
            opt: None,
            relative_error: None,
            power_ok,
        }
    }

    fn with_opt(mut self, opt: Option<f64>) -> Self {
        self.opt = opt;
        self.relative_error = opt.and_then(|o| relative_error(self.throughput_expected, o).ok());
        self
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.mode.name().to_owned(),
            self.variant.clone(),
            num(self.v),
            self.replicate.to_string(),
            self.seed.to_string(),
            self.slots.to_string(),
            num(self.throughput_expected),
            num(self.throughput_realized),
            num(self.throughput_se),
            num(self.avg_power),
            num(self.avg_queue),
            num(self.max_queue),
            num(self.ceiling),
            self.opt.map(num).unwrap_or_default(),
            self.relative_error.map(num).unwrap_or_default(),
            self.power_ok.to_string(),
        ]
    }
}

/// Column order of every run table.
pub const RUN_COLUMNS: [&str; 16] = [
    "mode",
    "variant",
    "v",
    "replicate",
    "seed",
    "slots",
    "throughput_expected",
    "throughput_realized",
    "throughput_se",
    "avg_power",
    "avg_queue",
    "max_queue",
    "ceiling",
    "opt",
    "relative_error",
    "power_ok",
];

/// Column order of the oracle table.
pub const ORACLE_COLUMNS: [&str; 9] = [
    "variant",
    "opt_value",
    "variable_count",
    "duality_gap",
    "max_residual",
    "flow_residual",
    "dual_infeasibility",
    "avg_power",
    "iterations",
];

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A CSV table with `#`-prefixed metadata lines above the header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub metadata: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Invariant failures noticed while building the table.
    pub violations: Vec<String>,
}

impl ResultTable {
    fn with_header(columns: &[&str]) -> Self {
        Self { header: columns.iter().map(|c| c.to_string()).collect(), ..Default::default() }
    }

    pub fn render(&self) -> Result<String> {
        let mut out = String::new();
        for line in &self.metadata {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let io = |e: csv::Error| Error::Numerical(format!("csv: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv: {e}")))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    fn push_run(&mut self, row: &RunRow) {
        if !row.power_ok {
            self.violations.push(format!(
                "{} {} v={} replicate {}: average power {} exceeds budget plus ceiling over horizon",
                row.mode, row.variant, row.v, row.replicate, row.avg_power
            ));
        }
        self.rows.push(row.cells());
    }
}

fn plan_metadata(plan: &ExperimentPlan) -> Vec<String> {
    let sys = &plan.config.system;
    let v: Vec<String> = plan.v_grid.iter().map(|v| num(*v)).collect();
    vec![
        format!("mode={}", plan.mode),
        format!("users={} max_concurrent={} power_budget={}", sys.len(), sys.max_concurrent(), num(sys.power_budget())),
        format!("v_grid={}", v.join(";")),
        format!("horizon={} seed={} replicates={}", plan.horizon, plan.seed, plan.replicates),
    ]
}

/// Solves the occupation program for the configured system.
pub fn run_oracle(system: &SystemSpec) -> Result<OracleSolution> {
    solve_system(system).map(|(_, sol)| sol)
}

fn oracle_cells(variant: &str, sol: &OracleSolution) -> Vec<String> {
    vec![
        variant.to_owned(),
        num(sol.opt_value),
        sol.variable_count.to_string(),
        num(sol.duality_gap),
        num(sol.max_residual),
        num(sol.flow_residual),
        num(sol.dual_infeasibility),
        num(sol.average_power),
        sol.iterations.to_string(),
    ]
}

fn simulate_multi(
    system: &SystemSpec,
    models: Option<&[FileLengthModel]>,
    horizon: u64,
    streams: RngStream,
) -> Result<SimTrace> {
    let dynamics = UserDynamics::for_system(system, models)?;
    run_multi_user_with(system, &dynamics, horizon, streams, &SimOptions::default())
}

/// One multi-user run at each tradeoff value, all on the same seed.
pub fn run_v_sweep(plan: &ExperimentPlan) -> Result<Vec<RunRow>> {
    plan.validate()?;
    let beta = plan.config.system.power_budget();
    let opt = if plan.config.system.len() <= MAX_ORACLE_USERS { run_oracle(&plan.config.system).ok() } else { None };
    par_map(&plan.v_grid, |&v| {
        let sys = plan.system_at(v)?;
        let trace = simulate_multi(&sys, None, plan.horizon, RngStream::new(plan.seed))?;
        Ok(RunRow::from_trace(plan.mode, "lyapunov-index", v, 0, plan.seed, &trace, beta)
            .with_opt(opt.as_ref().map(|s| s.opt_value)))
    })
    .into_iter()
    .collect()
}

/// The single-user policy applied to each user in isolation, compared with
/// that user's own optimum. Throughput is unweighted.
pub fn run_single_user_sweep(plan: &ExperimentPlan) -> Result<Vec<RunRow>> {
    plan.validate()?;
    let beta = plan.config.system.power_budget();
    let jobs: Vec<(usize, f64)> =
        (0..plan.config.system.len()).flat_map(|n| plan.v_grid.iter().map(move |&v| (n, v))).collect();
    let opts: Vec<Option<f64>> =
        plan.config.system.subsystems().iter().map(|s| single_user_opt(s, beta).ok()).collect();
    par_map(&jobs, |&(n, v)| {
        let spec = plan.config.system.subsystem(n);
        let trace = run_single_user_with(
            spec,
            v,
            beta,
            UserDynamics::matched(spec),
            plan.horizon,
            RngStream::new(plan.seed),
            &SimOptions::default(),
        )?;
        Ok(RunRow::from_trace(plan.mode, plan.config.names[n].clone(), v, 0, plan.seed, &trace, beta).with_opt(opts[n]))
    })
    .into_iter()
    .collect()
}

/// Exact unweighted optimum of one user alone under budget `power_budget`.
pub fn single_user_opt(spec: &SubsystemSpec, power_budget: f64) -> Result<f64> {
    let sys = SystemSpec::single(spec.with_weight(1.0)?, power_budget, 0.0)?;
    run_oracle(&sys).map(|s| s.opt_value)
}

/// Parameters randomized in a Monte-Carlo replicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VariationKind {
    /// Idle rates and packet rates.
    System,
    /// Transmit powers and per-packet success probabilities.
    Control,
}

impl VariationKind {
    pub const ALL: [VariationKind; 2] = [VariationKind::System, VariationKind::Control];

    pub fn name(self) -> &'static str {
        match self {
            VariationKind::System => "system",
            VariationKind::Control => "control",
        }
    }
}

fn unit_draw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u >= MIN_PARAMETER_DRAW {
            return u;
        }
    }
}

/// Packet-rate view of a user: `mu = 1 / mean_file_size` and per-packet
/// success `q(a) = phi(a) * mean_file_size`.
fn packet_parameters(spec: &SubsystemSpec) -> Result<(f64, Vec<f64>)> {
    let b = spec.mean_file_size();
    let q: Vec<f64> = spec.success_probs().iter().map(|phi| phi * b).collect();
    if q.iter().any(|&x| x > 1.0 + 1e-12) {
        return Err(Error::InvalidParameter(
            "randomization needs a packet parameterization with success_prob * mean_file_size <= 1".into(),
        ));
    }
    Ok((1.0 / b, q.into_iter().map(|x| x.min(1.0)).collect()))
}

/// Redraws the parameters of `kind` uniformly on `[0.001, 1)` for every user.
pub fn randomize_system<R: Rng + ?Sized>(base: &SystemSpec, kind: VariationKind, rng: &mut R) -> Result<SystemSpec> {
    let mut subs = Vec::with_capacity(base.len());
    for spec in base.subsystems() {
        let (mu, q) = packet_parameters(spec)?;
        let (idle_rate, mu, q, power) = match kind {
            VariationKind::System => (unit_draw(rng), unit_draw(rng), q, spec.powers().to_vec()),
            VariationKind::Control => {
                let power: Vec<f64> =
                    (0..spec.num_actions()).map(|a| if a == 0 { 0.0 } else { unit_draw(rng) }).collect();
                let q: Vec<f64> = (0..spec.num_actions()).map(|a| if a == 0 { 0.0 } else { unit_draw(rng) }).collect();
                (spec.idle_rate(), mu, q, power)
            }
        };
        let phi = q.iter().map(|qa| mu * qa).collect();
        subs.push(SubsystemSpec::new(idle_rate, 1.0 / mu, phi, power, spec.weight())?);
    }
    base.with_subsystems(subs)
}

/// Aggregate of one Monte-Carlo variation kind.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloSummary {
    pub kind: VariationKind,
    pub replicates: u64,
    /// Replicates whose optimum could not be computed or is zero.
    pub excluded: u64,
    pub mean_relative_error: f64,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloResult {
    pub rows: Vec<RunRow>,
    pub summaries: Vec<MonteCarloSummary>,
}

/// Randomized systems, one heuristic run and one exact solve each.
pub fn run_monte_carlo(plan: &ExperimentPlan) -> Result<MonteCarloResult> {
    plan.validate()?;
    if plan.config.system.len() > MAX_ORACLE_USERS {
        return Err(Error::TooLarge(format!(
            "Monte-Carlo comparison needs the exact optimum, which is limited to {MAX_ORACLE_USERS} users"
        )));
    }
    let v = plan.v_grid[0];
    let base = plan.system_at(v)?;
    let beta = base.power_budget();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for kind in VariationKind::ALL {
        let reps: Vec<u64> = (0..plan.replicates).collect();
        let results: Vec<Result<RunRow>> = par_map(&reps, |&r| {
            let streams = RngStream::for_replicate(plan.seed, r);
            let sys = randomize_system(&base, kind, &mut streams.parameters())?;
            let opt = run_oracle(&sys).ok().map(|s| s.opt_value);
            let trace = simulate_multi(&sys, None, plan.horizon, streams)?;
            Ok(RunRow::from_trace(plan.mode, kind.name(), v, r, streams.seed(), &trace, beta).with_opt(opt))
        });
        let kind_rows: Vec<RunRow> = results.into_iter().collect::<Result<_>>()?;
        let errors: Vec<f64> = kind_rows.iter().filter_map(|r| r.relative_error).collect();
        let excluded = plan.replicates - errors.len() as u64;
        let mean = if errors.is_empty() { f64::NAN } else { errors.iter().sum::<f64>() / errors.len() as f64 };
        let max = errors.iter().copied().fold(f64::NAN, f64::max);
        summaries.push(MonteCarloSummary {
            kind,
            replicates: plan.replicates,
            excluded,
            mean_relative_error: mean,
            max_relative_error: max,
        });
        rows.extend(kind_rows);
    }
    Ok(MonteCarloResult { rows, summaries })
}

/// Truth models of a robustness run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LengthFamily {
    Geometric,
    Uniform,
    Poisson,
}

impl LengthFamily {
    pub const ALL: [LengthFamily; 3] = [LengthFamily::Geometric, LengthFamily::Uniform, LengthFamily::Poisson];

    pub fn name(self) -> &'static str {
        match self {
            LengthFamily::Geometric => "geometric",
            LengthFamily::Uniform => "uniform",
            LengthFamily::Poisson => "poisson",
        }
    }
}

/// The policy-side system of a robustness run: each user's mean size is the
/// midpoint of its uniform range and `phi(a) = q(a) / mean`, keeping the
/// per-packet success probabilities of the configuration.
pub fn matched_mean_system(config: &SystemConfig) -> Result<(SystemSpec, Vec<(u64, u64)>)> {
    let ranges = config
        .uniform_ranges
        .clone()
        .ok_or_else(|| Error::Config("robustness runs need a uniform_range for every subsystem".into()))?;
    let mut subs = Vec::with_capacity(ranges.len());
    for (spec, &(lo, hi)) in config.system.subsystems().iter().zip(&ranges) {
        let (_, q) = packet_parameters(spec)?;
        let mean = (lo + hi) as f64 / 2.0;
        let phi = q.iter().map(|qa| qa / mean).collect();
        subs.push(SubsystemSpec::new(spec.idle_rate(), mean, phi, spec.powers().to_vec(), spec.weight())?);
    }
    Ok((config.system.with_subsystems(subs)?, ranges))
}

fn family_models(family: LengthFamily, system: &SystemSpec, ranges: &[(u64, u64)]) -> Vec<FileLengthModel> {
    system
        .subsystems()
        .iter()
        .zip(ranges)
        .map(|(s, &(lo, hi))| match family {
            LengthFamily::Geometric => FileLengthModel::Geometric { mu: 1.0 / s.mean_file_size() },
            LengthFamily::Uniform => FileLengthModel::Uniform { lo, hi },
            LengthFamily::Poisson => FileLengthModel::Poisson { mean: s.mean_file_size() },
        })
        .collect()
}

/// The heuristic tuned to matched means, run against packet-count truths
/// from each length family.
pub fn run_robustness(plan: &ExperimentPlan) -> Result<Vec<RunRow>> {
    plan.validate()?;
    let (policy_system, ranges) = matched_mean_system(&plan.config)?;
    let beta = policy_system.power_budget();
    let jobs: Vec<(LengthFamily, f64)> =
        LengthFamily::ALL.iter().flat_map(|&f| plan.v_grid.iter().map(move |&v| (f, v))).collect();
    par_map(&jobs, |&(family, v)| {
        let sys = policy_system.with_tradeoff(v)?;
        let models = family_models(family, &sys, &ranges);
        let trace = simulate_multi(&sys, Some(&models), plan.horizon, RngStream::new(plan.seed))?;
        Ok(RunRow::from_trace(plan.mode, family.name(), v, 0, plan.seed, &trace, beta))
    })
    .into_iter()
    .collect()
}

/// Runs `plan` and renders its table.
pub fn run_plan(plan: &ExperimentPlan) -> Result<ResultTable> {
    plan.validate()?;
    let mut meta = plan_metadata(plan);
    let table = match plan.mode {
        Mode::OracleOnly => {
            let sol = run_oracle(&plan.config.system)?;
            let mut t = ResultTable::with_header(&ORACLE_COLUMNS);
            if sol.duality_gap.abs() > 1e-8 || sol.flow_residual > 1e-9 {
                t.violations.push(format!(
                    "oracle certificate too weak: duality gap {}, flow residual {}",
                    sol.duality_gap, sol.flow_residual
                ));
            }
            t.rows.push(oracle_cells("lp", &sol));
            t.metadata = meta;
            return Ok(t);
        }
        Mode::SingleRun => {
            let v = plan.v_grid[0];
            let sys = plan.system_at(v)?;
            let trace = simulate_multi(&sys, None, plan.horizon, RngStream::new(plan.seed))?;
            let opt = if sys.len() <= MAX_ORACLE_USERS { run_oracle(&sys).ok().map(|s| s.opt_value) } else { None };
            let mut t = ResultTable::with_header(&RUN_COLUMNS);
            t.push_run(
                &RunRow::from_trace(plan.mode, "lyapunov-index", v, 0, plan.seed, &trace, sys.power_budget())
                    .with_opt(opt),
            );
            t
        }
        Mode::VSweep => {
            let rows = run_v_sweep(plan)?;
            let mut t = ResultTable::with_header(&RUN_COLUMNS);
            for r in &rows {
                t.push_run(r);
            }
            if let Some(opt) = rows.first().and_then(|r| r.opt) {
                let mut cells = vec![String::new(); RUN_COLUMNS.len()];
                cells[0] = plan.mode.name().into();
                cells[1] = "opt".into();
                cells[13] = num(opt);
                t.rows.push(cells);
            } else {
                meta.push("opt=unavailable".into());
            }
            t
        }
        Mode::SingleUser => {
            let mut t = ResultTable::with_header(&RUN_COLUMNS);
            for r in &run_single_user_sweep(plan)? {
                t.push_run(r);
            }
            t
        }
        Mode::Robustness => {
            meta.push("policy=matched means; per-packet success kept from configuration".into());
            let mut t = ResultTable::with_header(&RUN_COLUMNS);
            for r in &run_robustness(plan)? {
                t.push_run(r);
            }
            t
        }
        Mode::MonteCarlo => {
            meta.push(format!(
                "randomization=uniform on [{MIN_PARAMETER_DRAW}, 1); draws below {MIN_PARAMETER_DRAW} are redrawn"
            ));
            let result = run_monte_carlo(plan)?;
            for s in &result.summaries {
                meta.push(format!(
                    "summary kind={} replicates={} excluded={} mean_relative_error={} max_relative_error={}",
                    s.kind.name(),
                    s.replicates,
                    s.excluded,
                    num(s.mean_relative_error),
                    num(s.max_relative_error)
                ));
            }
            let mut t = ResultTable::with_header(&RUN_COLUMNS);
            for r in &result.rows {
                t.push_run(r);
            }
            t
        }
    };
    Ok(ResultTable { metadata: meta, ..table })
}
