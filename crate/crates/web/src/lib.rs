//! Browser bindings for the schedulers.
//!
//! Each exported function takes a TOML system description (empty text
//! selects the built-in three-user system) and returns JSON. The `*_json`
//! functions hold the logic and are usable natively.

use powerdl::config::SystemConfig;
use powerdl::experiment::{run_v_sweep, ExperimentPlan, Mode};
use powerdl::multi_user::run_multi_user_with;
use powerdl::oracle::{build_occupancy_lp, extract_policy, solve_lp, CompositeState, DEFAULT_LP_TOL};
use powerdl::sim::{RngStream, SimOptions, UserDynamics};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Longest horizon accepted from the page.
pub const MAX_WEB_HORIZON: u32 = 2_000_000;
/// Longest per-slot trace returned to the page.
pub const MAX_TRACE_SLOTS: u32 = 20_000;

fn load(config: &str) -> Result<SystemConfig, String> {
    if config.trim().is_empty() {
        Ok(SystemConfig::baseline())
    } else {
        SystemConfig::parse(config).map_err(|e| e.to_string())
    }
}

fn check_horizon(horizon: u32, max: u32) -> Result<u64, String> {
    if horizon == 0 || horizon > max {
        return Err(format!("horizon must lie in 1..={max}, got {horizon}"));
    }
    Ok(u64::from(horizon))
}

fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    text.split([',', ' ', ';'])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SweepPoint {
    v: f64,
    throughput: f64,
    throughput_se: f64,
    realized: f64,
    avg_power: f64,
    avg_queue: f64,
    max_queue: f64,
    ceiling: f64,
}

#[derive(Serialize)]
struct SweepOutput {
    power_budget: f64,
    opt: Option<f64>,
    points: Vec<SweepPoint>,
}

pub fn v_sweep_json(config: &str, v_grid: &str, horizon: u32, seed: u32) -> Result<String, String> {
    let cfg = load(config)?;
    let power_budget = cfg.system.power_budget();
    let mut plan = ExperimentPlan::new(cfg, Mode::VSweep);
    plan.v_grid = parse_grid(v_grid)?;
    plan.horizon = check_horizon(horizon, MAX_WEB_HORIZON)?;
    plan.seed = u64::from(seed);
    let rows = run_v_sweep(&plan).map_err(|e| e.to_string())?;
    let opt = rows.first().and_then(|r| r.opt);
    let points = rows
        .into_iter()
        .map(|r| SweepPoint {
            v: r.v,
            throughput: r.throughput_expected,
            throughput_se: r.throughput_se,
            realized: r.throughput_realized,
            avg_power: r.avg_power,
            avg_queue: r.avg_queue,
            max_queue: r.max_queue,
            ceiling: r.ceiling,
        })
        .collect();
    to_json(&SweepOutput { power_budget, opt, points })
}

#[derive(Serialize)]
struct TraceOutput {
    ceiling: f64,
    backlog: Vec<f64>,
    /// Served user per slot, `-1` when nobody transmits; with several
    /// servers the lowest served id is reported.
    served: Vec<i32>,
    active: Vec<u64>,
    throughput: f64,
    avg_power: f64,
}

pub fn queue_trace_json(config: &str, v: f64, horizon: u32, seed: u32) -> Result<String, String> {
    let cfg = load(config)?;
    let horizon = check_horizon(horizon, MAX_TRACE_SLOTS)?;
    let sys = cfg.system.with_tradeoff(v).map_err(|e| e.to_string())?;
    let dynamics = UserDynamics::for_system(&sys, None).map_err(|e| e.to_string())?;
    let options = SimOptions { record_capacity: horizon as usize, check_prefix_bound: true };
    let trace = run_multi_user_with(&sys, &dynamics, horizon, RngStream::new(u64::from(seed)), &options)
        .map_err(|e| e.to_string())?;
    let records: Vec<_> = trace.records().collect();
    to_json(&TraceOutput {
        ceiling: trace.ceiling,
        backlog: records.iter().map(|r| r.backlog).collect(),
        served: records
            .iter()
            .map(|r| if r.served_mask == 0 { -1 } else { r.served_mask.trailing_zeros() as i32 })
            .collect(),
        active: records.iter().map(|r| r.active_mask).collect(),
        throughput: trace.expected_throughput(),
        avg_power: trace.average_power(),
    })
}

#[derive(Serialize)]
struct PolicyEntry {
    state: String,
    /// Action label (one digit per user) and its probability.
    actions: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct OracleOutput {
    opt: f64,
    variables: usize,
    duality_gap: f64,
    flow_residual: f64,
    avg_power: f64,
    policy: Vec<PolicyEntry>,
}

pub fn solve_oracle_json(config: &str) -> Result<String, String> {
    let cfg = load(config)?;
    let lp = build_occupancy_lp(&cfg.system).map_err(|e| e.to_string())?;
    let sol = solve_lp(&lp, DEFAULT_LP_TOL).map_err(|e| e.to_string())?;
    let policy = extract_policy(&lp, &sol.occupation);
    let users = cfg.system.len();
    let entries = (0..policy.per_state.len())
        .map(|s| {
            let state = CompositeState(s as u32);
            PolicyEntry {
                state: state.label(users),
                actions: policy
                    .distribution(state)
                    .iter()
                    .map(|(a, p)| (a.0.iter().map(|x| x.0.to_string()).collect::<String>(), *p))
                    .collect(),
            }
        })
        .collect();
    to_json(&OracleOutput {
        opt: sol.opt_value,
        variables: sol.variable_count,
        duality_gap: sol.duality_gap,
        flow_residual: sol.flow_residual,
        avg_power: sol.average_power,
        policy: entries,
    })
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Throughput, power and queue statistics over a list of tradeoff values.
#[wasm_bindgen]
pub fn v_sweep(config: &str, v_grid: &str, horizon: u32, seed: u32) -> Result<String, JsValue> {
    js(v_sweep_json(config, v_grid, horizon, seed))
}

/// Per-slot virtual queue and scheduling decisions of one run.
#[wasm_bindgen]
pub fn queue_trace(config: &str, v: f64, horizon: u32, seed: u32) -> Result<String, JsValue> {
    js(queue_trace_json(config, v, horizon, seed))
}

/// Exact optimum and the optimal randomized policy.
#[wasm_bindgen]
pub fn solve_oracle(config: &str) -> Result<String, JsValue> {
    js(solve_oracle_json(config))
}
