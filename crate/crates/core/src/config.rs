//! Plain-text system configuration.
//!
//! A configuration is a TOML document with global keys and one
//! `[[subsystem]]` block per user. Action vectors list the idle action first.
//!
//! ```toml
//! power_budget = 1.0
//! max_concurrent = 1
//! tradeoff = 70.0
//!
//! [[subsystem]]
//! idle_rate = 0.8
//! mean_file_size = 10.0
//! weight = 1.0
//! success_prob = [0.0, 0.09]
//! power = [0.0, 2.0]
//! uniform_range = [5, 15]    # optional, used by robustness runs
//! ```
//!
//! Instead of `mean_file_size` and `success_prob` a block may give the
//! packet parameterization `packet_rate` (geometric packet count parameter)
//! and `tx_success` (per-packet success probability of each action); then
//! the mean size is `1 / packet_rate` and `success_prob = packet_rate *
//! tx_success`.

use std::path::Path;

use serde::Deserialize;
use toml::Spanned;

use crate::error::{Error, Result};
use crate::model::{phi_from_geometric, SubsystemSpec, SystemSpec};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    power_budget: f64,
    max_concurrent: usize,
    #[serde(default)]
    tradeoff: f64,
    subsystem: Vec<Spanned<RawSubsystem>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubsystem {
    #[serde(default)]
    name: Option<String>,
    idle_rate: f64,
    #[serde(default = "one")]
    weight: f64,
    power: Vec<f64>,
    mean_file_size: Option<f64>,
    success_prob: Option<Vec<f64>>,
    packet_rate: Option<f64>,
    tx_success: Option<Vec<f64>>,
    uniform_range: Option<[u64; 2]>,
}

fn one() -> f64 {
    1.0
}

/// A parsed configuration: the system plus per-user extras.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub system: SystemSpec,
    pub names: Vec<String>,
    /// Inclusive packet-count ranges for uniform file lengths, one per user,
    /// present only if every block defines one.
    pub uniform_ranges: Option<Vec<(u64, u64)>>,
}

impl SystemConfig {
    pub fn from_system(system: SystemSpec) -> Self {
        let names = (1..=system.len()).map(|n| format!("user{n}")).collect();
        Self { system, names, uniform_ranges: None }
    }

    /// The three-user baseline with uniform ranges [5,15], [2,8], [1,5].
    pub fn baseline() -> Self {
        Self::parse(BASELINE_CONFIG).expect("bundled baseline parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_owned()))?;
        if raw.subsystem.is_empty() {
            return Err(Error::Config("at least one [[subsystem]] block is required".into()));
        }
        let mut subsystems = Vec::with_capacity(raw.subsystem.len());
        let mut names = Vec::with_capacity(raw.subsystem.len());
        let mut ranges = Vec::with_capacity(raw.subsystem.len());
        for (n, block) in raw.subsystem.iter().enumerate() {
            let line = line_of(text, block.span().start);
            let at = |msg: String| Error::Config(format!("line {line}: subsystem {}: {msg}", n + 1));
            let b = block.get_ref();
            let (mean, phi) = match (b.mean_file_size, &b.success_prob, b.packet_rate, &b.tx_success) {
                (Some(mean), Some(phi), None, None) => (mean, phi.clone()),
                (None, None, Some(mu), Some(q)) => {
                    if !(mu > 0.0 && mu <= 1.0) {
                        return Err(at(format!("packet_rate must lie in (0, 1], got {mu}")));
                    }
                    (1.0 / mu, q.iter().map(|&qa| phi_from_geometric(mu, qa)).collect())
                }
                _ => {
                    return Err(at("give either mean_file_size and success_prob, or packet_rate and tx_success".into()))
                }
            };
            let spec =
                SubsystemSpec::new(b.idle_rate, mean, phi, b.power.clone(), b.weight).map_err(|e| at(e.to_string()))?;
            if let Some([lo, hi]) = b.uniform_range {
                if lo < 1 || lo > hi {
                    return Err(at(format!("uniform_range [{lo}, {hi}] must satisfy 1 <= lo <= hi")));
                }
            }
            ranges.push(b.uniform_range.map(|[lo, hi]| (lo, hi)));
            names.push(b.name.clone().unwrap_or_else(|| format!("user{}", n + 1)));
            subsystems.push(spec);
        }
        let system = SystemSpec::new(subsystems, raw.power_budget, raw.max_concurrent, raw.tradeoff)
            .map_err(|e| Error::Config(e.to_string()))?;
        let uniform_ranges = ranges.iter().all(Option::is_some).then(|| ranges.into_iter().flatten().collect());
        Ok(Self { system, names, uniform_ranges })
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// The three-user simulation baseline, also shipped as `configs/baseline.toml`.
pub const BASELINE_CONFIG: &str = r#"# Three users, one server, unit power budget.
power_budget = 1.0
max_concurrent = 1
tradeoff = 70.0

[[subsystem]]
name = "user1"
idle_rate = 0.8
packet_rate = 0.1
tx_success = [0.0, 0.9]
power = [0.0, 2.0]
weight = 1.0
uniform_range = [5, 15]

[[subsystem]]
name = "user2"
idle_rate = 0.5
packet_rate = 0.2
tx_success = [0.0, 0.8]
power = [0.0, 1.5]
weight = 1.5
uniform_range = [2, 8]

[[subsystem]]
name = "user3"
idle_rate = 0.1
packet_rate = 0.4
tx_success = [0.0, 0.7]
power = [0.0, 1.0]
weight = 2.0
uniform_range = [1, 5]
"#;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::baseline_system;

    #[test]
    fn baseline_matches_builtin() {
        let cfg = SystemConfig::baseline();
        assert_eq!(cfg.system, baseline_system(70.0));
        assert_eq!(cfg.uniform_ranges, Some(vec![(5, 15), (2, 8), (1, 5)]));
        assert_eq!(cfg.names, vec!["user1", "user2", "user3"]);
    }

    #[test]
    fn direct_parameterization() {
        let cfg = SystemConfig::parse(
            "power_budget = 2.0\nmax_concurrent = 1\n[[subsystem]]\nidle_rate = 0.5\nmean_file_size = 4.0\nsuccess_prob = [0.0, 0.2, 0.4]\npower = [0.0, 1.0, 3.0]\n",
        )
        .unwrap();
        let s = cfg.system.subsystem(0);
        assert_eq!(s.num_actions(), 3);
        assert_eq!(s.weight(), 1.0);
        assert_eq!(cfg.system.tradeoff(), 0.0);
        assert_eq!(cfg.uniform_ranges, None);
    }

    #[test]
    fn syntax_errors_report_lines() {
        let err = SystemConfig::parse("power_budget = 1.0\nmax_concurrent = = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn semantic_errors_report_block_line() {
        let text = "power_budget = 1.0\nmax_concurrent = 1\n\n[[subsystem]]\nidle_rate = 0.0\nmean_file_size = 1.0\nsuccess_prob = [0.0, 0.5]\npower = [0.0, 1.0]\n";
        let err = SystemConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("line 5") || err.contains("line 4"), "{err}");
        assert!(err.contains("idle_rate"), "{err}");
    }

    #[test]
    fn rejects_mixed_parameterizations_and_unknown_keys() {
        let mixed = "power_budget = 1.0\nmax_concurrent = 1\n[[subsystem]]\nidle_rate = 0.5\nmean_file_size = 1.0\ntx_success = [0.0, 0.5]\npower = [0.0, 1.0]\n";
        assert!(SystemConfig::parse(mixed).is_err());
        let unknown = "power_budget = 1.0\nmax_concurrent = 1\nfoo = 3\n[[subsystem]]\nidle_rate = 0.5\nmean_file_size = 1.0\nsuccess_prob = [0.0, 0.5]\npower = [0.0, 1.0]\n";
        assert!(SystemConfig::parse(unknown).is_err());
    }
}
