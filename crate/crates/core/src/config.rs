//! Declarative experiment configuration.
//!
//! Configurations are TOML documents. A handful of presets ship with the crate
//! and can be referred to by name wherever a config path is accepted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentId, AgentPolicy};
use crate::env::{RewardFamily, RewardMatrix};
use crate::error::{Error, Result};
use crate::game::{EpsilonSchedule, PairingPolicy};
use crate::metrics::{SingleHolders, TieRule};
use crate::scalar::Scalar;

pub const DEFAULT_EPISODES: u64 = 10_000;
pub const DEFAULT_REPETITIONS: usize = 1000;
pub const DEFAULT_CHECKPOINTS: [u64; 4] = [100, 500, 5000, 10_000];

/// Bundled presets as `(name, toml source)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("exp1_2agents", include_str!("../configs/exp1_2agents.toml")),
    ("exp2_3unrestricted", include_str!("../configs/exp2_3unrestricted.toml")),
    ("exp3_3restricted", include_str!("../configs/exp3_3restricted.toml")),
    ("exp3b_4restricted", include_str!("../configs/exp3b_4restricted.toml")),
    ("val_3x3", include_str!("../configs/val_3x3.toml")),
    ("val_asymmetric", include_str!("../configs/val_asymmetric.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Phase-local episode numbers at which window averages are reported.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<u64>,
    pub phase1: Phase1Config,
    pub intervention: Intervention,
    #[serde(default)]
    pub phase2: Phase2Config,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub epsilon: EpsilonSchedule,
    #[serde(default)]
    pub agent: AgentPolicy,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase1Config {
    pub agents: usize,
    #[serde(default = "default_episodes")]
    pub episodes: u64,
    /// Agent indices per group; when present, only cross-group pairs interact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase2Config {
    #[serde(default = "default_episodes")]
    pub episodes: u64,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self { episodes: DEFAULT_EPISODES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intervention {
    /// A naive agent joins and everyone may interact with everyone.
    PopulationIncrease,
    /// Group restrictions are lifted.
    Ungroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    /// Symbolic family such as `symmetric_2x2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Explicit matrices, each sampled with equal probability.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matrices: Vec<MatrixConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub tag: String,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub alignment_ties: TieRule,
    pub single_holders: SingleHolders,
}

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn default_episodes() -> u64 {
    DEFAULT_EPISODES
}

fn default_checkpoints() -> Vec<u64> {
    DEFAULT_CHECKPOINTS.to_vec()
}

fn parse_symmetric(name: &str) -> Option<usize> {
    let dims = name.strip_prefix("symmetric_")?;
    let (a, b) = dims.split_once('x')?;
    let (a, b) = (a.parse().ok()?, b.parse::<usize>().ok()?);
    (a == b && a >= 1).then_some(a)
}

impl EnvironmentConfig {
    pub fn family<T: Scalar>(&self) -> Result<RewardFamily<T>> {
        match (&self.family, self.matrices.is_empty()) {
            (Some(_), false) => Err(Error::Config("environment sets both `family` and `matrices`".into())),
            (None, true) => Err(Error::Config("environment needs `family` or `matrices`".into())),
            (Some(name), true) => {
                let n =
                    parse_symmetric(name).ok_or_else(|| Error::Config(format!("unknown reward family `{name}`")))?;
                RewardFamily::symmetric(n)
            }
            (None, false) => {
                let members = self
                    .matrices
                    .iter()
                    .map(|m| {
                        let rows = m
                            .rows
                            .iter()
                            .map(|row| {
                                row.iter()
                                    .map(|&v| {
                                        T::from_config(v).ok_or_else(|| {
                                            Error::Config(format!("{}: value {v} not representable", m.tag))
                                        })
                                    })
                                    .collect::<Result<Vec<T>>>()
                            })
                            .collect::<Result<Vec<_>>>()?;
                        RewardMatrix::from_rows(m.tag.clone(), rows)
                    })
                    .collect::<Result<Vec<_>>>()?;
                RewardFamily::new(members)
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        Self::from_toml_with_overrides(src, &[])
    }

    /// Parses `src` after applying `key=value` overrides with dotted keys,
    /// e.g. `phase1.agents=2` or `epsilon.clock="per_phase"`.
    pub fn from_toml_with_overrides(src: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(src).map_err(|e| Error::Parse { path: "<config>".into(), message: e.to_string() })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse { path: "<config>".into(), message: e.to_string() })
    }

    pub fn preset(name: &str) -> Option<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, src)| Self::from_toml_str(src).expect("bundled preset parses"))
    }

    /// Loads a config file, or a bundled preset when `source` names one and no
    /// such file exists.
    pub fn load(source: &str, overrides: &[String]) -> Result<Self> {
        let path = Path::new(source);
        let (src, origin) = if path.exists() {
            (std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?, path.to_path_buf())
        } else if let Some((_, src)) = PRESETS.iter().find(|(n, _)| *n == source) {
            (src.to_string(), format!("preset:{source}").into())
        } else {
            return Err(Error::Config(format!("`{source}` is neither a config file nor a preset")));
        };
        Self::from_toml_with_overrides(&src, overrides).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { path: origin, message },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn phase1_population(&self) -> Vec<AgentId> {
        (0..self.phase1.agents as u32).map(AgentId).collect()
    }

    pub fn phase2_agents(&self) -> usize {
        match self.intervention {
            Intervention::PopulationIncrease => self.phase1.agents + 1,
            Intervention::Ungroup => self.phase1.agents,
        }
    }

    pub fn phase1_pairing(&self) -> Result<PairingPolicy> {
        let population = self.phase1_population();
        match &self.phase1.groups {
            Some(groups) => PairingPolicy::cross_group(
                population,
                groups.iter().map(|g| g.iter().copied().map(AgentId).collect()).collect(),
            ),
            None => PairingPolicy::unrestricted(population),
        }
    }

    pub fn phase2_pairing(&self) -> Result<PairingPolicy> {
        PairingPolicy::unrestricted((0..self.phase2_agents() as u32).map(AgentId).collect())
    }

    /// Every invariant violation, without running anything.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push("name must not be empty".into());
        }
        if self.repetitions == 0 {
            out.push("repetitions must be at least 1".into());
        }
        if self.phase1.agents < 2 {
            out.push(format!("phase1.agents must be at least 2, got {}", self.phase1.agents));
        }
        if self.phase1.episodes == 0 || self.phase2.episodes == 0 {
            out.push("phase episode counts must be positive".into());
        }
        if self.checkpoints.is_empty() {
            out.push("at least one checkpoint is required".into());
        }
        for &cp in &self.checkpoints {
            if cp == 0 {
                out.push("checkpoint 0 has no episodes to average".into());
            }
            if cp > self.phase1.episodes {
                out.push(format!("checkpoint {cp} exceeds phase1.episodes = {}", self.phase1.episodes));
            }
            if cp > self.phase2.episodes {
                out.push(format!("checkpoint {cp} exceeds phase2.episodes = {}", self.phase2.episodes));
            }
        }
        match (&self.phase1.groups, self.intervention) {
            (None, Intervention::Ungroup) => out.push("intervention `ungroup` requires phase1.groups".into()),
            (Some(groups), _) => {
                let non_empty = groups.iter().filter(|g| !g.is_empty()).count();
                if non_empty < 2 {
                    out.push(format!("restricted pairing needs at least 2 non-empty groups, got {non_empty}"));
                }
                let mut seen = Vec::new();
                for &m in groups.iter().flatten() {
                    if m as usize >= self.phase1.agents {
                        out.push(format!("group member {m} is outside the phase-1 population"));
                    } else if seen.contains(&m) {
                        out.push(format!("agent {m} appears in more than one group"));
                    }
                    seen.push(m);
                }
                if seen.len() < self.phase1.agents {
                    out.push(format!(
                        "groups cover {} of {} phase-1 agents",
                        seen.iter().collect::<std::collections::BTreeSet<_>>().len(),
                        self.phase1.agents
                    ));
                }
            }
            (None, Intervention::PopulationIncrease) => {}
        }
        if let Err(e) = self.environment.family::<f64>() {
            out.push(e.to_string());
        }
        let eps = &self.epsilon;
        if !(0.0..=1.0).contains(&eps.start) {
            out.push(format!("epsilon.start must lie in [0, 1], got {}", eps.start));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Violations(v))
        }
    }

    /// Checkpoints for one phase: configured ones plus the phase end, sorted.
    pub fn phase_checkpoints(&self, phase_episodes: u64) -> Vec<u64> {
        let mut cps: Vec<u64> = self.checkpoints.iter().copied().filter(|&c| c >= 1 && c <= phase_episodes).collect();
        cps.push(phase_episodes);
        cps.sort_unstable();
        cps.dedup();
        cps
    }
}

fn apply_override(table: &mut toml::Table, arg: &str) -> Result<()> {
    let (key, raw) =
        arg.split_once('=').ok_or_else(|| Error::Config(format!("override `{arg}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::Config(format!("empty override key in `{arg}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for (name, _) in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            assert_eq!(cfg.name, *name);
            assert!(cfg.violations().is_empty(), "{name}: {:?}", cfg.violations());
        }
    }

    #[test]
    fn overrides_use_dotted_keys() {
        let src = PRESETS[0].1;
        let cfg = ExperimentConfig::from_toml_with_overrides(
            src,
            &["phase1.agents=3".into(), "epsilon.clock=per_phase".into(), "repetitions = 12".into()],
        )
        .unwrap();
        assert_eq!(cfg.phase1.agents, 3);
        assert_eq!(cfg.repetitions, 12);
        assert_eq!(cfg.epsilon.clock, crate::game::EpsilonClock::PerPhase);
        assert!(ExperimentConfig::from_toml_with_overrides(src, &["nonsense".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides(src, &["name.x=1".into()]).is_err());
    }

    #[test]
    fn single_group_rejected() {
        let cfg =
            ExperimentConfig::from_toml_with_overrides(PRESETS[2].1, &["phase1.groups=[[0,1,2]]".into()]).unwrap();
        let v = cfg.violations();
        assert!(v.iter().any(|m| m.contains("at least 2 non-empty groups")), "{v:?}");
    }

    #[test]
    fn checkpoint_beyond_phase_rejected() {
        let cfg =
            ExperimentConfig::from_toml_with_overrides(PRESETS[0].1, &["checkpoints=[100, 20000]".into()]).unwrap();
        let v = cfg.violations();
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(v[0].contains("20000"));
    }

    #[test]
    fn bad_reward_family_rejected() {
        let cfg = ExperimentConfig::from_toml_with_overrides(PRESETS[0].1, &["environment.family=\"circle\"".into()])
            .unwrap();
        assert_eq!(cfg.violations().len(), 1);
        let explicit = r#"
            name = "x"
            intervention = "population_increase"
            [phase1]
            agents = 2
            [environment]
            matrices = [{ tag = "bad", rows = [[1.0, 1.0], [-1.0, 1.0]] }]
        "#;
        let cfg = ExperimentConfig::from_toml_str(explicit).unwrap();
        assert!(cfg.violations()[0].contains("exactly one positive"));
    }

    #[test]
    fn every_violation_is_listed() {
        let src = r#"
            name = ""
            repetitions = 0
            intervention = "ungroup"
            checkpoints = [0]
            [phase1]
            agents = 1
            [environment]
        "#;
        let v = ExperimentConfig::from_toml_str(src).unwrap().violations();
        assert!(v.len() >= 5, "{v:?}");
    }

    #[test]
    fn symmetric_names() {
        assert_eq!(parse_symmetric("symmetric_2x2"), Some(2));
        assert_eq!(parse_symmetric("symmetric_3x3"), Some(3));
        assert_eq!(parse_symmetric("symmetric_2x3"), None);
        assert_eq!(parse_symmetric("grid"), None);
    }

    #[test]
    fn explicit_matrices_convert_exactly() {
        let cfg = ExperimentConfig::preset("val_asymmetric").unwrap();
        let fam = cfg.environment.family::<i64>().unwrap();
        assert_eq!(fam.members().len(), 2);
        assert!(fam.members()[0].rows().flatten().any(|&v| v == -3));
    }

    #[test]
    fn phase_checkpoints_include_end() {
        let cfg = ExperimentConfig::preset("exp1_2agents").unwrap();
        assert_eq!(cfg.phase_checkpoints(10_000), vec![100, 500, 5000, 10_000]);
        assert_eq!(cfg.phase_checkpoints(600), vec![100, 500, 600]);
    }

    #[test]
    fn serialization_round_trips() {
        let cfg = ExperimentConfig::preset("exp3_3restricted").unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }
}
