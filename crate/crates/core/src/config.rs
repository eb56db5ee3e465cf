//! Run configuration as read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsConfig;
use crate::error::{Error, Result};
use crate::high_level::HighLevelConfig;
use crate::low_level::LowLevelConfig;
use crate::task_graph::{GraphSpec, TaskGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub horizon_high: usize,
    pub horizon_low: usize,
    pub improver_high: bool,
    pub improver_low: bool,
    pub shoot_budget: usize,
    pub seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            horizon_high: 3,
            horizon_low: 15,
            improver_high: true,
            improver_low: true,
            shoot_budget: 2,
            seed: 0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.horizon_high == 0 {
            errs.push("controller.horizon_high must be at least 1".into());
        }
        if self.horizon_low == 0 {
            errs.push("controller.horizon_low must be at least 1".into());
        }
        errs
    }

    pub fn high_level(&self) -> HighLevelConfig {
        HighLevelConfig {
            horizon: self.horizon_high,
            ..HighLevelConfig::default()
        }
    }

    pub fn low_level(&self) -> LowLevelConfig {
        LowLevelConfig {
            horizon: self.horizon_low,
            improver: self.improver_low,
            shoot_budget: self.shoot_budget,
            ..LowLevelConfig::default()
        }
    }

    /// Turns both improvers on or off.
    pub fn set_improvers(&mut self, on: bool) {
        self.improver_high = on;
        self.improver_low = on;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub iterations: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            iterations: 5,
            out_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub graph: GraphSpec,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn new(graph: GraphSpec) -> Self {
        RunConfig {
            graph,
            dynamics: DynamicsConfig::default(),
            controller: ControllerConfig::default(),
            run: RunSection::default(),
        }
    }

    /// Every semantic violation in the configuration.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = self.dynamics.validate();
        errs.extend(self.controller.validate());
        if !self.dynamics.chi_bounds.heading.is_empty() {
            if let Err(graph_errs) = TaskGraph::from_spec(&self.graph, self.dynamics.chi_bounds.heading) {
                errs.extend(graph_errs.into_iter().map(|e| format!("graph: {e}")));
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn task_graph(&self) -> Result<TaskGraph> {
        TaskGraph::from_spec(&self.graph, self.dynamics.chi_bounds.heading)
            .map_err(|errs| Error::Config(errs.into_iter().map(|e| format!("graph: {e}")).collect()))
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text).map_err(|e| match e {
        Error::Config(errs) => Error::Config(errs.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "graph": {
            "nodes": [{"id": 1, "x": 0, "y": 0}, {"id": 2, "x": 10, "y": 0}],
            "edges": [[1, 2]],
            "bidirectional": true,
            "depot": 1
        }
    }"#;

    #[test]
    fn defaults_apply() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.controller, ControllerConfig::default());
        assert_eq!(cfg.dynamics, DynamicsConfig::default());
        assert_eq!(cfg.controller.horizon_high, 3);
        assert_eq!(cfg.controller.horizon_low, 15);
    }

    #[test]
    fn zero_dt_rejected() {
        let text = MINIMAL.replacen("\"graph\"", "\"dynamics\": {\"dt\": 0}, \"graph\"", 1);
        let Err(Error::Config(errs)) = RunConfig::from_json(&text) else {
            panic!("dt = 0 accepted");
        };
        assert!(errs.iter().any(|e| e.contains("dt")));
    }

    #[test]
    fn missing_depot_names_field() {
        let text = MINIMAL.replace(",\n            \"depot\": 1", "");
        let Err(Error::Config(errs)) = RunConfig::from_json(&text) else {
            panic!("missing depot accepted");
        };
        assert!(errs[0].contains("depot") && errs[0].contains("line"), "{errs:?}");
    }

    #[test]
    fn all_violations_reported() {
        let text = MINIMAL
            .replacen("\"graph\"", "\"dynamics\": {\"dt\": -1, \"alpha\": -2}, \"controller\": {\"horizon_high\": 0}, \"graph\"", 1)
            .replace("\"depot\": 1", "\"depot\": 9");
        let Err(Error::Config(errs)) = RunConfig::from_json(&text) else {
            panic!("accepted");
        };
        assert!(errs.len() >= 4, "{errs:?}");
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
