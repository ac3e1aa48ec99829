//! JSON configuration with dotted `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{config_err, Error, Result};
use crate::experiment::{Controller, FreezeStart, TrialConfig, DEFAULT_RESAMPLE_POINTS};
use crate::path::{Workspace, DEFAULT_GRID_POINTS};
use crate::pursuit::PpGains;
use crate::qp::Limits;
use crate::screen::DEFAULT_SCREEN_SAMPLES;
use crate::tracker::{NoiseBounds, WeightPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerChoice {
    Qp,
    Pp,
    Both,
}

impl ControllerChoice {
    pub fn controllers(self) -> Vec<Controller> {
        match self {
            ControllerChoice::Qp => vec![Controller::Qp],
            ControllerChoice::Pp => vec![Controller::Pp],
            ControllerChoice::Both => vec![Controller::Qp, Controller::Pp],
        }
    }
}

impl std::str::FromStr for ControllerChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "qp" => Ok(ControllerChoice::Qp),
            "pp" => Ok(ControllerChoice::Pp),
            "both" => Ok(ControllerChoice::Both),
            other => Err(format!("unknown controller `{other}` (expected qp, pp or both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub trials: usize,
    pub duration: f64,
    pub path_duration: f64,
    pub grid_points: usize,
    pub freeze_duration: f64,
    pub freeze_start: FreezeStart,
    pub controller: ControllerChoice,
    pub resample_points: usize,
    pub screen_samples: usize,
    pub speed_caps: bool,
    pub mask_braking: bool,
    pub parallel: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seed: 0,
            trials: 50,
            duration: 10.0,
            path_duration: 10.0,
            grid_points: DEFAULT_GRID_POINTS,
            freeze_duration: 1.0,
            freeze_start: FreezeStart::default(),
            controller: ControllerChoice::Both,
            resample_points: DEFAULT_RESAMPLE_POINTS,
            screen_samples: DEFAULT_SCREEN_SAMPLES,
            speed_caps: false,
            mask_braking: true,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub workspace: Workspace,
    pub limits: Limits,
    pub noise: NoiseBounds,
    pub policy: WeightPolicy,
    pub pp_gains: PpGains,
    pub experiment: ExperimentSection,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.trial(Controller::Qp).validate()?;
        if self.experiment.trials == 0 {
            return Err(config_err("experiment.trials must be at least 1"));
        }
        if self.experiment.resample_points < 2 {
            return Err(config_err("experiment.resample_points must be at least 2"));
        }
        Ok(())
    }

    /// Trial configuration for the configured seed and the given controller.
    pub fn trial(&self, controller: Controller) -> TrialConfig {
        let e = &self.experiment;
        TrialConfig {
            seed: e.seed,
            controller,
            duration: e.duration,
            path_duration: e.path_duration,
            grid_points: e.grid_points,
            freeze_duration: e.freeze_duration,
            freeze_start: e.freeze_start,
            mask_braking: e.mask_braking,
            speed_caps: e.speed_caps,
            screen_samples: e.screen_samples,
            workspace: self.workspace,
            limits: self.limits,
            noise: self.noise,
            policy: self.policy,
            pp_gains: self.pp_gains,
        }
    }

    /// Parse and validate a JSON document, then apply `overrides`.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Config> {
        let cfg: Config = if overrides.is_empty() {
            serde_json::from_str(text).map_err(parse_error)?
        } else {
            let mut doc: Value = serde_json::from_str(text).map_err(parse_error)?;
            for item in overrides {
                apply_override(&mut doc, item)?;
            }
            serde_json::from_value(doc).map_err(|e| config_err(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Set a dotted key in a JSON document. The value is read as JSON when it
/// parses and as a plain string otherwise.
pub fn apply_override(doc: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{item}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config_err(format!("override `{item}` has an empty key segment")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));

    let mut node = doc;
    for segment in key.split('.') {
        if !node.is_object() {
            return Err(config_err(format!("override `{key}` descends into a non-object")));
        }
        node = node
            .as_object_mut()
            .expect("checked above")
            .entry(segment)
            .or_insert_with(|| Value::Object(Default::default()));
    }
    *node = value;
    Ok(())
}

/// Load a configuration file, or the defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => "{}".to_string(),
    };
    Config::from_json(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = Config::from_json("{}", &[]).unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.limits.a_max, 5.0);
        assert_eq!(cfg.experiment.trials, 50);
        assert_eq!(cfg.noise.eps_p, 1e-3);
    }

    #[test]
    fn override_applies() {
        let cfg = Config::from_json("{}", &["limits.a_max=3.0".into()]).unwrap();
        assert_eq!(cfg.limits.a_max, 3.0);
        let cfg = Config::from_json("{}", &["experiment.freeze_start=2.0".into()]).unwrap();
        assert_eq!(cfg.experiment.freeze_start, FreezeStart::At(2.0));
        let cfg = Config::from_json("{}", &["experiment.controller=pp".into()]).unwrap();
        assert_eq!(cfg.experiment.controller, ControllerChoice::Pp);
    }

    #[test]
    fn sigma_bound_is_named() {
        let err = Config::from_json(r#"{"noise": {"eps_p": 0.05}}"#, &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("sigma"), "{err}");
    }

    #[test]
    fn parse_error_has_position() {
        let err = Config::from_json("{\n  \"limits\": {\n    \"a_max\": ,\n  }\n}", &[]).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(Config::from_json(r#"{"limits": {"a_mx": 1}}"#, &[]).is_err());
        assert!(Config::from_json("{}", &["limits.bogus=1".into()]).is_err());
        assert!(Config::from_json("{}", &["novalue".into()]).is_err());
    }

    #[test]
    fn freeze_must_fit() {
        let err = Config::from_json("{}", &["experiment.freeze_duration=11".into()]).unwrap_err();
        assert!(err.to_string().contains("freeze"));
    }
}
