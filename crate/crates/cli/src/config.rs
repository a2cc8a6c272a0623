//! Run settings shared by all subcommands. Values come from an optional TOML
//! file and are overridden field by field by command-line flags.

use std::path::Path;

use flockcp_core::experiments::{InitSpec, ProcessKind, DEFAULT_FLOCK_CAP};
use flockcp_core::{Configuration, Geometry, ModelParams, Phi, Site};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "d", skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub max_flock: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<Phi>,
    /// `sparse` or `torus:<side>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    /// `single:<k>`, `all-n` or `explicit:<site>=<state>;...`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    /// `eta`, `contact` or `branching`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),*) => {
        RunConfig { $($field: $top.$field.or($base.$field)),* }
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Fields set in `top` win.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        overlay!(
            self, top, dim, max_flock, lambda, phi, geometry, seed, t_max, trials, init, process, cap, eps, resolution
        )
    }

    pub fn dim(&self) -> usize {
        self.dim.unwrap_or(1)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn geometry(&self) -> Result<Geometry, CliError> {
        match &self.geometry {
            Some(g) => Ok(g.parse()?),
            None => Ok(Geometry::SparseUnbounded),
        }
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        self.params_with(self.geometry()?)
    }

    pub fn params_with(&self, geometry: Geometry) -> Result<ModelParams, CliError> {
        Ok(ModelParams::new(
            self.dim(),
            self.max_flock.unwrap_or(1),
            self.lambda.unwrap_or(1.0),
            self.phi.unwrap_or(Phi::Finite(1.0)),
            geometry,
        )?)
    }

    pub fn init_spec(&self) -> Result<InitSpec, CliError> {
        parse_init(self.init.as_deref().unwrap_or("single:1"), self.dim())
    }

    pub fn process_kind(&self) -> Result<ProcessKind, CliError> {
        match self.process.as_deref().unwrap_or("eta") {
            "eta" => Ok(ProcessKind::Eta),
            "contact" => Ok(ProcessKind::Contact),
            "branching" => Ok(ProcessKind::Branching),
            other => Err(CliError::Usage(format!(
                "process must be eta, contact or branching, got {other:?}"
            ))),
        }
    }

    pub fn cap(&self) -> u64 {
        self.cap.unwrap_or(DEFAULT_FLOCK_CAP)
    }

    /// Fills every unset field a command reads with its default, so the
    /// manifest records exactly what ran.
    pub fn resolved(mut self, t_max: f64) -> RunConfig {
        self.dim.get_or_insert(1);
        self.max_flock.get_or_insert(1);
        self.lambda.get_or_insert(1.0);
        self.phi.get_or_insert(Phi::Finite(1.0));
        self.geometry.get_or_insert_with(|| "sparse".into());
        self.seed.get_or_insert(0);
        self.t_max.get_or_insert(t_max);
        self
    }
}

/// Parses `single:<k>`, `all-n` or `explicit:<site>=<state>;...` where a
/// site is written `x` or `x,y,...`.
pub fn parse_init(text: &str, dim: usize) -> Result<InitSpec, CliError> {
    let text = text.trim();
    if text == "all-n" || text == "all_n" {
        return Ok(InitSpec::AllN);
    }
    if let Some(k) = text.strip_prefix("single:") {
        let state = k
            .parse()
            .map_err(|e| CliError::Usage(format!("bad initial state {k:?}: {e}")))?;
        return Ok(InitSpec::SingleAtOrigin { state });
    }
    if let Some(rest) = text.strip_prefix("explicit:") {
        let mut config = Configuration::new();
        for entry in rest.split(';').filter(|e| !e.trim().is_empty()) {
            let (site, state) = entry
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("bad explicit entry {entry:?}; expected site=state")))?;
            let site: Site = site.parse()?;
            if site.dim() != dim {
                return Err(CliError::Usage(format!("site {site} has the wrong dimension for d = {dim}")));
            }
            let state = state
                .trim()
                .parse()
                .map_err(|e| CliError::Usage(format!("bad state in {entry:?}: {e}")))?;
            config.set(site, state);
        }
        return Ok(InitSpec::Explicit(config));
    }
    Err(CliError::Usage(format!(
        "init must be single:<k>, all-n or explicit:<site>=<state>;..., got {text:?}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: RunConfig = toml::from_str("d = 2\nN = 3\nlambda = 0.5\nphi = \"inf\"\nseed = 9").unwrap();
        let flags = RunConfig {
            lambda: Some(2.0),
            ..Default::default()
        };
        let eff = file.overlay(flags);
        assert_eq!(eff.dim, Some(2));
        assert_eq!(eff.max_flock, Some(3));
        assert_eq!(eff.lambda, Some(2.0));
        assert_eq!(eff.phi, Some(Phi::Infinite));
        assert_eq!(eff.seed, Some(9));
    }

    #[test]
    fn integer_phi_in_file() {
        let file: RunConfig = toml::from_str("phi = 1").unwrap();
        assert_eq!(file.phi, Some(Phi::Finite(1.0)));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("lamda = 1.0").is_err());
    }

    #[test]
    fn init_forms() {
        assert_eq!(parse_init("single:3", 1).unwrap(), InitSpec::SingleAtOrigin { state: 3 });
        assert_eq!(parse_init("all-n", 1).unwrap(), InitSpec::AllN);
        let InitSpec::Explicit(c) = parse_init("explicit:0,0=2;1,0=1", 2).unwrap() else {
            panic!("explicit");
        };
        assert_eq!(c.get(&Site::new(&[0, 0])), 2);
        assert_eq!(c.get(&Site::new(&[1, 0])), 1);
        assert!(parse_init("explicit:0=1", 2).is_err());
        assert!(parse_init("random", 1).is_err());
    }
}
