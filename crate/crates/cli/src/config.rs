//! Run configuration file (TOML).
//!
//! ```toml
//! seed = 1
//! realizations = 100
//!
//! [coefficients]
//! file = "pathloss_28ghz.toml"   # relative to this file
//!
//! [system]       # any SystemParams field; defaults otherwise
//! [controller]   # any ControllerConfig field except c0_bps
//! [fronthaul]    # n_bit, n_ac, t_s
//!
//! [converge]
//! d_ap = 50.0
//! d_cpu = 200.0
//! d_ris_cpu = 5.0
//! n_used = 400
//!
//! [sweep]
//! modes = ["optimized", "random_phases", "off"]
//! [[sweep.scenarios]]
//! name = "dcpu175_n400"
//! d_cpu = 175.0
//! n_used = 400
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fronthaul_core::channel::{Geometry, PathlossCoeffs, SystemParams};
use fronthaul_core::controller::ControllerConfig;
use fronthaul_core::survivability::{FronthaulSpec, RisMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that overrides `coefficients.file`.
pub const COEFFS_ENV: &str = "FRONTHAUL_COEFFS";

fn default_seed() -> u64 {
    1
}

fn default_realizations() -> usize {
    100
}

fn default_d_ap() -> f64 {
    50.0
}

fn default_d_ris_cpu() -> f64 {
    5.0
}

fn default_modes() -> Vec<RisMode> {
    RisMode::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientsSection>,
    #[serde(default)]
    pub system: SystemParams,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub fronthaul: FronthaulSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSection {
    pub file: PathBuf,
}

/// Fronthaul parameters shared by every scenario; `n_used` is per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FronthaulSection {
    pub n_bit: u32,
    pub n_ac: u32,
    pub t_s: f64,
}

impl Default for FronthaulSection {
    fn default() -> Self {
        let d = FronthaulSpec::default();
        FronthaulSection {
            n_bit: d.n_bit,
            n_ac: d.n_ac,
            t_s: d.t_s,
        }
    }
}

impl FronthaulSection {
    pub fn spec(&self, n_used: u32) -> FronthaulSpec {
        FronthaulSpec {
            n_used,
            n_bit: self.n_bit,
            n_ac: self.n_ac,
            t_s: self.t_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeSection {
    pub d_ap: f64,
    pub d_cpu: f64,
    pub d_ris_cpu: f64,
    pub n_used: u32,
    /// Realization stream used under the master seed.
    #[serde(default)]
    pub realization: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_modes")]
    pub modes: Vec<RisMode>,
    pub scenarios: Vec<ScenarioSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default = "default_d_ap")]
    pub d_ap: f64,
    pub d_cpu: f64,
    #[serde(default = "default_d_ris_cpu")]
    pub d_ris_cpu: f64,
    pub n_used: u32,
}

impl ScenarioSection {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            d_ap: self.d_ap,
            d_cpu: self.d_cpu,
            d_ris_cpu: self.d_ris_cpu,
        }
    }
}

/// A parsed configuration together with the file it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub run: RunConfig,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: cannot read: {e}", path.display())))?;
        let run: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
        Ok(LoadedConfig {
            path: path.to_path_buf(),
            run,
        })
    }

    /// Coefficient file: the environment override if set, else
    /// `coefficients.file` resolved against the config's directory.
    pub fn coefficients_path(&self) -> Result<PathBuf, String> {
        if let Some(p) = std::env::var_os(COEFFS_ENV).filter(|p| !p.is_empty()) {
            return Ok(PathBuf::from(p));
        }
        let section = self
            .run
            .coefficients
            .as_ref()
            .ok_or_else(|| format!("coefficients.file: missing (or set {COEFFS_ENV})"))?;
        if section.file.is_absolute() {
            Ok(section.file.clone())
        } else {
            let dir = self.path.parent().unwrap_or(Path::new("."));
            Ok(dir.join(&section.file))
        }
    }

    pub fn load_coefficients(&self) -> Result<PathlossCoeffs, String> {
        let path = self.coefficients_path()?;
        if !path.is_file() {
            return Err(format!("coefficients.file: {} does not exist", path.display()));
        }
        PathlossCoeffs::from_file(&path).map_err(|e| format!("coefficients.file: {}: {e}", path.display()))
    }

    /// Every violation found, each prefixed with its field path.
    pub fn violations(&self) -> Vec<String> {
        let run = &self.run;
        let mut out = Vec::new();
        if run.realizations == 0 {
            out.push("realizations: must be at least 1".to_string());
        }
        if let Err(e) = self.load_coefficients() {
            out.push(e);
        }
        if let Err(e) = run.system.validate() {
            out.push(prefixed("system", &e));
        }
        let controller = ControllerConfig {
            c0_bps: 1.0,
            ..run.controller
        };
        if let Err(e) = controller.validate() {
            out.push(prefixed("controller", &e));
        }
        if let Err(e) = run.fronthaul.spec(1).validate() {
            out.push(prefixed("fronthaul", &e));
        }
        if let Some(c) = &run.converge {
            check_distances(
                "converge",
                [("d_ap", c.d_ap), ("d_cpu", c.d_cpu), ("d_ris_cpu", c.d_ris_cpu)],
                &mut out,
            );
            if c.n_used == 0 {
                out.push("converge.n_used: must be at least 1".into());
            }
        }
        if let Some(s) = &run.sweep {
            if s.modes.is_empty() {
                out.push("sweep.modes: must list at least one mode".into());
            }
            if s.scenarios.is_empty() {
                out.push("sweep.scenarios: must list at least one scenario".into());
            }
            let mut names = BTreeSet::new();
            for (i, sc) in s.scenarios.iter().enumerate() {
                let path = format!("sweep.scenarios[{i}]");
                if !is_safe_name(&sc.name) {
                    out.push(format!(
                        "{path}.name: `{}` must be non-empty ASCII letters, digits, '-' or '_'",
                        sc.name
                    ));
                } else if !names.insert(sc.name.as_str()) {
                    out.push(format!("{path}.name: duplicate scenario name `{}`", sc.name));
                }
                check_distances(
                    &path,
                    [("d_ap", sc.d_ap), ("d_cpu", sc.d_cpu), ("d_ris_cpu", sc.d_ris_cpu)],
                    &mut out,
                );
                if sc.n_used == 0 {
                    out.push(format!("{path}.n_used: must be at least 1"));
                }
            }
        }
        out
    }
}

fn prefixed(section: &str, e: &fronthaul_core::Error) -> String {
    match e {
        fronthaul_core::Error::InvalidParameter { field, reason } => format!("{section}.{field}: {reason}"),
        other => format!("{section}: {other}"),
    }
}

fn check_distances<const N: usize>(path: &str, fields: [(&str, f64); N], out: &mut Vec<String>) {
    for (name, v) in fields {
        if !(v.is_finite() && v > 0.0) {
            out.push(format!("{path}.{name}: must be a positive distance, got {v}"));
        }
    }
}

fn is_safe_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}
