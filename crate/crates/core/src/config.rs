//! JSON experiment configuration. Every key is optional; anything left out
//! keeps the standard value of the selected scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::fd::MetanetFdParams;
use crate::scenario::{ControlMode, DemandProfile, ScenarioConfig, ScenarioId};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_length_km: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lanes: Option<u32>,
    /// One-based cell index of the on-ramp.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub onramp_cell: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub main: Option<DemandProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ramp: Option<DemandProfile>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ramp_capacity: Option<f64>,
    /// Known set-points `[phase 1, phase 2]` for the fixed-set-point scenarios.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setpoints: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_star_0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_star_0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_0: Option<f64>,
    #[serde(rename = "K_r", skip_serializing_if = "Option::is_none")]
    pub k_r: Option<f64>,
    #[serde(rename = "C_r", skip_serializing_if = "Option::is_none")]
    pub c_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prescale: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub switch_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_density: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critical_targets: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd1: Option<MetanetFdParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd2: Option<MetanetFdParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub demand: Option<DemandFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorFile>,
}

/// A parsed file together with the raw overrides it contained.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub file: ConfigFile,
    /// The keys present in the file, echoed into summaries.
    pub overrides: Value,
}

impl ParsedConfig {
    pub fn default_scenario(&self) -> ScenarioId {
        self.file.scenario.unwrap_or(ScenarioId::S4a)
    }

    /// The selected scenario with this file's overrides applied and validated.
    pub fn build(&self, id: ScenarioId) -> Result<ScenarioConfig> {
        let cfg = self.file.apply(ScenarioConfig::standard(id));
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_config_str(text: &str) -> Result<ParsedConfig> {
    let overrides: Value = if text.trim().is_empty() {
        Value::Object(Default::default())
    } else {
        serde_json::from_str(text).map_err(|e| Error::config(json_field(&e), e.to_string()))?
    };
    let file: ConfigFile =
        serde_json::from_value(overrides.clone()).map_err(|e| Error::config(json_field(&e), e.to_string()))?;
    let parsed = ParsedConfig { file, overrides };
    parsed.build(parsed.default_scenario())?;
    Ok(parsed)
}

pub fn parse_config(path: &Path) -> Result<ParsedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

impl ConfigFile {
    pub fn apply(&self, mut c: ScenarioConfig) -> ScenarioConfig {
        if let Some(id) = self.scenario {
            c.id = if id == ScenarioId::Custom { id } else { c.id };
        }
        set(&mut c.steps, self.horizon_steps);
        if let Some(s) = self.step_s {
            c.model.t = s / 3600.0;
        }
        set(&mut c.switch_step, self.switch_step);
        set(&mut c.initial_density, self.initial_density);
        set(&mut c.seed, self.seed);
        set(&mut c.noise_std, self.noise_std);
        set(&mut c.critical_targets, self.critical_targets);
        if let Some(n) = &self.network {
            set(&mut c.cells, n.cells);
            set(&mut c.cell_length, n.cell_length_km);
            set(&mut c.lanes, n.lanes);
            if let Some(i) = n.onramp_cell {
                c.onramp_cell = i.wrapping_sub(1);
            }
        }
        if let Some(m) = &self.model {
            if let Some(tau) = m.tau_s {
                c.model.tau = tau / 3600.0;
            }
            set(&mut c.model.nu, m.nu);
            set(&mut c.model.kappa, m.kappa);
            set(&mut c.model.delta, m.delta);
        }
        set(&mut c.fd_before, self.fd1);
        set(&mut c.fd_after, self.fd2);
        if let Some(d) = &self.demand {
            set(&mut c.main_demand, d.main.clone());
            set(&mut c.ramp_demand, d.ramp.clone());
        }
        if let Some(k) = &self.controller {
            set(&mut c.alinea_gain, k.gain);
            set(&mut c.u_min, k.u_min);
            set(&mut c.u_max, k.u_max);
            set(&mut c.ramp_capacity, k.ramp_capacity);
            if let (Some([p1, p2]), ControlMode::Known { phase1, phase2 }) = (k.setpoints, &mut c.control) {
                (*phase1, *phase2) = match c.id {
                    ScenarioId::S3a => (p1, p1),
                    ScenarioId::S3b => (p2, p2),
                    _ => (p1, p2),
                };
            }
        }
        if let (Some(e), ControlMode::Adaptive { estimator }) = (&self.estimator, &mut c.control) {
            e.apply(estimator);
        }
        c
    }

    /// Full description of `c`, so that `apply` on a fresh scenario rebuilds it.
    pub fn from_scenario(c: &ScenarioConfig) -> Self {
        let estimator = match &c.control {
            ControlMode::Adaptive { estimator: e } => Some(EstimatorFile {
                rho_star_0: Some(e.rho_star_0),
                q_star_0: Some(e.q_star_0),
                gamma_0: Some(e.gamma_0),
                k_r: Some(e.reference.k_r),
                c_r: Some(e.reference.c_r),
                prescale: Some(e.prescale),
                memory_rate: Some(e.memory_rate),
                rho_min: Some(e.rho_min),
                rho_max: Some(e.rho_max),
            }),
            _ => None,
        };
        let setpoints = match c.control {
            ControlMode::Known { phase1, phase2 } => Some([phase1, phase2]),
            _ => None,
        };
        Self {
            scenario: Some(c.id),
            horizon_steps: Some(c.steps),
            step_s: Some(c.model.t * 3600.0),
            switch_step: Some(c.switch_step),
            initial_density: Some(c.initial_density),
            seed: Some(c.seed),
            noise_std: Some(c.noise_std),
            critical_targets: Some(c.critical_targets),
            network: Some(NetworkFile {
                cells: Some(c.cells),
                cell_length_km: Some(c.cell_length),
                lanes: Some(c.lanes),
                onramp_cell: Some(c.onramp_cell + 1),
            }),
            model: Some(ModelFile {
                tau_s: Some(c.model.tau * 3600.0),
                nu: Some(c.model.nu),
                kappa: Some(c.model.kappa),
                delta: Some(c.model.delta),
            }),
            fd1: Some(c.fd_before),
            fd2: Some(c.fd_after),
            demand: Some(DemandFile {
                main: Some(c.main_demand.clone()),
                ramp: Some(c.ramp_demand.clone()),
            }),
            controller: Some(ControllerFile {
                gain: Some(c.alinea_gain),
                u_min: Some(c.u_min),
                u_max: Some(c.u_max),
                ramp_capacity: Some(c.ramp_capacity),
                setpoints,
            }),
            estimator,
        }
    }
}

impl EstimatorFile {
    fn apply(&self, e: &mut EstimatorConfig) {
        set(&mut e.rho_star_0, self.rho_star_0);
        set(&mut e.q_star_0, self.q_star_0);
        set(&mut e.gamma_0, self.gamma_0);
        set(&mut e.reference.k_r, self.k_r);
        set(&mut e.reference.c_r, self.c_r);
        set(&mut e.prescale, self.prescale);
        set(&mut e.memory_rate, self.memory_rate);
        set(&mut e.rho_min, self.rho_min);
        set(&mut e.rho_max, self.rho_max);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
