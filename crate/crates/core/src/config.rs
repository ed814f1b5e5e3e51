//! Flat key-value run configuration.
//!
//! Times carry a `_us` suffix (microseconds), frequencies `_mhz`, rates
//! `_per_ms`; everything is converted to SI on access. Unknown keys are
//! rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use thiserror::Error;

use crate::analysis::SharedFitOptions;
use crate::bloch::PhysicsParams;
use crate::fock::{nbar_from_temperature, rabi_frequency, TrapMode};
use crate::sequencer::RepumpTiming;
use crate::sweep::{default_t_c_grid, Objective, Scenario, SweepPlan, SweptParam};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected key=value, got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("missing required config key '{0}'")]
    MissingKey(String),
    #[error("key '{key}': cannot parse '{value}' as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("key '{key}': {message}")]
    Invalid { key: String, message: String },
}

const KNOWN_KEYS: &[&str] = &[
    "scenario",
    "out_dir",
    "tail_threshold",
    // physics
    "gamma_eff_per_ms",
    "gamma_background_per_ms",
    "xi",
    "eta_tilde",
    "pulse_reduction_us",
    "repump_pulse_us",
    "repump_gap_us",
    "quench",
    // single-mode scenarios
    "eta",
    "freq_mhz",
    "n_max",
    "nbar_i",
    "temp_mk",
    "t_pi_n1_us",
    // single-ion schedule
    "t_c_us",
    "alpha",
    "t_r1_us",
    "t_r2_us",
    // two-mode scenario
    "eta_ip",
    "eta_op",
    "freq_ip_mhz",
    "freq_op_mhz",
    "n_max_ip",
    "n_max_op",
    "nbar_ip",
    "nbar_op",
    "t_pi_n1_ip_us",
    "t_pi_n1_op_us",
    "alpha_prime",
    "t_ip_us",
    "t_op_us",
    // high-order schedule
    "beta_max",
    "t_pulse_us",
    // sweep
    "sweep_param",
    "sweep_values",
    "t_c_grid_points",
    "objective",
    "shared_fit",
    "write_traces",
    // detection emulation
    "signal_correction",
    "signal_a",
    "signal_b",
    // spectrum
    "probe_time_us",
    "detuning_max_mhz",
    "detuning_points",
    "transitions",
];

/// Parsed key-value configuration with typed access.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Load a config file and apply `--set key=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        for (i, entry) in overrides.iter().enumerate() {
            let (key, value) = entry.split_once('=').ok_or(ConfigError::Syntax {
                line: i + 1,
                text: entry.clone(),
            })?;
            config.insert(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: idx + 1,
                text: raw.to_string(),
            })?;
            config.insert(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    fn insert(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                expected: "a number",
            }),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                expected: "a nonnegative integer",
            }),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("0") => Ok(false),
            Some("1") => Ok(true),
            Some(v) => Err(ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                expected: "0 or 1",
            }),
        }
    }

    pub fn out_dir(&self) -> &str {
        self.get("out_dir").unwrap_or("out")
    }

    pub fn tail_threshold(&self) -> Result<f64, ConfigError> {
        self.f64_or("tail_threshold", crate::fock::DEFAULT_TAIL_THRESHOLD)
    }

    pub fn t_c(&self) -> Result<f64, ConfigError> {
        Ok(self.f64_or("t_c_us", 500.0)? * 1e-6)
    }

    fn initial_nbar(&self, key_nbar: &str, mode: &TrapMode, default_nbar: Option<f64>) -> Result<f64, ConfigError> {
        if let Some(v) = self.get(key_nbar) {
            if self.get("temp_mk").is_some() {
                return Err(ConfigError::Invalid {
                    key: key_nbar.to_string(),
                    message: "give either an occupation or temp_mk, not both".into(),
                });
            }
            return v.parse().map_err(|_| ConfigError::BadValue {
                key: key_nbar.to_string(),
                value: v.to_string(),
                expected: "a number",
            });
        }
        if let Some(t) = self.get("temp_mk") {
            let t_mk: f64 = t.parse().map_err(|_| ConfigError::BadValue {
                key: "temp_mk".into(),
                value: t.to_string(),
                expected: "a number",
            })?;
            return Ok(nbar_from_temperature(t_mk * 1e-3, mode));
        }
        default_nbar.ok_or_else(|| ConfigError::MissingKey(format!("{key_nbar} or temp_mk")))
    }

    /// Carrier Rabi frequency from the first-order π-time out of |n=1⟩.
    fn omega0(&self, key: &str, default_us: f64, eta: f64) -> Result<f64, ConfigError> {
        let t_pi = self.f64_or(key, default_us)? * 1e-6;
        if t_pi <= 0.0 {
            return Err(ConfigError::Invalid {
                key: key.to_string(),
                message: "π-time must be positive".into(),
            });
        }
        Ok(PI / t_pi / rabi_frequency(1, 0, eta, 1.0))
    }

    /// The scenario with its pulse parameters and the physics parameters.
    pub fn scenario(&self) -> Result<(Scenario, PhysicsParams), ConfigError> {
        let name = self.require("scenario")?;
        let t_c = self.t_c()?;
        let (scenario, omega0) = match name {
            "single_ion" => {
                let mode = TrapMode::new(
                    TAU * self.f64_or("freq_mhz", 2.21)? * 1e6,
                    self.f64_or("eta", 0.3)?,
                    self.usize_or("n_max", 80)?,
                );
                let nbar_i = self.initial_nbar("nbar_i", &mode, Some(10.0))?;
                let omega0 = self.omega0("t_pi_n1_us", 16.0, mode.eta)?;
                (
                    Scenario::SingleIon {
                        mode,
                        nbar_i,
                        t_c,
                        alpha: self.f64_or("alpha", 0.5)?,
                        t_r2: self.f64_or("t_r2_us", 10.0)? * 1e-6,
                        t_r1: self.f64_or("t_r1_us", 10.0)? * 1e-6,
                        quench_on: self.bool_or("quench", true)?,
                    },
                    omega0,
                )
            }
            "two_mode" => {
                let mode_ip = TrapMode::new(
                    TAU * self.f64_or("freq_ip_mhz", 2.21)? * 1e6,
                    self.f64_or("eta_ip", 0.21)?,
                    self.usize_or("n_max_ip", 60)?,
                );
                let mode_op = TrapMode::new(
                    TAU * self.f64_or("freq_op_mhz", 3.85)? * 1e6,
                    self.f64_or("eta_op", 0.16)?,
                    self.usize_or("n_max_op", 40)?,
                );
                // default initial condition: 1 mK Doppler limit on both modes
                let has_temp = self.get("temp_mk").is_some();
                let nbar_ip = if self.get("nbar_ip").is_none() && !has_temp {
                    nbar_from_temperature(1e-3, &mode_ip)
                } else {
                    self.initial_nbar("nbar_ip", &mode_ip, None)?
                };
                let nbar_op = if self.get("nbar_op").is_none() && !has_temp {
                    nbar_from_temperature(1e-3, &mode_op)
                } else {
                    self.initial_nbar("nbar_op", &mode_op, None)?
                };
                // π-times calibrate the shared Raman drive; the ip value wins
                let omega0 = self.omega0("t_pi_n1_ip_us", 21.0, mode_ip.eta)?;
                (
                    Scenario::TwoMode {
                        modes: [mode_ip, mode_op],
                        nbar_i: [nbar_ip, nbar_op],
                        t_c,
                        alpha_prime: self.f64_or("alpha_prime", 0.5)?,
                        t_ip: self.f64_or("t_ip_us", 15.0)? * 1e-6,
                        t_op: self.f64_or("t_op_us", 20.0)? * 1e-6,
                    },
                    omega0,
                )
            }
            "high_order" => {
                let mode = TrapMode::new(
                    TAU * self.f64_or("freq_mhz", 1.0)? * 1e6,
                    self.f64_or("eta", 0.45)?,
                    self.usize_or("n_max", 180)?,
                );
                let nbar_i = if self.get("nbar_i").is_none() && self.get("temp_mk").is_none() {
                    nbar_from_temperature(1e-3, &mode)
                } else {
                    self.initial_nbar("nbar_i", &mode, None)?
                };
                let omega0 = self.omega0("t_pi_n1_us", 16.0, mode.eta)?;
                (
                    Scenario::HighOrder {
                        mode,
                        nbar_i,
                        t_c,
                        beta_max: self.usize_or("beta_max", 8)?,
                        t_pulse: self.f64_or("t_pulse_us", 10.0)? * 1e-6,
                    },
                    omega0,
                )
            }
            other => {
                return Err(ConfigError::BadValue {
                    key: "scenario".into(),
                    value: other.to_string(),
                    expected: "single_ion, two_mode, or high_order",
                })
            }
        };

        let mut physics = PhysicsParams::new(omega0, self.f64_or("gamma_eff_per_ms", 42.0)? * 1e3);
        physics.gamma_background = self.f64_or("gamma_background_per_ms", 0.0)? * 1e3;
        physics.xi = self.f64_or("xi", 0.05)?;
        physics.eta_tilde = self.f64_or("eta_tilde", 0.134)?;
        physics.pulse_area_reduction = self.f64_or("pulse_reduction_us", 1.0)? * 1e-6;
        physics.repump_pulse = self.f64_or("repump_pulse_us", 3.0)? * 1e-6;
        physics.repump_gap = self.f64_or("repump_gap_us", 5.0)? * 1e-6;
        Ok((scenario, physics))
    }

    pub fn repump_timing(&self) -> Result<RepumpTiming, ConfigError> {
        Ok(RepumpTiming {
            pulse: self.f64_or("repump_pulse_us", 3.0)? * 1e-6,
            gap: self.f64_or("repump_gap_us", 5.0)? * 1e-6,
        })
    }

    pub fn shared_fit(&self) -> Result<SharedFitOptions, ConfigError> {
        match self.get("shared_fit").unwrap_or("both") {
            "both" => Ok(SharedFitOptions {
                share_initial: true,
                share_final: true,
            }),
            "initial" => Ok(SharedFitOptions {
                share_initial: true,
                share_final: false,
            }),
            "none" => Ok(SharedFitOptions {
                share_initial: false,
                share_final: false,
            }),
            other => Err(ConfigError::BadValue {
                key: "shared_fit".into(),
                value: other.to_string(),
                expected: "both, initial, or none",
            }),
        }
    }

    pub fn objective(&self) -> Result<Objective, ConfigError> {
        match self.get("objective").unwrap_or("min_t0") {
            "min_t0" => Ok(Objective::MinT0),
            "min_max_mode" => Ok(Objective::MinMaxPerMode),
            other => Err(ConfigError::BadValue {
                key: "objective".into(),
                value: other.to_string(),
                expected: "min_t0 or min_max_mode",
            }),
        }
    }

    /// Full sweep plan for cmd_sweep.
    pub fn sweep_plan(&self) -> Result<SweepPlan, ConfigError> {
        let (scenario, physics) = self.scenario()?;
        let param_name = self.require("sweep_param")?;
        let param = SweptParam::parse(param_name).ok_or_else(|| ConfigError::BadValue {
            key: "sweep_param".into(),
            value: param_name.to_string(),
            expected: "t_r1, t_r2, alpha, alpha_prime, t_ip, t_op, beta_max, t_pulse, or gamma_eff",
        })?;
        let raw = self.require("sweep_values")?;
        let mut values = Vec::new();
        for item in raw.split(',') {
            let v: f64 = item.trim().parse().map_err(|_| ConfigError::BadValue {
                key: "sweep_values".into(),
                value: item.trim().to_string(),
                expected: "comma-separated numbers",
            })?;
            // config units: times in µs, rates in 1/ms
            let v = if param.is_time() {
                v * 1e-6
            } else if param == SweptParam::GammaEff {
                v * 1e3
            } else {
                v
            };
            values.push(v);
        }
        let mut plan = SweepPlan::new(scenario, physics, param, values);
        let points = self.usize_or("t_c_grid_points", 12)?;
        if points < 2 {
            return Err(ConfigError::Invalid {
                key: "t_c_grid_points".into(),
                message: "need at least 2 grid points".into(),
            });
        }
        plan.t_c_grid = default_t_c_grid(plan.scenario.t_c(), points);
        plan.repump = self.repump_timing()?;
        plan.shared_fit = self.shared_fit()?;
        plan.tail_threshold = self.tail_threshold()?;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_comments_and_values() {
        let config = RunConfig::parse(
            "# a comment\nscenario = single_ion\nt_c_us = 500 # trailing\n\nalpha=0.4\n",
        )
        .unwrap();
        assert_eq!(config.get("scenario"), Some("single_ion"));
        assert_relative_eq!(config.t_c().unwrap(), 500e-6);
        assert_relative_eq!(config.f64_or("alpha", 0.0).unwrap(), 0.4);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = RunConfig::parse("scenario = single_ion\nt_c_uss = 500\n").unwrap_err();
        match err {
            ConfigError::UnknownKey(key) => assert_eq!(key, "t_c_uss"),
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            RunConfig::parse("scenario single_ion\n").unwrap_err(),
            ConfigError::Syntax { line: 1, .. }
        ));
    }

    #[test]
    fn single_ion_defaults() {
        let config = RunConfig::parse("scenario = single_ion\n").unwrap();
        let (scenario, physics) = config.scenario().unwrap();
        match scenario {
            Scenario::SingleIon {
                mode,
                nbar_i,
                alpha,
                quench_on,
                ..
            } => {
                assert_relative_eq!(mode.eta, 0.3);
                assert_eq!(mode.n_max, 80);
                assert_relative_eq!(nbar_i, 10.0);
                assert_relative_eq!(alpha, 0.5);
                assert!(quench_on);
            }
            other => panic!("wrong scenario {other:?}"),
        }
        assert_relative_eq!(physics.gamma_eff, 42.0e3);
        // Ω₀ such that the RSB π-time out of |1⟩ is 16 µs
        let w01 = rabi_frequency(1, 0, 0.3, physics.omega0);
        assert_relative_eq!(PI / w01, 16e-6, max_relative = 1e-12);
    }

    #[test]
    fn two_mode_defaults_use_doppler_temperature() {
        let config = RunConfig::parse("scenario = two_mode\nt_c_us = 2400\n").unwrap();
        let (scenario, _) = config.scenario().unwrap();
        match scenario {
            Scenario::TwoMode { nbar_i, .. } => {
                assert_relative_eq!(nbar_i[0], 8.94, epsilon = 0.01);
                assert_relative_eq!(nbar_i[1], 4.93, epsilon = 0.01);
            }
            other => panic!("wrong scenario {other:?}"),
        }
    }

    #[test]
    fn occupation_and_temperature_conflict() {
        let config =
            RunConfig::parse("scenario = single_ion\nnbar_i = 10\ntemp_mk = 1\n").unwrap();
        assert!(matches!(
            config.scenario().unwrap_err(),
            ConfigError::Invalid { .. }
        ));
    }

    #[test]
    fn sweep_plan_converts_units() {
        let config = RunConfig::parse(
            "scenario = single_ion\nsweep_param = t_r1\nsweep_values = 8, 10, 12\n",
        )
        .unwrap();
        let plan = config.sweep_plan().unwrap();
        assert_eq!(plan.param, SweptParam::TR1);
        assert_relative_eq!(plan.values[0], 8e-6);
        assert_eq!(plan.t_c_grid.len(), 12);
        assert_relative_eq!(plan.t_c_grid[11], 500e-6);
    }
}
