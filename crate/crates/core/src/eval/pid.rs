use serde::{Deserialize, Serialize};

use crate::state::{Action, GreenhouseState};

/// Discrete PID on air temperature. Positive error (too warm) opens the
/// vent; the output is a percent opening snapped to the nearest level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub setpoint: f64,
    /// Sample period in minutes.
    pub dt: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        PidConfig {
            kp: 5.0,
            ki: 0.05,
            kd: 1.0,
            setpoint: 22.0,
            dt: 5.0,
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd), ("setpoint", self.setpoint)] {
            if !v.is_finite() {
                errs.push(format!("eval.pid.{name} must be finite"));
            }
        }
        if !(self.dt > 0.0) {
            errs.push("eval.pid.dt must be > 0".into());
        }
        errs
    }
}

/// Controller memory, reset at the start of every day.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidMemory {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// One PID update. When the unclamped output saturates in the direction of
/// the error the integral is left unchanged.
pub fn pid_step(config: &PidConfig, state: &GreenhouseState, memory: PidMemory) -> (Action, PidMemory) {
    let e = state.t_air - config.setpoint;
    let derivative = memory.prev_error.map_or(0.0, |p| (e - p) / config.dt);
    let base = config.kp * e + config.kd * derivative;
    let mut integral = memory.integral + e * config.dt;
    let mut u = base + config.ki * integral;
    if (u > 100.0 && e > 0.0) || (u < 0.0 && e < 0.0) {
        integral = memory.integral;
        u = base + config.ki * integral;
    }
    let u = if u.is_finite() { u.clamp(0.0, 100.0) } else { 0.0 };
    (
        Action::nearest(u),
        PidMemory {
            integral,
            prev_error: Some(e),
        },
    )
}
