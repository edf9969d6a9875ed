//! Complexity-aware reward: `(Q - Q0) * (M / M_T)^w`, where the exponent
//! switches from `omega_minus` to `omega_plus` once `M` exceeds the target.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, NasError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Quality of a candidate worth nothing.
    pub q0: f64,
    /// Target complexity in MACs per second.
    pub m_target: f64,
    /// Exponent above the target; negative, so excess complexity is penalized.
    pub omega_plus: f64,
    /// Exponent at or below the target.
    pub omega_minus: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            q0: 1.0,
            m_target: 30e6,
            omega_plus: -0.15,
            omega_minus: 0.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m_target.is_finite() && self.m_target > 0.0) {
            return Err(NasError::Config(format!("m_target must be positive, got {}", self.m_target)));
        }
        if self.omega_plus.is_nan() || self.omega_plus >= 0.0 {
            return Err(NasError::Config(format!("omega_plus must be negative, got {}", self.omega_plus)));
        }
        if !self.omega_minus.is_finite() || !self.q0.is_finite() {
            return Err(NasError::Config("q0 and omega_minus must be finite".into()));
        }
        Ok(())
    }

    /// Exponent applied at complexity `m`.
    pub fn omega(&self, m: f64) -> f64 {
        if m > self.m_target {
            self.omega_plus
        } else {
            self.omega_minus
        }
    }
}

pub fn reward(q: f64, m: f64, cfg: &RewardConfig) -> Result<f64> {
    if !(m.is_finite() && m > 0.0) {
        return invalid(format!("complexity must be positive and finite, got {}", m));
    }
    if !q.is_finite() {
        return invalid(format!("quality must be finite, got {}", q));
    }
    let w = cfg.omega(m);
    let factor = if w == 0.0 { 1.0 } else { (m / cfg.m_target).powf(w) };
    Ok((q - cfg.q0) * factor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landmarks() {
        let c = RewardConfig::default();
        assert_eq!(reward(2.0, 30e6, &c).unwrap(), 1.0);
        assert_eq!(reward(1.0, 90e6, &c).unwrap(), 0.0);
        assert!((reward(2.0, 60e6, &c).unwrap() - 0.9012504626108302).abs() < 1e-15);
        assert!(reward(2.0, 0.0, &c).is_err());
        assert!(reward(2.0, -1.0, &c).is_err());
    }
}
