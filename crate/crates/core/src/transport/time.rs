use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScale {
    Linear,
    Log10,
}

/// Maps a raw physical condition onto pseudo-time in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTimeNormalizer {
    pub mode: TimeScale,
    pub raw_min: f64,
    pub raw_max: f64,
    #[serde(default)]
    pub unit: String,
}

impl PseudoTimeNormalizer {
    pub fn new(mode: TimeScale, raw_min: f64, raw_max: f64, unit: impl Into<String>) -> Result<Self> {
        if !(raw_min < raw_max) || !raw_min.is_finite() || !raw_max.is_finite() {
            return Err(Error::invalid(format!("condition range [{raw_min}, {raw_max}] is empty")));
        }
        if mode == TimeScale::Log10 && raw_min <= 0.0 {
            return Err(Error::invalid("logarithmic time needs a positive lower bound"));
        }
        Ok(PseudoTimeNormalizer {
            mode,
            raw_min,
            raw_max,
            unit: unit.into(),
        })
    }

    pub fn normalize(&self, raw: f64) -> Result<f64> {
        if !(raw >= self.raw_min && raw <= self.raw_max) {
            return Err(Error::OutOfRange(format!(
                "condition {raw} {} outside [{}, {}]",
                self.unit, self.raw_min, self.raw_max
            )));
        }
        let t = match self.mode {
            TimeScale::Linear => (raw - self.raw_min) / (self.raw_max - self.raw_min),
            TimeScale::Log10 => {
                (raw.log10() - self.raw_min.log10()) / (self.raw_max.log10() - self.raw_min.log10())
            }
        };
        Ok(t.clamp(0.0, 1.0))
    }

    pub fn denormalize(&self, t: f64) -> f64 {
        match self.mode {
            TimeScale::Linear => self.raw_min + t * (self.raw_max - self.raw_min),
            TimeScale::Log10 => {
                10f64.powf(self.raw_min.log10() + t * (self.raw_max.log10() - self.raw_min.log10()))
            }
        }
    }
}
