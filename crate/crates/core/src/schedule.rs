//! Linear transition weight ramping conditioning from 0 to its cap.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timeline of the unconditional-to-conditional transition.
///
/// `t_start` and `t_end` are signed so degenerate schedules (always
/// conditional, never conditional) can be expressed; [`TransitionSchedule::new`]
/// only accepts the regular form `0 <= t_start < t_end <= t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSchedule {
    pub t_start: i64,
    pub t_end: i64,
    pub t_max: i64,
    pub clip_max: f64,
}

impl TransitionSchedule {
    pub fn new(t_start: i64, t_end: i64, t_max: i64, clip_max: f64) -> Result<Self> {
        let s = Self {
            t_start,
            t_end,
            t_max,
            clip_max,
        };
        s.validate()?;
        if t_start < 0 || t_start >= t_end || t_end > t_max {
            return Err(Error::Config(format!(
                "schedule requires 0 <= t_start < t_end <= t_max, got {t_start}, {t_end}, {t_max}"
            )));
        }
        Ok(s)
    }

    /// Checks the invariants needed for `lambda_at` to be well defined.
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_max > 0.0 && self.clip_max <= 1.0) {
            return Err(Error::Config(format!(
                "clip_max must lie in (0, 1], got {}",
                self.clip_max
            )));
        }
        if self.t_start > self.t_end {
            return Err(Error::Config(format!(
                "t_start ({}) must not exceed t_end ({})",
                self.t_start, self.t_end
            )));
        }
        if self.t_max < 1 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        Ok(())
    }

    /// Conditioning weight at iteration `t`: 0 up to `t_start`, linear up to
    /// `t_end`, then `clip_max`; the ramp itself is capped at `clip_max`.
    pub fn lambda_at(&self, t: i64) -> f64 {
        if t <= self.t_start {
            return 0.0;
        }
        if t >= self.t_end {
            return self.clip_max;
        }
        let ramp = (t - self.t_start) as f64 / (self.t_end - self.t_start) as f64;
        ramp.clamp(0.0, 1.0).min(self.clip_max)
    }

    /// `(t, lambda)` rows for `t = 0, stride, 2*stride, ...` up to `t_max`.
    /// `t_max` is always the last row.
    pub fn curve(&self, stride: i64) -> Result<Vec<(i64, f64)>> {
        if stride < 1 {
            return Err(Error::contract("curve stride must be >= 1"));
        }
        let mut rows: Vec<(i64, f64)> = (0..=self.t_max)
            .step_by(stride as usize)
            .map(|t| (t, self.lambda_at(t)))
            .collect();
        if rows.last().map(|r| r.0) != Some(self.t_max) {
            rows.push((self.t_max, self.lambda_at(self.t_max)));
        }
        Ok(rows)
    }

    /// Writes the curve as CSV with header `t,lambda`.
    pub fn write_curve_csv<W: Write>(&self, stride: i64, mut out: W) -> Result<()> {
        writeln!(out, "t,lambda")?;
        for (t, l) in self.curve(stride)? {
            writeln!(out, "{t},{l}")?;
        }
        Ok(())
    }
}

impl Default for TransitionSchedule {
    fn default() -> Self {
        Self {
            t_start: 1000,
            t_end: 2000,
            t_max: 6000,
            clip_max: 1.0,
        }
    }
}
