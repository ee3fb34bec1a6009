use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
    CosineTail,
    Trapezoidal,
}

/// Learning-rate multiplier schedule applied on top of the base rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub warmup_steps: usize,
    /// Cosine reference period.
    pub ref_epochs: usize,
    pub floor_frac: f64,
    pub tail_frac: f64,
    /// Trapezoidal only: epochs (from the start) before the linear decay.
    #[serde(default)]
    pub hold_epochs: usize,
}

impl LrSchedule {
    pub fn cosine_tail(warmup_steps: usize, ref_epochs: usize) -> Self {
        Self { kind: ScheduleKind::CosineTail, warmup_steps, ref_epochs, floor_frac: 0.10, tail_frac: 0.02, hold_epochs: 0 }
    }

    pub fn cosine(warmup_steps: usize, ref_epochs: usize) -> Self {
        Self { kind: ScheduleKind::Cosine, warmup_steps, ref_epochs, floor_frac: 0.0, tail_frac: 0.0, hold_epochs: 0 }
    }

    pub fn trapezoidal(warmup_steps: usize, hold_epochs: usize, tail_frac: f64) -> Self {
        Self { kind: ScheduleKind::Trapezoidal, warmup_steps, ref_epochs: 0, floor_frac: tail_frac, tail_frac, hold_epochs }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tail_frac && self.tail_frac <= self.floor_frac && self.floor_frac <= 1.0) {
            return Err(Error::Config(format!(
                "schedule needs 0 <= tail_frac ({}) <= floor_frac ({}) <= 1",
                self.tail_frac, self.floor_frac
            )));
        }
        Ok(())
    }

    fn cosine_value(&self, step: usize, steps_per_epoch: usize) -> f64 {
        let span = (self.ref_epochs * steps_per_epoch).saturating_sub(self.warmup_steps).max(1);
        let p = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let c = 0.5 * (1.0 + (PI * p).cos());
        c.max(self.floor_frac)
    }

    /// Multiplier applied to the base learning rate at optimizer step `step`.
    pub fn lr_at(&self, step: usize, steps_per_epoch: usize, total_epochs: usize) -> f64 {
        if step < self.warmup_steps {
            return step as f64 / self.warmup_steps as f64;
        }
        let spe = steps_per_epoch.max(1);
        match self.kind {
            ScheduleKind::Cosine => self.cosine_value(step, spe),
            ScheduleKind::CosineTail => {
                let tail_start = total_epochs.saturating_sub(1) * spe;
                if total_epochs == 0 || step < tail_start || tail_start < self.warmup_steps {
                    return self.cosine_value(step, spe);
                }
                let v0 = self.cosine_value(tail_start, spe);
                let frac = if spe > 1 { ((step - tail_start) as f64 / (spe - 1) as f64).min(1.0) } else { 1.0 };
                v0 + (self.tail_frac - v0) * frac
            }
            ScheduleKind::Trapezoidal => {
                let hold_end = (self.hold_epochs * spe).max(self.warmup_steps);
                let last = (total_epochs * spe).saturating_sub(1);
                if step < hold_end || last <= hold_end {
                    return 1.0;
                }
                let frac = ((step - hold_end) as f64 / (last - hold_end) as f64).min(1.0);
                1.0 + (self.tail_frac - 1.0) * frac
            }
        }
    }
}
