//! Linear warmup followed by cosine decay to a floor.

use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub base_lr: f64,
    pub floor_lr: f64,
}

impl LrSchedule {
    pub fn new(warmup_steps: u64, total_steps: u64, base_lr: f64, floor_lr: f64) -> Result<LrSchedule> {
        if total_steps <= warmup_steps {
            return Err(FuseError::Config(format!(
                "schedule needs total_steps ({total_steps}) > warmup_steps ({warmup_steps})"
            )));
        }
        if !(floor_lr >= 0.0 && base_lr >= floor_lr) {
            return Err(FuseError::Config(format!(
                "schedule needs base_lr ({base_lr}) >= floor_lr ({floor_lr}) >= 0"
            )));
        }
        Ok(LrSchedule {
            warmup_steps,
            total_steps,
            base_lr,
            floor_lr,
        })
    }

    /// Learning rate at a step: linear 0 -> base over the warmup, cosine
    /// base -> floor afterward, clamped to the floor past the end.
    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        if step >= self.total_steps {
            return self.floor_lr;
        }
        let progress =
            (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        self.floor_lr
            + (self.base_lr - self.floor_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_end_hits_base_exactly() {
        let s = LrSchedule::new(100, 1000, 3e-3, 0.0).unwrap();
        assert_eq!(s.lr(100), 3e-3);
        assert_eq!(s.lr(0), 0.0);
    }

    #[test]
    fn cosine_midpoint_is_average_of_base_and_floor() {
        let s = LrSchedule::new(100, 1100, 2e-3, 4e-4).unwrap();
        // Midpoint of the cosine span (warmup + total)/2 = step 600.
        let mid = s.lr(600);
        assert!((mid - (2e-3 + 4e-4) / 2.0).abs() <= 1e-12);
    }

    #[test]
    fn continuous_at_the_warmup_boundary() {
        let s = LrSchedule::new(250, 5000, 1e-4, 0.0).unwrap();
        // Extrapolate the warmup line one step past its end and compare
        // with the cosine branch value at the boundary.
        let slope = s.base_lr / s.warmup_steps as f64;
        let extrapolated = s.lr(s.warmup_steps - 1) + slope;
        assert!((extrapolated - s.lr(s.warmup_steps)).abs() <= 1e-12);
    }

    #[test]
    fn monotone_non_increasing_after_warmup_and_clamped() {
        let s = LrSchedule::new(50, 500, 1e-3, 1e-5).unwrap();
        let mut prev = f64::INFINITY;
        for step in 50..=600 {
            let lr = s.lr(step);
            assert!(lr <= prev + 1e-18, "step {step}");
            assert!(lr >= s.floor_lr);
            prev = lr;
        }
        assert_eq!(s.lr(500), 1e-5);
        assert_eq!(s.lr(10_000), 1e-5);
    }

    #[test]
    fn degenerate_schedules_rejected() {
        assert!(LrSchedule::new(100, 100, 1e-3, 0.0).is_err());
        assert!(LrSchedule::new(0, 100, 1e-3, 2e-3).is_err());
    }
}
