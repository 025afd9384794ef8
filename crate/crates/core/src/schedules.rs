//! Time-varying hyperparameters, all pure functions of the epoch index.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("epoch {epoch} outside schedule of {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("ema_update: {count_t} teacher tensors vs {count_s} student tensors")]
    ParamCount { count_t: usize, count_s: usize },
    #[error("ema_update: parameter {index} shape {teacher:?} vs {student:?}")]
    ShapeMismatch {
        index: usize,
        teacher: Vec<usize>,
        student: Vec<usize>,
    },
}

/// Geometric growth of the learning pace from `gamma0` to `ln(K / eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaceSchedule {
    pub gamma0: f64,
    pub epochs_to_ceiling: usize,
    pub ceiling: f64,
    pub increase_factor: f64,
}

impl PaceSchedule {
    pub fn new(gamma0: f64, epochs_to_ceiling: usize, views: usize, epsilon_floor: f64) -> Self {
        let ceiling = pace_ceiling(views, epsilon_floor);
        let increase_factor = if epochs_to_ceiling == 0 {
            1.0
        } else {
            (ceiling / gamma0).powf(1.0 / epochs_to_ceiling as f64)
        };
        PaceSchedule {
            gamma0,
            epochs_to_ceiling,
            ceiling,
            increase_factor,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        if self.epochs_to_ceiling == 0 || epoch >= self.epochs_to_ceiling {
            return self.ceiling;
        }
        (self.gamma0 * self.increase_factor.powi(epoch as i32)).min(self.ceiling)
    }
}

/// Largest useful pace: `ln(K / eps)`.
pub fn pace_ceiling(views: usize, epsilon_floor: f64) -> f64 {
    (views as f64 / epsilon_floor).ln()
}

pub fn pace_at(sched: &PaceSchedule, epoch: usize) -> f64 {
    sched.at(epoch)
}

/// Linear ramp of the entropy coefficient from 0 to `alpha_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSchedule {
    pub alpha_max: f64,
    pub ramp_epochs: usize,
}

impl AlphaSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        if epoch >= self.ramp_epochs {
            self.alpha_max
        } else {
            self.alpha_max * epoch as f64 / self.ramp_epochs as f64
        }
    }
}

pub fn alpha_at(sched: &AlphaSchedule, epoch: usize) -> f64 {
    sched.at(epoch)
}

/// Linear warm-up from `base_lr / 300` to `base_lr` over the first tenth of
/// training, then cosine decay towards zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

pub const WARMUP_FACTOR: f64 = 300.0;

impl LrSchedule {
    pub fn new(base_lr: f64, total_epochs: usize) -> Self {
        let warmup_epochs = ((total_epochs as f64 * 0.1).round() as usize).min(total_epochs.saturating_sub(1));
        LrSchedule {
            base_lr,
            warmup_epochs,
            total_epochs,
        }
    }

    pub fn at(&self, epoch: usize) -> Result<f64, ScheduleError> {
        if epoch >= self.total_epochs {
            return Err(ScheduleError::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        let start = self.base_lr / WARMUP_FACTOR;
        if epoch < self.warmup_epochs {
            let t = epoch as f64 / self.warmup_epochs as f64;
            return Ok(start + (self.base_lr - start) * t);
        }
        let decay = (self.total_epochs - self.warmup_epochs) as f64;
        let t = (epoch - self.warmup_epochs) as f64 / decay;
        Ok(self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

pub fn lr_at(sched: &LrSchedule, epoch: usize) -> Result<f64, ScheduleError> {
    sched.at(epoch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaConfig {
    pub beta: f64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        EmaConfig { beta: 0.99 }
    }
}

/// `teacher <- beta * teacher + (1 - beta) * student`, in place.
pub fn ema_update(teacher: &mut [Tensor], student: &[Tensor], beta: f64) -> Result<(), ScheduleError> {
    if teacher.len() != student.len() {
        return Err(ScheduleError::ParamCount {
            count_t: teacher.len(),
            count_s: student.len(),
        });
    }
    for (index, (t, s)) in teacher.iter().zip(student).enumerate() {
        if t.shape() != s.shape() {
            return Err(ScheduleError::ShapeMismatch {
                index,
                teacher: t.shape().to_vec(),
                student: s.shape().to_vec(),
            });
        }
    }
    for (t, s) in teacher.iter_mut().zip(student) {
        for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = beta * *a + (1.0 - beta) * b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pace_values() {
        let s = PaceSchedule::new(0.2, 50, 2, 0.01);
        assert_eq!(s.at(0), 0.2);
        assert!((s.ceiling - 200f64.ln()).abs() < 1e-15);
        assert!((s.ceiling - 5.29832).abs() < 1e-5);
        assert!((s.at(50) - s.ceiling).abs() < 1e-12);
        assert!((s.at(25) - 1.02940).abs() < 1e-5);
        assert!((s.at(25) - (0.2 * s.ceiling).sqrt()).abs() < 1e-12);
        assert_eq!(s.at(500), s.ceiling);
    }

    #[test]
    fn pace_monotone_and_capped() {
        let s = PaceSchedule::new(0.2, 50, 3, 0.01);
        let mut prev = 0.0;
        for e in 0..120 {
            let g = s.at(e);
            assert!(g >= prev && g <= s.ceiling + 1e-15);
            prev = g;
        }
    }

    #[test]
    fn alpha_values() {
        let s = AlphaSchedule { alpha_max: 1e-4, ramp_epochs: 50 };
        assert_eq!(s.at(0), 0.0);
        assert!((s.at(25) - 5e-5).abs() < 1e-20);
        assert_eq!(s.at(50), 1e-4);
        assert_eq!(s.at(99), 1e-4);
    }

    #[test]
    fn lr_values() {
        let s = LrSchedule::new(1e-2, 100);
        assert_eq!(s.warmup_epochs, 10);
        assert!((s.at(0).unwrap() - 1e-2 / 300.0).abs() < 1e-18);
        assert_eq!(s.at(10).unwrap(), 1e-2);
        assert!((s.at(55).unwrap() - 5e-3).abs() < 1e-15);
        let last = s.at(99).unwrap();
        assert!(last > 0.0 && last < 1e-4);
        assert!(matches!(s.at(100), Err(ScheduleError::EpochOutOfRange { .. })));
        for e in 0..100 {
            assert!(s.at(e).unwrap() > 0.0);
        }
    }

    #[test]
    fn ema_values() {
        let mut t = vec![Tensor::scalar(1.0)];
        ema_update(&mut t, &[Tensor::scalar(0.0)], 0.99).unwrap();
        assert_eq!(t[0].data(), &[0.99]);

        let s = vec![Tensor::full(&[3], 0.4)];
        let mut same = s.clone();
        ema_update(&mut same, &s, 0.99).unwrap();
        assert!(same[0].data().iter().all(|&v| (v - 0.4).abs() < 1e-16));

        assert!(ema_update(&mut t, &[Tensor::zeros(&[2])], 0.9).is_err());
        assert!(ema_update(&mut t, &[], 0.9).is_err());
    }
}
