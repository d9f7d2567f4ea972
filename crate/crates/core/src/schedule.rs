//! Epoch-granular learning-rate schedules. The rate is constant within an
//! epoch; `lr_at(e)` is defined for `e` in `0..total_epochs`.

use crate::error::{EekdError, Result};
use std::f64::consts::PI;

/// Annealing shape for one training run.
///
/// * `Cosine` decays `(eta0 / 2) (1 + cos(pi e / T))` over the whole run.
/// * `CyclicCosine` applies the same curve to each cycle of `cycle_length`
///   epochs, restarting at `eta0`; the cycle length must divide the run
///   length so every cycle completes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Cosine {
        eta0: f64,
        total_epochs: usize,
    },
    CyclicCosine {
        eta0: f64,
        total_epochs: usize,
        cycle_length: usize,
    },
}

impl Schedule {
    pub fn cosine(eta0: f64, total_epochs: usize) -> Result<Self> {
        let s = Schedule::Cosine { eta0, total_epochs };
        s.validate()?;
        Ok(s)
    }

    pub fn cyclic_cosine(eta0: f64, total_epochs: usize, cycle_length: usize) -> Result<Self> {
        let s = Schedule::CyclicCosine {
            eta0,
            total_epochs,
            cycle_length,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (eta0, total) = (self.eta0(), self.total_epochs());
        if !eta0.is_finite() || eta0 <= 0.0 {
            return Err(EekdError::InvalidConfig(format!(
                "base learning rate must be positive, got {eta0}"
            )));
        }
        if total == 0 {
            return Err(EekdError::InvalidConfig(
                "total_epochs must be positive".into(),
            ));
        }
        if let Schedule::CyclicCosine { cycle_length, .. } = *self {
            if cycle_length == 0 {
                return Err(EekdError::InvalidConfig(
                    "cycle_length must be positive".into(),
                ));
            }
            if total % cycle_length != 0 {
                return Err(EekdError::InvalidConfig(format!(
                    "cycle_length {cycle_length} must divide total_epochs {total}"
                )));
            }
        }
        Ok(())
    }

    pub fn eta0(&self) -> f64 {
        match *self {
            Schedule::Cosine { eta0, .. } | Schedule::CyclicCosine { eta0, .. } => eta0,
        }
    }

    pub fn total_epochs(&self) -> usize {
        match *self {
            Schedule::Cosine { total_epochs, .. } | Schedule::CyclicCosine { total_epochs, .. } => {
                total_epochs
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Schedule::Cosine { .. } => "cosine",
            Schedule::CyclicCosine { .. } => "cyclic_cosine",
        }
    }

    /// Learning rate for epoch `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        let total = self.total_epochs();
        if epoch >= total {
            return Err(EekdError::EpochOutOfRange {
                epoch,
                total_epochs: total,
            });
        }
        Ok(match *self {
            Schedule::Cosine { eta0, total_epochs } => half_cosine(eta0, epoch, total_epochs),
            Schedule::CyclicCosine {
                eta0, cycle_length, ..
            } => half_cosine(eta0, epoch % cycle_length, cycle_length),
        })
    }
}

fn half_cosine(eta0: f64, step: usize, span: usize) -> f64 {
    (eta0 / 2.0) * (1.0 + (PI * step as f64 / span as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_hits_anchor_points() {
        let s = Schedule::cosine(0.1, 60).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 0.1);
        assert!((s.lr_at(30).unwrap() - 0.05).abs() < 1e-15);
        let last = s.lr_at(59).unwrap();
        assert!(last > 0.0 && last < 0.001);
    }

    #[test]
    fn cosine_is_monotone_nonincreasing() {
        let s = Schedule::cosine(0.2, 100).unwrap();
        let mut prev = f64::INFINITY;
        for e in 0..100 {
            let lr = s.lr_at(e).unwrap();
            assert!(lr <= prev, "epoch {e}");
            assert!(lr > 0.0);
            prev = lr;
        }
    }

    #[test]
    fn cyclic_restarts_at_full_rate() {
        let s = Schedule::cyclic_cosine(0.1, 20, 5).unwrap();
        for start in [0, 5, 10, 15] {
            assert_eq!(s.lr_at(start).unwrap(), 0.1, "cycle start {start}");
        }
        // Within a cycle, the curve matches a plain cosine of the cycle span.
        let single = Schedule::cosine(0.1, 5).unwrap();
        for e in 0..20 {
            assert_eq!(s.lr_at(e).unwrap(), single.lr_at(e % 5).unwrap());
        }
    }

    #[test]
    fn cyclic_decays_within_each_cycle() {
        let s = Schedule::cyclic_cosine(0.3, 12, 4).unwrap();
        for cycle in 0..3 {
            let mut prev = f64::INFINITY;
            for off in 0..4 {
                let lr = s.lr_at(cycle * 4 + off).unwrap();
                assert!(lr <= prev);
                prev = lr;
            }
        }
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        assert!(Schedule::cosine(0.0, 10).is_err());
        assert!(Schedule::cosine(-0.1, 10).is_err());
        assert!(Schedule::cosine(0.1, 0).is_err());
        assert!(Schedule::cyclic_cosine(0.1, 10, 0).is_err());
        assert!(Schedule::cyclic_cosine(0.1, 10, 3).is_err());
        assert!(Schedule::cyclic_cosine(0.1, 10, 5).is_ok());
    }

    #[test]
    fn epoch_past_the_run_is_an_error() {
        let s = Schedule::cosine(0.1, 10).unwrap();
        assert!(matches!(
            s.lr_at(10),
            Err(EekdError::EpochOutOfRange {
                epoch: 10,
                total_epochs: 10
            })
        ));
    }
}
