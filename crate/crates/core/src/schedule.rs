//! Gaussian kernel size per training epoch.
//!
//! The progressive schedule anneals from `sigma_max` towards `sigma_min`:
//!
//! ```text
//! sigma_t = (sigma_max - sigma_min) * alpha^(t/M)
//!         + sigma_min * (1 - (sigma_max - sigma_min) * alpha)^(t/M)
//! ```
//!
//! with `t` the 0-based count of completed epochs, so `sigma_0 = sigma_max`.
//! At `t = M` the first term is `(sigma_max - sigma_min) * alpha` and the
//! second `sigma_min * (1 - (sigma_max - sigma_min) * alpha)`; the sum equals
//! `sigma_min` exactly only when `sigma_min = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum KernelSchedule {
    Pgk {
        sigma_max: f64,
        sigma_min: f64,
        alpha: f64,
        epochs: usize,
    },
    Fixed {
        sigma: f64,
        epochs: usize,
    },
    /// `sigma_max` for epochs before `switch_epoch`, `sigma_min` from it on.
    NaiveSwitch {
        sigma_max: f64,
        sigma_min: f64,
        switch_epoch: usize,
        epochs: usize,
    },
}

/// Outcome of a successful validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleCheck {
    /// `sigma_at(epochs)`.
    pub terminal_sigma: f64,
    /// Whether the terminal value equals `sigma_min` (to 1e-9). Progressive
    /// schedules with `sigma_min != 1` stop short of it.
    pub reaches_sigma_min: bool,
}

impl KernelSchedule {
    pub fn pgk(sigma_max: f64, sigma_min: f64, alpha: f64, epochs: usize) -> Result<Self> {
        let s = KernelSchedule::Pgk {
            sigma_max,
            sigma_min,
            alpha,
            epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn fixed(sigma: f64, epochs: usize) -> Result<Self> {
        let s = KernelSchedule::Fixed { sigma, epochs };
        s.validate()?;
        Ok(s)
    }

    pub fn naive_switch(sigma_max: f64, sigma_min: f64, switch_epoch: usize, epochs: usize) -> Result<Self> {
        let s = KernelSchedule::NaiveSwitch {
            sigma_max,
            sigma_min,
            switch_epoch,
            epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn epochs(&self) -> usize {
        match *self {
            KernelSchedule::Pgk { epochs, .. }
            | KernelSchedule::Fixed { epochs, .. }
            | KernelSchedule::NaiveSwitch { epochs, .. } => epochs,
        }
    }

    /// Same schedule stretched or shrunk to `epochs`; a naive switch keeps
    /// its relative position.
    pub fn with_epochs(self, epochs: usize) -> KernelSchedule {
        match self {
            KernelSchedule::Pgk { sigma_max, sigma_min, alpha, .. } => KernelSchedule::Pgk {
                sigma_max,
                sigma_min,
                alpha,
                epochs,
            },
            KernelSchedule::Fixed { sigma, .. } => KernelSchedule::Fixed { sigma, epochs },
            KernelSchedule::NaiveSwitch {
                sigma_max,
                sigma_min,
                switch_epoch,
                epochs: old,
            } => KernelSchedule::NaiveSwitch {
                sigma_max,
                sigma_min,
                switch_epoch: (switch_epoch * epochs / old.max(1)).clamp(1, epochs.saturating_sub(1).max(1)),
                epochs,
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSchedule::Pgk { .. } => "pgk",
            KernelSchedule::Fixed { .. } => "fixed",
            KernelSchedule::NaiveSwitch { .. } => "naive_switch",
        }
    }

    pub fn validate(&self) -> Result<ScheduleCheck> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs() < 1 {
            return fail("epochs must be >= 1");
        }
        match *self {
            KernelSchedule::Pgk {
                sigma_max,
                sigma_min,
                alpha,
                ..
            } => {
                check_range(sigma_max, sigma_min)?;
                if !(alpha > 0.0 && alpha < 1.0) {
                    return fail("alpha must lie in (0, 1)");
                }
                if (sigma_max - sigma_min) * alpha >= 1.0 {
                    return fail("(σ_max−σ_min)·α must be < 1");
                }
            }
            KernelSchedule::Fixed { sigma, .. } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return fail("sigma must be positive");
                }
            }
            KernelSchedule::NaiveSwitch {
                sigma_max,
                sigma_min,
                switch_epoch,
                epochs,
            } => {
                check_range(sigma_max, sigma_min)?;
                if !(0 < switch_epoch && switch_epoch < epochs) {
                    return fail("switch_epoch must satisfy 0 < switch_epoch < epochs");
                }
            }
        }
        let terminal_sigma = self.sigma_unchecked(self.epochs());
        let reaches_sigma_min = (terminal_sigma - self.sigma_min()).abs() <= 1e-9;
        if !reaches_sigma_min {
            log::warn!(
                "{} schedule ends at sigma {terminal_sigma:.6}, not sigma_min {}",
                self.name(),
                self.sigma_min()
            );
        }
        Ok(ScheduleCheck {
            terminal_sigma,
            reaches_sigma_min,
        })
    }

    pub fn sigma_max(&self) -> f64 {
        match *self {
            KernelSchedule::Pgk { sigma_max, .. } | KernelSchedule::NaiveSwitch { sigma_max, .. } => sigma_max,
            KernelSchedule::Fixed { sigma, .. } => sigma,
        }
    }

    pub fn sigma_min(&self) -> f64 {
        match *self {
            KernelSchedule::Pgk { sigma_min, .. } | KernelSchedule::NaiveSwitch { sigma_min, .. } => sigma_min,
            KernelSchedule::Fixed { sigma, .. } => sigma,
        }
    }

    /// Kernel size for the epoch that follows `t` completed epochs, `0 <= t <= M`.
    pub fn sigma_at(&self, t: usize) -> Result<f64> {
        if t > self.epochs() {
            return Err(Error::Domain(format!("epoch {t} beyond schedule length {}", self.epochs())));
        }
        Ok(self.sigma_unchecked(t))
    }

    fn sigma_unchecked(&self, t: usize) -> f64 {
        match *self {
            KernelSchedule::Pgk {
                sigma_max,
                sigma_min,
                alpha,
                epochs,
            } => {
                let span = sigma_max - sigma_min;
                let frac = t as f64 / epochs as f64;
                span * alpha.powf(frac) + sigma_min * (1.0 - span * alpha).powf(frac)
            }
            KernelSchedule::Fixed { sigma, .. } => sigma,
            KernelSchedule::NaiveSwitch {
                sigma_max,
                sigma_min,
                switch_epoch,
                ..
            } => {
                if t < switch_epoch {
                    sigma_max
                } else {
                    sigma_min
                }
            }
        }
    }
}

fn check_range(sigma_max: f64, sigma_min: f64) -> Result<()> {
    if !(sigma_min > 0.0 && sigma_min.is_finite()) {
        return Err(Error::Config("sigma_min must be positive".into()));
    }
    if !(sigma_max > sigma_min && sigma_max.is_finite()) {
        return Err(Error::Config("sigma_max must exceed sigma_min".into()));
    }
    Ok(())
}
