use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `lr0 · ½(1 + cos(π t / E))` for epoch `t` of a cycle of `E` epochs.
pub fn cyclical_lr(epoch_in_cycle: usize, epochs_per_cycle: usize, lr0: f64) -> f64 {
    let x = std::f64::consts::PI * epoch_in_cycle as f64 / epochs_per_cycle as f64;
    lr0 * 0.5 * (1.0 + x.cos())
}

/// Learning-rate schedule, evaluated once at the start of each epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    /// Cosine decay from `lr0` restarted every cycle.
    #[default]
    Cosine,
    /// `lr0` throughout.
    Flat,
    /// `rates[k]` for `epochs[k]` consecutive epochs; ignores cycles.
    Piecewise { rates: Vec<f64>, epochs: Vec<usize> },
}

impl LrSchedule {
    /// 0.05, 0.005, 0.0005 for 150 epochs each.
    pub fn map_preset() -> Self {
        LrSchedule::Piecewise { rates: vec![0.05, 0.005, 0.0005], epochs: vec![150, 150, 150] }
    }

    pub fn validate(&self) -> Result<()> {
        if let LrSchedule::Piecewise { rates, epochs } = self {
            if rates.is_empty() || rates.len() != epochs.len() {
                return Err(Error::contract("piecewise schedule needs matching non-empty rates and epochs"));
            }
            if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                return Err(Error::contract("piecewise rates must be positive"));
            }
        }
        Ok(())
    }

    pub fn total_epochs(&self, cycles: usize, epochs_per_cycle: usize) -> usize {
        match self {
            LrSchedule::Piecewise { epochs, .. } => epochs.iter().sum(),
            _ => cycles * epochs_per_cycle,
        }
    }

    /// Learning rate of global epoch `epoch`.
    pub fn lr(&self, epoch: usize, epochs_per_cycle: usize, lr0: f64) -> f64 {
        match self {
            LrSchedule::Cosine => cyclical_lr(epoch % epochs_per_cycle, epochs_per_cycle, lr0),
            LrSchedule::Flat => lr0,
            LrSchedule::Piecewise { rates, epochs } => {
                let mut end = 0;
                for (r, e) in rates.iter().zip(epochs) {
                    end += e;
                    if epoch < end {
                        return *r;
                    }
                }
                *rates.last().expect("validated non-empty")
            }
        }
    }
}
