//! Loss-driven mantissa width controller.
//!
//! Training is split into periods of `N` batches. At the end of period `i`
//! the controller compares the period loss `L_i` with the running average
//! `Mavg_i` (before folding `L_i` in):
//!
//! * `Mavg_i > L_i + eps_i`: training is improving, drop one bit;
//! * `Mavg_i < L_i - eps_i`: training is getting worse, add one bit;
//! * otherwise keep the width.
//!
//! `eps_i = Mavg_i * R_i`, where `R_i` is an exponential average (same
//! `alpha`) of the relative deviations `|L_j - Mavg_j| / Mavg_j` seen in
//! earlier periods. Until one deviation has been observed `eps` is infinite,
//! so the first two periods never move the width.
//!
//! Learning-rate changes open a bypass window during which the emitted width
//! is the full mantissa and observations are ignored.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floatcore::FloatFormat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ChopScope {
    /// Only activations follow the controller; weights stay at full width.
    #[default]
    Activations,
    /// Weights follow the controller too.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChopConfig {
    pub format: FloatFormat,
    pub alpha: f64,
    /// Batches per period.
    pub period: u32,
    /// Extra full-precision batches after the one where the LR changes.
    pub lr_cooldown: u32,
    pub scope: ChopScope,
}

impl ChopConfig {
    pub fn new(format: FloatFormat) -> Self {
        Self {
            format,
            alpha: 0.1,
            period: 1,
            lr_cooldown: 100,
            scope: ChopScope::Activations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if self.period == 0 {
            return Err(Error::config("period must be at least one batch"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Shrink,
    Hold,
    Grow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChopState {
    cfg: ChopConfig,
    n: u32,
    mavg: Option<f64>,
    rel_dev: Option<f64>,
    bypass_left: u32,
    pending_sum: f64,
    pending_batches: u32,
    periods: u64,
}

impl ChopState {
    /// Starts at full mantissa width.
    pub fn new(cfg: ChopConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            n: cfg.format.mantissa_bits(),
            cfg,
            mavg: None,
            rel_dev: None,
            bypass_left: 0,
            pending_sum: 0.0,
            pending_batches: 0,
            periods: 0,
        })
    }

    pub fn config(&self) -> &ChopConfig {
        &self.cfg
    }

    /// Controller width, ignoring bypass.
    pub fn bitlength(&self) -> u32 {
        self.n
    }

    /// Width to use for the next batch.
    pub fn width(&self) -> u32 {
        if self.bypass_active() {
            self.max_bits()
        } else {
            self.n
        }
    }

    pub fn max_bits(&self) -> u32 {
        self.cfg.format.mantissa_bits()
    }

    pub fn mavg(&self) -> Option<f64> {
        self.mavg
    }

    pub fn relative_deviation(&self) -> Option<f64> {
        self.rel_dev
    }

    pub fn bypass_active(&self) -> bool {
        self.bypass_left > 0
    }

    pub fn periods(&self) -> u64 {
        self.periods
    }

    #[cfg(test)]
    pub(crate) fn with_history(mut self, n: u32, mavg: Option<f64>, rel_dev: Option<f64>) -> Self {
        self.n = n;
        self.mavg = mavg;
        self.rel_dev = rel_dev;
        self
    }

    /// Threshold for the current period: `Mavg * R`, or infinity before any
    /// deviation has been seen.
    pub fn epsilon(&self) -> Result<f64> {
        let Some(mavg) = self.mavg else {
            return Ok(f64::INFINITY);
        };
        if !(mavg > 0.0) {
            return Err(Error::Numeric(format!("loss average {mavg} is not positive")));
        }
        Ok(self.rel_dev.map_or(f64::INFINITY, |r| mavg * r))
    }

    /// Direction for a period with loss `loss`, against the pre-update
    /// average.
    pub fn decide(&self, loss: f64) -> Result<Decision> {
        let Some(mavg) = self.mavg else {
            return Ok(Decision::Hold);
        };
        let eps = self.epsilon()?;
        Ok(if mavg > loss + eps {
            Decision::Shrink
        } else if mavg < loss - eps {
            Decision::Grow
        } else {
            Decision::Hold
        })
    }

    /// `Mavg <- Mavg + alpha * (L - Mavg)`; the first loss seeds the average.
    pub fn update_ema(&mut self, loss: f64) -> Result<()> {
        check_loss(loss)?;
        self.mavg = Some(match self.mavg {
            None => loss,
            Some(m) => m + self.cfg.alpha * (loss - m),
        });
        Ok(())
    }

    /// Ends a period: decide, move the width by at most one bit, then fold
    /// the loss into the deviation and loss averages. Returns the new width.
    pub fn end_period(&mut self, loss: f64) -> Result<u32> {
        check_loss(loss)?;
        let decision = self.decide(loss)?;
        self.n = match decision {
            Decision::Shrink => self.n.saturating_sub(1),
            Decision::Hold => self.n,
            Decision::Grow => (self.n + 1).min(self.max_bits()),
        };
        if let Some(mavg) = self.mavg {
            let r = (loss - mavg).abs() / mavg;
            self.rel_dev = Some(match self.rel_dev {
                None => r,
                Some(prev) => prev + self.cfg.alpha * (r - prev),
            });
        }
        self.update_ema(loss)?;
        self.periods += 1;
        Ok(self.n)
    }

    /// Reports one batch loss (the loss register write). Losses are averaged
    /// over the period; the bitlength moves when a period completes. Returns
    /// the width for the next batch.
    pub fn record_batch(&mut self, loss: f64) -> Result<u32> {
        check_loss(loss)?;
        if self.bypass_left > 0 {
            self.bypass_left -= 1;
            return Ok(self.width());
        }
        self.pending_sum += loss;
        self.pending_batches += 1;
        if self.pending_batches == self.cfg.period {
            let mean = self.pending_sum / self.pending_batches as f64;
            self.pending_sum = 0.0;
            self.pending_batches = 0;
            self.end_period(mean)?;
        }
        Ok(self.width())
    }

    /// Opens a full-precision window covering the current batch and the
    /// configured cooldown.
    pub fn begin_lr_change(&mut self) {
        self.bypass_left = 1 + self.cfg.lr_cooldown;
    }
}

fn check_loss(loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite loss {loss} reached the controller")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRecord {
    pub epoch: u32,
    pub batch: u64,
    pub width: u32,
    pub bypass: bool,
    pub loss: f64,
}

/// CSV with header `epoch,batch,width,bypass,loss`.
pub fn write_widths<W: Write>(out: W, records: &[WidthRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Width histogram `[count; m + 1]`.
pub fn width_histogram(records: &[WidthRecord], format: FloatFormat) -> Vec<u64> {
    let mut h = vec![0u64; format.mantissa_bits() as usize + 1];
    for r in records {
        h[r.width as usize] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state() -> ChopState {
        ChopState::new(ChopConfig::new(FloatFormat::Bf16)).unwrap()
    }

    #[test]
    fn ema_examples() {
        let mut s = state().with_history(7, Some(2.0), None);
        s.update_ema(1.0).unwrap();
        assert!((s.mavg().unwrap() - 1.9).abs() < 1e-15);

        let mut s = ChopState::new(ChopConfig {
            alpha: 1.0,
            ..ChopConfig::new(FloatFormat::Bf16)
        })
        .unwrap();
        s.update_ema(3.0).unwrap();
        s.update_ema(0.25).unwrap();
        assert_eq!(s.mavg(), Some(0.25));

        let mut s = state().with_history(7, Some(5.0), None);
        let mut prev = 5.0;
        for _ in 0..200 {
            s.update_ema(1.0).unwrap();
            let m = s.mavg().unwrap();
            assert!(m <= prev && m >= 1.0);
            prev = m;
        }
        assert!((prev - 1.0).abs() < 1e-8);
        assert!(s.update_ema(f64::NAN).is_err());
    }

    #[test]
    fn decision_branches() {
        // eps = 1.0 * 0.05
        let s = state().with_history(4, Some(1.0), Some(0.05));
        assert_eq!(s.decide(0.8).unwrap(), Decision::Shrink);
        assert_eq!(s.decide(0.98).unwrap(), Decision::Hold);
        assert_eq!(s.decide(1.2).unwrap(), Decision::Grow);

        let mut s = state().with_history(0, Some(1.0), Some(0.05));
        assert_eq!(s.end_period(0.5).unwrap(), 0);
        let mut s = state().with_history(7, Some(1.0), Some(0.05));
        assert_eq!(s.end_period(2.0).unwrap(), 7);
    }

    #[test]
    fn epsilon_from_history() {
        let s = state().with_history(7, Some(2.0), Some(0.05));
        assert!((s.epsilon().unwrap() - 0.1).abs() < 1e-15);

        // A history of constant 5% deviations converges R to 0.05.
        let mut s = state();
        let mut loss = 2.0;
        s.end_period(loss).unwrap();
        for _ in 0..50 {
            let m = s.mavg().unwrap();
            loss = m * 1.05;
            s.end_period(loss).unwrap();
        }
        assert!((s.relative_deviation().unwrap() - 0.05).abs() < 1e-12);

        let s = state().with_history(7, Some(2.0), Some(0.0));
        assert_eq!(s.epsilon().unwrap(), 0.0);
        assert_eq!(s.decide(1.999).unwrap(), Decision::Shrink);

        let s = state().with_history(7, Some(0.0), Some(0.1));
        assert!(matches!(s.epsilon(), Err(Error::Numeric(_))));
    }

    #[test]
    fn first_periods_hold() {
        let mut s = state();
        assert_eq!(s.epsilon().unwrap(), f64::INFINITY);
        assert_eq!(s.end_period(10.0).unwrap(), 7);
        // One average, no deviation yet.
        assert_eq!(s.end_period(0.001).unwrap(), 7);
        assert!(s.relative_deviation().is_some());
    }

    #[test]
    fn bypass_window() {
        let cfg = ChopConfig {
            lr_cooldown: 3,
            ..ChopConfig::new(FloatFormat::Bf16)
        };
        let mut s = ChopState::new(cfg).unwrap().with_history(2, Some(1.0), Some(0.01));
        let before = s.clone();
        s.begin_lr_change();
        for _ in 0..4 {
            assert_eq!(s.width(), 7);
            s.record_batch(100.0).unwrap();
        }
        assert!(!s.bypass_active());
        assert_eq!(s.width(), 2);
        assert_eq!(s, before);
    }

    #[test]
    fn period_averages_batches() {
        let cfg = ChopConfig {
            period: 2,
            ..ChopConfig::new(FloatFormat::Fp32)
        };
        let mut s = ChopState::new(cfg).unwrap();
        s.record_batch(1.0).unwrap();
        assert_eq!(s.mavg(), None);
        s.record_batch(3.0).unwrap();
        assert_eq!(s.mavg(), Some(2.0));
        assert_eq!(s.periods(), 1);
    }

    #[test]
    fn decreasing_loss_drives_width_to_zero() {
        let mut s = state();
        s.end_period(1.0).unwrap();
        s.end_period(0.9).unwrap();
        let mut shrinks = 0;
        while s.bitlength() > 0 {
            let mavg = s.mavg().unwrap();
            let eps = s.epsilon().unwrap();
            // Strictly below the average by more than the threshold.
            let loss = (mavg - 2.0 * eps - 1e-3 * mavg).max(mavg * 0.5);
            s.end_period(loss).unwrap();
            shrinks += 1;
            assert!(shrinks <= 7);
        }
    }

    proptest! {
        #[test]
        fn width_stays_bounded(losses in prop::collection::vec(1e-3f64..10.0, 1..300), alpha in 0.01f64..1.0) {
            let cfg = ChopConfig { alpha, ..ChopConfig::new(FloatFormat::Bf16) };
            let mut s = ChopState::new(cfg).unwrap();
            let mut again = ChopState::new(cfg).unwrap();
            for &l in &losses {
                let w = s.record_batch(l).unwrap();
                prop_assert!(w <= 7);
                prop_assert_eq!(again.record_batch(l).unwrap(), w);
            }
        }
    }
}
