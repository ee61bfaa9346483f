//! Shared radio channel parameters and frame airtime.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimDuration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Mbit/s used for unicast frames.
    pub unicast_rate: f64,
    /// Mbit/s used for broadcast frames (the 802.11 basic rate).
    pub broadcast_rate: f64,
    /// MAC header, FCS and LLC bytes added to every frame.
    pub overhead_bytes: usize,
    /// Fixed per-transmission airtime in µs: preamble, IFS, ACK.
    pub overhead_us: f64,
    /// Probability that a unicast frame is still lost after the whole MAC
    /// retry budget. Each attempt, unicast or broadcast, fails with
    /// probability `frame_loss_prob^(1 / (mac_retry_limit + 1))`.
    pub frame_loss_prob: f64,
    /// Retransmissions allowed for a unicast frame. Broadcast is never retried.
    pub mac_retry_limit: u32,
    /// Per-device transmit queue length; frames beyond it are tail-dropped.
    pub queue_capacity: usize,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            unicast_rate: 54.0,
            broadcast_rate: 6.0,
            overhead_bytes: 40,
            overhead_us: 100.0,
            frame_loss_prob: 0.002,
            mac_retry_limit: 4,
            queue_capacity: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelConfigError {
    #[error("rates must be positive (unicast {0}, broadcast {1})")]
    Rate(f64, f64),
    #[error("frame_loss_prob must lie in [0, 1), got {0}")]
    LossProb(f64),
    #[error("queue_capacity must be at least 1")]
    Queue,
}

impl ChannelConfig {
    /// Lossless channel with default rates and overheads.
    pub fn ideal() -> Self {
        ChannelConfig { frame_loss_prob: 0.0, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ChannelConfigError> {
        if !(self.unicast_rate > 0.0 && self.broadcast_rate > 0.0) {
            return Err(ChannelConfigError::Rate(self.unicast_rate, self.broadcast_rate));
        }
        if !(0.0..1.0).contains(&self.frame_loss_prob) {
            return Err(ChannelConfigError::LossProb(self.frame_loss_prob));
        }
        if self.queue_capacity == 0 {
            return Err(ChannelConfigError::Queue);
        }
        Ok(())
    }

    /// Loss probability of a single transmission attempt.
    pub fn attempt_loss_prob(&self) -> f64 {
        if self.frame_loss_prob <= 0.0 {
            0.0
        } else {
            self.frame_loss_prob.powf(1.0 / f64::from(self.mac_retry_limit + 1))
        }
    }
}

/// Time a frame of `size` bytes occupies the channel.
pub fn frame_airtime(size: usize, broadcast: bool, cfg: &ChannelConfig) -> SimDuration {
    let rate = if broadcast { cfg.broadcast_rate } else { cfg.unicast_rate };
    let bits = ((size + cfg.overhead_bytes) * 8) as f64;
    SimDuration::from_secs_f64(bits / (rate * 1e6) + cfg.overhead_us * 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare() -> ChannelConfig {
        ChannelConfig { overhead_bytes: 0, overhead_us: 0.0, ..ChannelConfig::default() }
    }

    #[test]
    fn airtime_examples() {
        // 1400 * 8 / 54e6 s and 1400 * 8 / 6e6 s.
        let u = frame_airtime(1400, false, &bare());
        assert!((u.as_micros_f64() - 207.407).abs() < 0.01, "{u:?}");
        let b = frame_airtime(1400, true, &bare());
        assert!((b.as_millis_f64() - 1.8667).abs() < 0.001, "{b:?}");
        assert_eq!(frame_airtime(0, false, &bare()), SimDuration::ZERO);
        assert_eq!(frame_airtime(0, true, &bare()), SimDuration::ZERO);
    }

    #[test]
    fn overheads_add_up() {
        let cfg = ChannelConfig::default();
        // (1400 + 40) * 8 / 54 µs + 100 µs
        let t = frame_airtime(1400, false, &cfg);
        assert!((t.as_micros_f64() - (1440.0 * 8.0 / 54.0 + 100.0)).abs() < 0.01);
    }

    #[test]
    fn attempt_loss_reproduces_residual_unicast_loss() {
        let cfg = ChannelConfig::default();
        let q = cfg.attempt_loss_prob();
        assert!((q.powi(5) - 0.002).abs() < 1e-12);
        assert_eq!(ChannelConfig::ideal().attempt_loss_prob(), 0.0);
        let no_retry = ChannelConfig { mac_retry_limit: 0, frame_loss_prob: 0.1, ..ChannelConfig::default() };
        assert!((no_retry.attempt_loss_prob() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(ChannelConfig::default().validate().is_ok());
        assert!(ChannelConfig { unicast_rate: 0.0, ..ChannelConfig::default() }.validate().is_err());
        assert!(ChannelConfig { frame_loss_prob: 1.0, ..ChannelConfig::default() }.validate().is_err());
        assert!(ChannelConfig { frame_loss_prob: -0.1, ..ChannelConfig::default() }.validate().is_err());
    }
}
