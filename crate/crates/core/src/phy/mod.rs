//! Radio medium: link budget, fading, airtime, error model and collision resolution.

pub mod airtime;
pub mod channel;
pub mod error_model;
pub mod medium;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::time::SimDuration;

pub use airtime::{ampdu_airtime, control_airtime};
pub use channel::{FadingChannel, LinkId};
pub use error_model::{mpdu_error_probability, ErrorModel};
pub use medium::{resolve_reception, AttemptOutcome, Medium, ReceptionOutcome};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Number of HT MCS entries modelled (single spatial stream).
pub const MCS_COUNT: usize = 8;

/// HT20 long-GI single-stream rates, bit/s.
const HT20_RATES: [u64; MCS_COUNT] = [
    6_500_000, 13_000_000, 19_500_000, 26_000_000, 39_000_000, 52_000_000, 58_500_000, 65_000_000,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McsEntry {
    pub index: u8,
    pub phy_rate: u64,
    /// Midpoint of the logistic BER curve, dB.
    pub min_snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    /// Applied at both ends of every link.
    pub antenna_gain_dbi: f64,
    pub noise_figure_db: f64,
    pub fading: bool,
    pub rician_k_db: f64,
    pub coherence_time_ms: f64,
    pub capture_threshold_db: f64,
    pub cs_threshold_dbm: f64,
    /// Slope of the logistic BER curve, 1/dB.
    pub error_steepness: f64,
    /// BER-curve midpoint per MCS index, dB.
    pub mcs_min_snr_db: Vec<f64>,
    /// MCS used for token, ADDBA and their ACK frames.
    pub control_mcs: u8,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            frequency_hz: 2.4e9,
            bandwidth_hz: 20e6,
            tx_power_dbm: 20.0,
            antenna_gain_dbi: 10.0,
            noise_figure_db: 7.0,
            fading: true,
            rician_k_db: 6.0,
            coherence_time_ms: 10.0,
            capture_threshold_db: 10.0,
            cs_threshold_dbm: -82.0,
            error_steepness: 1.5,
            mcs_min_snr_db: default_min_snr(12.0),
            control_mcs: 0,
        }
    }
}

/// Midpoints for all MCS, anchored on the MCS4 value.
pub fn default_min_snr(mcs4: f64) -> Vec<f64> {
    [-11.0, -8.0, -5.5, -3.0, 0.0, 4.0, 5.5, 7.0].iter().map(|d| mcs4 + d).collect()
}

impl RadioConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.frequency_hz > 0.0 && self.frequency_hz <= 100e9) {
            return Err("radio.frequency_hz must be in (0, 100 GHz]".into());
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz <= 160e6) {
            return Err("radio.bandwidth_hz must be in (0, 160 MHz]".into());
        }
        if !(self.tx_power_dbm.is_finite() && self.tx_power_dbm <= 30.0) {
            return Err("radio.tx_power_dbm must be <= 30 dBm".into());
        }
        if !(self.coherence_time_ms > 0.0) {
            return Err("radio.coherence_time_ms must be > 0".into());
        }
        if self.rician_k_db.is_nan() {
            return Err("radio.rician_k_db must be a number or inf".into());
        }
        if !(self.capture_threshold_db > 0.0) {
            return Err("radio.capture_threshold_db must be > 0".into());
        }
        if !(self.error_steepness > 0.0) {
            return Err("radio.error_steepness must be > 0".into());
        }
        if self.mcs_min_snr_db.len() != MCS_COUNT {
            return Err(format!("radio.mcs_min_snr_db must list {MCS_COUNT} values"));
        }
        if self.control_mcs as usize >= MCS_COUNT {
            return Err("radio.control_mcs must be 0..=7".into());
        }
        Ok(())
    }

    pub fn noise_floor_dbm(&self) -> f64 {
        -174.0 + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    pub fn rician_k_linear(&self) -> f64 {
        if !self.fading {
            f64::INFINITY
        } else {
            crate::rng::db_to_linear(self.rician_k_db)
        }
    }

    pub fn coherence_time(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.coherence_time_ms * 1e-3)
    }

    pub fn mcs(&self, index: u8) -> Result<McsEntry, SimError> {
        let i = index as usize;
        if i >= MCS_COUNT {
            return Err(SimError::InvalidParameter(format!("MCS index {index}")));
        }
        Ok(McsEntry {
            index,
            phy_rate: HT20_RATES[i],
            min_snr: self.mcs_min_snr_db[i],
        })
    }

    /// Received power without fading.
    pub fn mean_rx_power_dbm(&self, distance_m: f64) -> Result<f64, SimError> {
        Ok(self.tx_power_dbm + 2.0 * self.antenna_gain_dbi - path_loss_db(distance_m, self.frequency_hz)?)
    }
}

/// Free-space (Friis) path loss in dB.
pub fn path_loss_db(distance_m: f64, frequency_hz: f64) -> Result<f64, SimError> {
    if !(distance_m > 0.0) {
        return Err(SimError::InvalidParameter(format!("distance {distance_m} m")));
    }
    Ok(20.0 * (4.0 * std::f64::consts::PI * distance_m * frequency_hz / SPEED_OF_LIGHT).log10())
}

/// One-way propagation delay, rounded to the nearest nanosecond.
pub fn propagation_delay(distance_m: f64) -> SimDuration {
    SimDuration::from_secs_f64(distance_m.max(0.0) / SPEED_OF_LIGHT)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent calculator: FSPL(d, f) = 20log10(d) + 20log10(f) - 147.55 dB.
    fn fspl_oracle(d: f64, f: f64) -> f64 {
        20.0 * d.log10() + 20.0 * f.log10() + 20.0 * (4.0 * std::f64::consts::PI / 299_792_458.0f64).log10()
    }

    #[test]
    fn friis_reference_points() {
        let pl500 = path_loss_db(500.0, 2.4e9).unwrap();
        let pl4500 = path_loss_db(4500.0, 2.4e9).unwrap();
        assert!((pl500 - 94.0).abs() < 0.1, "{pl500}");
        assert!((pl4500 - 113.1).abs() < 0.1, "{pl4500}");
        assert!((pl500 - fspl_oracle(500.0, 2.4e9)).abs() < 1e-9);
    }

    #[test]
    fn doubling_distance_adds_six_db() {
        for d in [1.0, 37.0, 500.0, 12_345.0] {
            let delta = path_loss_db(2.0 * d, 2.4e9).unwrap() - path_loss_db(d, 2.4e9).unwrap();
            assert!((delta - 6.02).abs() < 0.01);
        }
    }

    #[test]
    fn nonpositive_distance_is_error() {
        assert!(path_loss_db(0.0, 2.4e9).is_err());
        assert!(path_loss_db(-1.0, 2.4e9).is_err());
    }

    #[test]
    fn link_budget_at_500m() {
        let cfg = RadioConfig::default();
        let p = cfg.mean_rx_power_dbm(500.0).unwrap();
        assert!((p - -54.0).abs() < 0.1, "{p}");
    }

    #[test]
    fn propagation_delays() {
        assert_eq!(propagation_delay(4500.0).as_nanos(), 15_010);
        assert!((propagation_delay(4500.0).as_micros_f64() - 15.0).abs() < 0.05);
        let d500 = propagation_delay(500.0).as_nanos() as i64;
        assert!((d500 - 1667).abs() <= 1, "{d500}");
        assert_eq!(propagation_delay(0.0), SimDuration::ZERO);
    }

    #[test]
    fn noise_floor_is_about_minus_94() {
        let nf = RadioConfig::default().noise_floor_dbm();
        assert!((nf - -94.0).abs() < 0.05, "{nf}");
    }

    #[test]
    fn mcs_table_is_monotone_and_mcs4_is_39m() {
        let cfg = RadioConfig::default();
        let rates: Vec<u64> = (0..8).map(|i| cfg.mcs(i).unwrap().phy_rate).collect();
        assert!(rates.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(cfg.mcs(4).unwrap().phy_rate, 39_000_000);
        assert!(cfg.mcs(8).is_err());
    }

    #[test]
    fn radio_validation() {
        let mut cfg = RadioConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.tx_power_dbm = 31.0;
        assert!(cfg.validate().is_err());
    }
}
