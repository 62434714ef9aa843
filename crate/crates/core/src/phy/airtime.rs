//! On-air duration of A-MPDUs and control frames.
//!
//! Framing constants (bytes unless noted):
//!
//! * PHY preamble + header: 36 µs, paid once per PPDU
//! * per-MPDU subframe: 4 delimiter + 36 MAC header + payload + 4 FCS, padded to 4
//! * BACK: 32, token grant/release and ADDBA request/response: 32, ACK: 14

use crate::error::SimError;
use crate::time::SimDuration;

pub const PHY_PREAMBLE: SimDuration = SimDuration::from_micros(36);
pub const AMPDU_DELIMITER_BYTES: u32 = 4;
pub const MAC_HEADER_BYTES: u32 = 36;
pub const FCS_BYTES: u32 = 4;
pub const SUBFRAME_ALIGN_BYTES: u32 = 4;
pub const BACK_BYTES: u32 = 32;
pub const MGMT_FRAME_BYTES: u32 = 32;
pub const ACK_BYTES: u32 = 14;
pub const MAX_AMPDU_LEN: usize = 4;

/// Bytes one MPDU occupies inside an A-MPDU.
pub fn subframe_bytes(payload_bytes: u32) -> u32 {
    let raw = AMPDU_DELIMITER_BYTES + MAC_HEADER_BYTES + payload_bytes + FCS_BYTES;
    raw.div_ceil(SUBFRAME_ALIGN_BYTES) * SUBFRAME_ALIGN_BYTES
}

/// Bits covered by one MPDU's error draw (header, body and FCS).
pub fn mpdu_bits(payload_bytes: u32) -> u64 {
    (MAC_HEADER_BYTES + payload_bytes + FCS_BYTES) as u64 * 8
}

fn bits_duration(bits: u64, rate_bps: u64) -> SimDuration {
    let ns = (bits as u128 * 1_000_000_000).div_ceil(rate_bps as u128);
    SimDuration(ns as u64)
}

pub fn ampdu_airtime(payloads: &[u32], rate_bps: u64) -> Result<SimDuration, SimError> {
    if payloads.is_empty() {
        return Err(SimError::InvalidParameter("empty A-MPDU".into()));
    }
    if payloads.len() > MAX_AMPDU_LEN {
        return Err(SimError::InvalidParameter(format!(
            "A-MPDU of {} exceeds limit {MAX_AMPDU_LEN}",
            payloads.len()
        )));
    }
    let bits: u64 = payloads.iter().map(|&p| subframe_bytes(p) as u64 * 8).sum();
    Ok(PHY_PREAMBLE + bits_duration(bits, rate_bps))
}

pub fn control_airtime(bytes: u32, rate_bps: u64) -> SimDuration {
    PHY_PREAMBLE + bits_duration(bytes as u64 * 8, rate_bps)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MCS4: u64 = 39_000_000;

    #[test]
    fn four_mpdu_aggregate_oracle() {
        // Oracle: 36 µs + ceil(4 * 556 B * 8 / 39 Mbit/s), evaluated in floating point.
        let bits = 4.0 * 556.0 * 8.0;
        let oracle_us = 36.0 + bits / 39e6 * 1e6;
        let got = ampdu_airtime(&[512; 4], MCS4).unwrap().as_micros_f64();
        assert!((got - oracle_us).abs() < 1.0, "{got} vs {oracle_us}");
        assert!((got - 492.2).abs() < 1.0);
    }

    #[test]
    fn aggregation_amortises_preamble() {
        let one = ampdu_airtime(&[512], MCS4).unwrap();
        let four = ampdu_airtime(&[512; 4], MCS4).unwrap();
        assert!(four < one * 4);
    }

    #[test]
    fn back_frame_oracle() {
        let got = control_airtime(BACK_BYTES, MCS4).as_micros_f64();
        assert!((got - (36.0 + 256.0 / 39e6 * 1e6)).abs() < 1.0);
        assert!((got - 42.6).abs() < 1.0);
    }

    #[test]
    fn empty_or_oversized_is_error() {
        assert!(ampdu_airtime(&[], MCS4).is_err());
        assert!(ampdu_airtime(&[512; 5], MCS4).is_err());
    }

    #[test]
    fn subframes_are_aligned() {
        assert_eq!(subframe_bytes(512), 556);
        assert_eq!(subframe_bytes(513), 560);
    }
}
