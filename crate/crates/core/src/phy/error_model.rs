use super::McsEntry;

/// Logistic bit-error curve per MCS, turned into a frame error probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorModel {
    pub steepness: f64,
}

impl ErrorModel {
    /// BER in (0, 0.5): half a logistic centred on the MCS midpoint.
    pub fn ber(&self, snr_db: f64, mcs: &McsEntry) -> f64 {
        0.5 / (1.0 + (self.steepness * (snr_db - mcs.min_snr)).exp())
    }

    pub fn frame_error_probability(&self, snr_db: f64, mcs: &McsEntry, length_bits: u64) -> f64 {
        mpdu_error_probability(snr_db, mcs, length_bits, self.steepness)
    }
}

/// `1 - (1 - ber)^length_bits`, evaluated without cancellation.
pub fn mpdu_error_probability(snr_db: f64, mcs: &McsEntry, length_bits: u64, steepness: f64) -> f64 {
    if length_bits == 0 {
        return 0.0;
    }
    let ber = ErrorModel { steepness }.ber(snr_db, mcs);
    -((length_bits as f64) * (-ber).ln_1p()).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mcs4() -> McsEntry {
        McsEntry {
            index: 4,
            phy_rate: 39_000_000,
            min_snr: 13.2,
        }
    }

    const LEN: u64 = 552 * 8;

    #[test]
    fn high_and_low_snr_limits() {
        let m = mcs4();
        assert!(mpdu_error_probability(m.min_snr + 20.0, &m, LEN, 1.5) < 1e-6);
        assert!(mpdu_error_probability(m.min_snr - 20.0, &m, LEN, 1.5) > 0.999);
    }

    proptest! {
        #[test]
        fn monotone_in_snr(a in -20.0f64..60.0, b in -20.0f64..60.0, len in 1u64..20_000) {
            let m = mcs4();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(mpdu_error_probability(hi, &m, len, 1.5) <= mpdu_error_probability(lo, &m, len, 1.5));
        }

        #[test]
        fn monotone_in_length(snr in -20.0f64..60.0, a in 1u64..20_000, b in 1u64..20_000) {
            let m = mcs4();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(mpdu_error_probability(snr, &m, lo, 1.5) <= mpdu_error_probability(snr, &m, hi, 1.5));
        }
    }
}
