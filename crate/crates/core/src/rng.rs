//! Reproducible per-purpose random streams.
//!
//! Every consumer of randomness owns a stream keyed by `(seed, owner, purpose)`. The
//! key is mixed into a ChaCha seed, so adding a new consumer never shifts the draws of
//! an existing one. This is what lets the token and DCF arms of an experiment see the
//! same channel under the same seed.
//!
//! Raw draw accounting (one raw draw = one `u64` from the generator):
//!
//! | call                  | raw draws |
//! |-----------------------|-----------|
//! | `uniform`             | 1         |
//! | `uniform_int`         | 1         |
//! | `exponential`         | 1         |
//! | `rician_envelope`     | 2         |

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Fading,
    Backoff,
    TrafficStart,
    ErrorDraw,
    ForcedLoss,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Fading => 0x4641_4449_4e47,
            Purpose::Backoff => 0x4241_434b_4f46,
            Purpose::TrafficStart => 0x5452_4146_4643,
            Purpose::ErrorDraw => 0x4552_524f_5252,
            Purpose::ForcedLoss => 0x4c4f_5353_4c4f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Exponential { mean: f64 },
    /// Envelope of a unit-mean-power Rician channel with linear K-factor.
    RicianEnvelope { k_linear: f64 },
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> [u8; 32] {
    let mut acc = 0x6a09_e667_f3bc_c908u64;
    for &p in parts {
        acc = splitmix(acc ^ splitmix(p));
    }
    let mut out = [0u8; 32];
    for (i, chunk) in out.chunks_mut(8).enumerate() {
        acc = splitmix(acc.wrapping_add(i as u64));
        chunk.copy_from_slice(&acc.to_le_bytes());
    }
    out
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    owner: u64,
    purpose: Purpose,
    rng: ChaCha8Rng,
    raw_draws: u64,
}

impl RngStream {
    pub fn new(seed: u64, owner: u64, purpose: Purpose) -> Self {
        RngStream {
            seed,
            owner,
            purpose,
            rng: ChaCha8Rng::from_seed(derive_seed(&[seed, purpose.tag(), owner])),
            raw_draws: 0,
        }
    }

    /// A stream for one slot of an indexed family, e.g. one coherence interval of one link.
    /// The result depends only on `(seed, owner, purpose, index)`.
    pub fn indexed(seed: u64, owner: u64, purpose: Purpose, index: u64) -> Self {
        RngStream {
            seed,
            owner,
            purpose,
            rng: ChaCha8Rng::from_seed(derive_seed(&[seed, purpose.tag(), owner, index, 0x1d])),
            raw_draws: 0,
        }
    }

    pub fn key(&self) -> (u64, u64, Purpose) {
        (self.seed, self.owner, self.purpose)
    }

    pub fn raw_draws(&self) -> u64 {
        self.raw_draws
    }

    fn next_raw(&mut self) -> u64 {
        self.raw_draws += 1;
        self.rng.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_raw() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.unit() * (hi - lo)
    }

    /// Uniform integer in `[0, max]` inclusive.
    pub fn uniform_int(&mut self, max: u64) -> u64 {
        let span = max as u128 + 1;
        ((self.next_raw() as u128 * span) >> 64) as u64
    }

    pub fn exponential(&mut self, mean: f64) -> f64 {
        -mean * (1.0 - self.unit()).ln()
    }

    /// Envelope `|h|` of a Rician channel normalised to `E[|h|^2] = 1`.
    pub fn rician_envelope(&mut self, k_linear: f64) -> f64 {
        let u1 = self.unit();
        let u2 = self.unit();
        if k_linear.is_infinite() {
            return 1.0;
        }
        let radius = (-2.0 * (1.0 - u1).ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        let scatter = (1.0 / (2.0 * (k_linear + 1.0))).sqrt();
        let los = (k_linear / (k_linear + 1.0)).sqrt();
        let re = los + scatter * radius * angle.cos();
        let im = scatter * radius * angle.sin();
        re.hypot(im)
    }

    pub fn draw(&mut self, dist: Distribution) -> Result<f64, SimError> {
        match dist {
            Distribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                    return Err(SimError::InvalidParameter(format!("uniform bounds [{lo}, {hi})")));
                }
                Ok(self.uniform(lo, hi))
            }
            Distribution::Exponential { mean } => {
                if !(mean.is_finite() && mean > 0.0) {
                    return Err(SimError::InvalidParameter(format!("exponential mean {mean}")));
                }
                Ok(self.exponential(mean))
            }
            Distribution::RicianEnvelope { k_linear } => {
                if k_linear.is_nan() || k_linear < 0.0 {
                    return Err(SimError::InvalidParameter(format!("rician K {k_linear}")));
                }
                Ok(self.rician_envelope(k_linear))
            }
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}
