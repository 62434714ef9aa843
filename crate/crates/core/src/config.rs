//! Scenario configuration (TOML).

use std::fmt;
use std::path::Path;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dcf::DcfConfig;
use crate::mac::Selection;
use crate::phy::RadioConfig;
use crate::time::SimDuration;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacKind {
    Token,
    Dcf,
}

impl MacKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MacKind::Token => "token",
            MacKind::Dcf => "dcf",
        }
    }
}

impl fmt::Display for MacKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MacKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "token" => Ok(MacKind::Token),
            "dcf" => Ok(MacKind::Dcf),
            _ => Err(format!("unknown mac '{s}' (expected token or dcf)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Directions {
    Both,
    Upstream,
    Downstream,
}

/// Bit rate accepting `1000000`, `"1000k"` or `"1M"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rate(pub u64);

pub fn parse_rate(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (num, mult) = match s.char_indices().last() {
        Some((i, 'k' | 'K')) => (&s[..i], 1e3),
        Some((i, 'M')) => (&s[..i], 1e6),
        Some((i, 'G')) => (&s[..i], 1e9),
        _ => (s, 1.0),
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("bad rate '{s}'"))?;
    let bps = (v * mult).round();
    if !(bps >= 1.0 && bps.is_finite()) {
        return Err(format!("rate '{s}' must be positive"));
    }
    Ok(bps as u64)
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Float(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Rate(v)),
            Raw::Float(v) if v >= 1.0 => Ok(Rate(v.round() as u64)),
            Raw::Float(v) => Err(de::Error::custom(format!("rate {v} must be positive"))),
            Raw::Text(s) => parse_rate(&s).map(Rate).map_err(de::Error::custom),
        }
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueueConfig {
    pub ip_capacity: usize,
    pub mac_capacity: usize,
    pub ttl_ms: u64,
    pub retry_limit: u8,
    /// Separate IP FIFOs per destination at the AP.
    pub per_flow_queues: bool,
    pub selection: Selection,
    pub max_ampdu: usize,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            ip_capacity: 1000,
            mac_capacity: 400,
            ttl_ms: 500,
            retry_limit: 7,
            per_flow_queues: false,
            selection: Selection::ByReceiver,
            max_ampdu: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenConfig {
    pub credits: u32,
    pub credits_max: u32,
    pub recovery_margin: f64,
    pub timer_slack_us: u64,
    pub token_loss_multiplier: f64,
    /// Consecutive silent recoveries before a station is dropped; 0 disables.
    pub eviction_threshold: u32,
    /// Turns per round for each station; empty means one each.
    pub weights: Vec<u32>,
    /// Probability that a grant or release frame is discarded at its receiver.
    pub forced_token_loss: f64,
}

impl Default for TokenConfig {
    fn default() -> Self {
        TokenConfig {
            credits: 4,
            credits_max: 16,
            recovery_margin: 2.0,
            timer_slack_us: 5,
            token_loss_multiplier: 3.0,
            eviction_threshold: 3,
            weights: Vec::new(),
            forced_token_loss: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub mac: MacKind,
    #[serde(alias = "rate_per_flow")]
    pub rate: Rate,
    pub n_nodes: usize,
    pub spacing: f64,
    /// Seconds.
    pub duration: f64,
    pub seeds: Vec<u64>,
    pub mcs: u8,
    pub packet_bytes: u32,
    /// Flow start offsets are uniform in `[0, start_window)` seconds.
    pub start_window: f64,
    pub directions: Directions,
    /// `fixed` is the only implemented rate control.
    pub rate_control: String,
    pub radio: RadioConfig,
    pub queues: QueueConfig,
    pub token: TokenConfig,
    pub dcf: DcfConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            mac: MacKind::Token,
            rate: Rate(1_000_000),
            n_nodes: 10,
            spacing: 500.0,
            duration: 500.0,
            seeds: vec![1, 2, 3, 4, 5],
            mcs: 4,
            packet_bytes: 512,
            start_window: 2.0,
            directions: Directions::Both,
            rate_control: "fixed".into(),
            radio: RadioConfig::default(),
            queues: QueueConfig::default(),
            token: TokenConfig::default(),
            dcf: DcfConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.n_nodes < 2 {
            return bad("n_nodes ≥ 2");
        }
        if self.n_nodes > u16::MAX as usize {
            return bad("n_nodes too large");
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad("spacing > 0");
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad("duration ≥ 0");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty");
        }
        if self.mcs as usize >= crate::phy::MCS_COUNT {
            return bad("mcs must be 0..=7");
        }
        if self.packet_bytes == 0 || self.packet_bytes > 2304 {
            return bad("packet_bytes must be in 1..=2304");
        }
        if !(self.start_window >= 0.0) {
            return bad("start_window ≥ 0");
        }
        if self.rate_control != "fixed" {
            return Err(ConfigError::Invalid(format!(
                "rate_control '{}' is not supported (only 'fixed')",
                self.rate_control
            )));
        }
        self.radio.validate().map_err(ConfigError::Invalid)?;
        self.dcf.validate().map_err(ConfigError::Invalid)?;
        let q = &self.queues;
        if q.ip_capacity == 0 || q.mac_capacity == 0 {
            return bad("queues.ip_capacity and queues.mac_capacity must be > 0");
        }
        if !(1..=4).contains(&q.max_ampdu) {
            return bad("queues.max_ampdu must be in 1..=4");
        }
        let t = &self.token;
        if t.credits == 0 || t.credits > t.credits_max {
            return bad("token.credits must be in 1..=token.credits_max");
        }
        if !(t.recovery_margin >= 1.0) {
            return bad("token.recovery_margin ≥ 1");
        }
        if !(t.token_loss_multiplier > 0.0) {
            return bad("token.token_loss_multiplier > 0");
        }
        if !(0.0..1.0).contains(&t.forced_token_loss) {
            return bad("token.forced_token_loss must be in [0, 1)");
        }
        if !t.weights.is_empty() && t.weights.len() != self.n_nodes - 1 {
            return bad("token.weights must list one weight per station");
        }
        Ok(())
    }

    pub fn duration(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.duration)
    }

    pub fn max_distance(&self) -> f64 {
        self.spacing * (self.n_nodes - 1) as f64
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| i as f64 * self.spacing).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}
