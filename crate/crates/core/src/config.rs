//! Link configuration and the seeded random source shared by every module.
//!
//! All quantities are in channel-use units: CFOs in radians per channel use,
//! slot lengths in channel uses, powers linear.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar parameters of the uplink.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Base-station antennas.
    pub m: usize,
    /// Single-antenna users.
    pub k: usize,
    /// Length of the CFO-estimation pilot, in channel uses.
    pub n_pilot: usize,
    /// Uplink slot length.
    pub n_uplink: usize,
    /// Coherence interval.
    pub n_coherence: usize,
    /// Per-user transmit power.
    pub p_u: f64,
    /// Noise variance.
    pub sigma2: f64,
    /// Path-loss factors, one per user.
    pub beta: Vec<f64>,
    /// Bound on |omega_k|, radians per channel use.
    pub omega_max: f64,
    /// Constant in the large-array power scaling gamma = c0 / sqrt(M).
    pub c0: f64,
    /// SNR used during the CFO-pilot slot. `None` shares the data SNR.
    pub cfo_snr_override: Option<f64>,
}

impl SystemConfig {
    /// The operating point used throughout the numerical study: M = 80,
    /// K = 10, N = N_u = 100, N_c = 200, unit path loss and |omega| <= pi/50.
    pub fn reference() -> Self {
        Self {
            m: 80,
            k: 10,
            n_pilot: 100,
            n_uplink: 100,
            n_coherence: 200,
            p_u: 1.0,
            sigma2: 1.0,
            beta: vec![1.0; 10],
            omega_max: PI / 50.0,
            c0: 1.0,
            cfo_snr_override: None,
        }
    }

    /// Checks every parameter relationship, returning the config unchanged.
    pub fn validate(self) -> Result<Self> {
        self.check()?;
        Ok(self)
    }

    pub fn check(&self) -> Result<()> {
        if self.m <= self.k {
            return Err(Error::TooFewAntennas { m: self.m, k: self.k });
        }
        if self.k == 0 {
            return Err(Error::NonPositive { name: "k", value: 0.0 });
        }
        if self.n_pilot < self.k {
            return Err(Error::PilotTooShort { n: self.n_pilot, k: self.k });
        }
        if self.n_pilot > self.n_uplink || self.n_uplink > self.n_coherence {
            return Err(Error::SlotOrdering {
                n: self.n_pilot,
                n_u: self.n_uplink,
                n_c: self.n_coherence,
            });
        }
        positive("p_u", self.p_u)?;
        positive("sigma2", self.sigma2)?;
        positive("c0", self.c0)?;
        if let Some(g) = self.cfo_snr_override {
            positive("cfo_snr_override", g)?;
        }
        if self.beta.len() != self.k {
            return Err(Error::BetaLength { expected: self.k, got: self.beta.len() });
        }
        for &b in &self.beta {
            positive("beta", b)?;
        }
        if !(self.omega_max >= 0.0) {
            return Err(Error::NonPositive { name: "omega_max", value: self.omega_max });
        }
        let product = self.omega_max * self.k as f64;
        if product >= PI {
            return Err(Error::CfoNotIdentifiable { product });
        }
        Ok(())
    }

    /// gamma = p_u / sigma^2.
    pub fn snr(&self) -> f64 {
        self.p_u / self.sigma2
    }

    /// SNR in effect during the CFO-pilot slot.
    pub fn cfo_snr(&self) -> f64 {
        self.cfo_snr_override.unwrap_or_else(|| self.snr())
    }

    /// Transmit power during the CFO-pilot slot.
    pub fn cfo_p_u(&self) -> f64 {
        self.cfo_snr() * self.sigma2
    }

    /// Same link with p_u rescaled so that gamma equals `snr_db`.
    pub fn with_snr_db(&self, snr_db: f64) -> Self {
        Self { p_u: db_to_linear(snr_db) * self.sigma2, ..self.clone() }
    }

    pub fn with_antennas(&self, m: usize) -> Self {
        Self { m, ..self.clone() }
    }

    /// First and last channel use carrying data.
    pub fn data_range(&self) -> std::ops::RangeInclusive<usize> {
        self.k..=self.n_uplink - 1
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositive { name, value })
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Half-up rounding to two decimals, used for reported dB values.
pub fn round_db_2(x: f64) -> f64 {
    (x * 100.0 + 0.5).floor() / 100.0
}

/// On-disk JSON configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub m: usize,
    pub k: usize,
    pub n_pilot_cfo: usize,
    pub n_uplink: usize,
    pub n_coherence: usize,
    pub p_u: f64,
    pub sigma2: f64,
    pub beta: Vec<f64>,
    pub omega_max: f64,
    pub c0: f64,
    pub seed: u64,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_parts(config: &SystemConfig, seed: u64) -> Self {
        Self {
            m: config.m,
            k: config.k,
            n_pilot_cfo: config.n_pilot,
            n_uplink: config.n_uplink,
            n_coherence: config.n_coherence,
            p_u: config.p_u,
            sigma2: config.sigma2,
            beta: config.beta.clone(),
            omega_max: config.omega_max,
            c0: config.c0,
            seed,
        }
    }

    /// Validated link configuration and the seed.
    pub fn into_parts(self) -> Result<(SystemConfig, u64)> {
        let config = SystemConfig {
            m: self.m,
            k: self.k,
            n_pilot: self.n_pilot_cfo,
            n_uplink: self.n_uplink,
            n_coherence: self.n_coherence,
            p_u: self.p_u,
            sigma2: self.sigma2,
            beta: self.beta,
            omega_max: self.omega_max,
            c0: self.c0,
            cfo_snr_override: None,
        }
        .validate()?;
        Ok((config, self.seed))
    }
}

/// Seeded source of independent random substreams.
///
/// Every Monte Carlo trial draws from its own ChaCha stream keyed by
/// `(seed, stream)`, so results do not depend on how trials are scheduled
/// across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomSource {
    pub seed: u64,
    pub stream: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    /// Derives a source for an independent experiment phase. The derived seed
    /// is a fixed mix of the parent seed and `tag`.
    pub fn fork(self, tag: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(self.stream))))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn reference_is_valid() {
        assert!(SystemConfig::reference().validate().is_ok());
    }

    #[test]
    fn rejects_m_not_above_k() {
        let c = SystemConfig { m: 10, ..SystemConfig::reference() };
        assert_eq!(c.validate(), Err(Error::TooFewAntennas { m: 10, k: 10 }));
    }

    #[test]
    fn rejects_unidentifiable_cfo_bound() {
        let c = SystemConfig { omega_max: PI / 5.0, ..SystemConfig::reference() };
        assert!(matches!(c.validate(), Err(Error::CfoNotIdentifiable { .. })));
    }

    #[test]
    fn rejects_bad_powers_and_lengths() {
        let base = SystemConfig::reference();
        let c = SystemConfig { p_u: 0.0, ..base.clone() };
        assert!(matches!(c.validate(), Err(Error::NonPositive { name: "p_u", .. })));
        let c = SystemConfig { sigma2: -1.0, ..base.clone() };
        assert!(matches!(c.validate(), Err(Error::NonPositive { name: "sigma2", .. })));
        let c = SystemConfig { n_pilot: 5, ..base.clone() };
        assert_eq!(c.validate(), Err(Error::PilotTooShort { n: 5, k: 10 }));
        let c = SystemConfig { beta: vec![1.0; 3], ..base.clone() };
        assert!(matches!(c.validate(), Err(Error::BetaLength { .. })));
        let mut c = base;
        c.beta[4] = 0.0;
        assert!(matches!(c.validate(), Err(Error::NonPositive { name: "beta", .. })));
    }

    #[test]
    fn snr_is_ratio() {
        let mut c = SystemConfig::reference();
        assert_eq!(c.snr(), 1.0);
        c.p_u = 2.0;
        assert_eq!(c.snr(), 2.0);
        c.p_u = 1.0;
        c.sigma2 = 10.0;
        assert_eq!(c.snr(), 0.1);
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let text = r#"{"m":80,"k":10,"n_pilot_cfo":100,"n_uplink":100,"n_coherence":200,
            "p_u":1.0,"sigma2":1.0,"beta":[1,1,1,1,1,1,1,1,1,1],
            "omega_max":0.06283185307179587,"c0":1.0,"seed":7}"#;
        let (config, seed) = ConfigFile::from_json(text).unwrap().into_parts().unwrap();
        assert_eq!(seed, 7);
        assert_eq!(config.m, 80);
        assert_eq!(config.n_pilot, 100);

        let bad = text.replace("\"seed\":7", "\"seed\":7,\"extra\":1");
        assert!(matches!(ConfigFile::from_json(&bad), Err(Error::Parse(_))));
    }

    #[test]
    fn substreams_reproduce_and_differ() {
        let src = RandomSource::new(42);
        let a: Vec<u64> = (0..4).map(|_| 0).scan(src.with_stream(3).rng(), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(src.with_stream(3).rng(), |r, _| Some(r.random())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(src.with_stream(4).rng(), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_db_2(1.706), 1.71);
        assert_eq!(round_db_2(1.704), 1.7);
        assert_eq!(round_db_2(-1.234), -1.23);
    }
}
