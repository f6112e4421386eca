//! Impulse-pilot CFO estimation.
//!
//! In the CFO-pilot slot of `N` channel uses each user sends one impulse of
//! amplitude sqrt(K p_u) per block of `K` channel uses, user `k` at offset `k`
//! inside the block. The base station correlates consecutive impulses of the
//! same user across all antennas; the phase advance over one block is
//! `omega_k K`, so `omega_hat_k = arg(rho_k) / K`.
//!
//! Users and blocks are 0-based here: user `k` in block `b` transmits at
//! `t = b K + k`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{draw_channel, uplink_rx, CMatrix, ChannelRealization, ReceivedBlock, TxScaling};
use crate::config::{RandomSource, SystemConfig};
use crate::montecarlo::{run_trials, Moments};
use crate::error::{Error, Result};

/// Where and how loudly each user transmits during the CFO-pilot slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CfoPilotSchedule {
    /// Users.
    pub k: usize,
    /// Pilot length in channel uses.
    pub n: usize,
    /// ceil(N / K).
    pub blocks: usize,
    /// sqrt(K p_u) with the CFO-slot power.
    pub amplitude: f64,
}

impl CfoPilotSchedule {
    /// Channel use of user `k`'s impulse in block `b`.
    pub fn tau(&self, b: usize, k: usize) -> usize {
        b * self.k + k
    }

    /// Blocks in which user `k` actually transmits. Equals `blocks` unless the
    /// last block is truncated before the user's slot.
    pub fn effective_blocks(&self, k: usize) -> usize {
        if k >= self.n {
            0
        } else {
            (self.n - k).div_ceil(self.k)
        }
    }

    /// K x N transmit matrix with the impulses in place.
    pub fn transmit_matrix(&self) -> CMatrix {
        let mut x = CMatrix::zeros(self.k, self.n);
        for k in 0..self.k {
            for b in 0..self.effective_blocks(k) {
                x[(k, self.tau(b, k))] = Complex64::new(self.amplitude, 0.0);
            }
        }
        x
    }
}

pub fn build_schedule(config: &SystemConfig) -> CfoPilotSchedule {
    CfoPilotSchedule {
        k: config.k,
        n: config.n_pilot,
        blocks: config.n_pilot.div_ceil(config.k),
        amplitude: (config.k as f64 * config.cfo_p_u()).sqrt(),
    }
}

/// Per-user CFO estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CfoEstimate {
    pub omega_hat: Vec<f64>,
    /// Normalized block correlation; `None` when the estimate did not come from pilots.
    pub rho: Option<Vec<Complex64>>,
    /// omega_hat - omega, when the truth is known.
    pub residual: Option<Vec<f64>>,
    /// Closed-form MSE with G_k = 1.
    pub mse_closed_form: Vec<f64>,
}

impl CfoEstimate {
    /// Perfect knowledge of the CFOs.
    pub fn genie(omega: &[f64]) -> Self {
        Self {
            omega_hat: omega.to_vec(),
            rho: None,
            residual: Some(vec![0.0; omega.len()]),
            mse_closed_form: vec![0.0; omega.len()],
        }
    }

    /// No compensation at all (the zero-CFO world).
    pub fn zero(k: usize) -> Self {
        Self {
            omega_hat: vec![0.0; k],
            rho: None,
            residual: None,
            mse_closed_form: vec![0.0; k],
        }
    }

    pub fn with_truth(mut self, omega: &[f64]) -> Self {
        self.residual = Some(self.omega_hat.iter().zip(omega).map(|(e, w)| e - w).collect());
        self
    }
}

/// Principal argument in (-pi, pi].
fn principal_arg(z: Complex64) -> f64 {
    let a = z.arg();
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Correlates consecutive impulses of every user over the CFO-pilot slot.
///
/// `rx` must cover channel uses `0 .. N`. Fails if any user has fewer than two
/// pilot blocks.
pub fn estimate_cfo(rx: &ReceivedBlock, schedule: &CfoPilotSchedule, config: &SystemConfig) -> Result<CfoEstimate> {
    let m = rx.samples.nrows();
    if rx.t0 != 0 || rx.len() < schedule.n || m != config.m {
        return Err(Error::DimensionMismatch {
            what: "CFO pilot block",
            expected: (config.m, schedule.n),
            got: rx.samples.shape(),
        });
    }
    let p_u = config.cfo_p_u();
    let mut rho = Vec::with_capacity(schedule.k);
    let mut omega_hat = Vec::with_capacity(schedule.k);
    for k in 0..schedule.k {
        let blocks = schedule.effective_blocks(k);
        if blocks < 2 {
            return Err(Error::DegenerateBlocks { user: k, blocks });
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for b in 0..blocks - 1 {
            let prev = rx.samples.column(schedule.tau(b, k));
            let next = rx.samples.column(schedule.tau(b + 1, k));
            acc += prev.dotc(&next);
        }
        let norm = (m * schedule.k * (blocks - 1)) as f64 * p_u * config.beta[k];
        let r = acc / norm;
        omega_hat.push(principal_arg(r) / schedule.k as f64);
        rho.push(r);
    }
    Ok(CfoEstimate {
        omega_hat,
        rho: Some(rho),
        residual: None,
        mse_closed_form: cfo_mse_closed_form(config, None),
    })
}

/// Runs the whole CFO-pilot slot for one channel realization: synthesize the
/// impulses, add noise and estimate. The residual is filled in.
pub fn estimate_from_channel<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<CfoEstimate> {
    let schedule = build_schedule(config);
    let rx = uplink_rx(channel, &schedule.transmit_matrix(), 0, TxScaling::AsGiven, config, rng)?;
    Ok(estimate_cfo(&rx, &schedule, config)?.with_truth(&channel.omega))
}

/// Sampled CFO residuals, per user.
#[derive(Debug, Clone, Default)]
pub struct CfoResidualStats {
    pub trials: usize,
    /// omega_hat - omega.
    pub residual: Vec<Moments>,
    /// (omega_hat - omega)^2.
    pub squared: Vec<Moments>,
}

impl CfoResidualStats {
    /// Empirical MSE pooled over users.
    pub fn pooled_mse(&self) -> f64 {
        let mut all = Moments::default();
        self.squared.iter().for_each(|m| all.merge(m));
        all.mean()
    }
}

/// Runs the CFO-pilot slot on fresh channels and collects residuals.
pub fn sample_cfo_residuals(config: &SystemConfig, trials: usize, source: RandomSource) -> Result<CfoResidualStats> {
    let k = config.k;
    let empty = || CfoResidualStats {
        trials: 0,
        residual: vec![Moments::default(); k],
        squared: vec![Moments::default(); k],
    };
    run_trials(
        source,
        trials,
        empty,
        |acc, rng, _| {
            let channel = draw_channel(config, rng);
            let est = estimate_from_channel(&channel, config, rng)?;
            acc.trials += 1;
            for (q, r) in est.residual.unwrap_or_default().into_iter().enumerate() {
                acc.residual[q].push(r);
                acc.squared[q].push(r * r);
            }
            Ok(())
        },
        |a, b| {
            a.trials += b.trials;
            for q in 0..k {
                a.residual[q].merge(&b.residual[q]);
                a.squared[q].merge(&b.squared[q]);
            }
        },
    )
}

/// How CFOs are handled in a simulated frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CfoMode {
    /// Estimated from the CFO-pilot slot and compensated.
    Estimated,
    /// No CFO at all: omega = omega_hat = 0.
    IdealZero,
    /// CFOs present but known exactly: omega_hat = omega.
    Genie,
}

impl CfoMode {
    pub const ALL: [CfoMode; 3] = [CfoMode::Estimated, CfoMode::IdealZero, CfoMode::Genie];

    pub fn as_str(self) -> &'static str {
        match self {
            CfoMode::Estimated => "estimated",
            CfoMode::IdealZero => "ideal-zero",
            CfoMode::Genie => "genie",
        }
    }

    /// Whether a residual CFO remains after compensation.
    pub fn has_residual(self) -> bool {
        self == CfoMode::Estimated
    }

    /// Produces the CFO estimate for `channel` under this mode, zeroing the
    /// true CFOs first in the zero-CFO world.
    pub fn apply<R: Rng + ?Sized>(
        self,
        channel: &mut ChannelRealization,
        config: &SystemConfig,
        rng: &mut R,
    ) -> Result<CfoEstimate> {
        match self {
            CfoMode::Estimated => estimate_from_channel(channel, config, rng),
            CfoMode::IdealZero => {
                channel.omega.iter_mut().for_each(|w| *w = 0.0);
                Ok(CfoEstimate::zero(config.k).with_truth(&channel.omega))
            }
            CfoMode::Genie => Ok(CfoEstimate::genie(&channel.omega)),
        }
    }
}

impl std::str::FromStr for CfoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimated" => Ok(CfoMode::Estimated),
            "ideal-zero" => Ok(CfoMode::IdealZero),
            "genie" => Ok(CfoMode::Genie),
            other => Err(Error::Parse(format!("unknown cfo mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for CfoMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Closed-form CFO mean square error per user,
///
/// `(1/(g b)) (G/(B-1) + 1/(2 K g b)) / (M (N-K) K^2 G^2)`
///
/// with `g` the CFO-slot SNR, `b = beta_k`, `B` the user's effective block
/// count and `G = G_k` (1 when `gains` is `None`).
pub fn cfo_mse_closed_form(config: &SystemConfig, gains: Option<&[f64]>) -> Vec<f64> {
    let schedule = build_schedule(config);
    let gamma = config.cfo_snr();
    let k_f = config.k as f64;
    let nk = config.n_pilot as f64 - k_f;
    (0..config.k)
        .map(|k| {
            let g = gains.map_or(1.0, |v| v[k]);
            let gb = gamma * config.beta[k];
            let b1 = schedule.effective_blocks(k) as f64 - 1.0;
            (1.0 / gb) * (g / b1 + 1.0 / (2.0 * k_f * gb)) / (config.m as f64 * nk * k_f * k_f * g * g)
        })
        .collect()
}

/// Large-M limit of the CFO MSE under gamma = c0 / sqrt(M) with G_k = 1:
/// `(1/c0^2) / (2 K^3 (N-K) beta_k^2)`.
pub fn cfo_mse_limit(config: &SystemConfig, k: usize) -> f64 {
    let kf = config.k as f64;
    let beta = config.beta[k];
    (1.0 / (config.c0 * config.c0)) / (2.0 * kf.powi(3) * (config.n_pilot as f64 - kf) * beta * beta)
}

/// SNR threshold above which the small-error CFO approximation holds, per user.
pub fn gamma_threshold(config: &SystemConfig, gains: Option<&[f64]>) -> Vec<f64> {
    let schedule = build_schedule(config);
    let kf = config.k as f64;
    let m = config.m as f64;
    (0..config.k)
        .map(|k| {
            let g = gains.map_or(1.0, |v| v[k]);
            let b = schedule.effective_blocks(k) as f64;
            let ratio = (b - 1.0) / (2.0 * b - 3.0);
            let root = (1.0 + 2.0 * m * (b - 1.0).powi(3) / (2.0 * b - 3.0).powi(2)).sqrt();
            ratio / (kf * g * (root - 1.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::uplink_rx_parts;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn config(m: usize, k: usize, n: usize) -> SystemConfig {
        SystemConfig {
            m,
            k,
            n_pilot: n,
            n_uplink: n.max(2 * k),
            n_coherence: 2 * n.max(2 * k),
            beta: vec![1.0; k],
            ..SystemConfig::reference()
        }
    }

    #[test]
    fn schedule_positions() {
        let s = build_schedule(&config(80, 10, 100));
        assert_eq!(s.blocks, 10);
        // 1-based (b=1,k=1) -> 0 and (b=2,k=3) -> 12.
        assert_eq!(s.tau(0, 0), 0);
        assert_eq!(s.tau(1, 2), 12);
        assert_relative_eq!(s.amplitude, 10f64.sqrt());
    }

    #[test]
    fn truncated_last_block() {
        let s = build_schedule(&config(80, 10, 25));
        assert_eq!(s.blocks, 3);
        // Brute-force enumeration of impulse positions below N.
        for k in 0..10 {
            let count = (0..s.blocks).filter(|&b| s.tau(b, k) < 25).count();
            assert_eq!(s.effective_blocks(k), count);
            assert_eq!(count, if k < 5 { 3 } else { 2 });
        }
    }

    #[test]
    fn single_block_is_degenerate() {
        let c = config(20, 10, 10);
        let s = build_schedule(&c);
        assert_eq!(s.blocks, 1);
        let mut rng = RandomSource::new(1).rng();
        let ch = draw_channel(&c, &mut rng);
        let rx = uplink_rx(&ch, &s.transmit_matrix(), 0, TxScaling::AsGiven, &c, &mut rng).unwrap();
        assert!(matches!(estimate_cfo(&rx, &s, &c), Err(Error::DegenerateBlocks { blocks: 1, .. })));
    }

    #[test]
    fn rho_matches_scalar_loop() {
        let c = config(2, 2, 6);
        let s = build_schedule(&c);
        assert_eq!(s.blocks, 3);
        let mut rng = RandomSource::new(2).rng();
        let ch = draw_channel(&c, &mut rng);
        let rx = uplink_rx(&ch, &s.transmit_matrix(), 0, TxScaling::AsGiven, &c, &mut rng).unwrap();
        let est = estimate_cfo(&rx, &s, &c).unwrap();
        let rho = est.rho.unwrap();
        for k in 0..2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for b in 0..2 {
                for m in 0..2 {
                    acc += rx.samples[(m, b * 2 + k)].conj() * rx.samples[(m, (b + 1) * 2 + k)];
                }
            }
            let want = acc / (2.0 * 2.0 * 2.0 * c.p_u * c.beta[k]);
            assert!((rho[k] - want).norm() < 1e-14);
            assert_relative_eq!(est.omega_hat[k], want.arg() / 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn noiseless_rho_is_gain_times_rotation() {
        let c = config(16, 4, 20);
        let mut rng = RandomSource::new(3).rng();
        let ch = draw_channel(&c, &mut rng);
        let s = build_schedule(&c);
        let rx = uplink_rx_parts(&ch, &s.transmit_matrix(), 0, TxScaling::AsGiven, c.p_u, 0.0, &mut rng)
            .unwrap()
            .combine();
        let est = estimate_cfo(&rx, &s, &c).unwrap();
        for k in 0..4 {
            let want = Complex64::from_polar(ch.normalized_gain(k), ch.omega[k] * 4.0);
            assert!((est.rho.as_ref().unwrap()[k] - want).norm() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn noiseless_recovery_is_exact(
            seed in any::<u64>(),
            m in 1usize..24,
            k in 1usize..6,
            blocks in 2usize..6,
            frac in -0.95f64..0.95,
        ) {
            let mut c = config(m.max(k + 1), k, k * blocks);
            c.omega_max = 0.0;
            let mut rng = RandomSource::new(seed).rng();
            let mut ch = draw_channel(&c, &mut rng);
            let target = frac * PI / k as f64;
            ch.omega = (0..k).map(|q| target * (q + 1) as f64 / k as f64).collect();
            let s = build_schedule(&c);
            let rx = uplink_rx_parts(&ch, &s.transmit_matrix(), 0, TxScaling::AsGiven, c.p_u, 0.0, &mut rng)
                .unwrap()
                .combine();
            let est = estimate_cfo(&rx, &s, &c).unwrap();
            for q in 0..k {
                prop_assert!((est.omega_hat[q] - ch.omega[q]).abs() < 1e-12);
                prop_assert!((est.omega_hat[q] * k as f64).abs() <= PI);
            }
        }
    }

    #[test]
    fn closed_form_mse_reference_value() {
        let mut c = config(320, 10, 100);
        c.p_u = 1.0;
        let mse = cfo_mse_closed_form(&c, None);
        let want = (1.0 / 9.0 + 1.0 / 20.0) / (320.0 * 90.0 * 100.0);
        assert_relative_eq!(mse[0], want, max_relative = 1e-12);
        assert_relative_eq!(mse[0], 5.594e-8, max_relative = 1e-3);
    }

    #[test]
    fn closed_form_mse_limits_and_scaling() {
        let c = config(320, 10, 100);
        let hi = cfo_mse_closed_form(&SystemConfig { p_u: 1e12, ..c.clone() }, None);
        assert!(hi[0] < 1e-18);
        let doubled = cfo_mse_closed_form(&c.with_antennas(640), None);
        assert_relative_eq!(doubled[3] * 2.0, cfo_mse_closed_form(&c, None)[3], max_relative = 1e-12);

        // gamma = c0 / sqrt(M), M -> infinity.
        let mut prev = f64::INFINITY;
        let limit = cfo_mse_limit(&c, 0);
        for m in [1e4f64, 1e6, 1e8, 1e10] {
            let mut big = c.with_antennas(m as usize);
            big.p_u = c.c0 / m.sqrt();
            let gap = (cfo_mse_closed_form(&big, None)[0] / limit - 1.0).abs();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn threshold_values() {
        let c = config(320, 10, 100);
        // Independent evaluation: (9/17) / (10 (sqrt(1 + 640 * 729 / 289) - 1)).
        let want = (9.0 / 17.0) / (10.0 * ((1.0f64 + 640.0 * 729.0 / 289.0).sqrt() - 1.0));
        assert_relative_eq!(gamma_threshold(&c, None)[0], want, max_relative = 1e-12);
        assert_relative_eq!(want, 1.3508e-3, max_relative = 1e-4);

        let two = config(320, 10, 20);
        assert_relative_eq!(
            gamma_threshold(&two, None)[0],
            1.0 / (10.0 * ((1.0f64 + 640.0).sqrt() - 1.0)),
            max_relative = 1e-12
        );

        let r = gamma_threshold(&c.with_antennas(4_000_000), None)[0] / gamma_threshold(&c.with_antennas(1_000_000), None)[0];
        assert!((r - 0.5).abs() < 1e-3, "{r}");
    }

    #[test]
    fn empirical_mse_tracks_closed_form() {
        let c = config(320, 10, 100);
        let stats = sample_cfo_residuals(&c, 300, RandomSource::new(77)).unwrap();
        let ratio = stats.pooled_mse() / cfo_mse_closed_form(&c, None)[0];
        assert!((0.5..=2.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn unbiased_above_threshold() {
        let c = config(80, 10, 100);
        assert!(c.snr() >= 10.0 * gamma_threshold(&c, None)[0]);
        let stats = sample_cfo_residuals(&c, 1000, RandomSource::new(78)).unwrap();
        for r in &stats.residual {
            assert!(r.within(3.5), "{} {}", r.mean(), r.std_error());
        }
    }
}
