//! CFO-compensated MMSE channel estimation from the data-slot pilots.
//!
//! At the start of the uplink slot user `k` (0-based) sends a single impulse
//! of amplitude sqrt(K p_u) at channel use `k`. The base station derotates
//! that sample by the user's estimated CFO and applies the scalar MMSE gain.

use num_complex::Complex64;
use rand::Rng;

use crate::cfo::{CfoEstimate, CfoMode};
use crate::channel::{draw_channel, uplink_rx, CMatrix, ChannelRealization, ReceivedBlock, TxScaling};
use crate::config::{RandomSource, SystemConfig};
use crate::error::{Error, Result};
use crate::montecarlo::{run_trials, ComplexMoments, Moments};

/// MMSE estimate of the CFO-compensated channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    /// M x K.
    pub g_hat: CMatrix,
    /// sqrt(K p_u) beta_k / (K p_u beta_k + sigma^2).
    pub scale: Vec<f64>,
    /// Per-entry error variance beta_k sigma^2 / (K p_u beta_k + sigma^2).
    pub error_cov_diag: Vec<f64>,
}

pub fn mmse_scale(config: &SystemConfig) -> Vec<f64> {
    let kp = config.k as f64 * config.p_u;
    config.beta.iter().map(|&b| kp.sqrt() * b / (kp * b + config.sigma2)).collect()
}

/// Per-entry covariance of the estimation error, one value per user.
pub fn error_covariance(config: &SystemConfig) -> Vec<f64> {
    let kp = config.k as f64 * config.p_u;
    config.beta.iter().map(|&b| b * config.sigma2 / (kp * b + config.sigma2)).collect()
}

/// Per-entry variance of the estimate, K p_u beta_k^2 / (K p_u beta_k + sigma^2).
pub fn estimate_variance(config: &SystemConfig) -> Vec<f64> {
    let kp = config.k as f64 * config.p_u;
    config.beta.iter().map(|&b| kp * b * b / (kp * b + config.sigma2)).collect()
}

/// K x K transmit matrix of the sequential channel-estimation pilots.
pub fn pilot_transmit_matrix(config: &SystemConfig) -> CMatrix {
    let amp = (config.k as f64 * config.p_u).sqrt();
    CMatrix::from_diagonal_element(config.k, config.k, Complex64::new(amp, 0.0))
}

/// `rx` must hold channel uses `0 .. K` of the uplink slot.
pub fn mmse_estimate(rx: &ReceivedBlock, cfo: &CfoEstimate, config: &SystemConfig) -> Result<ChannelEstimate> {
    if rx.t0 != 0 || rx.len() < config.k || rx.samples.nrows() != config.m || cfo.omega_hat.len() != config.k {
        return Err(Error::DimensionMismatch {
            what: "channel-estimation pilots",
            expected: (config.m, config.k),
            got: rx.samples.shape(),
        });
    }
    let scale = mmse_scale(config);
    let mut g_hat = rx.samples.columns(0, config.k).into_owned();
    for (k, mut col) in g_hat.column_iter_mut().enumerate() {
        col *= Complex64::from_polar(scale[k], -cfo.omega_hat[k] * k as f64);
    }
    Ok(ChannelEstimate { g_hat, scale, error_cov_diag: error_covariance(config) })
}

/// Sends the pilots over `channel` and estimates it.
pub fn estimate_from_channel<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    cfo: &CfoEstimate,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<ChannelEstimate> {
    let rx = uplink_rx(channel, &pilot_transmit_matrix(config), 0, TxScaling::AsGiven, config, rng)?;
    mmse_estimate(&rx, cfo, config)
}

/// The channel the estimator actually targets: g_k rotated by the residual
/// CFO accumulated up to the user's pilot, g_k e^{-j dw_k k}.
pub fn effective_channel(channel: &ChannelRealization, cfo: &CfoEstimate) -> CMatrix {
    let mut g = channel.g.clone();
    for (k, mut col) in g.column_iter_mut().enumerate() {
        let dw = cfo.omega_hat[k] - channel.omega[k];
        col *= Complex64::from_polar(1.0, -dw * k as f64);
    }
    g
}

/// Sampled second-order statistics of the estimate and its error, per user.
#[derive(Debug, Clone, Default)]
pub struct EstimationStatistics {
    /// |eps_mk|^2.
    pub error_power: Vec<Moments>,
    /// eps_1k eps_2k^*: cross-antenna error covariance.
    pub error_cross: Vec<ComplexMoments>,
    /// Per-trial antenna average of g_hat_mk eps_mk^*.
    pub orthogonality: Vec<ComplexMoments>,
    /// |g_hat_mk|^2.
    pub estimate_power: Vec<Moments>,
    /// g_tilde_mk.
    pub effective_mean: Vec<ComplexMoments>,
    /// |g_tilde_mk|^2.
    pub effective_power: Vec<Moments>,
    /// g_tilde_mk^2 (pseudo-variance).
    pub effective_pseudo: Vec<ComplexMoments>,
}

impl EstimationStatistics {
    fn new(k: usize) -> Self {
        Self {
            error_power: vec![Moments::default(); k],
            error_cross: vec![ComplexMoments::default(); k],
            orthogonality: vec![ComplexMoments::default(); k],
            estimate_power: vec![Moments::default(); k],
            effective_mean: vec![ComplexMoments::default(); k],
            effective_power: vec![Moments::default(); k],
            effective_pseudo: vec![ComplexMoments::default(); k],
        }
    }

    fn merge(&mut self, o: Self) {
        for k in 0..self.error_power.len() {
            self.error_power[k].merge(&o.error_power[k]);
            self.error_cross[k].merge(&o.error_cross[k]);
            self.orthogonality[k].merge(&o.orthogonality[k]);
            self.estimate_power[k].merge(&o.estimate_power[k]);
            self.effective_mean[k].merge(&o.effective_mean[k]);
            self.effective_power[k].merge(&o.effective_power[k]);
            self.effective_pseudo[k].merge(&o.effective_pseudo[k]);
        }
    }
}

/// Monte Carlo over the full chain (channel, CFO slot, pilots, MMSE).
pub fn sample_estimation_statistics(
    config: &SystemConfig,
    mode: CfoMode,
    trials: usize,
    source: RandomSource,
) -> Result<EstimationStatistics> {
    let k_users = config.k;
    run_trials(
        source,
        trials,
        || EstimationStatistics::new(k_users),
        |acc, rng, _| {
            let mut channel = draw_channel(config, rng);
            let cfo = mode.apply(&mut channel, config, rng)?;
            let est = estimate_from_channel(&channel, &cfo, config, rng)?;
            let eff = effective_channel(&channel, &cfo);
            let m = config.m as f64;
            for k in 0..k_users {
                let mut orth = Complex64::new(0.0, 0.0);
                for row in 0..config.m {
                    let gh = est.g_hat[(row, k)];
                    let gt = eff[(row, k)];
                    let eps = gh - gt;
                    acc.error_power[k].push(eps.norm_sqr());
                    acc.estimate_power[k].push(gh.norm_sqr());
                    acc.effective_mean[k].push(gt);
                    acc.effective_power[k].push(gt.norm_sqr());
                    acc.effective_pseudo[k].push(gt * gt);
                    orth += gh * eps.conj();
                }
                if config.m >= 2 {
                    let e0 = est.g_hat[(0, k)] - eff[(0, k)];
                    let e1 = est.g_hat[(1, k)] - eff[(1, k)];
                    acc.error_cross[k].push(e0 * e1.conj());
                }
                acc.orthogonality[k].push(orth / m);
            }
            Ok(())
        },
        |a, b| a.merge(b),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfo::estimate_from_channel as estimate_cfo_from_channel;
    use crate::channel::uplink_rx_parts;
    use approx::assert_relative_eq;

    fn config(m: usize, k: usize) -> SystemConfig {
        SystemConfig {
            m,
            k,
            n_pilot: 10 * k,
            n_uplink: 10 * k,
            n_coherence: 20 * k,
            beta: vec![1.0; k],
            ..SystemConfig::reference()
        }
    }

    #[test]
    fn error_covariance_reference_and_limit() {
        let c = SystemConfig::reference();
        assert_relative_eq!(error_covariance(&c)[0], 1.0 / 11.0, max_relative = 1e-15);
        let big = SystemConfig { p_u: 1e12, ..c.clone() };
        assert!(error_covariance(&big)[0] < 1e-11);
        let more = SystemConfig { p_u: 2.0, ..c.clone() };
        assert!(error_covariance(&more)[0] < error_covariance(&c)[0]);
    }

    #[test]
    fn matches_scalar_recomputation() {
        let c = config(4, 2);
        let mut rng = RandomSource::new(5).rng();
        let ch = draw_channel(&c, &mut rng);
        let cfo = estimate_cfo_from_channel(&ch, &c, &mut rng).unwrap();
        let rx = uplink_rx(&ch, &pilot_transmit_matrix(&c), 0, TxScaling::AsGiven, &c, &mut rng).unwrap();
        let est = mmse_estimate(&rx, &cfo, &c).unwrap();
        let kp = 2.0 * c.p_u;
        for k in 0..2 {
            let s = kp.sqrt() * c.beta[k] / (kp * c.beta[k] + c.sigma2);
            for m in 0..4 {
                let y = rx.samples[(m, k)] * Complex64::from_polar(1.0, -cfo.omega_hat[k] * k as f64);
                assert!((est.g_hat[(m, k)] - s * y).norm() < 1e-14);
            }
        }
        // First user is never rotated.
        for m in 0..4 {
            assert!((est.g_hat[(m, 0)] - est.scale[0] * rx.samples[(m, 0)]).norm() < 1e-15);
        }
    }

    #[test]
    fn noiseless_perfect_cfo_is_unbiased_channel() {
        // sigma^2 -> 0: the MMSE gain tends to 1/sqrt(K p_u), so g_hat -> g.
        let mut c = config(6, 3);
        c.sigma2 = 1e-14;
        let mut rng = RandomSource::new(6).rng();
        let ch = draw_channel(&c, &mut rng);
        let cfo = CfoEstimate::genie(&ch.omega);
        let rx = uplink_rx_parts(&ch, &pilot_transmit_matrix(&c), 0, TxScaling::AsGiven, c.p_u, 0.0, &mut rng)
            .unwrap()
            .combine();
        let est = mmse_estimate(&rx, &cfo, &c).unwrap();
        assert!((est.g_hat - &ch.g).norm() < 1e-10);
    }

    #[test]
    fn dimension_mismatch() {
        let c = config(4, 2);
        let rx = ReceivedBlock { samples: CMatrix::zeros(4, 1), t0: 0 };
        assert!(matches!(mmse_estimate(&rx, &CfoEstimate::zero(2), &c), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn sampled_error_statistics() {
        let c = config(40, 4);
        let stats = sample_estimation_statistics(&c, CfoMode::Estimated, 2000, RandomSource::new(9)).unwrap();
        let cov = error_covariance(&c);
        let var = estimate_variance(&c);
        for k in 0..4 {
            assert_relative_eq!(stats.error_power[k].mean(), cov[k], max_relative = 0.02);
            assert_relative_eq!(stats.estimate_power[k].mean(), var[k], max_relative = 0.02);
            assert_relative_eq!(stats.effective_power[k].mean(), c.beta[k], max_relative = 0.02);
            assert!(stats.error_cross[k].within(3.0));
            assert!(stats.orthogonality[k].within(3.0), "{:?}", stats.orthogonality[k].mean());
            assert!(stats.effective_mean[k].within(3.5));
            assert!(stats.effective_pseudo[k].within(3.5));
        }
    }
}
