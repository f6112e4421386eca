//! Closed-form per-user SINR and achievable rate for ZF and MRC receivers
//! with MMSE channel estimates and residual CFO, the large-array limit, and
//! the Gram-matrix moment identities behind them.
//!
//! Conventions: users are 0-based, so the lag between data channel use `t`
//! and user `k`'s channel-estimation pilot is `t - k`. Data occupies
//! `t = K ..= N_u - 1`.

use num_complex::Complex64;
use serde::Serialize;

use crate::cfo::{cfo_mse_closed_form, cfo_mse_limit, CfoMode};
use crate::channel::{complex_normal_matrix, draw_channel};
use crate::config::{RandomSource, SystemConfig};
use crate::detection::{gram, hermitian_inverse, ReceiverKind};
use crate::error::{Error, Result};
use crate::estimation::estimate_from_channel;
use crate::montecarlo::{run_trials, Moments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateSource {
    Analytical,
    MonteCarlo,
}

/// Per-user, per-channel-use SINR and the resulting rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub source: RateSource,
    pub receiver: ReceiverKind,
    pub n_uplink: usize,
    /// First data channel use.
    pub t_start: usize,
    /// Linear SINR, `[k][t - t_start]`.
    pub sinr: Vec<Vec<f64>>,
    /// log2(1 + SINR), same layout.
    pub rate_per_use: Vec<Vec<f64>>,
    /// Per-user rate in bits per channel use.
    pub rate: Vec<f64>,
    pub sigma_omega2_used: Vec<f64>,
}

impl RateReport {
    pub fn from_sinr(
        source: RateSource,
        receiver: ReceiverKind,
        n_uplink: usize,
        t_start: usize,
        sinr: Vec<Vec<f64>>,
        sigma_omega2_used: Vec<f64>,
    ) -> Self {
        let rate_per_use: Vec<Vec<f64>> =
            sinr.iter().map(|row| row.iter().map(|s| (1.0 + s).log2()).collect()).collect();
        let rate = rate_per_use.iter().map(|row| row.iter().sum::<f64>() / n_uplink as f64).collect();
        Self { source, receiver, n_uplink, t_start, sinr, rate_per_use, rate, sigma_omega2_used }
    }
}

/// Residual CFO variance fed into the SINR expressions: the closed-form
/// estimation MSE with G_k = 1, or zero without residual CFO.
pub fn sigma_omega2(config: &SystemConfig, mode: CfoMode) -> Vec<f64> {
    if mode.has_residual() {
        cfo_mse_closed_form(config, None)
    } else {
        vec![0.0; config.k]
    }
}

/// (e^{-x}, 1 - e^{-x}) with x = sigma^2 (t - k)^2, the lag taken as an exact
/// integer and the complement through expm1.
fn coherence(sigma_omega2: f64, k: usize, t: usize) -> (f64, f64) {
    let lag = (t - k) as f64;
    let x = sigma_omega2 * lag * lag;
    ((-x).exp(), -(-x).exp_m1())
}

fn check_data_use(config: &SystemConfig, t: usize) -> Result<()> {
    if t < config.k || t >= config.n_uplink {
        return Err(Error::OutOfDataRange { t, lo: config.k, hi: config.n_uplink - 1 });
    }
    Ok(())
}

/// (1/beta_k + 1/(K beta_k^2 gamma)), shared by both receivers.
fn estimation_penalty(config: &SystemConfig, k: usize) -> f64 {
    let b = config.beta[k];
    1.0 / b + 1.0 / (config.k as f64 * b * b * config.snr())
}

/// Lower-bound SINR of the ZF receiver for user `k` at data channel use `t`.
pub fn sinr_zf(config: &SystemConfig, sigma_omega2_k: f64, k: usize, t: usize) -> Result<f64> {
    if config.m <= config.k {
        return Err(Error::TooFewAntennas { m: config.m, k: config.k });
    }
    check_data_use(config, t)?;
    let gamma = config.snr();
    let kf = config.k as f64;
    let (keep, lost) = coherence(sigma_omega2_k, k, t);
    let residual: f64 = config.beta.iter().map(|&b| b / (kf * gamma * b + 1.0)).sum::<f64>() + 1.0 / gamma;
    let interference = estimation_penalty(config, k) * residual / (config.m - config.k) as f64;
    Ok(keep / (lost + interference))
}

/// Lower-bound SINR of the MRC receiver for user `k` at data channel use `t`.
pub fn sinr_mrc(config: &SystemConfig, sigma_omega2_k: f64, k: usize, t: usize) -> Result<f64> {
    check_data_use(config, t)?;
    let gamma = config.snr();
    let (keep, lost) = coherence(sigma_omega2_k, k, t);
    let total: f64 = config.beta.iter().sum::<f64>() + 1.0 / gamma;
    let interference = estimation_penalty(config, k) * total / config.m as f64;
    Ok(keep / (lost + interference))
}

pub fn sinr(kind: ReceiverKind, config: &SystemConfig, sigma_omega2_k: f64, k: usize, t: usize) -> Result<f64> {
    match kind {
        ReceiverKind::Zf => sinr_zf(config, sigma_omega2_k, k, t),
        ReceiverKind::Mrc => sinr_mrc(config, sigma_omega2_k, k, t),
    }
}

/// Analytical rate report for every user given the residual CFO variances.
/// CFO-estimation overhead is not charged.
pub fn user_rate(config: &SystemConfig, kind: ReceiverKind, sigma_omega2: &[f64]) -> Result<RateReport> {
    if config.n_uplink <= config.k {
        return Err(Error::SlotOrdering { n: config.k, n_u: config.n_uplink, n_c: config.n_coherence });
    }
    let sinr = (0..config.k)
        .map(|k| config.data_range().map(|t| sinr(kind, config, sigma_omega2[k], k, t)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(RateReport::from_sinr(RateSource::Analytical, kind, config.n_uplink, config.k, sinr, sigma_omega2.to_vec()))
}

/// Rate of user `k` alone, cheaper than a full report.
pub fn user_rate_single(config: &SystemConfig, kind: ReceiverKind, sigma_omega2_k: f64, k: usize) -> Result<f64> {
    let mut acc = 0.0;
    for t in config.data_range() {
        acc += (1.0 + sinr(kind, config, sigma_omega2_k, k, t)?).log2();
    }
    Ok(acc / config.n_uplink as f64)
}

/// Limit of both SINRs as M -> infinity with gamma = c0 / sqrt(M) and the
/// residual CFO variance tending to `zeta0`.
pub fn asymptotic_sinr(config: &SystemConfig, zeta0: f64, k: usize, t: usize) -> f64 {
    let (keep, lost) = coherence(zeta0, k, t);
    let b = config.beta[k];
    keep / (lost + 1.0 / (config.k as f64 * b * b * config.c0 * config.c0))
}

/// zeta0 implied by the large-M limit of the CFO MSE.
pub fn zeta0(config: &SystemConfig, k: usize) -> f64 {
    cfo_mse_limit(config, k)
}

/// Mean of the k-th diagonal entry of (G_hat^H G_hat)^{-1}.
pub fn inverse_gram_diag_mean(config: &SystemConfig, k: usize) -> Result<f64> {
    if config.m <= config.k {
        return Err(Error::TooFewAntennas { m: config.m, k: config.k });
    }
    let b = config.beta[k];
    let kp = config.k as f64 * config.p_u;
    Ok((1.0 / b + config.sigma2 / (kp * b * b)) / (config.m - config.k) as f64)
}

/// First and second moments of entries of G_hat^H G_hat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GramMoments {
    /// E[(G^H G)_kk].
    pub m1: f64,
    /// E[|(G^H G)_kk|^2].
    pub m2_diag: f64,
    /// E[|(G^H G)_ki|^2], k != i.
    pub m2_cross: f64,
}

pub fn gram_moments(config: &SystemConfig, k: usize, i: usize) -> GramMoments {
    let kp = config.k as f64 * config.p_u;
    let v = |q: usize| kp * config.beta[q] * config.beta[q] / (kp * config.beta[q] + config.sigma2);
    let m = config.m as f64;
    GramMoments { m1: m * v(k), m2_diag: m * (m + 1.0) * v(k) * v(k), m2_cross: m * v(k) * v(i) }
}

/// E[tr(W^{-1})] = K / (M - K) for a K x K complex Wishart W with M degrees of freedom.
pub fn wishart_trace_inverse_mean(m: usize, k: usize) -> f64 {
    k as f64 / (m - k) as f64
}

/// Sampled Gram-matrix statistics of the MMSE estimate.
#[derive(Debug, Clone)]
pub struct GramSamples {
    pub trials: usize,
    /// {(G^H G)^{-1}}_kk per user.
    pub inverse_diag: Vec<Moments>,
    /// (G^H G)_kk per user.
    pub diag: Vec<Moments>,
    /// |(G^H G)_kk|^2 per user.
    pub diag_sq: Vec<Moments>,
    /// |(G^H G)_ki|^2 normalized by the closed-form cross moment, pooled over
    /// ordered pairs k != i.
    pub cross_sq_normalized: Moments,
}

/// Samples G_hat through the estimation pipeline (channel, CFO slot,
/// compensated pilots, MMSE) and accumulates its Gram statistics.
pub fn sample_gram_moments(config: &SystemConfig, mode: CfoMode, trials: usize, source: RandomSource) -> Result<GramSamples> {
    config.check()?;
    let k_users = config.k;
    let cross: Vec<Vec<f64>> =
        (0..k_users).map(|k| (0..k_users).map(|i| gram_moments(config, k, i).m2_cross).collect()).collect();
    let empty = || GramSamples {
        trials: 0,
        inverse_diag: vec![Moments::default(); k_users],
        diag: vec![Moments::default(); k_users],
        diag_sq: vec![Moments::default(); k_users],
        cross_sq_normalized: Moments::default(),
    };
    run_trials(
        source,
        trials,
        empty,
        |acc, rng, _| {
            let mut channel = draw_channel(config, rng);
            let cfo = mode.apply(&mut channel, config, rng)?;
            let est = estimate_from_channel(&channel, &cfo, config, rng)?;
            let g = gram(&est.g_hat);
            let (inv, _) = hermitian_inverse(&g)?;
            acc.trials += 1;
            for k in 0..k_users {
                acc.inverse_diag[k].push(inv[(k, k)].re);
                acc.diag[k].push(g[(k, k)].re);
                acc.diag_sq[k].push(g[(k, k)].norm_sqr());
                for i in 0..k_users {
                    if i != k {
                        acc.cross_sq_normalized.push(g[(k, i)].norm_sqr() / cross[k][i]);
                    }
                }
            }
            Ok(())
        },
        |a, b| {
            a.trials += b.trials;
            for k in 0..k_users {
                a.inverse_diag[k].merge(&b.inverse_diag[k]);
                a.diag[k].merge(&b.diag[k]);
                a.diag_sq[k].merge(&b.diag_sq[k]);
            }
            a.cross_sq_normalized.merge(&b.cross_sq_normalized);
        },
    )
}

/// Samples tr(W^{-1}) for W = U^H U, U an M x K matrix of i.i.d. CN(0,1).
pub fn sample_wishart_trace_inverse(m: usize, k: usize, trials: usize, source: RandomSource) -> Result<Moments> {
    if m <= k {
        return Err(Error::TooFewAntennas { m, k });
    }
    run_trials(
        source,
        trials,
        Moments::default,
        |acc, rng, _| {
            let u = complex_normal_matrix(rng, m, k, 1.0);
            let (inv, _) = hermitian_inverse(&gram(&u))?;
            acc.push(inv.diagonal().iter().map(|z: &Complex64| z.re).sum());
            Ok(())
        },
        |a, b| a.merge(&b),
    )
}
