//! Linear ZF / MRC detection with per-user CFO compensation, and Monte Carlo
//! measurement of the detector output decomposition.
//!
//! For user `k` at channel use `t` the compensated output is
//! `x_hat = a_k^H r[t] e^{-j omega_hat_k t}`, split as
//!
//! * `S x_k` with `S = sqrt(p_u) a_k^H g_hat_k e^{-j dw_k (t - k)}`,
//! * `ES = E[S] x_k` (desired part, `E[S]` analytical),
//! * `SIF = (S - E[S]) x_k` (self-interference),
//! * `EN = a_k^H w[t] e^{-j omega_hat_k t}` (effective noise),
//! * `MUI = x_hat - S x_k - EN` (everything else),
//!
//! and `W = SIF + MUI + EN` is the effective noise seen by the decoder.

use std::str::FromStr;

use nalgebra::DVectorView;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cfo::{CfoEstimate, CfoMode};
use crate::channel::{complex_normal_matrix, draw_channel, uplink_rx_parts, CMatrix, TxScaling};
use crate::config::{RandomSource, SystemConfig};
use crate::error::{Error, Result};
use crate::estimation::{estimate_from_channel, ChannelEstimate};
use crate::montecarlo::{run_trials, ComplexMoments, Moments};
use crate::rates::{self, RateReport, RateSource};

/// Trials whose Gram matrix is worse conditioned than this are redrawn.
pub const MAX_CONDITION: f64 = 1e12;

/// Redraws allowed per trial before giving up.
const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiverKind {
    Zf,
    Mrc,
}

impl ReceiverKind {
    pub const ALL: [ReceiverKind; 2] = [ReceiverKind::Zf, ReceiverKind::Mrc];

    pub fn as_str(self) -> &'static str {
        match self {
            ReceiverKind::Zf => "zf",
            ReceiverKind::Mrc => "mrc",
        }
    }
}

impl FromStr for ReceiverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zf" => Ok(ReceiverKind::Zf),
            "mrc" => Ok(ReceiverKind::Mrc),
            other => Err(Error::Parse(format!("unknown receiver '{other}'"))),
        }
    }
}

impl std::fmt::Display for ReceiverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// G^H G.
pub fn gram(g: &CMatrix) -> CMatrix {
    g.ad_mul(g)
}

/// Inverse of a Hermitian positive definite matrix via Cholesky, with the
/// 2-norm condition number of the input.
pub fn hermitian_inverse(a: &CMatrix) -> Result<(CMatrix, f64)> {
    let eig = a.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularGram { condition });
    }
    let chol = a.clone().cholesky().ok_or(Error::SingularGram { condition })?;
    Ok((chol.inverse(), condition))
}

/// Linear detector: column `k` of `a` is the combining vector of user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub kind: ReceiverKind,
    /// M x K.
    pub a: CMatrix,
    /// Condition number of G_hat^H G_hat (ZF only).
    pub condition: Option<f64>,
}

pub fn build_detector(kind: ReceiverKind, estimate: &ChannelEstimate) -> Result<Detector> {
    match kind {
        ReceiverKind::Mrc => Ok(Detector { kind, a: estimate.g_hat.clone(), condition: None }),
        ReceiverKind::Zf => {
            let (inv, condition) = hermitian_inverse(&gram(&estimate.g_hat))?;
            Ok(Detector { kind, a: &estimate.g_hat * inv, condition: Some(condition) })
        }
    }
}

/// Detects all users from the received vector at channel use `t`, which
/// should lie in the data range `[K, N_u - 1]`.
pub fn detect(detector: &Detector, r: DVectorView<'_, Complex64>, cfo: &CfoEstimate, t: usize) -> Vec<Complex64> {
    (0..detector.a.ncols())
        .map(|k| detector.a.column(k).dotc(&r) * Complex64::from_polar(1.0, -cfo.omega_hat[k] * t as f64))
        .collect()
}

/// Empirical second moments of the output components, per user and data
/// channel use, plus the cross-moments that should vanish.
#[derive(Debug, Clone)]
pub struct ComponentPowers {
    pub kind: ReceiverKind,
    pub mode: CfoMode,
    pub trials: usize,
    /// Trials redrawn because the Gram matrix was ill-conditioned.
    pub rejected: usize,
    /// First data channel use (K).
    pub t_start: usize,
    /// Residual CFO variance used for E[S].
    pub sigma_omega2: Vec<f64>,
    /// Analytical E[S_k[t]], indexed `[k][t - t_start]`.
    pub mean_signal: Vec<Vec<f64>>,
    pub es2: Vec<Vec<Moments>>,
    pub sif2: Vec<Vec<Moments>>,
    pub mui2: Vec<Vec<Moments>>,
    pub en2: Vec<Vec<Moments>>,
    pub w2: Vec<Vec<Moments>>,
    /// |S_k[t] x_k[t]|^2.
    pub s2: Vec<Vec<Moments>>,
    /// Per-trial averages over t of ES^* W, indexed by user.
    pub es_w: Vec<ComplexMoments>,
    pub sif_en: Vec<ComplexMoments>,
    pub mui_en: Vec<ComplexMoments>,
    pub sif_mui: Vec<ComplexMoments>,
}

impl ComponentPowers {
    fn new(kind: ReceiverKind, mode: CfoMode, config: &SystemConfig, sigma_omega2: Vec<f64>, mean_signal: Vec<Vec<f64>>) -> Self {
        let k = config.k;
        let len = config.n_uplink - config.k;
        let grid = || vec![vec![Moments::default(); len]; k];
        Self {
            kind,
            mode,
            trials: 0,
            rejected: 0,
            t_start: config.k,
            sigma_omega2,
            mean_signal,
            es2: grid(),
            sif2: grid(),
            mui2: grid(),
            en2: grid(),
            w2: grid(),
            s2: grid(),
            es_w: vec![ComplexMoments::default(); k],
            sif_en: vec![ComplexMoments::default(); k],
            mui_en: vec![ComplexMoments::default(); k],
            sif_mui: vec![ComplexMoments::default(); k],
        }
    }

    fn merge(&mut self, o: ComponentPowers) {
        self.trials += o.trials;
        self.rejected += o.rejected;
        let grids = [
            (&mut self.es2, &o.es2),
            (&mut self.sif2, &o.sif2),
            (&mut self.mui2, &o.mui2),
            (&mut self.en2, &o.en2),
            (&mut self.w2, &o.w2),
            (&mut self.s2, &o.s2),
        ];
        for (mine, theirs) in grids {
            for (a, b) in mine.iter_mut().flatten().zip(theirs.iter().flatten()) {
                a.merge(b);
            }
        }
        for k in 0..self.es_w.len() {
            self.es_w[k].merge(&o.es_w[k]);
            self.sif_en[k].merge(&o.sif_en[k]);
            self.mui_en[k].merge(&o.mui_en[k]);
            self.sif_mui[k].merge(&o.sif_mui[k]);
        }
    }

    pub fn users(&self) -> usize {
        self.es2.len()
    }

    /// E|ES|^2 / E|W|^2 at absolute channel use `t`.
    pub fn sinr(&self, k: usize, t: usize) -> f64 {
        let i = t - self.t_start;
        self.es2[k][i].mean() / self.w2[k][i].mean()
    }

    /// Monte Carlo rate report built from the measured SINRs.
    pub fn rate_report(&self, n_uplink: usize) -> RateReport {
        let sinr = (0..self.users())
            .map(|k| (0..self.es2[k].len()).map(|i| self.sinr(k, self.t_start + i)).collect())
            .collect();
        RateReport::from_sinr(RateSource::MonteCarlo, self.kind, n_uplink, self.t_start, sinr, self.sigma_omega2.clone())
    }

    /// Largest deviation of mui2(k, t) from its average over t, in standard
    /// errors. Large values flag a time dependence of the interference power.
    pub fn mui_time_spread(&self, k: usize) -> f64 {
        let cells = &self.mui2[k];
        let avg = cells.iter().map(Moments::mean).sum::<f64>() / cells.len() as f64;
        cells
            .iter()
            .map(|m| {
                let se = m.std_error();
                if se > 0.0 {
                    (m.mean() - avg).abs() / se
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Runs the full chain `trials` times and accumulates the output components
/// of every user at every data channel use.
pub fn measure_components(
    kind: ReceiverKind,
    config: &SystemConfig,
    mode: CfoMode,
    trials: usize,
    source: RandomSource,
) -> Result<ComponentPowers> {
    if trials == 0 {
        return Err(Error::InvalidSweep("trials must be at least 1".into()));
    }
    config.check()?;
    let k_users = config.k;
    let t_start = config.k;
    let len = config.n_uplink - config.k;
    let sqrt_p = config.p_u.sqrt();

    let sigma_omega2 = rates::sigma_omega2(config, mode);
    let gain: Vec<f64> = match kind {
        ReceiverKind::Zf => vec![1.0; k_users],
        ReceiverKind::Mrc => (0..k_users).map(|k| rates::gram_moments(config, k, k).m1).collect(),
    };
    let mean_signal: Vec<Vec<f64>> = (0..k_users)
        .map(|k| {
            (0..len)
                .map(|i| {
                    let tau = (t_start + i - k) as f64;
                    sqrt_p * gain[k] * (-sigma_omega2[k] * tau * tau / 2.0).exp()
                })
                .collect()
        })
        .collect();

    let template = ComponentPowers::new(kind, mode, config, sigma_omega2, mean_signal);
    let mean_signal = &template.mean_signal;

    run_trials(
        source,
        trials,
        || ComponentPowers::new(kind, mode, config, Vec::new(), Vec::new()),
        |acc, rng, _| {
            let mut redraws = 0;
            let (channel, cfo, estimate, detector) = loop {
                let mut channel = draw_channel(config, rng);
                let cfo = mode.apply(&mut channel, config, rng)?;
                let estimate = estimate_from_channel(&channel, &cfo, config, rng)?;
                match build_detector(kind, &estimate) {
                    Ok(d) => break (channel, cfo, estimate, d),
                    Err(Error::SingularGram { .. }) if redraws < MAX_REDRAWS => redraws += 1,
                    Err(e) => return Err(e),
                }
            };
            acc.trials += 1;
            acc.rejected += redraws;

            let x = complex_normal_matrix(rng, k_users, len, 1.0);
            let parts = uplink_rx_parts(&channel, &x, t_start, TxScaling::DataPower, config.p_u, config.sigma2, rng)?;
            let y_signal = detector.a.ad_mul(&parts.signal);
            let y_noise = detector.a.ad_mul(&parts.noise);
            let self_gain = detector.a.ad_mul(&estimate.g_hat);

            for k in 0..k_users {
                let dw = cfo.omega_hat[k] - channel.omega[k];
                let mut es_w = Complex64::new(0.0, 0.0);
                let mut sif_en = Complex64::new(0.0, 0.0);
                let mut mui_en = Complex64::new(0.0, 0.0);
                let mut sif_mui = Complex64::new(0.0, 0.0);
                for i in 0..len {
                    let t = t_start + i;
                    let tau = (t - k) as f64;
                    let comp = Complex64::from_polar(1.0, -cfo.omega_hat[k] * t as f64);
                    let xk = x[(k, i)];
                    let en = y_noise[(k, i)] * comp;
                    let x_hat = y_signal[(k, i)] * comp + en;
                    let s = sqrt_p * self_gain[(k, k)] * Complex64::from_polar(1.0, -dw * tau);
                    let mean_s = mean_signal[k][i];
                    let es = xk * mean_s;
                    let sif = (s - mean_s) * xk;
                    let mui = x_hat - s * xk - en;
                    let w = sif + mui + en;

                    acc.es2[k][i].push(es.norm_sqr());
                    acc.sif2[k][i].push(sif.norm_sqr());
                    acc.mui2[k][i].push(mui.norm_sqr());
                    acc.en2[k][i].push(en.norm_sqr());
                    acc.w2[k][i].push(w.norm_sqr());
                    acc.s2[k][i].push((s * xk).norm_sqr());

                    es_w += es.conj() * w;
                    sif_en += sif.conj() * en;
                    mui_en += mui.conj() * en;
                    sif_mui += sif.conj() * mui;
                }
                let n = len as f64;
                acc.es_w[k].push(es_w / n);
                acc.sif_en[k].push(sif_en / n);
                acc.mui_en[k].push(mui_en / n);
                acc.sif_mui[k].push(sif_mui / n);
            }
            Ok(())
        },
        |a, b| a.merge(b),
    )
    .map(|acc| {
        let mut out = template.clone();
        out.merge(acc);
        out
    })
}
