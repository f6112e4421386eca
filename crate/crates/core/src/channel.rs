//! I.i.d. Rayleigh block-fading channel with per-user CFOs, and synthesis of
//! the signal received at the base station.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::config::SystemConfig;
use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Draws from CN(0, variance): independent real and imaginary parts, each
/// with variance `variance / 2`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// `rows x cols` matrix of i.i.d. CN(0, variance) entries, filled column by column.
pub fn complex_normal_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    variance: f64,
) -> CMatrix {
    let data: Vec<Complex64> = (0..rows * cols).map(|_| complex_normal(rng, variance)).collect();
    CMatrix::from_vec(rows, cols, data)
}

/// One block-fading realization: channel gains and the users' CFOs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// M x K gains, column k scaled by sqrt(beta_k).
    pub g: CMatrix,
    /// M x K small-scale fading, i.i.d. CN(0, 1).
    pub h: CMatrix,
    /// True CFO of each user, radians per channel use.
    pub omega: Vec<f64>,
}

impl ChannelRealization {
    pub fn from_fading(h: CMatrix, beta: &[f64], omega: Vec<f64>) -> Self {
        let mut g = h.clone();
        for (k, mut col) in g.column_iter_mut().enumerate() {
            col *= Complex64::from(beta[k].sqrt());
        }
        Self { g, h, omega }
    }

    pub fn m(&self) -> usize {
        self.g.nrows()
    }

    pub fn k(&self) -> usize {
        self.g.ncols()
    }

    /// G_k = (1/M) sum_m |h_mk|^2.
    pub fn normalized_gain(&self, k: usize) -> f64 {
        self.h.column(k).norm_squared() / self.m() as f64
    }
}

/// Fresh fading and CFOs: h_mk ~ CN(0,1), omega_k ~ U[-omega_max, omega_max].
pub fn draw_channel<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> ChannelRealization {
    let h = complex_normal_matrix(rng, config.m, config.k, 1.0);
    let omega = if config.omega_max > 0.0 {
        let u = Uniform::new_inclusive(-config.omega_max, config.omega_max)
            .expect("omega_max is finite and non-negative");
        (0..config.k).map(|_| u.sample(rng)).collect()
    } else {
        vec![0.0; config.k]
    };
    ChannelRealization::from_fading(h, &config.beta, omega)
}

/// Samples received on all M antennas over `T` consecutive channel uses.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedBlock {
    /// M x T.
    pub samples: CMatrix,
    /// Channel-use index of the first column.
    pub t0: usize,
}

impl ReceivedBlock {
    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    /// Received vector r[t] at absolute channel use `t`.
    pub fn at(&self, t: usize) -> nalgebra::DVectorView<'_, Complex64> {
        self.samples.column(t - self.t0)
    }
}

/// How the transmit matrix handed to [`uplink_rx`] is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxScaling {
    /// Entries already carry their amplitude (pilot impulses of sqrt(K p_u)).
    AsGiven,
    /// Entries are unit-power data symbols, multiplied by sqrt(p_u) here.
    DataPower,
}

/// Noise-free and noise parts of a received block, kept apart so the
/// detector output can be decomposed.
#[derive(Debug, Clone)]
pub struct RxParts {
    pub signal: CMatrix,
    pub noise: CMatrix,
    pub t0: usize,
}

impl RxParts {
    pub fn combine(self) -> ReceivedBlock {
        ReceivedBlock { samples: self.signal + self.noise, t0: self.t0 }
    }
}

/// r_m[t] = sum_q g_mq e^{j omega_q t} x_q[t] + w_m[t] for t = t0 .. t0 + T - 1,
/// with w_m[t] ~ CN(0, sigma2) and `tx` a K x T matrix.
pub fn uplink_rx<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    tx: &CMatrix,
    t0: usize,
    scaling: TxScaling,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    uplink_rx_parts(channel, tx, t0, scaling, config.p_u, config.sigma2, rng).map(RxParts::combine)
}

/// As [`uplink_rx`] but with explicit transmit power and noise variance, and
/// returning the signal and noise separately.
pub fn uplink_rx_parts<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    tx: &CMatrix,
    t0: usize,
    scaling: TxScaling,
    p_u: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<RxParts> {
    if tx.nrows() != channel.k() {
        return Err(Error::DimensionMismatch {
            what: "transmit matrix",
            expected: (channel.k(), tx.ncols()),
            got: tx.shape(),
        });
    }
    let amp = match scaling {
        TxScaling::AsGiven => 1.0,
        TxScaling::DataPower => p_u.sqrt(),
    };
    let mut rotated = tx.clone();
    for (i, mut col) in rotated.column_iter_mut().enumerate() {
        let t = (t0 + i) as f64;
        for (q, x) in col.iter_mut().enumerate() {
            *x *= Complex64::from_polar(amp, channel.omega[q] * t);
        }
    }
    let signal = &channel.g * rotated;
    let noise = if sigma2 > 0.0 {
        complex_normal_matrix(rng, channel.m(), tx.ncols(), sigma2)
    } else {
        CMatrix::zeros(channel.m(), tx.ncols())
    };
    Ok(RxParts { signal, noise, t0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RandomSource;
    use std::f64::consts::PI;

    fn small(m: usize, k: usize) -> SystemConfig {
        SystemConfig {
            m,
            k,
            n_pilot: 4 * k,
            n_uplink: 8 * k,
            n_coherence: 16 * k,
            beta: vec![1.0; k],
            ..SystemConfig::reference()
        }
    }

    #[test]
    fn unit_variance_fading() {
        let mut rng = RandomSource::new(1).rng();
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| complex_normal(&mut rng, 1.0).norm_sqr()).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn g_columns_are_scaled_h() {
        let mut config = small(6, 3);
        config.beta = vec![0.5, 1.0, 4.0];
        let ch = draw_channel(&config, &mut RandomSource::new(2).rng());
        for k in 0..3 {
            for m in 0..6 {
                let want = ch.h[(m, k)] * config.beta[k].sqrt();
                assert!((ch.g[(m, k)] - want).norm() < 1e-15);
            }
            assert!(ch.omega[k].abs() <= config.omega_max);
        }
    }

    #[test]
    fn normalized_gain_concentrates_at_large_m() {
        // G_k ~ Gamma(M, 1/M). P(|G_k - 1| <= 0.1) at M = 640 is 0.98854 from
        // the regularized incomplete gamma function.
        let exact = 0.98854;
        let config = small(640, 4);
        let mut rng = RandomSource::new(3).rng();
        let trials = 2500;
        let mut inside = 0;
        for _ in 0..trials {
            let ch = draw_channel(&config, &mut rng);
            inside += (0..4).filter(|&k| (ch.normalized_gain(k) - 1.0).abs() <= 0.1).count();
        }
        let n = (4 * trials) as f64;
        let frac = inside as f64 / n;
        let se = (exact * (1.0 - exact) / n).sqrt();
        assert!((frac - exact).abs() <= 3.0 * se, "{frac}");
    }

    #[test]
    fn noiseless_single_user_identity_and_rotation() {
        let mut config = small(5, 1);
        config.sigma2 = 0.0;
        let mut ch = draw_channel(&config, &mut RandomSource::new(4).rng());
        ch.omega[0] = 0.0;
        let tx = CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        let mut rng = RandomSource::new(5).rng();
        let rx = uplink_rx_parts(&ch, &tx, 0, TxScaling::AsGiven, 1.0, 0.0, &mut rng).unwrap().combine();
        for m in 0..5 {
            assert!((rx.samples[(m, 0)] - ch.g[(m, 0)]).norm() < 1e-15);
        }
        ch.omega[0] = PI / 50.0;
        let rx = uplink_rx_parts(&ch, &tx, 50, TxScaling::AsGiven, 1.0, 0.0, &mut rng).unwrap().combine();
        assert_eq!(rx.t0, 50);
        for m in 0..5 {
            assert!((rx.at(50)[m] + ch.g[(m, 0)]).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_loop() {
        let config = small(2, 2);
        let mut rng = RandomSource::new(6).rng();
        let ch = draw_channel(&config, &mut rng);
        let tx = complex_normal_matrix(&mut rng, 2, 4, 1.0);
        let t0 = 7;
        let parts = uplink_rx_parts(&ch, &tx, t0, TxScaling::DataPower, 2.0, 0.5, &mut rng).unwrap();
        let noise = parts.noise.clone();
        let rx = parts.combine();
        for m in 0..2 {
            for i in 0..4 {
                let t = (t0 + i) as f64;
                let mut acc = Complex64::new(0.0, 0.0);
                for q in 0..2 {
                    acc += 2f64.sqrt() * ch.g[(m, q)] * Complex64::from_polar(1.0, ch.omega[q] * t) * tx[(q, i)];
                }
                acc += noise[(m, i)];
                assert!((rx.samples[(m, i)] - acc).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_wrong_user_count() {
        let config = small(4, 2);
        let mut rng = RandomSource::new(7).rng();
        let ch = draw_channel(&config, &mut rng);
        let tx = CMatrix::zeros(3, 4);
        let err = uplink_rx(&ch, &tx, 0, TxScaling::AsGiven, &config, &mut rng).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn noiseless_received_power_sums_path_loss() {
        let mut config = small(4, 3);
        config.beta = vec![0.5, 1.0, 2.0];
        let mut rng = RandomSource::new(8).rng();
        let tx = CMatrix::from_element(3, 1, Complex64::new(1.0, 0.0));
        let draws = 100_000 / 4;
        let mut acc = 0.0;
        for _ in 0..draws {
            let ch = draw_channel(&config, &mut rng);
            let rx = uplink_rx_parts(&ch, &tx, 3, TxScaling::AsGiven, 1.0, 0.0, &mut rng).unwrap();
            acc += rx.signal.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let mean = acc / (draws * 4) as f64;
        assert!((mean / 3.5 - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn negating_cfo_conjugates_real_symbol_response() {
        let config = small(3, 2);
        let mut rng = RandomSource::new(9).rng();
        let mut ch = draw_channel(&config, &mut rng);
        // Real channel so that conjugation is visible on the whole response.
        ch.g = ch.g.map(|z| Complex64::new(z.re, 0.0));
        let tx = CMatrix::from_element(2, 5, Complex64::new(1.0, 0.0));
        let a = uplink_rx_parts(&ch, &tx, 2, TxScaling::AsGiven, 1.0, 0.0, &mut rng).unwrap().signal;
        ch.omega.iter_mut().for_each(|w| *w = -*w);
        let b = uplink_rx_parts(&ch, &tx, 2, TxScaling::AsGiven, 1.0, 0.0, &mut rng).unwrap().signal;
        assert!((a.map(|z| z.conj()) - b).norm() < 1e-13);
    }
}
