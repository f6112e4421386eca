//! Deterministic parallel Monte Carlo driver.
//!
//! Trials are grouped in fixed-size chunks. Each chunk accumulates its trials
//! sequentially, each trial on its own `(seed, trial index)` substream, and
//! chunk partials are merged in chunk order. The result is therefore
//! bit-identical for any thread count.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RandomSource;
use crate::error::Result;

const CHUNK: usize = 64;

/// Runs `trials` independent trials and merges their accumulators in order.
pub fn run_trials<A, I, F, M>(source: RandomSource, trials: usize, init: I, trial: F, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &mut ChaCha8Rng, usize) -> Result<()> + Sync,
    M: Fn(&mut A, A),
{
    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<Result<A>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for i in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let mut rng = source.with_stream(i as u64).rng();
                trial(&mut acc, &mut rng, i)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = init();
    for p in partials {
        merge(&mut total, p?);
    }
    Ok(total)
}

/// Running mean / standard error of a real statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }

    /// |mean| <= z standard errors.
    pub fn within(&self, z: f64) -> bool {
        self.mean().abs() <= z * self.std_error()
    }
}

/// Mean and standard error of a complex statistic, real and imaginary parts
/// tracked separately.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ComplexMoments {
    pub re: Moments,
    pub im: Moments,
}

impl ComplexMoments {
    pub fn push(&mut self, z: num_complex::Complex64) {
        self.re.push(z.re);
        self.im.push(z.im);
    }

    pub fn merge(&mut self, other: &ComplexMoments) {
        self.re.merge(&other.re);
        self.im.merge(&other.im);
    }

    pub fn mean(&self) -> num_complex::Complex64 {
        num_complex::Complex64::new(self.re.mean(), self.im.mean())
    }

    /// Both parts within `z` standard errors of zero.
    pub fn within(&self, z: f64) -> bool {
        self.re.within(z) && self.im.within(z)
    }

    /// Largest of |mean| / SE over the two parts.
    pub fn max_z(&self) -> f64 {
        let z = |m: &Moments| {
            let se = m.std_error();
            if se > 0.0 {
                m.mean().abs() / se
            } else if m.mean() == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        };
        z(&self.re).max(z(&self.im))
    }
}
