//! Experiment harness: required-SNR sweeps over the antenna count, the ZF/MRC
//! SNR-gap table, CFO-MSE validation and the random-matrix oracles.
//!
//! Every experiment yields an [`ExperimentResult`] whose CSV rendering is a
//! pure function of the sweep and the config. Monte Carlo rows record the
//! seed of the [`RandomSource`] they used; trial `i` of a row ran on stream
//! `i` of that seed.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::cfo::{cfo_mse_closed_form, gamma_threshold, sample_cfo_residuals, CfoMode};
use crate::config::{round_db_2, ConfigFile, RandomSource, SystemConfig};
use crate::detection::{measure_components, ReceiverKind};
use crate::error::{Error, Result};
use crate::estimation::{error_covariance, sample_estimation_statistics};
use crate::rates::{
    inverse_gram_diag_mean, gram_moments, sample_gram_moments, sample_wishart_trace_inverse, sigma_omega2, user_rate_single,
    wishart_trace_inverse_mean,
};

/// Bisection bracket for the required SNR, dB.
pub const SNR_BRACKET_DB: (f64, f64) = (-30.0, 40.0);
pub const DEFAULT_TOLERANCE_DB: f64 = 0.01;
const MAX_BISECTIONS: usize = 60;
/// Step of the SNR grid used to locate the Monte Carlo required SNR.
pub const MC_GRID_STEP_DB: f64 = 0.25;
const MC_GRID_MAX_STEPS: usize = 12;
/// Allowed distance between Monte Carlo and analytical required SNR, dB.
pub const MC_AGREEMENT_DB: f64 = 0.5;
/// Allowed change of the SNR gap caused by residual CFO, dB.
pub const GAP_STABILITY_DB: f64 = 0.2;

/// omega_max = 2 pi f_c ppm / B_c, in radians per channel use.
pub fn omega_max_from_ppm(carrier_hz: f64, ppm: f64, bandwidth_hz: f64) -> f64 {
    2.0 * PI * carrier_hz * ppm * 1e-6 / bandwidth_hz
}

/// Default bound: 1 ppm of a 2 GHz carrier over 200 kHz of bandwidth.
pub fn default_omega_max() -> f64 {
    omega_max_from_ppm(2e9, 1.0, 200e3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    ArrayGain,
    SnrGap,
    MseValidation,
    LemmaOracles,
}

impl ExperimentId {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::ArrayGain => "array_gain",
            ExperimentId::SnrGap => "snr_gap",
            ExperimentId::MseValidation => "mse_validation",
            ExperimentId::LemmaOracles => "lemma_oracles",
        }
    }

    fn tag(self) -> u64 {
        match self {
            ExperimentId::ArrayGain => 1,
            ExperimentId::SnrGap => 2,
            ExperimentId::MseValidation => 3,
            ExperimentId::LemmaOracles => 4,
        }
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "array_gain" => Ok(ExperimentId::ArrayGain),
            "snr_gap" => Ok(ExperimentId::SnrGap),
            "mse_validation" => Ok(ExperimentId::MseValidation),
            "lemma_oracles" => Ok(ExperimentId::LemmaOracles),
            other => Err(Error::UnknownExperiment(other.to_string())),
        }
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What to run and over which grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub experiment: ExperimentId,
    pub m_grid: Vec<usize>,
    /// Target rates in bpcu. `array_gain` uses the first one.
    pub targets: Vec<f64>,
    /// 0-based user whose rate is tracked.
    pub user: usize,
    pub receivers: Vec<ReceiverKind>,
    /// Monte Carlo trials per point; 0 skips Monte Carlo where it is optional.
    pub trials: usize,
    pub tolerance_db: f64,
    pub cfo_mode: CfoMode,
    pub seed: u64,
}

impl SweepSpec {
    pub fn defaults(experiment: ExperimentId) -> Self {
        let base = Self {
            experiment,
            m_grid: vec![80, 160, 320, 640],
            targets: vec![2.0],
            user: 0,
            receivers: ReceiverKind::ALL.to_vec(),
            trials: 0,
            tolerance_db: DEFAULT_TOLERANCE_DB,
            cfo_mode: CfoMode::Estimated,
            seed: 0,
        };
        match experiment {
            ExperimentId::ArrayGain => base,
            ExperimentId::SnrGap => Self { m_grid: vec![80], targets: vec![1.0, 2.0, 2.5], ..base },
            ExperimentId::MseValidation => Self { m_grid: vec![320], trials: 10_000, ..base },
            ExperimentId::LemmaOracles => Self { m_grid: vec![40], trials: 10_000, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_grid.is_empty() || self.m_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSweep("M grid must be non-empty and strictly increasing".into()));
        }
        if self.targets.is_empty() || self.targets.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidSweep("target rates must be positive".into()));
        }
        if !(self.tolerance_db > 0.0) {
            return Err(Error::InvalidSweep("tolerance must be positive".into()));
        }
        if self.receivers.is_empty() {
            return Err(Error::InvalidSweep("no receivers selected".into()));
        }
        let needs_trials = matches!(self.experiment, ExperimentId::MseValidation | ExperimentId::LemmaOracles);
        if needs_trials && self.trials == 0 {
            return Err(Error::InvalidSweep(format!("{} needs at least one trial", self.experiment)));
        }
        Ok(())
    }

    fn source(&self, tag: u64) -> RandomSource {
        RandomSource::new(self.seed).fork((self.experiment.tag() << 56) ^ tag)
    }
}

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub m: usize,
    pub receiver: Option<ReceiverKind>,
    pub cfo_mode: Option<CfoMode>,
    pub target_rate: Option<f64>,
    /// What `value` measures.
    pub metric: String,
    pub value: f64,
    /// Closed-form counterpart, when there is one.
    pub reference: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
    pub trials: usize,
    /// Seed of the Monte Carlo source; trial `i` used stream `i`.
    pub source_seed: Option<u64>,
}

impl ResultRow {
    fn new(m: usize, metric: &str, value: f64) -> Self {
        Self {
            m,
            receiver: None,
            cfo_mode: None,
            target_rate: None,
            metric: metric.to_string(),
            value,
            reference: None,
            tolerance: None,
            pass: None,
            trials: 0,
            source_seed: None,
        }
    }

    fn receiver(mut self, r: ReceiverKind) -> Self {
        self.receiver = Some(r);
        self
    }

    fn mode(mut self, mode: CfoMode) -> Self {
        self.cfo_mode = Some(mode);
        self
    }

    fn target(mut self, rate: f64) -> Self {
        self.target_rate = Some(rate);
        self
    }

    fn reference(mut self, r: f64) -> Self {
        self.reference = Some(r);
        self
    }

    fn monte_carlo(mut self, trials: usize, source: RandomSource) -> Self {
        self.trials = trials;
        self.source_seed = Some(source.seed);
        self
    }

    /// Relative agreement with the reference.
    fn relative_check(mut self, tolerance: f64) -> Self {
        let r = self.reference.expect("relative check needs a reference");
        self.tolerance = Some(tolerance);
        self.pass = Some(((self.value - r) / r).abs() <= tolerance);
        self
    }

    /// Absolute agreement with the reference.
    fn absolute_check(mut self, tolerance: f64) -> Self {
        let r = self.reference.expect("absolute check needs a reference");
        self.tolerance = Some(tolerance);
        self.pass = Some((self.value - r).abs() <= tolerance);
        self
    }

    /// Value must lie in `[lo, hi]` (used for ratios and z-scores).
    fn range_check(mut self, lo: f64, hi: f64) -> Self {
        self.tolerance = Some(hi);
        self.pass = Some(self.value >= lo && self.value <= hi);
        self
    }
}

/// Point of the required-SNR curve, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotPoint {
    pub m: usize,
    pub receiver: ReceiverKind,
    pub cfo_mode: CfoMode,
    pub analytical_snr_db: f64,
    pub monte_carlo_snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub seed: u64,
    pub trials: usize,
    pub build_id: String,
    pub wall_time_s: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub experiment: ExperimentId,
    pub spec: SweepSpec,
    pub config: ConfigFile,
    pub rows: Vec<ResultRow>,
    pub plot: Vec<PlotPoint>,
    pub metadata: Metadata,
}

pub fn build_id() -> String {
    match option_env!("MIMO_CFO_BUILD_ID") {
        Some(id) => format!("{}+{}", env!("CARGO_PKG_VERSION"), id),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentResult {
    /// Rows matching the given selectors.
    pub fn find(&self, metric: &str) -> impl Iterator<Item = &ResultRow> {
        let metric = metric.to_string();
        self.rows.iter().filter(move |r| r.metric == metric)
    }

    pub fn value(&self, metric: &str, m: usize, receiver: Option<ReceiverKind>, mode: Option<CfoMode>, target: Option<f64>) -> Option<f64> {
        self.find(metric)
            .find(|r| r.m == m && r.receiver == receiver && r.cfo_mode == mode && r.target_rate == target)
            .map(|r| r.value)
    }

    /// All checked rows passed.
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    /// Results table as CSV with a header row.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "experiment", "m", "receiver", "cfo_mode", "target_rate", "metric", "value", "reference", "tolerance",
            "pass", "trials", "source_seed",
        ];
        w.write_record(header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                self.experiment.as_str().to_string(),
                r.m.to_string(),
                opt(r.receiver),
                opt(r.cfo_mode),
                opt(r.target_rate),
                r.metric.clone(),
                r.value.to_string(),
                opt(r.reference),
                opt(r.tolerance),
                opt(r.pass),
                r.trials.to_string(),
                opt(r.source_seed),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }

    /// Required SNR against M, one row per curve point.
    pub fn plot_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["m", "receiver", "cfo_mode", "analytical_snr_db", "monte_carlo_snr_db"]).map_err(csv_err)?;
        for p in &self.plot {
            w.write_record([
                p.m.to_string(),
                p.receiver.to_string(),
                p.cfo_mode.to_string(),
                p.analytical_snr_db.to_string(),
                opt(p.monte_carlo_snr_db),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }

    /// JSON summary, dB values rounded half-up to two decimals.
    pub fn summary_json(&self) -> Result<String> {
        let rounded: Vec<ResultRow> = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.metric.ends_with("_db") {
                    r.value = round_db_2(r.value);
                    r.reference = r.reference.map(round_db_2);
                }
                r
            })
            .collect();
        let summary = serde_json::json!({
            "experiment": self.experiment,
            "spec": self.spec,
            "config": self.config,
            "metadata": self.metadata,
            "all_pass": self.all_pass(),
            "rows": rounded,
        });
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes `<id>.csv`, `<id>_summary.json` and, for sweeps, `<id>_plot.csv`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let id = self.experiment.as_str();
        let mut written = Vec::new();
        let mut put = |name: String, bytes: &[u8]| -> Result<()> {
            let path = dir.join(name);
            std::fs::File::create(&path)?.write_all(bytes)?;
            written.push(path);
            Ok(())
        };
        put(format!("{id}.csv"), &self.to_csv()?)?;
        if !self.plot.is_empty() {
            put(format!("{id}_plot.csv"), &self.plot_csv()?)?;
        }
        put(format!("{id}_summary.json"), self.summary_json()?.as_bytes())?;
        Ok(written)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Analytical rate of `user` at SNR `snr_db`, with the residual CFO variance
/// re-evaluated at that SNR.
pub fn analytical_rate(config: &SystemConfig, kind: ReceiverKind, mode: CfoMode, user: usize, snr_db: f64) -> Result<f64> {
    let c = config.with_snr_db(snr_db);
    let s2 = sigma_omega2(&c, mode)[user];
    user_rate_single(&c, kind, s2, user)
}

/// Smallest SNR (dB) at which the analytical rate of `user` reaches `target`,
/// found by bisection to within `tol_db`.
pub fn min_snr_for_rate(
    template: &SystemConfig,
    m: usize,
    kind: ReceiverKind,
    mode: CfoMode,
    target: f64,
    user: usize,
    tol_db: f64,
) -> Result<f64> {
    let config = template.with_antennas(m);
    config.check()?;
    let rate = |db: f64| analytical_rate(&config, kind, mode, user, db);
    let (mut lo, mut hi) = SNR_BRACKET_DB;
    let (rate_lo, rate_hi) = (rate(lo)?, rate(hi)?);
    if !(rate_lo < target && rate_hi >= target) {
        return Err(Error::BracketFailure { target, lo_db: lo, hi_db: hi, rate_lo, rate_hi });
    }
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= tol_db {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if rate(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Monte Carlo rate of `user` at `snr_db`.
pub fn monte_carlo_rate(
    config: &SystemConfig,
    kind: ReceiverKind,
    mode: CfoMode,
    user: usize,
    snr_db: f64,
    trials: usize,
    source: RandomSource,
) -> Result<f64> {
    let c = config.with_snr_db(snr_db);
    let p = measure_components(kind, &c, mode, trials, source)?;
    Ok(p.rate_report(c.n_uplink).rate[user])
}

/// Monte Carlo required SNR: walks a 0.25 dB grid from `start_db` until the
/// measured rate crosses `target`, then interpolates linearly. All grid
/// points share `source`. Returns the estimate and the measured rate at
/// `start_db`; the estimate is `None` if no crossing is found within the walk.
pub fn monte_carlo_required_snr(
    config: &SystemConfig,
    kind: ReceiverKind,
    mode: CfoMode,
    user: usize,
    target: f64,
    start_db: f64,
    trials: usize,
    source: RandomSource,
) -> Result<(Option<f64>, f64)> {
    let rate = |db: f64| monte_carlo_rate(config, kind, mode, user, db, trials, source);
    let first = rate(start_db)?;
    let step = if first < target { MC_GRID_STEP_DB } else { -MC_GRID_STEP_DB };
    let (mut db, mut r) = (start_db, first);
    for _ in 0..MC_GRID_MAX_STEPS {
        let next_db = db + step;
        let next = rate(next_db)?;
        if (r - target) * (next - target) <= 0.0 {
            let frac = if next != r { (target - r) / (next - r) } else { 0.0 };
            return Ok((Some(db + frac * step), first));
        }
        db = next_db;
        r = next;
    }
    Ok((None, first))
}

/// SNR gap (MRC minus ZF) at each target, with and without residual CFO.
pub fn snr_gap_table(template: &SystemConfig, targets: &[f64], m: usize, user: usize, tol_db: f64) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &target in targets {
        let mut gaps = [0.0; 2];
        for (slot, mode) in [CfoMode::IdealZero, CfoMode::Estimated].into_iter().enumerate() {
            let zf = min_snr_for_rate(template, m, ReceiverKind::Zf, mode, target, user, tol_db)?;
            let mrc = min_snr_for_rate(template, m, ReceiverKind::Mrc, mode, target, user, tol_db)?;
            rows.push(ResultRow::new(m, "required_snr_db", zf).receiver(ReceiverKind::Zf).mode(mode).target(target));
            rows.push(ResultRow::new(m, "required_snr_db", mrc).receiver(ReceiverKind::Mrc).mode(mode).target(target));
            rows.push(ResultRow::new(m, "snr_gap_db", mrc - zf).mode(mode).target(target));
            gaps[slot] = mrc - zf;
        }
        rows.push(
            ResultRow::new(m, "snr_gap_vs_ideal_db", gaps[1])
                .target(target)
                .reference(gaps[0])
                .absolute_check(GAP_STABILITY_DB),
        );
    }
    Ok(rows)
}

fn receiver_tag(r: ReceiverKind) -> u64 {
    match r {
        ReceiverKind::Zf => 1,
        ReceiverKind::Mrc => 2,
    }
}

fn mode_tag(mode: CfoMode) -> u64 {
    match mode {
        CfoMode::Estimated => 1,
        CfoMode::IdealZero => 2,
        CfoMode::Genie => 3,
    }
}

fn array_gain(spec: &SweepSpec, config: &SystemConfig) -> Result<(Vec<ResultRow>, Vec<PlotPoint>)> {
    let target = spec.targets[0];
    let mode = spec.cfo_mode;
    let points: Vec<(usize, ReceiverKind)> =
        spec.m_grid.iter().flat_map(|&m| spec.receivers.iter().map(move |&r| (m, r))).collect();
    let per_point: Vec<Result<(Vec<ResultRow>, PlotPoint)>> = points
        .par_iter()
        .map(|&(m, receiver)| {
            let analytical = min_snr_for_rate(config, m, receiver, mode, target, spec.user, spec.tolerance_db)?;
            let mut rows = vec![ResultRow::new(m, "required_snr_db", analytical).receiver(receiver).mode(mode).target(target)];
            let mut monte_carlo_snr_db = None;
            if spec.trials > 0 {
                let c = config.with_antennas(m);
                let source = spec.source(((m as u64) << 8) | (receiver_tag(receiver) << 4) | mode_tag(mode));
                let (mc, rate_at) =
                    monte_carlo_required_snr(&c, receiver, mode, spec.user, target, analytical, spec.trials, source)?;
                rows.push(
                    ResultRow::new(m, "mc_rate_at_required_snr", rate_at)
                        .receiver(receiver)
                        .mode(mode)
                        .target(target)
                        .reference(target)
                        .monte_carlo(spec.trials, source),
                );
                if let Some(db) = mc {
                    rows.push(
                        ResultRow::new(m, "mc_required_snr_db", db)
                            .receiver(receiver)
                            .mode(mode)
                            .target(target)
                            .reference(analytical)
                            .absolute_check(MC_AGREEMENT_DB)
                            .monte_carlo(spec.trials, source),
                    );
                }
                monte_carlo_snr_db = mc;
            }
            let plot = PlotPoint { m, receiver, cfo_mode: mode, analytical_snr_db: analytical, monte_carlo_snr_db };
            Ok((rows, plot))
        })
        .collect();
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    for p in per_point {
        let (r, pt) = p?;
        rows.extend(r);
        plot.push(pt);
    }
    Ok((rows, plot))
}

fn mse_validation(spec: &SweepSpec, config: &SystemConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &m in &spec.m_grid {
        let c = config.with_antennas(m);
        c.check()?;
        let source = spec.source(m as u64);
        let stats = sample_cfo_residuals(&c, spec.trials, source)?;
        let closed = cfo_mse_closed_form(&c, None);
        let closed_mean = closed.iter().sum::<f64>() / closed.len() as f64;
        let empirical = stats.pooled_mse();
        rows.push(ResultRow::new(m, "cfo_mse", empirical).reference(closed_mean).monte_carlo(spec.trials, source));
        rows.push(
            ResultRow::new(m, "cfo_mse_ratio", empirical / closed_mean)
                .reference(1.0)
                .range_check(0.5, 2.0)
                .monte_carlo(spec.trials, source),
        );
        let worst_bias = stats
            .residual
            .iter()
            .map(|r| r.mean().abs() / r.std_error())
            .fold(0.0, f64::max);
        rows.push(ResultRow::new(m, "cfo_residual_bias_z", worst_bias).monte_carlo(spec.trials, source));
        let threshold = gamma_threshold(&c, None);
        rows.push(ResultRow::new(m, "gamma_over_threshold", c.cfo_snr() / threshold[0]));
    }
    Ok(rows)
}

fn lemma_oracles(spec: &SweepSpec, config: &SystemConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &m in &spec.m_grid {
        let c = config.with_antennas(m);
        c.check()?;
        let k_users = c.k;
        let source = spec.source((m as u64) << 1);
        let gram = sample_gram_moments(&c, spec.cfo_mode, spec.trials, source)?;
        let mc = |row: ResultRow| row.monte_carlo(spec.trials, source);
        for k in 0..k_users {
            let l2 = gram_moments(&c, k, k);
            rows.push(mc(ResultRow::new(m, &format!("inverse_gram_diag_u{k}"), gram.inverse_diag[k].mean())
                .reference(inverse_gram_diag_mean(&c, k)?)
                .relative_check(0.02)));
            rows.push(mc(ResultRow::new(m, &format!("gram_diag_u{k}"), gram.diag[k].mean())
                .reference(l2.m1)
                .relative_check(0.02)));
            rows.push(mc(ResultRow::new(m, &format!("gram_diag_sq_u{k}"), gram.diag_sq[k].mean())
                .reference(l2.m2_diag)
                .relative_check(0.03)));
        }
        rows.push(mc(ResultRow::new(m, "gram_cross_sq_normalized", gram.cross_sq_normalized.mean())
            .reference(1.0)
            .relative_check(0.03)));

        let wsource = spec.source(((m as u64) << 1) | 1);
        let trace = sample_wishart_trace_inverse(m, k_users, spec.trials, wsource)?;
        rows.push(ResultRow::new(m, "wishart_trace_inverse", trace.mean())
            .reference(wishart_trace_inverse_mean(m, k_users))
            .relative_check(0.02)
            .monte_carlo(spec.trials, wsource));

        let esource = spec.source(((m as u64) << 1) | (1 << 40));
        let est = sample_estimation_statistics(&c, spec.cfo_mode, spec.trials, esource)?;
        let cov = error_covariance(&c);
        let emc = |row: ResultRow| row.monte_carlo(spec.trials, esource);
        for k in 0..k_users {
            rows.push(emc(ResultRow::new(m, &format!("error_variance_u{k}"), est.error_power[k].mean())
                .reference(cov[k])
                .relative_check(0.02)));
            rows.push(emc(ResultRow::new(m, &format!("mmse_orthogonality_z_u{k}"), est.orthogonality[k].max_z())
                .range_check(0.0, 3.0)));
        }
    }
    Ok(rows)
}

/// Runs the experiment named in `spec` on `config`.
pub fn run_experiment(spec: &SweepSpec, config: &SystemConfig) -> Result<ExperimentResult> {
    spec.validate()?;
    config.check()?;
    let start = Instant::now();
    let (rows, plot) = match spec.experiment {
        ExperimentId::ArrayGain => array_gain(spec, config)?,
        ExperimentId::SnrGap => {
            let mut rows = Vec::new();
            for &m in &spec.m_grid {
                rows.extend(snr_gap_table(config, &spec.targets, m, spec.user, spec.tolerance_db)?);
            }
            (rows, Vec::new())
        }
        ExperimentId::MseValidation => (mse_validation(spec, config)?, Vec::new()),
        ExperimentId::LemmaOracles => (lemma_oracles(spec, config)?, Vec::new()),
    };
    Ok(ExperimentResult {
        experiment: spec.experiment,
        spec: spec.clone(),
        config: ConfigFile::from_parts(config, spec.seed),
        rows,
        plot,
        metadata: Metadata {
            seed: spec.seed,
            trials: spec.trials,
            build_id: build_id(),
            wall_time_s: start.elapsed().as_secs_f64(),
            workers: rayon::current_num_threads(),
        },
    })
}
