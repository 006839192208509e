//! Reference estimators and evaluation: Cramér-Rao bounds, EDC order
//! selection, successive-cancellation ML, MSE sweeps and estimate matching.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::inverse;
use crate::refine::{blue_gains, fisher_information, gauss_newton_refine, model_signal, GnConfig, RealParamVector};
use crate::rng::substream;
use crate::scalar::{lit, to_f64, wrap_half, Real};
use crate::signal::{add_noise, residual_power, sigma_for_snr, synthesize_channel, PathSet, SamplingGrid, Snapshot};

pub const SCHEMA_VERSION: u32 = 1;

/// Variance lower bounds per path, in normalized parameter units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrbReport {
    pub gain_re: Vec<f64>,
    pub gain_im: Vec<f64>,
    pub delay: Vec<f64>,
    pub doppler: Vec<f64>,
}

impl CrbReport {
    pub fn mean_delay(&self) -> f64 {
        mean(&self.delay)
    }

    pub fn mean_doppler(&self) -> f64 {
        mean(&self.doppler)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Diagonal of the inverse Fisher information of `paths` on `grid`.
pub fn crb<T: Real>(paths: &PathSet<T>, grid: &SamplingGrid, sigma: T) -> Result<CrbReport> {
    if paths.is_empty() {
        return Err(Error::Validation("the bound needs at least one path".into()));
    }
    let f = fisher_information(&RealParamVector::from_paths(paths), grid, sigma)?;
    let f64_fisher = f.mapv(to_f64);
    // Scale to unit diagonal before inverting; the parameters differ by orders of magnitude.
    let d: Array1<f64> = f64_fisher.diag().mapv(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    if d.iter().any(|&v| v == 0.0 || !v.is_finite()) {
        return Err(Error::Singular("Fisher information has a zero diagonal entry".into()));
    }
    let scaled = Array2::from_shape_fn(f64_fisher.dim(), |(i, j)| f64_fisher[[i, j]] * d[i] * d[j]);
    let inv = inverse(&scaled, 1e-12)?;
    let diag: Vec<f64> = (0..inv.nrows()).map(|i| inv[[i, i]] * d[i] * d[i]).collect();
    if diag.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Singular("inverse Fisher information is not positive".into()));
    }
    let pick = |o: usize| diag.iter().skip(o).step_by(4).copied().collect::<Vec<_>>();
    Ok(CrbReport { gain_re: pick(0), gain_im: pick(1), delay: pick(2), doppler: pick(3) })
}

/// Location of the strongest peak of the full-range delay/Doppler
/// periodogram of `residual`, sampled `oversample` times finer than the
/// Rayleigh bins and refined by parabolic interpolation.
pub fn periodogram_peak<T: Real>(residual: &Array2<Complex<T>>, oversample: usize) -> (T, T, T) {
    let (nf, nt) = residual.dim();
    let (m, n) = (nf * oversample.max(1), nt * oversample.max(1));
    let mut buf = vec![Complex::new(T::zero(), T::zero()); m * n];
    for ((k, l), z) in residual.indexed_iter() {
        buf[k * n + l] = *z;
    }
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(n);
    for k in 0..nf {
        fwd.process(&mut buf[k * n..(k + 1) * n]);
    }
    let inv = planner.plan_fft_inverse(m);
    let mut col = vec![Complex::new(T::zero(), T::zero()); m];
    let mut mag = vec![T::zero(); m * n];
    for l in 0..n {
        for k in 0..m {
            col[k] = buf[k * n + l];
        }
        inv.process(&mut col);
        for k in 0..m {
            mag[k * n + l] = col[k].norm();
        }
    }
    let (mut best, mut at) = (T::neg_infinity(), 0);
    for (i, &v) in mag.iter().enumerate() {
        if v > best {
            best = v;
            at = i;
        }
    }
    let (km, ln) = (at / n, at % n);
    let vertex = |a: T, b: T, c: T| -> T {
        let den = a - lit::<T>(2.0) * b + c;
        if den < T::zero() {
            (lit::<T>(0.5) * (a - c) / den).max(lit(-0.5)).min(lit(0.5))
        } else {
            T::zero()
        }
    };
    let dk = vertex(mag[((km + m - 1) % m) * n + ln], best, mag[((km + 1) % m) * n + ln]);
    let dl = vertex(mag[km * n + (ln + n - 1) % n], best, mag[km * n + (ln + 1) % n]);
    let tau = (lit::<T>(km as f64) + dk) / lit::<T>(m as f64);
    let tau = tau - tau.floor();
    let alpha = wrap_half((lit::<T>(ln as f64) + dl) / lit::<T>(n as f64));
    (tau, alpha, best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    /// Always add paths up to the cap.
    Fixed,
    /// Stop once the EDC score stops decreasing.
    Edc,
    /// Stop once the mean residual power falls to `floor`.
    ResidualFloor { floor: f64 },
}

/// One outer iteration of [`iterative_ml`]: the refined path set with `k`
/// paths and its residual sum of squares.
#[derive(Debug, Clone)]
pub struct MlStage<T: Real> {
    pub paths: PathSet<T>,
    pub rss: T,
}

#[derive(Debug, Clone)]
pub struct MlResult<T: Real> {
    pub paths: PathSet<T>,
    /// Stage 0 is the empty model.
    pub stages: Vec<MlStage<T>>,
}

/// Peak-search oversampling used by [`iterative_ml`].
pub const PEAK_OVERSAMPLE: usize = 4;

fn paths_from<T: Real>(gains: &[Complex<T>], taus: &[T], alphas: &[T]) -> Result<PathSet<T>> {
    PathSet::new(gains.to_vec(), taus.to_vec(), alphas.to_vec())
}

/// Successive cancellation: each outer iteration adds the residual
/// periodogram peak, refines all paths jointly by Gauss-Newton and refits
/// the gains by BLUE.
pub fn iterative_ml<T: Real>(snapshot: &Snapshot<T>, p_max: usize, stop: StopRule, gn: &GnConfig) -> Result<MlResult<T>> {
    if p_max == 0 {
        return Err(Error::Config("p_max must be at least 1".into()));
    }
    gn.validate()?;
    let grid = &snapshot.grid;
    let n_real = 2 * grid.samples();
    let energy = residual_power(&snapshot.data, &Array2::zeros(snapshot.data.dim()));
    let mut stages = vec![MlStage { paths: PathSet::empty(), rss: energy }];
    let mut residual = snapshot.data.clone();
    let floor_hit = |rss: T| match stop {
        StopRule::ResidualFloor { floor } => to_f64(rss) / grid.samples() as f64 <= floor,
        _ => false,
    };
    if floor_hit(energy) {
        return Ok(MlResult { paths: PathSet::empty(), stages });
    }
    for _ in 0..p_max {
        let prev = stages.last().expect("stage 0").clone();
        let (tau, alpha, _) = periodogram_peak(&residual, PEAK_OVERSAMPLE);
        let mut taus = prev.paths.delays().to_vec();
        let mut alphas = prev.paths.dopplers().to_vec();
        taus.push(tau);
        alphas.push(alpha);
        let Ok((gains, init_rss)) = blue_gains(&taus, &alphas, snapshot) else { break };
        let Ok(init) = paths_from(&gains, &taus, &alphas) else { break };
        let theta = RealParamVector::from_paths(&init);
        let refined = match gauss_newton_refine(&theta, snapshot, gn) {
            Ok(r) => r.theta,
            Err(_) => theta,
        };
        let (taus, alphas) = (refined.delays(), refined.dopplers());
        let (paths, rss) = match blue_gains(&taus, &alphas, snapshot).and_then(|(g, rss)| Ok((paths_from(&g, &taus, &alphas)?, rss))) {
            Ok(ok) if ok.1 <= init_rss => ok,
            _ => (init, init_rss),
        };
        residual = &snapshot.data - &model_signal(&RealParamVector::from_paths(&paths), grid);
        let k = paths.len();
        let stage = MlStage { paths, rss };
        if let StopRule::Edc = stop {
            let floor = rss_floor(energy);
            let score = |rss: T, k| edc_score(to_f64(rss).max(floor), k, n_real);
            if score(stage.rss, k) >= score(prev.rss, k - 1) {
                break;
            }
        }
        let done = floor_hit(stage.rss);
        stages.push(stage);
        if done {
            break;
        }
    }
    Ok(MlResult { paths: stages.last().expect("stage 0").paths.clone(), stages })
}

/// Residuals below this fraction of the snapshot energy are treated as
/// numerically zero when scoring model orders.
pub fn rss_floor<T: Real>(energy: T) -> f64 {
    to_f64(energy) * 1e-2 * to_f64(T::epsilon()).sqrt()
}

/// `EDC(k) = N·ln(RSS/N) + 4k·√(N·ln ln N)` for `N` real observations.
pub fn edc_score(rss: f64, k: usize, n_real: usize) -> f64 {
    let n = n_real as f64;
    let c_n = (n * n.ln().ln()).sqrt();
    n * (rss.max(f64::MIN_POSITIVE) / n).ln() + (4 * k) as f64 * c_n
}

#[derive(Debug, Clone)]
pub struct EdcResult<T: Real> {
    pub order: usize,
    /// `EDC(k)` for `k = 0..=p_max`; `NaN` where the fit at `k` failed.
    pub scores: Vec<f64>,
    pub paths: PathSet<T>,
}

/// Model order minimizing EDC over successive-cancellation fits with
/// `0..=p_max` paths.
pub fn edc_model_order<T: Real>(snapshot: &Snapshot<T>, p_max: usize, gn: &GnConfig) -> Result<EdcResult<T>> {
    let fit = iterative_ml(snapshot, p_max, StopRule::Fixed, gn)?;
    let n_real = 2 * snapshot.grid.samples();
    let floor = rss_floor(fit.stages[0].rss);
    let mut scores = vec![f64::NAN; p_max + 1];
    for stage in &fit.stages {
        scores[stage.paths.len()] = edc_score(to_f64(stage.rss).max(floor), stage.paths.len(), n_real);
    }
    let best = fit
        .stages
        .iter()
        .min_by(|a, b| scores[a.paths.len()].total_cmp(&scores[b.paths.len()]))
        .expect("stage 0");
    Ok(EdcResult { order: best.paths.len(), scores, paths: best.paths.clone() })
}

/// Outcome of pairing estimates with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(estimate index, truth index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub delay_sq_errors: Vec<f64>,
    pub doppler_sq_errors: Vec<f64>,
    pub misses: usize,
    pub false_alarms: usize,
}

impl Matching {
    pub fn rmse_delay(&self) -> f64 {
        mean(&self.delay_sq_errors).sqrt()
    }

    pub fn rmse_doppler(&self) -> f64 {
        mean(&self.doppler_sq_errors).sqrt()
    }
}

/// Default gates: one Rayleigh bin per axis.
pub fn rayleigh_gates(grid: &SamplingGrid) -> (f64, f64) {
    (grid.delay_bin(), grid.doppler_bin())
}

/// Greedy nearest-neighbour pairing in gate-normalized distance. A pair is
/// admissible only if both axis errors lie within their gates; Doppler
/// errors are taken modulo one.
pub fn match_estimates<T: Real>(est: &PathSet<T>, truth: &PathSet<T>, gates: (f64, f64)) -> Result<Matching> {
    if !(gates.0 > 0.0 && gates.1 > 0.0) {
        return Err(Error::Validation(format!("gates {gates:?} must be positive")));
    }
    let mut cand = Vec::new();
    for (e, (_, te, ae)) in est.iter().enumerate() {
        for (t, (_, tt, at)) in truth.iter().enumerate() {
            let dt = to_f64(te) - to_f64(tt);
            let da = wrap_half(to_f64(ae) - to_f64(at));
            if dt.abs() <= gates.0 && da.abs() <= gates.1 {
                let d = (dt / gates.0).powi(2) + (da / gates.1).powi(2);
                cand.push((d, t, to_f64(te), to_f64(ae), e, dt * dt, da * da));
            }
        }
    }
    // Ties are broken by truth index and estimate values, never by estimate order.
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)).then(a.3.total_cmp(&b.3)));
    let mut used_e = vec![false; est.len()];
    let mut used_t = vec![false; truth.len()];
    let mut m = Matching { pairs: Vec::new(), delay_sq_errors: Vec::new(), doppler_sq_errors: Vec::new(), misses: 0, false_alarms: 0 };
    for (_, t, _, _, e, dt2, da2) in cand {
        if !used_e[e] && !used_t[t] {
            used_e[e] = true;
            used_t[t] = true;
            m.pairs.push((e, t));
            m.delay_sq_errors.push(dt2);
            m.doppler_sq_errors.push(da2);
        }
    }
    m.misses = used_t.iter().filter(|u| !**u).count();
    m.false_alarms = used_e.iter().filter(|u| !**u).count();
    Ok(m)
}

/// A parameter estimator evaluated by [`mse_sweep`].
pub trait Estimator<T: Real>: Sync {
    fn name(&self) -> &str;
    fn estimate(&self, snapshot: &Snapshot<T>) -> Result<PathSet<T>>;
}

/// Returns the ground truth attached to the snapshot.
pub struct TruthEstimator;

impl<T: Real> Estimator<T> for TruthEstimator {
    fn name(&self) -> &str {
        "truth"
    }

    fn estimate(&self, snapshot: &Snapshot<T>) -> Result<PathSet<T>> {
        snapshot.truth.clone().ok_or_else(|| Error::Validation("snapshot carries no ground truth".into()))
    }
}

/// Periodogram peak initialization followed by Gauss-Newton refinement of a
/// fixed number of paths.
pub struct PeakGnEstimator {
    pub paths: usize,
    pub gn: GnConfig,
}

impl<T: Real> Estimator<T> for PeakGnEstimator {
    fn name(&self) -> &str {
        "peak_gn"
    }

    fn estimate(&self, snapshot: &Snapshot<T>) -> Result<PathSet<T>> {
        Ok(iterative_ml(snapshot, self.paths, StopRule::Fixed, &self.gn)?.paths)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Matching gates; one Rayleigh bin per axis when absent.
    #[serde(default)]
    pub gates: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub estimator: String,
    pub mse_tau: f64,
    pub mse_alpha: f64,
    pub crb_tau: f64,
    pub crb_alpha: f64,
    pub trials: usize,
    /// Matched estimate/truth pairs contributing to the MSE.
    pub matched: usize,
    pub misses: usize,
    pub false_alarms: usize,
    /// Trials in which the estimator returned an error.
    pub failures: usize,
}

impl SweepRow {
    pub fn miss_rate(&self) -> f64 {
        let total = self.matched + self.misses;
        if total == 0 {
            0.0
        } else {
            self.misses as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# schema_version={} config_hash={} seed={}\n", self.schema_version, self.config_hash, self.seed);
        s.push_str("snr_db,estimator,mse_tau,mse_alpha,crb_tau,crb_alpha,trials,matched,misses,false_alarms,failures\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e},{:e},{},{},{},{},{}",
                r.snr_db, r.estimator, r.mse_tau, r.mse_alpha, r.crb_tau, r.crb_alpha, r.trials, r.matched, r.misses, r.false_alarms, r.failures
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep result serializes")
    }
}

struct TrialOutcome {
    matching: Option<Matching>,
    failed: bool,
}

/// Monte-Carlo MSE of each estimator on a fixed scene. Every estimator sees
/// the same noise realization in a given `(snr, trial)`.
pub fn mse_sweep<T: Real>(estimators: &[&dyn Estimator<T>], paths: &PathSet<T>, grid: &SamplingGrid, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.trials == 0 {
        return Err(Error::Config("sweep needs at least one trial".into()));
    }
    if paths.is_empty() {
        return Err(Error::Validation("sweep scene has no paths".into()));
    }
    let gates = cfg.gates.unwrap_or_else(|| rayleigh_gates(grid));
    let clean = synthesize_channel(paths, grid)?;
    let mut rows = Vec::new();
    for (si, &snr) in cfg.snr_db.iter().enumerate() {
        let sigma: T = sigma_for_snr(&clean, snr)?;
        let bound = crb(paths, grid, sigma)?;
        let outcomes: Vec<Vec<TrialOutcome>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| -> Result<Vec<TrialOutcome>> {
                let y = add_noise(&clean, sigma, &mut substream(cfg.seed, &[si as u64, trial as u64]))?;
                let snap = Snapshot::new(y, *grid, sigma)?.with_truth(paths.clone());
                estimators
                    .iter()
                    .map(|est| match est.estimate(&snap) {
                        Ok(found) => Ok(TrialOutcome { matching: Some(match_estimates(&found, paths, gates)?), failed: false }),
                        Err(_) => Ok(TrialOutcome { matching: None, failed: true }),
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        for (ei, est) in estimators.iter().enumerate() {
            let mut row = SweepRow {
                snr_db: snr,
                estimator: est.name().to_string(),
                mse_tau: 0.0,
                mse_alpha: 0.0,
                crb_tau: bound.mean_delay(),
                crb_alpha: bound.mean_doppler(),
                trials: cfg.trials,
                matched: 0,
                misses: 0,
                false_alarms: 0,
                failures: 0,
            };
            for trial in &outcomes {
                let o = &trial[ei];
                if o.failed {
                    row.failures += 1;
                    row.misses += paths.len();
                }
                if let Some(m) = &o.matching {
                    row.matched += m.pairs.len();
                    row.misses += m.misses;
                    row.false_alarms += m.false_alarms;
                    row.mse_tau += m.delay_sq_errors.iter().sum::<f64>();
                    row.mse_alpha += m.doppler_sq_errors.iter().sum::<f64>();
                }
            }
            let denom = if row.matched == 0 { f64::NAN } else { row.matched as f64 };
            row.mse_tau /= denom;
            row.mse_alpha /= denom;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Distribution of model-order errors `P̂ − P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderErrorStats {
    pub histogram: BTreeMap<i64, usize>,
    pub mean_error: f64,
    pub exact_rate: f64,
    pub trials: usize,
}

/// Statistics of `(estimated, true)` model-order pairs.
pub fn order_error_stats(runs: &[(usize, usize)]) -> Result<OrderErrorStats> {
    if runs.is_empty() {
        return Err(Error::Validation("no runs to summarize".into()));
    }
    let mut histogram = BTreeMap::new();
    let mut sum = 0i64;
    for &(est, truth) in runs {
        let e = est as i64 - truth as i64;
        *histogram.entry(e).or_insert(0) += 1;
        sum += e;
    }
    let n = runs.len();
    let exact = histogram.get(&0).copied().unwrap_or(0);
    Ok(OrderErrorStats { histogram, mean_error: sum as f64 / n as f64, exact_rate: exact as f64 / n as f64, trials: n })
}

/// Order-error statistics per `(δ, SNR)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderErrorReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub cells: Vec<OrderErrorCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderErrorCell {
    pub method: String,
    /// Detection threshold; absent for methods without one.
    pub delta: Option<f64>,
    pub snr_db: f64,
    pub stats: OrderErrorStats,
}

impl OrderErrorReport {
    /// One line per histogram bin.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# schema_version={} config_hash={} seed={}\n", self.schema_version, self.config_hash, self.seed);
        s.push_str("method,delta,snr_db,order_error,count,trials,mean_error,exact_rate\n");
        for c in &self.cells {
            let delta = c.delta.map(|d| d.to_string()).unwrap_or_default();
            for (e, n) in &c.stats.histogram {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    c.method, delta, c.snr_db, e, n, c.stats.trials, c.stats.mean_error, c.stats.exact_rate
                );
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("order report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn snap(paths: &PathSet<f64>, grid: SamplingGrid, sigma: f64, seed: u64) -> Snapshot<f64> {
        let clean = synthesize_channel(paths, &grid).unwrap();
        let y = if sigma > 0.0 { add_noise(&clean, sigma, &mut seeded(seed)).unwrap() } else { clean };
        Snapshot::new(y, grid, sigma).unwrap().with_truth(paths.clone())
    }

    #[test]
    fn crb_scales_with_noise_power() {
        let grid = SamplingGrid::centered(16, 8, 1.0, 1.0);
        let p = PathSet::new(vec![Complex::new(0.7, 0.2)], vec![0.3], vec![0.1]).unwrap();
        let a = crb(&p, &grid, 0.1).unwrap();
        let b = crb(&p, &grid, 0.2).unwrap();
        for (x, y) in a.delay.iter().chain(&a.doppler).zip(b.delay.iter().chain(&b.doppler)) {
            assert!((y / x - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn crb_delay_bound_ignores_gain_phase() {
        let grid = SamplingGrid::centered(16, 8, 1.0, 1.0);
        let at = |phase: f64| {
            let p = PathSet::new(vec![Complex::from_polar(0.5, phase)], vec![0.4], vec![-0.2]).unwrap();
            crb(&p, &grid, 0.3).unwrap().delay[0]
        };
        assert!((at(0.0) / at(2.1) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn periodogram_finds_single_tone() {
        let grid = SamplingGrid::centered(64, 32, 1.0, 1.0);
        let p = PathSet::new(vec![Complex::new(1.0, 0.0)], vec![0.3712], vec![-0.2231]).unwrap();
        let s = synthesize_channel(&p, &grid).unwrap();
        let (t, a, _): (f64, f64, f64) = periodogram_peak(&s, 4);
        assert!((t - 0.3712).abs() < 0.25 / 64.0);
        assert!((a + 0.2231).abs() < 0.25 / 32.0);
    }

    #[test]
    fn iterative_ml_single_noiseless_path() {
        let grid = SamplingGrid::centered(32, 16, 1.0, 1.0);
        let p = PathSet::new(vec![Complex::new(0.6, -0.4)], vec![0.123], vec![0.321]).unwrap();
        let s = snap(&p, grid, 0.0, 0);
        let out = iterative_ml(&s, 1, StopRule::Fixed, &GnConfig { max_iters: 30, ..GnConfig::default() }).unwrap();
        assert_eq!(out.paths.len(), 1);
        assert!((out.paths.delays()[0] - 0.123).abs() < 1e-9);
        assert!((out.paths.dopplers()[0] - 0.321).abs() < 1e-9);
    }

    #[test]
    fn iterative_ml_respects_cap_and_floor() {
        let grid = SamplingGrid::centered(32, 16, 1.0, 1.0);
        let p = PathSet::new(vec![Complex::new(1.0, 0.0), Complex::new(0.5, 0.5)], vec![0.1, 0.6], vec![0.2, -0.3]).unwrap();
        let s = snap(&p, grid, 0.01, 4);
        let capped = iterative_ml(&s, 1, StopRule::Fixed, &GnConfig::default()).unwrap();
        assert_eq!(capped.paths.len(), 1);
        let floor = iterative_ml(&s, 5, StopRule::ResidualFloor { floor: 1e9 }, &GnConfig::default()).unwrap();
        assert!(floor.paths.is_empty());
        let full = iterative_ml(&s, 4, StopRule::Fixed, &GnConfig::default()).unwrap();
        for w in full.stages.windows(2) {
            assert!(w[1].rss <= w[0].rss);
        }
    }

    #[test]
    fn edc_noiseless_single_path() {
        let grid = SamplingGrid::centered(32, 16, 1.0, 1.0);
        let p = PathSet::new(vec![Complex::new(0.9, 0.1)], vec![0.45], vec![0.05]).unwrap();
        let out = edc_model_order(&snap(&p, grid, 0.0, 0), 3, &GnConfig::default()).unwrap();
        assert_eq!(out.order, 1);
    }

    #[test]
    fn edc_penalty_is_positive() {
        let n = 2 * 32 * 16;
        assert!(edc_score(10.0, 3, n) > edc_score(10.0, 2, n));
    }

    #[test]
    fn matching_identity_and_spurious() {
        let truth = PathSet::new(vec![Complex::new(1.0, 0.0); 2], vec![0.1, 0.5], vec![0.0, 0.2]).unwrap();
        let m = match_estimates(&truth, &truth, (0.01, 0.01)).unwrap();
        assert_eq!((m.pairs.len(), m.misses, m.false_alarms), (2, 0, 0));
        assert_eq!(m.rmse_delay(), 0.0);
        let est = PathSet::new(vec![Complex::new(1.0, 0.0); 3], vec![0.1, 0.5, 0.9], vec![0.0, 0.2, -0.4]).unwrap();
        let m = match_estimates(&est, &truth, (0.01, 0.01)).unwrap();
        assert_eq!((m.pairs.len(), m.misses, m.false_alarms), (2, 0, 1));
        assert_eq!(m.rmse_delay(), 0.0);
    }

    #[test]
    fn matching_wraps_doppler() {
        let truth = PathSet::new(vec![Complex::new(1.0, 0.0)], vec![0.1], vec![0.499]).unwrap();
        let est = PathSet::new(vec![Complex::new(1.0, 0.0)], vec![0.1], vec![-0.499]).unwrap();
        let m = match_estimates(&est, &truth, (0.01, 0.01)).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert!((m.rmse_doppler() - 0.002).abs() < 1e-12);
    }

    #[test]
    fn order_stats_cases() {
        let s = order_error_stats(&[(2, 2), (3, 3)]).unwrap();
        assert_eq!(s.exact_rate, 1.0);
        assert_eq!(s.histogram.get(&0), Some(&2));
        let s = order_error_stats(&[(1, 2), (2, 3)]).unwrap();
        assert_eq!(s.mean_error, -1.0);
        let s = order_error_stats(&[(2, 2), (3, 2)]).unwrap();
        assert_eq!(s.mean_error, 0.5);
        assert!(order_error_stats(&[]).is_err());
    }

    #[test]
    fn truth_estimator_has_zero_mse() {
        let grid = SamplingGrid::centered(16, 8, 1.0, 1.0);
        let p = PathSet::new(vec![Complex::new(1.0, 0.0)], vec![0.2], vec![0.1]).unwrap();
        let cfg = SweepConfig { snr_db: vec![0.0, 10.0], trials: 5, seed: 1, gates: None };
        let rows = mse_sweep::<f64>(&[&TruthEstimator], &p, &grid, &cfg).unwrap();
        for r in rows {
            assert_eq!((r.mse_tau, r.mse_alpha, r.misses, r.matched), (0.0, 0.0, 0, 5));
            assert!(r.crb_tau > 0.0);
        }
    }
}
