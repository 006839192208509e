//! Channel model: path parameters, sampling geometry, snapshot synthesis and
//! random scene generation.
//!
//! Delays and Doppler shifts are stored in normalized units: `τ' = τ·Δf` in
//! `[0, 1)` and `α' = α·Δt` in `[-0.5, 0.5)`. With `f̃_k = f₀/Δf + k` and
//! `t̃_l = t₀/Δt + l` the sampled channel is
//!
//! ```text
//! S[k, l] = Σ_p γ_p · exp(-2jπ f̃_k τ'_p) · exp(+2jπ t̃_l α'_p)
//! ```

use ndarray::{Array2, Zip};
use num_complex::Complex;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{cis_cycles, from_usize, lit, to_f64, Real};

/// Complex gains, delays and Doppler shifts of `P` specular paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet<T: Real> {
    gains: Vec<Complex<T>>,
    delays: Vec<T>,
    dopplers: Vec<T>,
}

impl<T: Real> PathSet<T> {
    pub fn new(gains: Vec<Complex<T>>, delays: Vec<T>, dopplers: Vec<T>) -> Result<Self> {
        if gains.len() != delays.len() || delays.len() != dopplers.len() {
            return Err(Error::Validation(format!(
                "path vectors differ in length: {} gains, {} delays, {} dopplers",
                gains.len(),
                delays.len(),
                dopplers.len()
            )));
        }
        let half = lit::<T>(0.5);
        for p in 0..gains.len() {
            let (g, tau, alpha) = (gains[p], delays[p], dopplers[p]);
            if !(g.re.is_finite() && g.im.is_finite() && tau.is_finite() && alpha.is_finite()) {
                return Err(Error::Validation(format!("path {p} has a non-finite parameter")));
            }
            if tau < T::zero() || tau >= T::one() {
                return Err(Error::Validation(format!("path {p}: delay {tau} outside [0, 1)")));
            }
            if alpha < -half || alpha >= half {
                return Err(Error::Validation(format!(
                    "path {p}: doppler {alpha} outside [-0.5, 0.5)"
                )));
            }
            if g.norm() <= T::zero() {
                return Err(Error::Validation(format!("path {p} has zero gain")));
            }
        }
        Ok(Self { gains, delays, dopplers })
    }

    pub fn empty() -> Self {
        Self { gains: Vec::new(), delays: Vec::new(), dopplers: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn gains(&self) -> &[Complex<T>] {
        &self.gains
    }

    pub fn delays(&self) -> &[T] {
        &self.delays
    }

    pub fn dopplers(&self) -> &[T] {
        &self.dopplers
    }

    /// Iterates over `(gain, delay, doppler)` triples.
    pub fn iter(&self) -> impl Iterator<Item = (Complex<T>, T, T)> + '_ {
        (0..self.len()).map(move |p| (self.gains[p], self.delays[p], self.dopplers[p]))
    }

    /// Same paths with every gain multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            gains: self.gains.iter().map(|g| g * factor).collect(),
            delays: self.delays.clone(),
            dopplers: self.dopplers.clone(),
        }
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> PathSet<U> {
        let c = |x: T| lit::<U>(to_f64(x));
        PathSet {
            gains: self.gains.iter().map(|g| Complex::new(c(g.re), c(g.im))).collect(),
            delays: self.delays.iter().map(|&x| c(x)).collect(),
            dopplers: self.dopplers.iter().map(|&x| c(x)).collect(),
        }
    }
}

/// Frequency/time sampling geometry of a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub n_freq: usize,
    pub n_time: usize,
    /// Frequency spacing in Hz.
    pub delta_f: f64,
    /// Time spacing in seconds.
    pub delta_t: f64,
    /// First frequency sample in Hz, relative to the carrier.
    pub f0: f64,
    /// First time sample in seconds.
    pub t0: f64,
}

impl SamplingGrid {
    /// Grid with the centered frequency axis `f₀ = -B/2` and `t₀ = 0`.
    pub fn centered(n_freq: usize, n_time: usize, delta_f: f64, delta_t: f64) -> Self {
        Self {
            n_freq,
            n_time,
            delta_f,
            delta_t,
            f0: -(n_freq as f64) * delta_f / 2.0,
            t0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_freq < 2 || self.n_time < 2 {
            return Err(Error::Validation(format!(
                "grid needs at least 2x2 samples, got {}x{}",
                self.n_freq, self.n_time
            )));
        }
        if !(self.delta_f > 0.0 && self.delta_t > 0.0) {
            return Err(Error::Validation("sampling intervals must be positive".into()));
        }
        if !(self.f0.is_finite() && self.t0.is_finite() && self.delta_f.is_finite() && self.delta_t.is_finite()) {
            return Err(Error::Validation("grid parameters must be finite".into()));
        }
        Ok(())
    }

    /// Bandwidth `B = N_f·Δf`.
    pub fn bandwidth(&self) -> f64 {
        self.n_freq as f64 * self.delta_f
    }

    pub fn samples(&self) -> usize {
        self.n_freq * self.n_time
    }

    /// Normalized frequency coordinates `f₀/Δf + k`.
    pub fn freq_coords<T: Real>(&self) -> Vec<T> {
        let offset = self.f0 / self.delta_f;
        (0..self.n_freq).map(|k| lit::<T>(offset + k as f64)).collect()
    }

    /// Normalized time coordinates `t₀/Δt + l`.
    pub fn time_coords<T: Real>(&self) -> Vec<T> {
        let offset = self.t0 / self.delta_t;
        (0..self.n_time).map(|l| lit::<T>(offset + l as f64)).collect()
    }

    /// Delay resolution bin in normalized units (`1/N_f`).
    pub fn delay_bin(&self) -> f64 {
        1.0 / self.n_freq as f64
    }

    /// Doppler resolution bin in normalized units (`1/N_t`).
    pub fn doppler_bin(&self) -> f64 {
        1.0 / self.n_time as f64
    }

    pub fn delay_to_seconds(&self, delay: f64) -> f64 {
        delay / self.delta_f
    }

    pub fn doppler_to_hz(&self, doppler: f64) -> f64 {
        doppler / self.delta_t
    }
}

/// One complex `N_f × N_t` observation.
#[derive(Debug, Clone)]
pub struct Snapshot<T: Real> {
    pub data: Array2<Complex<T>>,
    pub grid: SamplingGrid,
    /// Per-entry noise standard deviation; zero for noiseless data.
    pub noise_sigma: T,
    pub truth: Option<PathSet<T>>,
}

impl<T: Real> Snapshot<T> {
    pub fn new(data: Array2<Complex<T>>, grid: SamplingGrid, noise_sigma: T) -> Result<Self> {
        grid.validate()?;
        if data.dim() != (grid.n_freq, grid.n_time) {
            return Err(Error::Validation(format!(
                "snapshot shape {:?} does not match grid {}x{}",
                data.dim(),
                grid.n_freq,
                grid.n_time
            )));
        }
        if !noise_sigma.is_finite() || noise_sigma < T::zero() {
            return Err(Error::Validation(format!("noise sigma {noise_sigma} must be finite and >= 0")));
        }
        Ok(Self { data, grid, noise_sigma, truth: None })
    }

    pub fn with_truth(mut self, truth: PathSet<T>) -> Self {
        self.truth = Some(truth);
        self
    }
}

/// Delay-domain steering matrix `A[k, p] = exp(-2jπ f̃_k τ'_p)`.
pub(crate) fn delay_atoms<T: Real>(grid: &SamplingGrid, delays: &[T]) -> Array2<Complex<T>> {
    let fk = grid.freq_coords::<T>();
    Array2::from_shape_fn((grid.n_freq, delays.len()), |(k, p)| cis_cycles(-(fk[k] * delays[p])))
}

/// Doppler-domain steering matrix `B[l, p] = exp(+2jπ t̃_l α'_p)`.
pub(crate) fn doppler_atoms<T: Real>(grid: &SamplingGrid, dopplers: &[T]) -> Array2<Complex<T>> {
    let tl = grid.time_coords::<T>();
    Array2::from_shape_fn((grid.n_time, dopplers.len()), |(l, p)| cis_cycles(tl[l] * dopplers[p]))
}

/// Noise-free channel `S` for the given paths.
pub fn synthesize_channel<T: Real>(paths: &PathSet<T>, grid: &SamplingGrid) -> Result<Array2<Complex<T>>> {
    grid.validate()?;
    let finite = paths
        .iter()
        .all(|(g, t, a)| g.re.is_finite() && g.im.is_finite() && t.is_finite() && a.is_finite());
    if !finite {
        return Err(Error::Validation("non-finite path parameter".into()));
    }
    let a = delay_atoms(grid, paths.delays());
    let mut b = doppler_atoms(grid, paths.dopplers());
    for (mut col, g) in b.columns_mut().into_iter().zip(paths.gains()) {
        col.mapv_inplace(|z| z * g);
    }
    Ok(a.dot(&b.t()))
}

/// Noise standard deviation giving `mean|S|² / σ² = 10^(snr_db/10)`.
pub fn sigma_for_snr<T: Real>(signal: &Array2<Complex<T>>, snr_db: f64) -> Result<T> {
    if signal.is_empty() {
        return Err(Error::Validation("empty signal".into()));
    }
    let power: f64 = signal.iter().map(|z| to_f64(z.norm_sqr())).sum::<f64>() / signal.len() as f64;
    if power <= 0.0 {
        return Err(Error::Validation("SNR is undefined for an all-zero signal".into()));
    }
    Ok(lit(power.sqrt() * 10f64.powf(-snr_db / 20.0)))
}

/// Adds circularly-symmetric complex Gaussian noise of per-entry variance `σ²`.
pub fn add_noise<T: Real>(signal: &Array2<Complex<T>>, sigma: T, rng: &mut Rng) -> Result<Array2<Complex<T>>> {
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return Err(Error::Validation(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    let scale = to_f64(sigma) / std::f64::consts::SQRT_2;
    let mut out = signal.clone();
    // Draw even for sigma = 0 so the stream position does not depend on sigma.
    out.iter_mut().for_each(|z| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        if scale > 0.0 {
            *z += Complex::new(lit::<T>(re * scale), lit::<T>(im * scale));
        }
    });
    Ok(out)
}

/// Distributions for randomly drawn training and test scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Inclusive range for the number of paths.
    pub path_count_range: [usize; 2],
    /// Per-path magnitude range in dB, drawn uniformly in dB.
    pub magnitude_range_db: [f64; 2],
    /// Half-open normalized delay region.
    pub delay_region: [f64; 2],
    /// Half-open normalized Doppler region.
    pub doppler_region: [f64; 2],
    pub snr_range_db: [f64; 2],
    pub seed: u64,
}

impl SceneConfig {
    /// Dataset law used for the published training set.
    pub fn reference() -> Self {
        Self {
            path_count_range: [1, 10],
            magnitude_range_db: [-30.0, 0.0],
            delay_region: [0.0, 0.025],
            doppler_region: [-0.05, 0.05],
            snr_range_db: [0.0, 50.0],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [pmin, pmax] = self.path_count_range;
        if pmin > pmax {
            return Err(Error::Validation(format!("path count range [{pmin}, {pmax}] is empty")));
        }
        let ordered = |r: [f64; 2], name: &str, strict: bool| -> Result<()> {
            let ok = r[0].is_finite() && r[1].is_finite() && if strict { r[0] < r[1] } else { r[0] <= r[1] };
            if ok {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} range {:?} is empty or non-finite", r)))
            }
        };
        ordered(self.magnitude_range_db, "magnitude", false)?;
        ordered(self.snr_range_db, "snr", false)?;
        ordered(self.delay_region, "delay", true)?;
        ordered(self.doppler_region, "doppler", true)?;
        if self.delay_region[0] < 0.0 || self.delay_region[1] > 1.0 {
            return Err(Error::Validation("delay region must lie in [0, 1)".into()));
        }
        if self.doppler_region[0] < -0.5 || self.doppler_region[1] > 0.5 {
            return Err(Error::Validation("doppler region must lie in [-0.5, 0.5)".into()));
        }
        Ok(())
    }
}

/// Draws random path parameters according to `cfg` (no noise, no snapshot).
pub fn sample_paths<T: Real>(cfg: &SceneConfig, rng: &mut Rng) -> Result<PathSet<T>> {
    cfg.validate()?;
    let p = rng.gen_range(cfg.path_count_range[0]..=cfg.path_count_range[1]);
    let mut gains = Vec::with_capacity(p);
    let mut delays = Vec::with_capacity(p);
    let mut dopplers = Vec::with_capacity(p);
    let [mlo, mhi] = cfg.magnitude_range_db;
    for _ in 0..p {
        let db: f64 = if mlo < mhi { rng.gen_range(mlo..mhi) } else { mlo };
        let mag = 10f64.powf(db / 20.0);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        gains.push(Complex::from_polar(lit::<T>(mag), lit::<T>(phase)));
        delays.push(lit::<T>(rng.gen_range(cfg.delay_region[0]..cfg.delay_region[1])));
        dopplers.push(lit::<T>(rng.gen_range(cfg.doppler_region[0]..cfg.doppler_region[1])));
    }
    // Rounding to a narrower scalar can land exactly on an open upper bound.
    let below = |x: T, hi: f64| if to_f64(x) >= hi { lit::<T>(hi).prev_down() } else { x };
    let delays = delays.into_iter().map(|x| below(x, cfg.delay_region[1])).collect();
    let dopplers = dopplers.into_iter().map(|x| below(x, cfg.doppler_region[1])).collect();
    PathSet::new(gains, delays, dopplers)
}

/// Draws a noisy snapshot with ground truth attached.
pub fn sample_random_scene<T: Real>(cfg: &SceneConfig, grid: &SamplingGrid, rng: &mut Rng) -> Result<Snapshot<T>> {
    let paths = sample_paths::<T>(cfg, rng)?;
    let [slo, shi] = cfg.snr_range_db;
    let snr = if slo < shi { rng.gen_range(slo..=shi) } else { slo };
    let clean = synthesize_channel(&paths, grid)?;
    let sigma = if paths.is_empty() { T::one() } else { sigma_for_snr(&clean, snr)? };
    let data = add_noise(&clean, sigma, rng)?;
    Ok(Snapshot::new(data, *grid, sigma)?.with_truth(paths))
}

/// Mean power `mean|S|²` of a matrix.
pub fn mean_power<T: Real>(signal: &Array2<Complex<T>>) -> T {
    let total: T = signal.iter().map(|z| z.norm_sqr()).sum();
    total / from_usize(signal.len().max(1))
}

/// Frobenius norm squared of `a - b`.
pub fn residual_power<T: Real>(a: &Array2<Complex<T>>, b: &Array2<Complex<T>>) -> T {
    let mut acc = T::zero();
    Zip::from(a).and(b).for_each(|x, y| acc += (x - y).norm_sqr());
    acc
}

trait PrevDown {
    fn prev_down(self) -> Self;
}

impl<T: Real> PrevDown for T {
    fn prev_down(self) -> Self {
        self - self.abs().max(T::min_positive_value()) * T::epsilon()
    }
}
