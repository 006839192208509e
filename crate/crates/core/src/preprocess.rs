//! Snapshot preprocessing: multi-window filtering, zoomed 2D DFT onto the
//! region of interest and the magnitude/phase mapping to real channels.

use ndarray::{s, Array2, Array3, Axis};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cis_cycles, from_usize, lit, Real};
use crate::signal::{SamplingGrid, Snapshot};

/// Separable taper applied before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "shape", rename_all = "lowercase")]
pub enum WindowKind {
    Rectangular,
    Hann,
    Cosine,
    /// Tapered cosine; `0` is rectangular, `1` is Hann.
    Tukey(f64),
}

impl WindowKind {
    /// `[Tukey(0.5), Cosine, Hann, Rectangular]`.
    pub fn default_set() -> Vec<WindowKind> {
        vec![WindowKind::Tukey(0.5), WindowKind::Cosine, WindowKind::Hann, WindowKind::Rectangular]
    }
}

/// Window of length `n` with unit peak.
pub fn window_1d<T: Real>(kind: WindowKind, n: usize) -> Result<Vec<T>> {
    if n < 2 {
        return Err(Error::Validation(format!("window length {n} < 2")));
    }
    let pi = std::f64::consts::PI;
    let last = (n - 1) as f64;
    let w: Vec<f64> = match kind {
        WindowKind::Rectangular => vec![1.0; n],
        WindowKind::Hann => (0..n).map(|m| 0.5 * (1.0 - (2.0 * pi * m as f64 / last).cos())).collect(),
        WindowKind::Cosine => (0..n).map(|m| (pi * m as f64 / last).sin()).collect(),
        WindowKind::Tukey(a) => {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Validation(format!("tukey shape {a} outside [0, 1]")));
            }
            if a == 0.0 {
                vec![1.0; n]
            } else {
                (0..n)
                    .map(|m| {
                        let x = m as f64 / last;
                        if x < a / 2.0 {
                            0.5 * (1.0 + (2.0 * pi / a * (x - a / 2.0)).cos())
                        } else if x > 1.0 - a / 2.0 {
                            0.5 * (1.0 + (2.0 * pi / a * (x - 1.0 + a / 2.0)).cos())
                        } else {
                            1.0
                        }
                    })
                    .collect()
            }
        }
    };
    Ok(w.into_iter().map(lit).collect())
}

/// Stacks `y ⊙ (w_f ⊗ w_t)` for every window kind.
pub fn apply_windows<T: Real>(y: &Array2<Complex<T>>, kinds: &[WindowKind]) -> Result<Array3<Complex<T>>> {
    if kinds.is_empty() {
        return Err(Error::Validation("at least one window is required".into()));
    }
    let (nf, nt) = y.dim();
    let mut out = Array3::zeros((kinds.len(), nf, nt));
    for (c, &kind) in kinds.iter().enumerate() {
        let wf = window_1d::<T>(kind, nf)?;
        let wt = window_1d::<T>(kind, nt)?;
        let mut ch = out.index_axis_mut(Axis(0), c);
        for ((k, l), v) in ch.indexed_iter_mut() {
            *v = y[[k, l]] * (wf[k] * wt[l]);
        }
    }
    Ok(out)
}

/// Delay/Doppler window evaluated by the zoomed transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionOfInterest {
    pub delay_min: f64,
    pub delay_max: f64,
    pub doppler_min: f64,
    pub doppler_max: f64,
    /// Number of delay supports.
    pub height: usize,
    /// Number of Doppler supports.
    pub width: usize,
}

impl RegionOfInterest {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.delay_min, self.delay_max, self.doppler_min, self.doppler_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.delay_min >= self.delay_max || self.doppler_min >= self.doppler_max {
            return Err(Error::Validation("region bounds must be finite with min < max".into()));
        }
        if self.delay_min < 0.0 || self.delay_max > 1.0 || self.doppler_min < -0.5 || self.doppler_max > 0.5 {
            return Err(Error::Validation("region exceeds the unambiguous delay/doppler range".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Validation("region needs at least one support per axis".into()));
        }
        Ok(())
    }

    pub fn delay_step(&self) -> f64 {
        (self.delay_max - self.delay_min) / self.height as f64
    }

    pub fn doppler_step(&self) -> f64 {
        (self.doppler_max - self.doppler_min) / self.width as f64
    }

    pub fn delay_supports<T: Real>(&self) -> Vec<T> {
        (0..self.height).map(|h| lit(self.delay_min + h as f64 * self.delay_step())).collect()
    }

    pub fn doppler_supports<T: Real>(&self) -> Vec<T> {
        (0..self.width).map(|w| lit(self.doppler_min + w as f64 * self.doppler_step())).collect()
    }

    pub fn contains(&self, delay: f64, doppler: f64) -> bool {
        (self.delay_min..self.delay_max).contains(&delay) && (self.doppler_min..self.doppler_max).contains(&doppler)
    }
}

/// Steering matrices of the zoomed transform for one grid/region pair.
#[derive(Debug, Clone)]
pub struct ZoomDft<T: Real> {
    /// `H × N_f`, entries `exp(+2jπ f̃_k τ_h)`.
    delay_steer: Array2<Complex<T>>,
    /// `N_t × W`, entries `exp(-2jπ t̃_l α_w)`.
    doppler_steer: Array2<Complex<T>>,
}

impl<T: Real> ZoomDft<T> {
    pub fn new(grid: &SamplingGrid, roi: &RegionOfInterest) -> Result<Self> {
        grid.validate()?;
        roi.validate()?;
        let fk = grid.freq_coords::<T>();
        let tl = grid.time_coords::<T>();
        let taus = roi.delay_supports::<T>();
        let alphas = roi.doppler_supports::<T>();
        Ok(Self {
            delay_steer: Array2::from_shape_fn((roi.height, grid.n_freq), |(h, k)| cis_cycles(fk[k] * taus[h])),
            doppler_steer: Array2::from_shape_fn((grid.n_time, roi.width), |(l, w)| cis_cycles(-(tl[l] * alphas[w]))),
        })
    }

    pub fn apply(&self, y: &Array2<Complex<T>>) -> Result<Array2<Complex<T>>> {
        if y.nrows() != self.delay_steer.ncols() || y.ncols() != self.doppler_steer.nrows() {
            return Err(Error::Validation(format!("input shape {:?} does not match transform", y.dim())));
        }
        Ok(self.delay_steer.dot(y).dot(&self.doppler_steer))
    }

    pub fn apply_stack(&self, yw: &Array3<Complex<T>>) -> Result<Array3<Complex<T>>> {
        let (h, w) = (self.delay_steer.nrows(), self.doppler_steer.ncols());
        let mut out = Array3::zeros((yw.len_of(Axis(0)), h, w));
        for (c, ch) in yw.axis_iter(Axis(0)).enumerate() {
            let x = self.apply(&ch.to_owned())?;
            out.slice_mut(s![c, .., ..]).assign(&x);
        }
        Ok(out)
    }
}

/// Evaluates the matched-filter correlation of every window channel with
/// single-path atoms on the region's `H × W` supports.
pub fn zoom_dft_2d<T: Real>(
    yw: &Array3<Complex<T>>,
    grid: &SamplingGrid,
    roi: &RegionOfInterest,
) -> Result<Array3<Complex<T>>> {
    ZoomDft::new(grid, roi)?.apply_stack(yw)
}

/// Real-valued network input `2·N_W × H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnInput<T: Real> {
    pub tensor: Array3<T>,
    pub window_kinds: Vec<WindowKind>,
}

const MAGNITUDE_FLOOR: f64 = 1e-12;

/// Maps each complex channel to a standardized log-magnitude channel and a
/// raw phase channel in `(-π, π]`.
pub fn to_real_channels<T: Real>(y1: &Array3<Complex<T>>, kinds: &[WindowKind]) -> CnnInput<T> {
    let (nw, h, w) = y1.dim();
    let mut tensor = Array3::zeros((2 * nw, h, w));
    let floor = lit::<T>(MAGNITUDE_FLOOR);
    let count = from_usize::<T>(h * w);
    for c in 0..nw {
        let src = y1.index_axis(Axis(0), c);
        let mut mag = src.mapv(|z| z.norm().max(floor).log10());
        let mean = mag.sum() / count;
        let var = mag.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let std = var.sqrt();
        if std > T::epsilon() * (T::one() + mean.abs()) {
            mag.mapv_inplace(|v| (v - mean) / std);
        } else {
            mag.mapv_inplace(|v| v - mean);
        }
        tensor.index_axis_mut(Axis(0), 2 * c).assign(&mag);
        let phase = src.mapv(|z| {
            let a = z.im.atan2(z.re);
            if a <= -T::PI() {
                T::PI()
            } else {
                a
            }
        });
        tensor.index_axis_mut(Axis(0), 2 * c + 1).assign(&phase);
    }
    CnnInput { tensor, window_kinds: kinds.to_vec() }
}

/// Reusable preprocessing chain for a fixed grid, region and window set.
#[derive(Debug, Clone)]
pub struct Preprocessor<T: Real> {
    pub grid: SamplingGrid,
    pub roi: RegionOfInterest,
    pub kinds: Vec<WindowKind>,
    windows: Array3<T>,
    zoom: ZoomDft<T>,
}

impl<T: Real> Preprocessor<T> {
    pub fn new(grid: SamplingGrid, roi: RegionOfInterest, kinds: Vec<WindowKind>) -> Result<Self> {
        let ones = Array2::from_elem((grid.n_freq, grid.n_time), Complex::new(T::one(), T::zero()));
        let windows = apply_windows(&ones, &kinds)?.mapv(|z| z.re);
        Ok(Self { zoom: ZoomDft::new(&grid, &roi)?, grid, roi, kinds, windows })
    }

    pub fn channels(&self) -> usize {
        2 * self.kinds.len()
    }

    pub fn run_matrix(&self, y: &Array2<Complex<T>>) -> Result<CnnInput<T>> {
        if y.dim() != (self.grid.n_freq, self.grid.n_time) {
            return Err(Error::Validation(format!("snapshot shape {:?} does not match grid", y.dim())));
        }
        let (nw, h, w) = (self.kinds.len(), self.roi.height, self.roi.width);
        let mut y1 = Array3::zeros((nw, h, w));
        for c in 0..nw {
            let win = self.windows.index_axis(Axis(0), c);
            let yw = ndarray::Zip::from(y).and(&win).map_collect(|&z, &v| z * v);
            y1.index_axis_mut(Axis(0), c).assign(&self.zoom.apply(&yw)?);
        }
        Ok(to_real_channels(&y1, &self.kinds))
    }

    pub fn run(&self, snapshot: &Snapshot<T>) -> Result<CnnInput<T>> {
        if snapshot.grid != self.grid {
            return Err(Error::Config("snapshot grid differs from preprocessing grid".into()));
        }
        self.run_matrix(&snapshot.data)
    }
}
