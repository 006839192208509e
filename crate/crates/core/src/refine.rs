//! Maximum-likelihood refinement of path parameters.
//!
//! The unknowns are packed into a real vector `θ` of length `4P` ordered
//! `(Re γ_1, Im γ_1, τ'_1, α'_1, …)`. Under white complex Gaussian noise the
//! negative log-likelihood is `λ(θ) = ‖Y − S(θ)‖²_F / σ²`, its gradient is
//! `−(2/σ²)·Re(J^H r)` and the Fisher information is `(2/σ²)·Re(J^H J)` with
//! `J = ∂vec(S)/∂θ` and `r = vec(Y − S)`. Vectorization is row-major:
//! entry `(k, l)` maps to row `k·N_t + l`.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lu_solve, solve_vec};
use crate::scalar::{lit, to_f64, wrap_half, Real};
use crate::signal::{delay_atoms, doppler_atoms, residual_power, PathSet, SamplingGrid, Snapshot};

/// Flattened real parameter vector of length `4P`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealParamVector<T: Real>(pub Array1<T>);

impl<T: Real> RealParamVector<T> {
    pub fn new(values: Array1<T>) -> Result<Self> {
        if values.len() % 4 != 0 {
            return Err(Error::Validation(format!("parameter vector length {} not divisible by 4", values.len())));
        }
        Ok(Self(values))
    }

    pub fn from_paths(paths: &PathSet<T>) -> Self {
        let mut v = Vec::with_capacity(4 * paths.len());
        for (g, tau, alpha) in paths.iter() {
            v.extend_from_slice(&[g.re, g.im, tau, alpha]);
        }
        Self(Array1::from(v))
    }

    /// Number of paths `P`.
    pub fn paths(&self) -> usize {
        self.0.len() / 4
    }

    pub fn gain(&self, p: usize) -> Complex<T> {
        Complex::new(self.0[4 * p], self.0[4 * p + 1])
    }

    pub fn delay(&self, p: usize) -> T {
        self.0[4 * p + 2]
    }

    pub fn doppler(&self, p: usize) -> T {
        self.0[4 * p + 3]
    }

    pub fn delays(&self) -> Vec<T> {
        (0..self.paths()).map(|p| self.delay(p)).collect()
    }

    pub fn dopplers(&self) -> Vec<T> {
        (0..self.paths()).map(|p| self.doppler(p)).collect()
    }

    pub fn gains(&self) -> Vec<Complex<T>> {
        (0..self.paths()).map(|p| self.gain(p)).collect()
    }

    pub fn to_paths(&self) -> Result<PathSet<T>> {
        PathSet::new(self.gains(), self.delays(), self.dopplers())
    }

    /// Clips delays into `[0, 1)` and wraps Dopplers into `[-0.5, 0.5)`.
    /// Returns whether anything moved.
    pub fn project(&mut self) -> bool {
        let mut moved = false;
        let top = T::one() - T::epsilon();
        for p in 0..self.paths() {
            let tau = self.0[4 * p + 2];
            let clipped = tau.max(T::zero()).min(top);
            let alpha = self.0[4 * p + 3];
            let wrapped = wrap_half(alpha);
            moved |= clipped != tau || wrapped != alpha;
            self.0[4 * p + 2] = clipped;
            self.0[4 * p + 3] = wrapped;
        }
        moved
    }
}

fn check_finite<T: Real>(theta: &RealParamVector<T>) -> Result<()> {
    if theta.0.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation("non-finite parameter vector".into()))
    }
}

/// Model matrix `S(θ)` without range validation.
pub fn model_signal<T: Real>(theta: &RealParamVector<T>, grid: &SamplingGrid) -> Array2<Complex<T>> {
    let a = delay_atoms(grid, &theta.delays());
    let mut b = doppler_atoms(grid, &theta.dopplers());
    for (p, mut col) in b.columns_mut().into_iter().enumerate() {
        let g = theta.gain(p);
        col.mapv_inplace(|z| z * g);
    }
    a.dot(&b.t())
}

fn sigma_checked<T: Real>(snapshot: &Snapshot<T>) -> Result<T> {
    if snapshot.noise_sigma > T::zero() {
        Ok(snapshot.noise_sigma)
    } else {
        Err(Error::Validation("noise sigma must be positive for the likelihood".into()))
    }
}

/// `‖Y − S(θ)‖²_F / σ²`.
pub fn neg_log_likelihood<T: Real>(theta: &RealParamVector<T>, snapshot: &Snapshot<T>) -> Result<T> {
    let sigma = sigma_checked(snapshot)?;
    check_finite(theta)?;
    Ok(nll_with_sigma(theta, snapshot, sigma))
}

fn nll_with_sigma<T: Real>(theta: &RealParamVector<T>, snapshot: &Snapshot<T>, sigma: T) -> T {
    residual_power(&snapshot.data, &model_signal(theta, &snapshot.grid)) / (sigma * sigma)
}

/// `∂vec(S)/∂θ`, shape `(N_f·N_t) × 4P`.
pub fn model_jacobian<T: Real>(theta: &RealParamVector<T>, grid: &SamplingGrid) -> Array2<Complex<T>> {
    let (nf, nt) = (grid.n_freq, grid.n_time);
    let a = delay_atoms(grid, &theta.delays());
    let b = doppler_atoms(grid, &theta.dopplers());
    let fk = grid.freq_coords::<T>();
    let tl = grid.time_coords::<T>();
    let two_pi = lit::<T>(2.0) * T::PI();
    let j = Complex::new(T::zero(), T::one());
    let mut jac = Array2::zeros((nf * nt, 4 * theta.paths()));
    for p in 0..theta.paths() {
        let g = theta.gain(p);
        for k in 0..nf {
            for l in 0..nt {
                let atom = a[[k, p]] * b[[l, p]];
                let row = k * nt + l;
                jac[[row, 4 * p]] = atom;
                jac[[row, 4 * p + 1]] = j * atom;
                jac[[row, 4 * p + 2]] = -j * (two_pi * fk[k]) * g * atom;
                jac[[row, 4 * p + 3]] = j * (two_pi * tl[l]) * g * atom;
            }
        }
    }
    jac
}

/// The Jacobian in factored form. Every column is `s·(u ⊗ v)` with `u` one
/// of the frequency factors `a_p`, `-2jπ f̃ ⊙ a_p` and `v` one of the time
/// factors `b_p`, `2jπ t̃ ⊙ b_p`, so inner products split into an `N_f` and an
/// `N_t` sum.
struct SeparableJacobian<T: Real> {
    /// `N_f × 2P`: `[a_1 … a_P, ∂a_1 … ∂a_P]`.
    freq: Array2<Complex<T>>,
    /// `N_t × 2P`: `[b_1 … b_P, ∂b_1 … ∂b_P]`.
    time: Array2<Complex<T>>,
    /// Per column: scalar, frequency factor index, time factor index.
    cols: Vec<(Complex<T>, usize, usize)>,
}

impl<T: Real> SeparableJacobian<T> {
    fn new(theta: &RealParamVector<T>, grid: &SamplingGrid) -> Self {
        let p = theta.paths();
        let a = delay_atoms(grid, &theta.delays());
        let b = doppler_atoms(grid, &theta.dopplers());
        let fk = grid.freq_coords::<T>();
        let tl = grid.time_coords::<T>();
        let two_pi = lit::<T>(2.0) * T::PI();
        let freq = Array2::from_shape_fn((grid.n_freq, 2 * p), |(k, c)| {
            if c < p {
                a[[k, c]]
            } else {
                a[[k, c - p]] * Complex::new(T::zero(), -two_pi * fk[k])
            }
        });
        let time = Array2::from_shape_fn((grid.n_time, 2 * p), |(l, c)| {
            if c < p {
                b[[l, c]]
            } else {
                b[[l, c - p]] * Complex::new(T::zero(), two_pi * tl[l])
            }
        });
        let (one, j) = (Complex::new(T::one(), T::zero()), Complex::new(T::zero(), T::one()));
        let mut cols = Vec::with_capacity(4 * p);
        for q in 0..p {
            let g = theta.gain(q);
            cols.extend_from_slice(&[(one, q, q), (j, q, q), (g, p + q, q), (g, q, p + q)]);
        }
        Self { freq, time, cols }
    }

    /// `Re(J^H J)`.
    fn re_gram(&self) -> Array2<T> {
        let gf = self.freq.t().mapv(|z| z.conj()).dot(&self.freq);
        let gt = self.time.t().mapv(|z| z.conj()).dot(&self.time);
        let n = self.cols.len();
        let mut out = Array2::zeros((n, n));
        for (r, &(sr, fr, tr)) in self.cols.iter().enumerate() {
            for (c, &(sc, fc, tc)) in self.cols.iter().enumerate().skip(r) {
                let v = (sr.conj() * sc * gf[[fr, fc]] * gt[[tr, tc]]).re;
                out[[r, c]] = v;
                out[[c, r]] = v;
            }
        }
        out
    }

    /// `Re(J^H vec(R))`.
    fn re_project(&self, r: &Array2<Complex<T>>) -> Array1<T> {
        let m = self.freq.t().mapv(|z| z.conj()).dot(r).dot(&self.time.mapv(|z| z.conj()));
        self.cols.iter().map(|&(s, f, t)| (s.conj() * m[[f, t]]).re).collect()
    }
}

/// `(2/σ²)·Re(J^H J)`.
pub fn fisher_information<T: Real>(theta: &RealParamVector<T>, grid: &SamplingGrid, sigma: T) -> Result<Array2<T>> {
    if !(sigma > T::zero()) {
        return Err(Error::Validation("sigma must be positive".into()));
    }
    check_finite(theta)?;
    let scale = lit::<T>(2.0) / (sigma * sigma);
    Ok(SeparableJacobian::new(theta, grid).re_gram().mapv(|v| v * scale))
}

fn residual<T: Real>(theta: &RealParamVector<T>, snapshot: &Snapshot<T>) -> Array2<Complex<T>> {
    &snapshot.data - &model_signal(theta, &snapshot.grid)
}

fn gradient_with<T: Real>(jac: &SeparableJacobian<T>, theta: &RealParamVector<T>, snapshot: &Snapshot<T>, sigma: T) -> Array1<T> {
    let scale = lit::<T>(-2.0) / (sigma * sigma);
    jac.re_project(&residual(theta, snapshot)).mapv(|v| v * scale)
}

/// `∇λ = −(2/σ²)·Re(J^H vec(Y − S(θ)))`.
pub fn nll_gradient<T: Real>(theta: &RealParamVector<T>, snapshot: &Snapshot<T>) -> Result<Array1<T>> {
    let sigma = sigma_checked(snapshot)?;
    check_finite(theta)?;
    Ok(gradient_with(&SeparableJacobian::new(theta, &snapshot.grid), theta, snapshot, sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnConfig {
    pub max_iters: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo_c: f64,
    pub step_shrink: f64,
    pub max_backtracks: usize,
    /// Initial Levenberg damping on `diag(F)`.
    pub damping: f64,
    /// Stop once the Newton direction is shorter than this.
    pub tol: f64,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self { max_iters: 10, armijo_c: 1e-4, step_shrink: 0.5, max_backtracks: 20, damping: 0.0, tol: 1e-12 }
    }
}

impl GnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::Config(format!("armijo_c {} outside (0, 1)", self.armijo_c)));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::Config(format!("step_shrink {} outside (0, 1)", self.step_shrink)));
        }
        if !(self.damping >= 0.0) || !(self.tol >= 0.0) {
            return Err(Error::Config("damping and tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnIterate {
    pub iter: usize,
    pub lambda: f64,
    pub step_size: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct GnResult<T: Real> {
    pub theta: RealParamVector<T>,
    /// Entry 0 is the starting point; every later entry is an accepted step.
    pub trace: Vec<GnIterate>,
    pub converged: bool,
    /// Set when a step had to be clipped or wrapped back into range.
    pub range_adjusted: bool,
}

impl<T: Real> GnResult<T> {
    /// Number of accepted steps.
    pub fn steps(&self) -> usize {
        self.trace.len() - 1
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,lambda,step_size,grad_norm\n");
        for it in &self.trace {
            let _ = writeln!(s, "{},{:e},{:e},{:e}", it.iter, it.lambda, it.step_size, it.grad_norm);
        }
        s
    }
}

const MAX_DAMPING: f64 = 1e6;

/// Sigma used by refinement: the snapshot's when known, otherwise 1 (the
/// minimizer does not depend on the scale of λ).
fn working_sigma<T: Real>(snapshot: &Snapshot<T>) -> T {
    if snapshot.noise_sigma > T::zero() {
        snapshot.noise_sigma
    } else {
        T::one()
    }
}

fn norm<T: Real>(v: &Array1<T>) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Damped Gauss-Newton iteration `θ ← θ − ε·(F + μ·diag F)^{-1}·∇λ` with an
/// Armijo backtracking step size.
pub fn gauss_newton_refine<T: Real>(theta0: &RealParamVector<T>, snapshot: &Snapshot<T>, cfg: &GnConfig) -> Result<GnResult<T>> {
    cfg.validate()?;
    if theta0.paths() == 0 {
        return Err(Error::Validation("refinement needs at least one path".into()));
    }
    check_finite(theta0)?;
    let sigma = working_sigma(snapshot);
    let mut theta = theta0.clone();
    let mut range_adjusted = theta.project();
    let mut lambda = nll_with_sigma(&theta, snapshot, sigma);
    let mut trace = vec![GnIterate { iter: 0, lambda: to_f64(lambda), step_size: 0.0, grad_norm: f64::NAN }];
    let mut converged = false;
    let scale = lit::<T>(2.0) / (sigma * sigma);
    for iter in 1..=cfg.max_iters {
        let jac = SeparableJacobian::new(&theta, &snapshot.grid);
        let grad = gradient_with(&jac, &theta, snapshot, sigma);
        let fisher = jac.re_gram().mapv(|v| v * scale);
        if iter == 1 {
            trace[0].grad_norm = to_f64(norm(&grad));
        }
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at iteration {iter}")));
        }
        let z = damped_direction(&fisher, &grad, cfg.damping)?;
        if to_f64(norm(&z)) <= cfg.tol {
            converged = true;
            break;
        }
        let slope = grad.dot(&z);
        if !(slope > T::zero()) {
            converged = true;
            break;
        }
        let mut eps = T::one();
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let mut cand = RealParamVector(&theta.0 - &z.mapv(|v| v * eps));
            let moved = cand.project();
            let lam = nll_with_sigma(&cand, snapshot, sigma);
            if lam.is_finite() && lam <= lambda - lit::<T>(cfg.armijo_c) * eps * slope {
                accepted = Some((cand, lam, moved));
                break;
            }
            eps *= lit::<T>(cfg.step_shrink);
        }
        let Some((cand, lam, moved)) = accepted else {
            converged = true;
            break;
        };
        range_adjusted |= moved;
        theta = cand;
        lambda = lam;
        let g_next = nll_gradient_sigma(&theta, snapshot, sigma);
        trace.push(GnIterate { iter, lambda: to_f64(lambda), step_size: to_f64(eps), grad_norm: to_f64(norm(&g_next)) });
    }
    Ok(GnResult { theta, trace, converged, range_adjusted })
}

fn nll_gradient_sigma<T: Real>(theta: &RealParamVector<T>, snapshot: &Snapshot<T>, sigma: T) -> Array1<T> {
    gradient_with(&SeparableJacobian::new(theta, &snapshot.grid), theta, snapshot, sigma)
}

fn damped_direction<T: Real>(fisher: &Array2<T>, grad: &Array1<T>, damping: f64) -> Result<Array1<T>> {
    let mut mu = damping;
    loop {
        let mut a = fisher.clone();
        for i in 0..a.nrows() {
            a[[i, i]] += lit::<T>(mu) * fisher[[i, i]];
        }
        match solve_vec(&a, grad, T::epsilon() * lit(16.0)) {
            Ok(z) if z.iter().all(|v| v.is_finite()) => return Ok(z),
            _ => {
                mu = if mu == 0.0 { 1e-9 } else { mu * 10.0 };
                if mu > MAX_DAMPING {
                    return Err(Error::Numerical(
                        "Fisher information stays singular under maximal damping; check for zero gains or coincident paths".into(),
                    ));
                }
            }
        }
    }
}

/// Least-squares (BLUE) gains for fixed delays/Dopplers and the residual power.
pub fn blue_gains<T: Real>(taus: &[T], alphas: &[T], snapshot: &Snapshot<T>) -> Result<(Vec<Complex<T>>, T)> {
    if taus.len() != alphas.len() {
        return Err(Error::Validation("delay and doppler lists differ in length".into()));
    }
    let p = taus.len();
    if p == 0 {
        return Err(Error::Validation("BLUE needs at least one path".into()));
    }
    let grid = &snapshot.grid;
    let a = delay_atoms(grid, taus);
    let b = doppler_atoms(grid, alphas);
    let ah = a.t().mapv(|z| z.conj());
    let bh = b.t().mapv(|z| z.conj());
    // Separable Gram matrix: <atom_p, atom_q> = (a_p^H a_q)(b_p^H b_q).
    let gram = &ah.dot(&a) * &bh.dot(&b);
    for i in 0..p {
        for j in i + 1..p {
            let c = gram[[i, j]].norm() / (gram[[i, i]].re * gram[[j, j]].re).sqrt();
            if c > T::one() - lit(1e-9) {
                return Err(Error::RankDeficient { first: i, second: j });
            }
        }
    }
    let proj = ah.dot(&snapshot.data).dot(&b.mapv(|z| z.conj()));
    let rhs = Array2::from_shape_fn((p, 1), |(i, _)| proj[[i, i]]);
    let gains = lu_solve(&gram, &rhs, lit(1e-13)).map_err(|_| Error::RankDeficient { first: 0, second: p.saturating_sub(1) })?;
    let gains: Vec<Complex<T>> = gains.column(0).to_vec();
    let mut theta = Vec::with_capacity(4 * p);
    for i in 0..p {
        theta.extend_from_slice(&[gains[i].re, gains[i].im, taus[i], alphas[i]]);
    }
    let fit = model_signal(&RealParamVector(Array1::from(theta)), grid);
    Ok((gains, residual_power(&snapshot.data, &fit)))
}

/// Noise level estimate `σ̂² = RSS / (N_f·N_t − P)`.
pub fn estimate_sigma<T: Real>(residual: T, samples: usize, paths: usize) -> T {
    let dof = samples.saturating_sub(paths).max(1);
    (residual / lit::<T>(dof as f64)).sqrt()
}

/// Full refinement chain from delay/Doppler initial guesses: BLUE gains,
/// then Gauss-Newton, returning the refined paths.
pub fn refine_from_init<T: Real>(taus: &[T], alphas: &[T], snapshot: &Snapshot<T>, cfg: &GnConfig) -> Result<(PathSet<T>, GnResult<T>)> {
    let (gains, _) = blue_gains(taus, alphas, snapshot)?;
    let mut theta = Vec::with_capacity(4 * taus.len());
    for p in 0..taus.len() {
        theta.extend_from_slice(&[gains[p].re, gains[p].im, taus[p], alphas[p]]);
    }
    let result = gauss_newton_refine(&RealParamVector(Array1::from(theta)), snapshot, cfg)?;
    Ok((result.theta.to_paths()?, result))
}
