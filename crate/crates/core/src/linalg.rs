//! Small dense solvers for the Fisher and normal-equation systems.

use ndarray::{Array1, Array2};
use num_complex::Complex;
use num_traits::{NumAssign, Zero};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Element type supported by [`lu_solve`].
pub trait Pivot: Copy + NumAssign + Zero {
    type Mag: Real;
    fn magnitude(&self) -> Self::Mag;
}

impl<T: Real> Pivot for T {
    type Mag = T;
    fn magnitude(&self) -> T {
        self.abs()
    }
}

impl<T: Real> Pivot for Complex<T> {
    type Mag = T;
    fn magnitude(&self) -> T {
        self.norm()
    }
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
///
/// Fails with [`Error::Singular`] when a pivot falls below
/// `rel_tol · max|A|`.
pub fn lu_solve<S: Pivot>(a: &Array2<S>, b: &Array2<S>, rel_tol: S::Mag) -> Result<Array2<S>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Validation(format!("lu_solve shape mismatch {:?} / {:?}", a.dim(), b.dim())));
    }
    let mut m = a.clone();
    let mut x = b.clone();
    let scale = m.iter().map(|v| v.magnitude()).fold(S::Mag::zero(), num_traits::Float::max);
    if n > 0 && !(scale > S::Mag::zero()) {
        return Err(Error::Singular("zero matrix".into()));
    }
    let tol = scale * rel_tol;
    for col in 0..n {
        let (piv, best) = (col..n)
            .map(|r| (r, m[[r, col]].magnitude()))
            .fold((col, -<S::Mag as num_traits::One>::one()), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if !(best > tol) {
            return Err(Error::Singular(format!("pivot {col} below tolerance")));
        }
        if piv != col {
            for c in 0..n {
                m.swap([piv, c], [col, c]);
            }
            for c in 0..x.ncols() {
                x.swap([piv, c], [col, c]);
            }
        }
        let p = m[[col, col]];
        for r in col + 1..n {
            let f = m[[r, col]] / p;
            if f.is_zero() {
                continue;
            }
            for c in col..n {
                let v = m[[col, c]];
                m[[r, c]] -= f * v;
            }
            for c in 0..x.ncols() {
                let v = x[[col, c]];
                x[[r, c]] -= f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let p = m[[col, col]];
        for c in 0..x.ncols() {
            let mut acc = x[[col, c]];
            for k in col + 1..n {
                acc -= m[[col, k]] * x[[k, c]];
            }
            x[[col, c]] = acc / p;
        }
    }
    Ok(x)
}

pub fn solve_vec<S: Pivot>(a: &Array2<S>, b: &Array1<S>, rel_tol: S::Mag) -> Result<Array1<S>> {
    let n = b.len();
    let bm = b.clone().into_shape_with_order((n, 1)).expect("column");
    Ok(lu_solve(a, &bm, rel_tol)?.into_shape_with_order(n).expect("vector"))
}

pub fn inverse<S: Pivot>(a: &Array2<S>, rel_tol: S::Mag) -> Result<Array2<S>> {
    let n = a.nrows();
    let mut eye = Array2::zeros((n, n));
    for i in 0..n {
        eye[[i, i]] = S::one();
    }
    lu_solve(a, &eye, rel_tol)
}

/// `A^H A` for a complex matrix.
pub fn gram<T: Real>(a: &Array2<Complex<T>>) -> Array2<Complex<T>> {
    let ah = a.t().mapv(|z| z.conj());
    ah.dot(a)
}
