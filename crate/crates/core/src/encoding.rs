//! Grid-relative label encoding.
//!
//! The region of interest is mapped onto the unit square and covered by
//! `I × J` half-open cells. Each cell carries up to `C` slots of
//! `(μ, Δτ, Δα)`: an existence flag and the path position relative to the
//! cell, scaled so the centroid encodes `0.5` and the offsets span `[0, 1)`.

use std::cmp::Ordering;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::RegionOfInterest;
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::signal::PathSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGridSpec {
    /// Cells along the delay axis (`I`).
    pub rows: usize,
    /// Cells along the Doppler axis (`J`).
    pub cols: usize,
    /// Slots per cell (`C`).
    pub capacity: usize,
    pub region: RegionOfInterest,
}

impl CellGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.capacity == 0 {
            return Err(Error::Validation("cell grid dimensions and capacity must be positive".into()));
        }
        self.region.validate()
    }

    /// Largest representable model order `C·I·J`.
    pub fn max_paths(&self) -> usize {
        self.rows * self.cols * self.capacity
    }

    /// Length of the per-cell vector, `3·C`.
    pub fn depth(&self) -> usize {
        3 * self.capacity
    }

    /// Width of one cell in normalized delay units.
    pub fn cell_delay_width(&self) -> f64 {
        (self.region.delay_max - self.region.delay_min) / self.rows as f64
    }

    pub fn cell_doppler_width(&self) -> f64 {
        (self.region.doppler_max - self.region.doppler_min) / self.cols as f64
    }
}

/// Label tensor of shape `I × J × 3C`, ordered `(μ_1, Δτ_1, Δα_1, …)` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedLabel<T: Real> {
    pub tensor: Array3<T>,
}

impl<T: Real> EncodedLabel<T> {
    pub fn zeros(spec: &CellGridSpec) -> Self {
        Self { tensor: Array3::zeros((spec.rows, spec.cols, spec.depth())) }
    }

    /// Sum of all existence flags.
    pub fn model_order(&self) -> T {
        self.tensor.iter().step_by(3).copied().sum()
    }

    pub fn capacity(&self) -> usize {
        self.tensor.dim().2 / 3
    }
}

/// Delays, Dopplers and detection scores recovered from a label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodedPaths<T: Real> {
    pub delays: Vec<T>,
    pub dopplers: Vec<T>,
    pub scores: Vec<T>,
}

impl<T: Real> DecodedPaths<T> {
    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }
}

fn below_one<T: Real>(x: T) -> T {
    if x >= T::one() {
        T::one() - T::epsilon()
    } else {
        x
    }
}

/// Affine map of every path into the unit square.
pub fn normalize_params<T: Real>(paths: &PathSet<T>, region: &RegionOfInterest) -> Result<Vec<(T, T)>> {
    let d0 = lit::<T>(region.delay_min);
    let dspan = lit::<T>(region.delay_max - region.delay_min);
    let a0 = lit::<T>(region.doppler_min);
    let aspan = lit::<T>(region.doppler_max - region.doppler_min);
    paths
        .iter()
        .enumerate()
        .map(|(index, (_, tau, alpha))| {
            let (t, a) = (to_f64(tau), to_f64(alpha));
            if !region.contains(t, a) {
                return Err(Error::OutOfRegion { index, delay: t, doppler: a });
            }
            Ok((below_one((tau - d0) / dspan).max(T::zero()), below_one((alpha - a0) / aspan).max(T::zero())))
        })
        .collect()
}

/// Cell whose centroid is nearest in ℓ∞; boundaries resolve to the upper
/// cell (`floor` on half-open cells).
pub fn assign_cell<T: Real>(point: (T, T), spec: &CellGridSpec) -> (usize, usize) {
    let idx = |u: T, n: usize| -> usize {
        let f = (u * from_usize::<T>(n)).floor();
        f.to_usize().unwrap_or(0).min(n - 1)
    };
    (idx(point.0, spec.rows), idx(point.1, spec.cols))
}

/// Encodes paths into the label tensor.
pub fn encode<T: Real>(paths: &PathSet<T>, spec: &CellGridSpec) -> Result<EncodedLabel<T>> {
    spec.validate()?;
    let points = normalize_params(paths, &spec.region)?;
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); spec.rows * spec.cols];
    for (p, &pt) in points.iter().enumerate() {
        let (i, j) = assign_cell(pt, spec);
        cells[i * spec.cols + j].push(p);
    }
    let mut label = EncodedLabel::zeros(spec);
    let (ri, cj) = (from_usize::<T>(spec.rows), from_usize::<T>(spec.cols));
    for (cell, members) in cells.iter_mut().enumerate() {
        let (i, j) = (cell / spec.cols, cell % spec.cols);
        if members.len() > spec.capacity {
            return Err(Error::CellOverflow { row: i, col: j, count: members.len(), capacity: spec.capacity });
        }
        members.sort_by(|&a, &b| {
            let ga = paths.gains()[a].norm();
            let gb = paths.gains()[b].norm();
            gb.partial_cmp(&ga)
                .unwrap_or(Ordering::Equal)
                .then(points[a].0.partial_cmp(&points[b].0).unwrap_or(Ordering::Equal))
                .then(points[a].1.partial_cmp(&points[b].1).unwrap_or(Ordering::Equal))
        });
        for (slot, &p) in members.iter().enumerate() {
            let (u, v) = points[p];
            let du = below_one(u * ri - from_usize(i)).max(T::zero());
            let dv = below_one(v * cj - from_usize(j)).max(T::zero());
            label.tensor[[i, j, 3 * slot]] = T::one();
            label.tensor[[i, j, 3 * slot + 1]] = du;
            label.tensor[[i, j, 3 * slot + 2]] = dv;
        }
    }
    Ok(label)
}

/// Emits every slot with `μ ≥ δ`, strongest score first.
pub fn decode<T: Real>(label: &EncodedLabel<T>, threshold: T, spec: &CellGridSpec) -> DecodedPaths<T> {
    let (rows, cols, depth) = label.tensor.dim();
    let mut found: Vec<(T, T, T)> = Vec::new();
    let (ri, cj) = (from_usize::<T>(rows), from_usize::<T>(cols));
    let d0 = lit::<T>(spec.region.delay_min);
    let dspan = lit::<T>(spec.region.delay_max - spec.region.delay_min);
    let a0 = lit::<T>(spec.region.doppler_min);
    let aspan = lit::<T>(spec.region.doppler_max - spec.region.doppler_min);
    for i in 0..rows {
        for j in 0..cols {
            for slot in 0..depth / 3 {
                let mu = label.tensor[[i, j, 3 * slot]];
                if mu >= threshold {
                    let u = (from_usize::<T>(i) + label.tensor[[i, j, 3 * slot + 1]]) / ri;
                    let v = (from_usize::<T>(j) + label.tensor[[i, j, 3 * slot + 2]]) / cj;
                    found.push((mu, d0 + u * dspan, a0 + v * aspan));
                }
            }
        }
    }
    found.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    DecodedPaths {
        scores: found.iter().map(|f| f.0).collect(),
        delays: found.iter().map(|f| f.1).collect(),
        dopplers: found.iter().map(|f| f.2).collect(),
    }
}
