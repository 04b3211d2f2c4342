//! Rectangular (t, S) grids and scalar fields living on them.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::TimeGrid;

/// Time nodes × strictly increasing positive spot nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    times: TimeGrid,
    spots: Vec<f64>,
    ln_spots: Vec<f64>,
}

impl Grid2D {
    /// `n_spots` nodes equally spaced in `ln S` between `s_min` and `s_max`.
    pub fn log_spaced(times: TimeGrid, s_min: f64, s_max: f64, n_spots: usize) -> Result<Self> {
        if !(s_min > 0.0 && s_max > s_min && s_max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "spot window must satisfy 0 < s_min < s_max, got [{s_min}, {s_max}]"
            )));
        }
        if n_spots < 3 {
            return Err(Error::InvalidInput(
                "spot grid needs at least three nodes".into(),
            ));
        }
        let (lo, hi) = (s_min.ln(), s_max.ln());
        let step = (hi - lo) / (n_spots - 1) as f64;
        let mut spots: Vec<f64> = (0..n_spots).map(|j| (lo + j as f64 * step).exp()).collect();
        spots[0] = s_min;
        spots[n_spots - 1] = s_max;
        Self::from_spots(times, spots)
    }

    pub fn from_spots(times: TimeGrid, spots: Vec<f64>) -> Result<Self> {
        if spots.len() < 3 {
            return Err(Error::InvalidInput(
                "spot grid needs at least three nodes".into(),
            ));
        }
        if !(spots[0] > 0.0) || spots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "spot nodes must be positive and strictly increasing".into(),
            ));
        }
        let ln_spots = spots.iter().map(|s| s.ln()).collect();
        Ok(Self {
            times,
            spots,
            ln_spots,
        })
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn spots(&self) -> &[f64] {
        &self.spots
    }

    pub fn n_times(&self) -> usize {
        self.times.nodes().len()
    }

    pub fn n_spots(&self) -> usize {
        self.spots.len()
    }

    pub fn s_min(&self) -> f64 {
        self.spots[0]
    }

    pub fn s_max(&self) -> f64 {
        *self.spots.last().unwrap()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.spots.len() + j
    }

    pub fn contains(&self, t: f64, s: f64) -> bool {
        let tol = 1e-12 * (1.0 + self.times.maturity().abs());
        t >= self.times.start() - tol
            && t <= self.times.maturity() + tol
            && s >= self.s_min() * (1.0 - 1e-12)
            && s <= self.s_max() * (1.0 + 1e-12)
    }

    /// Cell index and fractional offset in `ln S`; `s` is clamped to the window.
    #[inline]
    pub fn locate_spot(&self, s: f64) -> (usize, f64) {
        let n = self.spots.len();
        if s <= self.spots[0] {
            return (0, 0.0);
        }
        if s >= self.spots[n - 1] {
            return (n - 2, 1.0);
        }
        let x = s.ln();
        let j = (self.spots.partition_point(|&v| v <= s) - 1).min(n - 2);
        let frac = (x - self.ln_spots[j]) / (self.ln_spots[j + 1] - self.ln_spots[j]);
        (j, frac.clamp(0.0, 1.0))
    }
}

/// One scalar per grid node, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffField {
    grid: Arc<Grid2D>,
    values: Vec<f64>,
}

impl CoeffField {
    pub fn zeros(grid: Arc<Grid2D>) -> Self {
        let n = grid.n_times() * grid.n_spots();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(grid: Arc<Grid2D>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_times() * grid.n_spots() {
            return Err(Error::InvalidInput(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.n_times() * grid.n_spots()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid2D>, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_times() * grid.n_spots());
        for &t in grid.times().nodes() {
            for &s in grid.spots() {
                values.push(f(t, s));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid2D> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.grid.n_spots();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &CoeffField, f: impl Fn(f64, f64) -> f64) -> Result<CoeffField> {
        if !Arc::ptr_eq(&self.grid, &other.grid) && *self.grid != *other.grid {
            return Err(Error::InvalidInput("fields live on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(CoeffField {
            grid: self.grid.clone(),
            values,
        })
    }

    /// `sup |self - other|`.
    pub fn sup_distance(&self, other: &CoeffField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Bilinear interpolation in `(t, ln S)`; errors outside the grid.
    pub fn interpolate(&self, t: f64, s: f64) -> Result<f64> {
        if !self.grid.contains(t, s) {
            return Err(Error::OutOfGrid(format!(
                "(t={t}, S={s}) outside [{}, {}] x [{}, {}]",
                self.grid.times().start(),
                self.grid.times().maturity(),
                self.grid.s_min(),
                self.grid.s_max()
            )));
        }
        Ok(self.interpolate_clamped(t, s))
    }

    /// Bilinear interpolation with `(t, s)` clamped onto the grid.
    #[inline]
    pub fn interpolate_clamped(&self, t: f64, s: f64) -> f64 {
        let (i, ft) = self.grid.times().locate(t);
        let (j, fs) = self.grid.locate_spot(s);
        let n = self.grid.n_spots();
        let v = &self.values;
        let k = i * n + j;
        let lo = v[k] + fs * (v[k + 1] - v[k]);
        let hi = v[k + n] + fs * (v[k + n + 1] - v[k + n]);
        lo + ft * (hi - lo)
    }
}

/// Writes fields as CSV rows `t,S,<name>...` under a versioned header line.
pub fn write_fields_csv<W: Write>(
    out: &mut W,
    header: &str,
    names: &[&str],
    fields: &[&CoeffField],
) -> Result<()> {
    let grid = fields
        .first()
        .ok_or_else(|| Error::InvalidInput("no fields to write".into()))?
        .grid();
    writeln!(out, "{header}")?;
    writeln!(out, "t,S,{}", names.join(","))?;
    for (i, &t) in grid.times().nodes().iter().enumerate() {
        for (j, &s) in grid.spots().iter().enumerate() {
            write!(out, "{t},{s}")?;
            for f in fields {
                write!(out, ",{}", f.at(i, j))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
