//! Right-continuous step functions of one and two time arguments over a
//! shared sorted event grid.
//!
//! Every curve produced by the estimators lives on an [`EventGrid`]: the
//! value stored at index `m` is the value on `[t_m, t_{m+1})`. Integrals
//! against such curves are finite sums of left-limit values times jumps, so
//! they are exact.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Sorted, strictly increasing time points starting at zero.
#[derive(Debug, Clone)]
pub struct EventGrid {
    times: Arc<[f64]>,
}

impl PartialEq for EventGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.times, &other.times) || self.times[..] == other.times[..]
    }
}

impl EventGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("event grid must contain t = 0"));
        }
        if times[0] != 0.0 {
            return Err(Error::invalid(format!(
                "event grid must start at 0, got {}",
                times[0]
            )));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::invalid(format!(
                    "event grid not strictly increasing and finite at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self {
            times: times.into(),
        })
    }

    /// Builds the grid `{0} ∪ {points in (0, horizon)} ∪ {horizon}`.
    ///
    /// Points outside `(0, horizon]` are dropped; duplicates merge into one
    /// grid point.
    pub fn from_points(points: impl IntoIterator<Item = f64>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let mut times: Vec<f64> = points
            .into_iter()
            .filter(|t| *t > 0.0 && *t <= horizon)
            .collect();
        times.push(0.0);
        times.push(horizon);
        times.sort_by(f64::total_cmp);
        times.dedup();
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn time(&self, m: usize) -> f64 {
        self.times[m]
    }

    /// Index of a grid point equal to `t`, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|x| x.total_cmp(&t)).ok()
    }

    /// Largest index `m` with `t_m <= t`.
    pub fn locate(&self, t: f64) -> Result<usize> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::OutOfRange(format!("time {t} before grid start")));
        }
        Ok(self.times.partition_point(|x| *x <= t) - 1)
    }

    /// Grid with the additional points inserted (same horizon).
    pub fn refined(&self, extra: impl IntoIterator<Item = f64>) -> Result<Self> {
        let horizon = self.horizon();
        Self::from_points(self.times.iter().copied().chain(extra), horizon)
    }

    pub(crate) fn check_same(&self, other: &EventGrid, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: grids of length {} and {} differ",
                self.len(),
                other.len()
            )))
        }
    }
}

/// Càdlàg step function on an [`EventGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Step1D {
    grid: EventGrid,
    values: Vec<f64>,
}

impl Step1D {
    pub fn new(grid: EventGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: EventGrid, value: f64) -> Self {
        let values = vec![value; grid.len()];
        Self { grid, values }
    }

    pub fn zeros(grid: EventGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Cumulative function `f(t_m) = Σ_{i ≤ m} increments[i]`.
    pub fn from_increments(grid: EventGrid, increments: &[f64]) -> Result<Self> {
        let mut acc = 0.0;
        let values = increments
            .iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &EventGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, m: usize) -> f64 {
        self.values[m]
    }

    /// Value at the largest grid point `<= t`.
    pub fn at(&self, t: f64) -> Result<f64> {
        Ok(self.values[self.grid.locate(t)?])
    }

    /// `f(t_m-)`; at `t_0 = 0` the left limit is taken to be `f(0)`.
    pub fn left_limit(&self, m: usize) -> f64 {
        self.values[m.saturating_sub(1)]
    }

    /// Jump `f(t_m) - f(t_m-)`; zero at `t_0`.
    pub fn increment(&self, m: usize) -> f64 {
        if m == 0 {
            0.0
        } else {
            self.values[m] - self.values[m - 1]
        }
    }

    pub fn increments(&self) -> Vec<f64> {
        (0..self.values.len()).map(|m| self.increment(m)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    /// `a * self + b * other` on a common grid.
    pub fn linear_combination(&self, a: f64, other: &Step1D, b: f64) -> Result<Self> {
        self.grid.check_same(&other.grid, "linear combination")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            values,
        })
    }

    pub fn sup_norm_diff(&self, other: &Step1D) -> Result<f64> {
        self.grid.check_same(&other.grid, "sup distance")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "value"])?;
        for (t, v) in self.grid.times().iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Σ_m integrand(t_m-) · Δintegrator(t_m)` over `(0, horizon]`.
pub fn stieltjes_integrate(integrand: &Step1D, integrator: &Step1D) -> Result<f64> {
    integrand
        .grid
        .check_same(&integrator.grid, "stieltjes_integrate")?;
    Ok((1..integrand.values.len())
        .map(|m| integrand.left_limit(m) * integrator.increment(m))
        .sum())
}

/// Running version of [`stieltjes_integrate`]: `t ↦ ∫_(0,t] integrand(s-) integrator(ds)`.
pub fn stieltjes_curve(integrand: &Step1D, integrator: &Step1D) -> Result<Step1D> {
    integrand
        .grid
        .check_same(&integrator.grid, "stieltjes_curve")?;
    let incs: Vec<f64> = (0..integrand.values.len())
        .map(|m| integrand.left_limit(m) * integrator.increment(m))
        .collect();
    Step1D::from_increments(integrand.grid.clone(), &incs)
}

/// Step function of two time arguments stored densely over a product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Step2D {
    grid1: EventGrid,
    grid2: EventGrid,
    values: Vec<f64>,
}

impl Step2D {
    pub fn new(grid1: EventGrid, grid2: EventGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid1.len() * grid2.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid1.len(),
                grid2.len()
            )));
        }
        Ok(Self {
            grid1,
            grid2,
            values,
        })
    }

    pub fn zeros(grid1: EventGrid, grid2: EventGrid) -> Self {
        let values = vec![0.0; grid1.len() * grid2.len()];
        Self {
            grid1,
            grid2,
            values,
        }
    }

    /// Evaluates `f(t1_i, t2_j)` for every grid index pair.
    pub fn from_fn(grid1: EventGrid, grid2: EventGrid, f: impl Fn(usize, usize) -> f64) -> Self {
        let n2 = grid2.len();
        let values = (0..grid1.len() * n2).map(|k| f(k / n2, k % n2)).collect();
        Self {
            grid1,
            grid2,
            values,
        }
    }

    pub fn grid1(&self) -> &EventGrid {
        &self.grid1
    }

    pub fn grid2(&self) -> &EventGrid {
        &self.grid2
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.grid1.len(), self.grid2.len())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid2.len() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n2 = self.grid2.len();
        self.values[i * n2 + j] = v;
    }

    pub fn at(&self, t1: f64, t2: f64) -> Result<f64> {
        Ok(self.value(self.grid1.locate(t1)?, self.grid2.locate(t2)?))
    }

    pub fn sup_norm_diff(&self, other: &Step2D) -> Result<f64> {
        self.grid1.check_same(&other.grid1, "sup distance")?;
        self.grid2.check_same(&other.grid2, "sup distance")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t1", "t2", "value"])?;
        let (n1, n2) = self.shape();
        for i in 0..n1 {
            for j in 0..n2 {
                w.write_record([
                    self.grid1.time(i).to_string(),
                    self.grid2.time(j).to_string(),
                    self.value(i, j).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Rectangular increment of `f` over the cell `[t_{m1}, t_{m1+1}] × [t_{m2}, t_{m2+1}]`.
pub fn increment_2d(f: &Step2D, cell: (usize, usize)) -> Result<f64> {
    let (m1, m2) = cell;
    let (n1, n2) = f.shape();
    if m1 + 1 >= n1 || m2 + 1 >= n2 {
        return Err(Error::OutOfRange(format!(
            "cell ({m1}, {m2}) outside a {n1}x{n2} grid"
        )));
    }
    Ok(f.value(m1 + 1, m2 + 1) - f.value(m1 + 1, m2) - f.value(m1, m2 + 1) + f.value(m1, m2))
}
