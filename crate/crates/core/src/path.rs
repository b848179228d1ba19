//! Sampled paths and the hitting-time functionals on them.
//!
//! A [`SamplePath`] is a finite list of `(time, vector)` samples. Integer
//! trajectories are cadlag and piecewise constant between samples; grid paths
//! of the limiting equations are read at their grid points, so hitting times
//! on them are grid-resolved.

use crate::error::{ensure, Result};

pub trait SamplePath {
    /// Number of coordinates per sample.
    fn dim(&self) -> usize;
    /// Number of samples.
    fn len(&self) -> usize;
    fn time(&self, i: usize) -> f64;
    fn value(&self, i: usize, coord: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the last sample at or before `t`, `None` if `t` precedes the path.
    fn index_at(&self, t: f64) -> Option<usize> {
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.time(mid) <= t {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo.checked_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// First time the coordinate is `<= threshold`.
    DownTo,
    /// First time the coordinate is `>= threshold`.
    UpTo,
}

fn check_coord<P: SamplePath + ?Sized>(path: &P, coord: usize) -> Result<()> {
    ensure(!path.is_empty(), || "path has no samples".into())?;
    ensure(coord < path.dim(), || {
        format!("coordinate {coord} out of range for dimension {}", path.dim())
    })
}

/// First sample time at which `coord` reaches `threshold` in the given
/// direction; `f64::INFINITY` if it never does on the observed samples.
pub fn hitting_time<P: SamplePath + ?Sized>(
    path: &P,
    coord: usize,
    threshold: f64,
    direction: Direction,
) -> Result<f64> {
    check_coord(path, coord)?;
    let hit = (0..path.len()).find(|&i| {
        let v = path.value(i, coord);
        match direction {
            Direction::DownTo => v <= threshold,
            Direction::UpTo => v >= threshold,
        }
    });
    Ok(hit.map_or(f64::INFINITY, |i| path.time(i)))
}

/// First time the coordinate equals zero.
pub fn extinction_time<P: SamplePath + ?Sized>(path: &P, coord: usize) -> Result<f64> {
    hitting_time(path, coord, 0.0, Direction::DownTo)
}

/// Last exit from the positive half-line, `sup { t : f(t) > 0 }`.
///
/// Returns `f64::INFINITY` if the coordinate is still positive at the last
/// sample, and `0.0` if it is never positive.
pub fn last_positive_time<P: SamplePath + ?Sized>(path: &P, coord: usize) -> Result<f64> {
    check_coord(path, coord)?;
    let last = path.len() - 1;
    match (0..path.len()).rev().find(|&i| path.value(i, coord) > 0.0) {
        None => Ok(0.0),
        Some(i) if i == last => Ok(f64::INFINITY),
        Some(i) => Ok(path.time(i + 1)),
    }
}

/// A plain uniform-grid real path, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub times: Vec<f64>,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl GridPath {
    pub fn new(times: Vec<f64>, dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(times.len() * dim, values.len());
        Self { times, dim, values }
    }

    pub fn from_fn(times: Vec<f64>, f: impl Fn(f64) -> f64) -> Self {
        let values = times.iter().map(|&t| f(t)).collect();
        Self {
            times,
            dim: 1,
            values,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

impl SamplePath for GridPath {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.times.len()
    }
    fn time(&self, i: usize) -> f64 {
        self.times[i]
    }
    fn value(&self, i: usize, coord: usize) -> f64 {
        self.values[i * self.dim + coord]
    }
}
