//! Streaming tail measurement: exceedance counts on a fixed log-spaced grid,
//! a least-squares log-log slope fit, and a Hill estimator over a top-m reservoir.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_GRID_MIN: f64 = 1.0;
pub const DEFAULT_GRID_MAX: f64 = 2e6;
pub const DEFAULT_GRID_POINTS: usize = 200;
pub const DEFAULT_FIT_WINDOW: (f64, f64) = (1e2, 1e5);
pub const DEFAULT_MIN_COUNT: u64 = 100;
pub const DEFAULT_RESERVOIR: usize = 100_000;
pub const HILL_MIN_ORDER: usize = 10;
/// Hill `γ` below this is reported as "no heavy tail detected".
pub const HILL_HEAVY_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailGrid {
    points: Vec<f64>,
}

impl TailGrid {
    pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        if !(min > 0.0 && max > min && count >= 2) {
            return Err(Error::config(format!("bad grid: min={min} max={max} points={count}")));
        }
        let ratio = (max / min).ln();
        let points = (0..count)
            .map(|g| if g + 1 == count { max } else { min * (ratio * g as f64 / (count - 1) as f64).exp() })
            .collect();
        Ok(TailGrid { points })
    }

    /// Grid from explicit increasing thresholds.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("grid points must be strictly increasing"));
        }
        Ok(TailGrid { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl Default for TailGrid {
    fn default() -> Self {
        TailGrid::log_spaced(DEFAULT_GRID_MIN, DEFAULT_GRID_MAX, DEFAULT_GRID_POINTS).expect("static grid")
    }
}

/// Exceedance counter `c_g = #{values > x_g}`.
///
/// Internally a histogram over the grid cells; the cumulative counts are
/// formed on read so recording costs one binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct TailCounter {
    grid: TailGrid,
    // cells[p] = number of values exceeding exactly the first p grid points
    cells: Vec<u64>,
    total: u64,
}

impl TailCounter {
    pub fn new(grid: TailGrid) -> Self {
        let cells = vec![0; grid.len() + 1];
        TailCounter { grid, cells, total: 0 }
    }

    pub fn grid(&self) -> &TailGrid {
        &self.grid
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    #[inline]
    pub fn record(&mut self, value: f64) -> Result<()> {
        if !(value >= 0.0) {
            return Err(Error::domain(format!("tail counter takes values >= 0, got {value}")));
        }
        let p = self.grid.points.partition_point(|&x| x < value);
        self.cells[p] += 1;
        self.total += 1;
        Ok(())
    }

    pub fn counts(&self) -> Vec<u64> {
        let g = self.grid.len();
        let mut out = vec![0; g];
        let mut acc = 0;
        for idx in (0..g).rev() {
            acc += self.cells[idx + 1];
            out[idx] = acc;
        }
        out
    }

    pub fn merge(&mut self, other: &TailCounter) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::config("cannot merge counters over different grids"));
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    pub fn ccdf(&self) -> Vec<CcdfPoint> {
        if self.total == 0 {
            return Vec::new();
        }
        let n = self.total as f64;
        self.grid
            .points
            .iter()
            .zip(self.counts())
            .map(|(&x, count)| {
                let p = count as f64 / n;
                CcdfPoint { x, p, stderr: (p * (1.0 - p) / n).sqrt(), count }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CcdfPoint {
    pub x: f64,
    pub p: f64,
    pub stderr: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
    pub x_lo: f64,
    pub x_hi: f64,
}

/// Least-squares slope of `log10 p` against `log10 x` over grid points in
/// `[lo, hi]` that carry at least `min_count` exceedances.
pub fn fit_tail_slope(ccdf: &[CcdfPoint], window: (f64, f64), min_count: u64) -> Result<SlopeFit> {
    let (lo, hi) = window;
    let pts: Vec<(f64, f64, f64)> = ccdf
        .iter()
        .filter(|c| c.x >= lo && c.x <= hi && c.count >= min_count && c.p > 0.0)
        .map(|c| (c.x.log10(), c.p.log10(), c.x))
        .collect();
    if pts.len() < 5 {
        return Err(Error::Estimation(format!(
            "only {} grid points in [{lo}, {hi}] with count >= {min_count}; need 5",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(SlopeFit {
        slope,
        stderr,
        points: pts.len(),
        x_lo: pts.first().map(|p| p.2).unwrap_or(lo),
        x_hi: pts.last().map(|p| p.2).unwrap_or(hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ordered(f64);

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Keeps the `capacity` largest observations seen.
#[derive(Debug, Clone)]
pub struct TopReservoir {
    capacity: usize,
    heap: BinaryHeap<Reverse<Ordered>>,
}

impl TopReservoir {
    pub fn new(capacity: usize) -> Self {
        TopReservoir { capacity, heap: BinaryHeap::with_capacity(capacity.min(1 << 20) + 1) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    #[inline]
    pub fn offer(&mut self, value: f64) {
        if self.capacity == 0 {
            return;
        }
        if self.heap.len() < self.capacity {
            self.heap.push(Reverse(Ordered(value)));
        } else if let Some(Reverse(Ordered(min))) = self.heap.peek() {
            if value > *min {
                self.heap.pop();
                self.heap.push(Reverse(Ordered(value)));
            }
        }
    }

    pub fn merge(&mut self, other: &TopReservoir) {
        for Reverse(Ordered(v)) in other.heap.iter() {
            self.offer(*v);
        }
    }

    /// Largest first.
    pub fn sorted_desc(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.heap.iter().map(|r| r.0 .0).collect();
        v.sort_unstable_by(|a, b| b.total_cmp(a));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HillEstimate {
    /// Extreme-value index `γ = (1/k) Σ ln(X_(i) / X_(k+1))`.
    pub gamma: f64,
    /// Tail exponent `-1/γ`, comparable with slope fits.
    pub index: f64,
    pub k_order: usize,
    pub heavy_tail: bool,
}

/// Hill estimate from the `k_order` largest observations of a descending sample.
pub fn hill_estimate(desc: &[f64], k_order: usize) -> Result<HillEstimate> {
    if k_order < HILL_MIN_ORDER {
        return Err(Error::Estimation(format!("Hill order {k_order} below floor {HILL_MIN_ORDER}")));
    }
    if k_order >= desc.len() {
        return Err(Error::Estimation(format!(
            "Hill order {k_order} needs more than {} retained observations",
            desc.len()
        )));
    }
    let threshold = desc[k_order];
    if !(threshold > 0.0) {
        return Err(Error::Estimation("Hill threshold must be positive".into()));
    }
    let gamma = desc[..k_order].iter().map(|&x| (x / threshold).ln()).sum::<f64>() / k_order as f64;
    Ok(HillEstimate {
        gamma,
        index: if gamma > 0.0 { -1.0 / gamma } else { f64::NEG_INFINITY },
        k_order,
        heavy_tail: gamma >= HILL_HEAVY_THRESHOLD,
    })
}
