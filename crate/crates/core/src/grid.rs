//! The pixel lattice, point patterns and their binned counts.
//!
//! Every raster in the crate is flattened row-major with the axis-1 index
//! fastest: pixel `(i1, i2)` lives at `i2 * n1 + i1`. The x coordinate runs
//! along axis 1 and the y coordinate along axis 2.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SlemError};

/// A regular `n1 x n2` partition of a rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecFields", deny_unknown_fields)]
pub struct GridSpec {
    n1: usize,
    n2: usize,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpecFields {
    n1: usize,
    n2: usize,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl TryFrom<GridSpecFields> for GridSpec {
    type Error = SlemError;

    fn try_from(f: GridSpecFields) -> Result<Self> {
        GridSpec::new(f.n1, f.n2, f.x_min, f.x_max, f.y_min, f.y_max)
    }
}

impl GridSpec {
    pub fn new(n1: usize, n2: usize, x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(SlemError::InvalidGrid(format!(
                "pixel counts must be positive, got {n1}x{n2}"
            )));
        }
        let bounds = [x_min, x_max, y_min, y_max];
        if bounds.iter().any(|b| !b.is_finite()) {
            return Err(SlemError::InvalidGrid("domain bounds must be finite".into()));
        }
        if x_max <= x_min || y_max <= y_min {
            return Err(SlemError::InvalidGrid(format!(
                "empty domain [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(GridSpec {
            n1,
            n2,
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    /// Grid of unit pixels covering `[0, n1] x [0, n2]`, so that `Δ = 1`.
    pub fn unit(n1: usize, n2: usize) -> Result<Self> {
        GridSpec::new(n1, n2, 0.0, n1 as f64, 0.0, n2 as f64)
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.x_min, self.x_max, self.y_min, self.y_max)
    }

    pub fn pixel_width(&self) -> f64 {
        (self.x_max - self.x_min) / self.n1 as f64
    }

    pub fn pixel_height(&self) -> f64 {
        (self.y_max - self.y_min) / self.n2 as f64
    }

    /// Pixel area Δ, constant over the regular grid.
    pub fn pixel_area(&self) -> f64 {
        self.pixel_width() * self.pixel_height()
    }

    /// Δ broadcast to one entry per pixel.
    pub fn delta(&self) -> Vec<f64> {
        vec![self.pixel_area(); self.len()]
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i2 * self.n1 + i1
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.n1, index / self.n1)
    }

    pub fn centroid(&self, index: usize) -> (f64, f64) {
        let (i1, i2) = self.coords(index);
        (
            self.x_min + (i1 as f64 + 0.5) * self.pixel_width(),
            self.y_min + (i2 as f64 + 0.5) * self.pixel_height(),
        )
    }

    /// Pixel index along one axis for a coordinate known to lie in `[lo, hi]`.
    ///
    /// Pixels are closed on their low edge; the domain's high edge belongs to
    /// the last pixel.
    fn axis_cell(coord: f64, lo: f64, hi: f64, cells: usize) -> usize {
        let width = (hi - lo) / cells as f64;
        let edge = |i: usize| lo + i as f64 * width;
        let mut i = (((coord - lo) / width).floor().max(0.0) as usize).min(cells - 1);
        // Agree with the edge coordinates exactly when the division rounds.
        if i + 1 < cells && coord >= edge(i + 1) {
            i += 1;
        } else if i > 0 && coord < edge(i) {
            i -= 1;
        }
        i
    }

    /// Pixel containing `(x, y)`, or `None` when the point is outside the domain.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        if !(x.is_finite() && y.is_finite()) {
            return None;
        }
        if x < self.x_min || x > self.x_max || y < self.y_min || y > self.y_max {
            return None;
        }
        let i1 = Self::axis_cell(x, self.x_min, self.x_max, self.n1);
        let i2 = Self::axis_cell(y, self.y_min, self.y_max, self.n2);
        Some(self.index(i1, i2))
    }
}

/// An ordered list of event locations in domain coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointPattern {
    pub points: Vec<(f64, f64)>,
}

impl PointPattern {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        PointPattern { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// One point at the centroid of pixel `i` for every count `Y_i`.
    ///
    /// Binning the result onto `grid` reproduces `counts` exactly.
    pub fn from_counts(counts: &CountGrid, grid: &GridSpec) -> Result<Self> {
        counts.check_grid(grid)?;
        let mut points = Vec::with_capacity(counts.total() as usize);
        for (i, &c) in counts.values().iter().enumerate() {
            let centroid = grid.centroid(i);
            points.extend(std::iter::repeat_n(centroid, c as usize));
        }
        Ok(PointPattern { points })
    }
}

/// Non-negative event counts per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountGrid {
    n1: usize,
    n2: usize,
    values: Vec<u64>,
}

impl CountGrid {
    pub fn new(n1: usize, n2: usize, values: Vec<u64>) -> Result<Self> {
        check_len("count grid values", n1 * n2, values.len())?;
        Ok(CountGrid { n1, n2, values })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        CountGrid {
            n1: grid.n1(),
            n2: grid.n2(),
            values: vec![0; grid.len()],
        }
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.total() as f64 / self.values.len() as f64
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.n1 != grid.n1() || self.n2 != grid.n2() {
            return Err(SlemError::InvalidInput(format!(
                "count grid is {}x{} but the grid is {}x{}",
                self.n1,
                self.n2,
                grid.n1(),
                grid.n2()
            )));
        }
        Ok(())
    }
}

/// Outcome of binning a pattern: the counts plus domain tallies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binned {
    pub counts: CountGrid,
    pub in_domain: usize,
    pub out_of_domain: usize,
}

/// Counts the points of `pattern` falling in each pixel of `grid`.
///
/// Points outside the domain (or with non-finite coordinates) are tallied in
/// `out_of_domain` and otherwise ignored.
pub fn bin_points(pattern: &PointPattern, grid: &GridSpec) -> Binned {
    let mut counts = CountGrid::zeros(grid);
    let mut out_of_domain = 0;
    for &(x, y) in &pattern.points {
        match grid.locate(x, y) {
            Some(i) => counts.values[i] += 1,
            None => out_of_domain += 1,
        }
    }
    Binned {
        counts,
        in_domain: pattern.len() - out_of_domain,
        out_of_domain,
    }
}

/// Randomly partitions the points into a training and a test pattern.
///
/// The training set has `round(train_fraction * len)` points. Both outputs keep
/// the original point order.
pub fn split_train_test(
    pattern: &PointPattern,
    train_fraction: f64,
    seed: u64,
) -> Result<(PointPattern, PointPattern)> {
    if pattern.is_empty() {
        return Err(SlemError::InvalidInput("cannot split an empty pattern".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SlemError::InvalidInput(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let total = pattern.len();
    let n_train = (train_fraction * total as f64).round() as usize;
    if n_train == 0 || n_train == total {
        return Err(SlemError::InvalidInput(format!(
            "train fraction {train_fraction} on {total} points leaves an empty subset"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut in_train = vec![false; total];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = pattern
        .points
        .iter()
        .zip(&in_train)
        .partition(|(_, &keep)| keep);
    Ok((
        PointPattern::new(train.into_iter().map(|(p, _)| *p).collect()),
        PointPattern::new(test.into_iter().map(|(p, _)| *p).collect()),
    ))
}
