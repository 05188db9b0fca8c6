//! Dense grid types and the geometric primitives built on them.
//!
//! Every grid is stored row-major and indexed as `(row, col)`, i.e. `(y, x)`
//! with `x` horizontal. A flow vector is `[u, v]`: `u` horizontal and `v`
//! vertical displacement in pixels.

use crate::error::{Error, Result};

/// A 2-vector of horizontal and vertical displacement, in pixels.
pub type Vec2 = [f64; 2];

/// Row-major `height x width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Dense flow field.
pub type Grid2 = Grid<Vec2>;
/// Dense scalar field (disparity, confidence, weights, per-pixel losses).
pub type Grid1 = Grid<f64>;
/// Dense boolean field.
pub type BinaryMask = Grid<bool>;
/// Scalar grid whose entries lie in `[0, 1]`.
pub type ConfidenceMap = Grid1;

/// Element types a [`Grid`] may hold.
pub trait Cell: Copy + PartialEq + std::fmt::Debug {
    fn is_finite_cell(&self) -> bool;
}

impl Cell for f64 {
    fn is_finite_cell(&self) -> bool {
        self.is_finite()
    }
}

impl Cell for Vec2 {
    fn is_finite_cell(&self) -> bool {
        self[0].is_finite() && self[1].is_finite()
    }
}

impl Cell for bool {
    fn is_finite_cell(&self) -> bool {
        true
    }
}

/// Real-valued cells: the scalar (`f64`) and vector (`Vec2`) cases share the
/// interpolation, residual and gradient code through this trait.
pub trait Value: Cell + Send + Sync {
    const COMPONENTS: usize;

    fn zero() -> Self;
    fn component(&self, i: usize) -> f64;
    fn from_fn(f: impl FnMut(usize) -> f64) -> Self;

    fn add(self, other: Self) -> Self {
        Self::from_fn(|i| self.component(i) + other.component(i))
    }

    fn sub(self, other: Self) -> Self {
        Self::from_fn(|i| self.component(i) - other.component(i))
    }

    fn scale(self, s: f64) -> Self {
        Self::from_fn(|i| self.component(i) * s)
    }

    /// Sum of absolute components (the per-pixel L1 norm).
    fn l1(&self) -> f64 {
        (0..Self::COMPONENTS).map(|i| self.component(i).abs()).sum()
    }

    /// Squared Euclidean norm.
    fn norm_sq(&self) -> f64 {
        (0..Self::COMPONENTS)
            .map(|i| self.component(i) * self.component(i))
            .sum()
    }
}

impl Value for f64 {
    const COMPONENTS: usize = 1;

    fn zero() -> Self {
        0.0
    }

    fn component(&self, _i: usize) -> f64 {
        *self
    }

    fn from_fn(mut f: impl FnMut(usize) -> f64) -> Self {
        f(0)
    }

    fn add(self, other: Self) -> Self {
        self + other
    }

    fn sub(self, other: Self) -> Self {
        self - other
    }

    fn scale(self, s: f64) -> Self {
        self * s
    }

    fn l1(&self) -> f64 {
        self.abs()
    }

    fn norm_sq(&self) -> f64 {
        self * self
    }
}

impl Value for Vec2 {
    const COMPONENTS: usize = 2;

    fn zero() -> Self {
        [0.0, 0.0]
    }

    fn component(&self, i: usize) -> f64 {
        self[i]
    }

    fn from_fn(mut f: impl FnMut(usize) -> f64) -> Self {
        [f(0), f(1)]
    }
}

impl<T: Cell> Grid<T> {
    /// Builds a grid from row-major data, rejecting empty shapes, length
    /// mismatches and non-finite entries.
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyGrid { height, width });
        }
        if data.len() != height * width {
            return Err(Error::LengthMismatch {
                height,
                width,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite_cell()) {
            return Err(Error::NonFinite {
                row: i / width,
                col: i % width,
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Builds a grid by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self::new(height, width, data)
    }

    /// Internal constructor for data derived from already validated grids.
    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i / w, i % w, *v))
    }

    /// Applies `f` to every cell. The result is validated like [`Grid::new`].
    pub fn map<U: Cell>(&self, f: impl FnMut(&T) -> U) -> Result<Grid<U>> {
        Grid::new(self.height, self.width, self.data.iter().map(f).collect())
    }

    pub(crate) fn map_unchecked<U: Cell>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid::from_parts(self.height, self.width, self.data.iter().map(f).collect())
    }

    /// Fails unless `other` has the same shape as `self`.
    pub fn ensure_same_shape<U: Cell>(&self, other: &Grid<U>, what: &'static str) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected: self.shape(),
                actual: other.shape(),
            })
        }
    }
}

impl BinaryMask {
    pub fn all(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, true)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Pixelwise conjunction.
    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.ensure_same_shape(other, "mask")?;
        Ok(Grid::from_parts(
            self.height,
            self.width,
            self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        ))
    }

    /// Pixelwise negation.
    pub fn not(&self) -> BinaryMask {
        self.map_unchecked(|b| !b)
    }
}

impl Grid1 {
    /// Smallest and largest entry.
    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Bilinearly interpolates `field` at the continuous position `(x, y)`.
///
/// Positions outside `[0, width-1] x [0, height-1]` yield `(zero, false)`.
pub fn bilinear_sample<T: Value>(field: &Grid<T>, x: f64, y: f64) -> (T, bool) {
    let max_x = (field.width - 1) as f64;
    let max_y = (field.height - 1) as f64;
    // Negated comparisons also reject NaN coordinates.
    if !(x >= 0.0 && x <= max_x && y >= 0.0 && y <= max_y) {
        return (T::zero(), false);
    }
    let x0 = (x.floor() as usize).min(field.width - 1);
    let y0 = (y.floor() as usize).min(field.height - 1);
    let x1 = (x0 + 1).min(field.width - 1);
    let y1 = (y0 + 1).min(field.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;

    let v00 = field.get(y0, x0);
    let v01 = field.get(y0, x1);
    let v10 = field.get(y1, x0);
    let v11 = field.get(y1, x1);
    let value = T::from_fn(|i| {
        // a + t (b - a) reproduces constant neighbourhoods exactly.
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let top = lerp(v00.component(i), v01.component(i), fx);
        let bottom = lerp(v10.component(i), v11.component(i), fx);
        lerp(top, bottom, fy)
    });
    (value, true)
}

/// Samples `field` at `x + flow(x)` for every pixel `x`.
///
/// Returns the warped field and the in-bounds flag of every sample.
pub fn backward_warp<T: Value>(field: &Grid<T>, flow: &Grid2) -> Result<(Grid<T>, BinaryMask)> {
    field.ensure_same_shape(flow, "backward_warp flow")?;
    let (h, w) = field.shape();
    let mut values = Vec::with_capacity(h * w);
    let mut valid = Vec::with_capacity(h * w);
    for (row, col, [u, v]) in flow.iter() {
        let (value, inside) = bilinear_sample(field, col as f64 + u, row as f64 + v);
        values.push(value);
        valid.push(inside);
    }
    Ok((Grid::from_parts(h, w, values), Grid::from_parts(h, w, valid)))
}

/// Mirrors a grid left to right. Vector components are left untouched.
pub fn hflip<T: Cell>(field: &Grid<T>) -> Grid<T> {
    let (h, w) = field.shape();
    let mut data = Vec::with_capacity(h * w);
    for row in field.data.chunks_exact(w) {
        data.extend(row.iter().rev().copied());
    }
    Grid::from_parts(h, w, data)
}

/// Restores a right-to-left disparity from an estimate made on the swapped
/// and mirrored stereo pair: mirror, then negate.
pub fn reverse_disparity_restore(d_flipped_estimate: &Grid1) -> Grid1 {
    hflip(d_flipped_estimate).map_unchecked(|d| -d)
}

/// Which view a disparity map is anchored in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StereoDirection {
    /// Left pixel `(x, y)` matches right pixel `(x - d, y)`.
    LeftToRight,
    /// Right pixel `(x, y)` matches left pixel `(x + d, y)`.
    RightToLeft,
}

/// Embeds a horizontal disparity map as a flow field with zero vertical
/// component.
pub fn disparity_to_flow(d: &Grid1, direction: StereoDirection) -> Grid2 {
    if let Some((row, col, v)) = d.iter().find(|(_, _, v)| *v < 0.0) {
        log::warn!("negative disparity {v} at row {row}, column {col}");
    }
    let sign = match direction {
        StereoDirection::LeftToRight => -1.0,
        StereoDirection::RightToLeft => 1.0,
    };
    d.map_unchecked(|&v| [sign * v, 0.0])
}
