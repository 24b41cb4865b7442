//! Height-map grids, Gaussian sand piles and the scalar metrics computed on
//! difference maps.
//!
//! World coordinates: `x` runs along columns and `y` along rows, both in
//! meters from the map corner. Cell `(r, c)` has its center at
//! `((c + 0.5) * cell, (r + 0.5) * cell)`. Headings are measured from `+x`
//! towards `+y`.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Mahalanobis radius beyond which a pile contributes nothing. The mass lost
/// outside the cutoff is `exp(-8)` of the pile volume.
pub const PILE_CUTOFF: f64 = 4.0;

/// Dense row-major grid of reals with a square cell size in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    cell_size: f64,
    values: Vec<f64>,
}

impl Grid {
    pub fn filled(rows: usize, cols: usize, cell_size: f64, value: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimension(format!("{rows}x{cols} grid")));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidDimension(format!("cell size {cell_size}")));
        }
        if !value.is_finite() {
            return Err(Error::InvalidDimension(format!("non-finite level {value}")));
        }
        Ok(Self { rows, cols, cell_size, values: vec![value; rows * cols] })
    }

    pub fn from_values(rows: usize, cols: usize, cell_size: f64, values: Vec<f64>) -> Result<Self> {
        let mut g = Self::filled(rows, cols, cell_size, 0.0)?;
        if values.len() != rows * cols {
            return Err(Error::InvalidDimension(format!(
                "{} values for a {rows}x{cols} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDimension("non-finite value".into()));
        }
        g.values = values;
        Ok(g)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    pub fn width(&self) -> f64 {
        self.cols as f64 * self.cell_size
    }

    pub fn height(&self) -> f64 {
        self.rows as f64 * self.cell_size
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] += v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_geometry(&self, other: &Grid) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.cell_size == other.cell_size
    }

    pub fn describe(&self) -> String {
        format!("{}x{} @ {} m", self.rows, self.cols, self.cell_size)
    }

    pub fn cell_center(&self, r: usize, c: usize) -> (f64, f64) {
        ((c as f64 + 0.5) * self.cell_size, (r as f64 + 0.5) * self.cell_size)
    }

    /// Cell containing a world point, if any.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let c = (x / self.cell_size).floor() as usize;
        let r = (y / self.cell_size).floor() as usize;
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.width() && y <= self.height()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Terrain heights in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap(Grid);

/// Pointwise `current - desired` heights in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMap(Grid);

macro_rules! grid_newtype {
    ($t:ident) => {
        impl Deref for $t {
            type Target = Grid;
            fn deref(&self) -> &Grid {
                &self.0
            }
        }

        impl DerefMut for $t {
            fn deref_mut(&mut self) -> &mut Grid {
                &mut self.0
            }
        }

        impl From<Grid> for $t {
            fn from(g: Grid) -> Self {
                Self(g)
            }
        }

        impl $t {
            pub fn into_grid(self) -> Grid {
                self.0
            }

            pub fn grid(&self) -> &Grid {
                &self.0
            }
        }
    };
}

grid_newtype!(HeightMap);
grid_newtype!(DiffMap);

impl HeightMap {
    pub fn new_flat(rows: usize, cols: usize, cell_size: f64, level: f64) -> Result<Self> {
        Grid::filled(rows, cols, cell_size, level).map(Self)
    }

    /// Ground volume above the zero datum, in m³.
    pub fn volume(&self) -> f64 {
        self.sum() * self.cell_area()
    }
}

impl DiffMap {
    pub fn zeros_like(g: &Grid) -> Self {
        Self(Grid { rows: g.rows, cols: g.cols, cell_size: g.cell_size, values: vec![0.0; g.values.len()] })
    }
}

/// A sand pile shaped as a (truncated) bivariate Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPile {
    pub center: (f64, f64),
    pub sigma: (f64, f64),
    pub peak_height: f64,
    pub rotation: f64,
}

impl GaussianPile {
    pub fn new(center: (f64, f64), sigma: (f64, f64), peak_height: f64, rotation: f64) -> Result<Self> {
        if !(sigma.0 > 0.0 && sigma.1 > 0.0) {
            return Err(Error::InvalidScenario(format!("pile sigma {sigma:?} must be positive")));
        }
        if !(peak_height > 0.0) {
            return Err(Error::InvalidScenario(format!("pile peak {peak_height} must be positive")));
        }
        Ok(Self { center, sigma, peak_height, rotation })
    }

    /// Height contributed at a world point.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.rotation.sin_cos();
        let u = (c * dx + s * dy) / self.sigma.0;
        let v = (-s * dx + c * dy) / self.sigma.1;
        let q = u * u + v * v;
        if q > PILE_CUTOFF * PILE_CUTOFF {
            0.0
        } else {
            self.peak_height * (-0.5 * q).exp()
        }
    }

    /// Closed-form volume of the truncated Gaussian on an unbounded plane.
    pub fn volume(&self) -> f64 {
        let full = 2.0 * std::f64::consts::PI * self.sigma.0 * self.sigma.1 * self.peak_height;
        full * (1.0 - (-0.5 * PILE_CUTOFF * PILE_CUTOFF).exp())
    }

    /// Radius of a disc that contains the pile support.
    pub fn support_radius(&self) -> f64 {
        PILE_CUTOFF * self.sigma.0.max(self.sigma.1)
    }
}

/// Adds `pile` to `map` in place and returns the volume actually added to the
/// grid (the part of the support that lies inside the map).
pub fn add_pile_in_place(map: &mut HeightMap, pile: &GaussianPile) -> f64 {
    let cs = map.cell_size();
    let radius = pile.support_radius();
    let c0 = (((pile.center.0 - radius) / cs).floor().max(0.0)) as usize;
    let r0 = (((pile.center.1 - radius) / cs).floor().max(0.0)) as usize;
    let c1 = ((pile.center.0 + radius) / cs).ceil();
    let r1 = ((pile.center.1 + radius) / cs).ceil();
    if c1 < 0.0 || r1 < 0.0 {
        return 0.0;
    }
    let c1 = (c1 as usize).min(map.cols());
    let r1 = (r1 as usize).min(map.rows());
    let mut added = 0.0;
    for r in r0..r1 {
        for c in c0..c1 {
            let (x, y) = map.cell_center(r, c);
            let h = pile.height_at(x, y);
            if h > 0.0 {
                map.add(r, c, h);
                added += h;
            }
        }
    }
    added * map.cell_area()
}

pub fn add_pile(map: &HeightMap, pile: &GaussianPile) -> HeightMap {
    let mut out = map.clone();
    add_pile_in_place(&mut out, pile);
    out
}

pub fn diff_map(current: &HeightMap, desired: &HeightMap) -> Result<DiffMap> {
    if !current.same_geometry(desired) {
        return Err(Error::GeometryMismatch { left: current.describe(), right: desired.describe() });
    }
    let values = current.values().iter().zip(desired.values()).map(|(a, b)| a - b).collect();
    Ok(DiffMap(Grid { rows: current.rows(), cols: current.cols(), cell_size: current.cell_size(), values }))
}

/// Positive part of the difference map integrated over the area, in m³.
pub fn excess_volume(d: &DiffMap) -> f64 {
    d.values().iter().map(|v| v.max(0.0)).sum::<f64>() * d.cell_area()
}

pub fn max_excess_height(d: &DiffMap) -> f64 {
    d.values().iter().fold(0.0f64, |m, &v| m.max(v))
}

/// Mean over all cells of the positive part.
pub fn mean_excess_height(d: &DiffMap) -> f64 {
    d.values().iter().map(|v| v.max(0.0)).sum::<f64>() / d.values().len() as f64
}

/// Mean-pools `d` over `2^n x 2^n` blocks. Partial edge blocks are padded by
/// replicating the last row/column, so the output is
/// `ceil(rows / 2^n) x ceil(cols / 2^n)` with cell size `cell * 2^n`.
pub fn downsample(d: &DiffMap, n: u32) -> DiffMap {
    if n == 0 {
        return d.clone();
    }
    let block = 1usize << n;
    let (rows, cols) = (d.rows(), d.cols());
    let out_rows = rows.div_ceil(block);
    let out_cols = cols.div_ceil(block);
    let mut out = vec![0.0; out_rows * out_cols];
    let inv = 1.0 / (block * block) as f64;
    for orow in 0..out_rows {
        for ocol in 0..out_cols {
            let mut acc = 0.0;
            for br in 0..block {
                let r = (orow * block + br).min(rows - 1);
                let base = r * cols;
                for bc in 0..block {
                    let c = (ocol * block + bc).min(cols - 1);
                    acc += d.values()[base + c];
                }
            }
            out[orow * out_cols + ocol] = acc * inv;
        }
    }
    DiffMap(Grid { rows: out_rows, cols: out_cols, cell_size: d.cell_size() * block as f64, values: out })
}

/// Planar pose of the dozer reference point (blade center).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DozerPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl DozerPose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn forward(&self) -> (f64, f64) {
        (self.heading.cos(), self.heading.sin())
    }

    /// Unit vector pointing to the observation's `+col` direction.
    pub fn lateral(&self) -> (f64, f64) {
        (-self.heading.sin(), self.heading.cos())
    }
}

/// Geometry of the ego-centric observation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FovSpec {
    pub rows: usize,
    pub cols: usize,
    pub anchor_row: usize,
    pub anchor_col: usize,
    pub downsample: u32,
}

impl FovSpec {
    pub fn new(rows: usize, cols: usize, anchor: (usize, usize), downsample: u32) -> Result<Self> {
        let spec = Self { rows, cols, anchor_row: anchor.0, anchor_col: anchor.1, downsample };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidDimension(format!("fov {}x{}", self.rows, self.cols)));
        }
        if self.anchor_row >= self.rows || self.anchor_col >= self.cols {
            return Err(Error::InvalidDimension(format!(
                "anchor ({}, {}) outside fov {}x{}",
                self.anchor_row, self.anchor_col, self.rows, self.cols
            )));
        }
        if self.downsample > 16 {
            return Err(Error::InvalidDimension(format!("downsample exponent {}", self.downsample)));
        }
        Ok(())
    }

    pub fn block(&self) -> usize {
        1 << self.downsample
    }

    /// Down-sampled observation rows (`m̂`).
    pub fn obs_rows(&self) -> usize {
        self.rows.div_ceil(self.block())
    }

    pub fn obs_cols(&self) -> usize {
        self.cols.div_ceil(self.block())
    }

    /// Anchor expressed in the down-sampled grid.
    pub fn anchor_pixel(&self) -> (usize, usize) {
        (self.anchor_row >> self.downsample, self.anchor_col >> self.downsample)
    }

    pub fn with_downsample(mut self, n: u32) -> Self {
        self.downsample = n;
        self
    }
}

/// Samples the difference map in the dozer frame: the dozer sits at the
/// anchor facing `+row`; world points outside the map read as 0.
pub fn ego_fov(current: &HeightMap, desired: &HeightMap, pose: DozerPose, spec: &FovSpec) -> Result<DiffMap> {
    let delta = diff_map(current, desired)?;
    ego_fov_diff(&delta, pose, spec)
}

/// [`ego_fov`] on a precomputed difference map.
pub fn ego_fov_diff(delta: &DiffMap, pose: DozerPose, spec: &FovSpec) -> Result<DiffMap> {
    spec.validate()?;
    if !delta.contains_point(pose.x, pose.y) {
        return Err(Error::PoseOutOfBounds { x: pose.x, y: pose.y });
    }
    let cs = delta.cell_size();
    let (rows, cols) = (delta.rows(), delta.cols());
    // Pose in index coordinates (cell centers are integers), split into an
    // integer base and a fraction so that whole-cell translations are exact.
    let pu = pose.x / cs - 0.5;
    let pv = pose.y / cs - 0.5;
    let (bu, bv) = (pu.floor(), pv.floor());
    let (fu, fv) = (pu - bu, pv - bv);
    let (bu, bv) = (bu as i64, bv as i64);
    let (fx, fy) = pose.forward();
    let (lx, ly) = pose.lateral();
    let vals = delta.values();
    let mut out = Vec::with_capacity(spec.rows * spec.cols);
    for i in 0..spec.rows {
        let f = i as f64 - spec.anchor_row as f64;
        for j in 0..spec.cols {
            let l = j as f64 - spec.anchor_col as f64;
            let u = fu + (f * fx + l * lx);
            let v = fv + (f * fy + l * ly);
            let (iu, iv) = (u.floor(), v.floor());
            let (tu, tv) = (u - iu, v - iv);
            let cu = bu + iu as i64;
            let cv = bv + iv as i64;
            // continuous index in [-0.5, n - 0.5) is inside the map
            let su = cu as f64 + tu;
            let sv = cv as f64 + tv;
            if su < -0.5 || sv < -0.5 || su >= cols as f64 - 0.5 || sv >= rows as f64 - 0.5 {
                out.push(0.0);
                continue;
            }
            let c0 = cu.clamp(0, cols as i64 - 1) as usize;
            let c1 = (cu + 1).clamp(0, cols as i64 - 1) as usize;
            let r0 = cv.clamp(0, rows as i64 - 1) as usize;
            let r1 = (cv + 1).clamp(0, rows as i64 - 1) as usize;
            let a = vals[r0 * cols + c0];
            let b = vals[r0 * cols + c1];
            let c = vals[r1 * cols + c0];
            let d = vals[r1 * cols + c1];
            let top = a + (b - a) * tu;
            let bottom = c + (d - c) * tu;
            out.push(top + (bottom - top) * tv);
        }
    }
    Ok(DiffMap(Grid { rows: spec.rows, cols: spec.cols, cell_size: cs, values: out }))
}

/// Full observation pipeline: ego window followed by mean pooling.
pub fn observe(delta: &DiffMap, pose: DozerPose, spec: &FovSpec) -> Result<DiffMap> {
    Ok(downsample(&ego_fov_diff(delta, pose, spec)?, spec.downsample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn flat_constructor() {
        let m = HeightMap::new_flat(10, 10, 0.1, 0.0).unwrap();
        assert_eq!(m.values().len(), 100);
        assert!(m.values().iter().all(|&v| v == 0.0));
        let one = HeightMap::new_flat(1, 1, 1.0, 2.5).unwrap();
        assert_eq!(one.get(0, 0), 2.5);
        assert!(matches!(HeightMap::new_flat(0, 5, 0.1, 0.0), Err(Error::InvalidDimension(_))));
        assert!(HeightMap::new_flat(5, 5, 0.0, 0.0).is_err());
        assert!(HeightMap::new_flat(5, 5, -1.0, 0.0).is_err());
    }

    #[test]
    fn pile_peak_and_neighbour_ratio() {
        let m = HeightMap::new_flat(21, 21, 0.1, 0.0).unwrap();
        let (cx, cy) = m.cell_center(10, 10);
        let pile = GaussianPile::new((cx, cy), (0.2, 0.2), 1.0, 0.0).unwrap();
        let out = add_pile(&m, &pile);
        assert_eq!(out.get(10, 10), 1.0);
        // closed form: exp(-0.5 * (0.1 / 0.2)^2)
        let expected = (-0.5f64 * 0.25).exp();
        assert!(approx(expected, 0.8824969025845955, 1e-15));
        assert!(approx(out.get(10, 11) / out.get(10, 10), expected, 1e-12));
        assert!(approx(out.get(9, 10) / out.get(10, 10), expected, 1e-12));
    }

    #[test]
    fn two_identical_piles_double() {
        let m = HeightMap::new_flat(30, 30, 0.1, 0.0).unwrap();
        let pile = GaussianPile::new((1.43, 1.61), (0.3, 0.2), 0.4, 0.3).unwrap();
        let once = add_pile(&m, &pile);
        let twice = add_pile(&once, &pile);
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn pile_volume_matches_grid_sum() {
        let m = HeightMap::new_flat(200, 200, 0.05, 0.0).unwrap();
        let pile = GaussianPile::new((5.0, 5.0), (0.5, 0.3), 0.3, 0.7).unwrap();
        let out = add_pile(&m, &pile);
        let vol = out.volume();
        assert!((vol - pile.volume()).abs() / pile.volume() < 1e-3, "{vol} vs {}", pile.volume());
    }

    #[test]
    fn diff_map_cases() {
        let a = HeightMap::new_flat(4, 4, 0.1, 1.0).unwrap();
        let d = diff_map(&a, &a).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));

        let mut b = a.clone();
        b.add(2, 1, 0.3);
        let d = diff_map(&b, &a).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expect = if (r, c) == (2, 1) { 1.3 - 1.0 } else { 0.0 };
                assert_eq!(d.get(r, c), expect);
            }
        }

        let c = HeightMap::new_flat(4, 5, 0.1, 1.0).unwrap();
        assert!(matches!(diff_map(&a, &c), Err(Error::GeometryMismatch { .. })));
    }

    #[test]
    fn excess_volume_cases() {
        let zero = DiffMap::from(Grid::filled(3, 3, 0.1, 0.0).unwrap());
        assert_eq!(excess_volume(&zero), 0.0);

        let mut one = zero.clone();
        one.set(1, 1, 0.5);
        assert!(approx(excess_volume(&one), 0.005, 1e-15));

        let mut pm = zero.clone();
        pm.set(0, 0, 0.2);
        pm.set(2, 2, -0.2);
        assert!(approx(excess_volume(&pm), 0.2 * 0.01, 1e-15));
    }

    #[test]
    fn max_excess_cases() {
        let zero = DiffMap::from(Grid::filled(1, 3, 0.1, 0.0).unwrap());
        assert_eq!(max_excess_height(&zero), 0.0);
        let mixed = DiffMap::from(Grid::from_values(1, 3, 0.1, vec![-0.3, 0.1, 0.25]).unwrap());
        assert_eq!(max_excess_height(&mixed), 0.25);
        let neg = DiffMap::from(Grid::from_values(1, 2, 0.1, vec![-0.3, -0.1]).unwrap());
        assert_eq!(max_excess_height(&neg), 0.0);
    }

    #[test]
    fn downsample_sizes() {
        let big = DiffMap::from(Grid::filled(600, 600, 0.05, 0.0).unwrap());
        let d3 = downsample(&big, 3);
        assert_eq!((d3.rows(), d3.cols()), (75, 75));
        let d = downsample(&d3, 1);
        assert_eq!((d.rows(), d.cols()), (38, 38));
        for (n, side) in [(1, 300), (2, 150), (3, 75), (4, 38)] {
            let out = downsample(&big, n);
            assert_eq!((out.rows(), out.cols()), (side, side));
        }
    }

    #[test]
    fn downsample_constant_and_padding() {
        let c = DiffMap::from(Grid::filled(13, 7, 0.1, 0.37).unwrap());
        for n in 0..4 {
            let out = downsample(&c, n);
            assert!(out.values().iter().all(|&v| approx(v, 0.37, 1e-15)));
        }
        // 3x3 with factor 2: the right/bottom blocks replicate the border
        let g = DiffMap::from(Grid::from_values(3, 3, 1.0, (1..=9).map(f64::from).collect()).unwrap());
        let out = downsample(&g, 1);
        assert_eq!(out.get(0, 0), (1.0 + 2.0 + 4.0 + 5.0) / 4.0);
        assert_eq!(out.get(0, 1), (3.0 + 3.0 + 6.0 + 6.0) / 4.0);
        assert_eq!(out.get(1, 1), 9.0);
        assert_eq!(out.cell_size(), 2.0);
    }

    #[test]
    fn fov_flat_world_is_zero() {
        let h = HeightMap::new_flat(100, 100, 0.1, 0.4).unwrap();
        let spec = FovSpec::new(40, 30, (10, 15), 0).unwrap();
        let obs = ego_fov(&h, &h, DozerPose::new(5.0, 5.0, 0.7), &spec).unwrap();
        assert_eq!((obs.rows(), obs.cols()), (40, 30));
        assert!(obs.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fov_rejects_pose_outside() {
        let h = HeightMap::new_flat(10, 10, 0.1, 0.0).unwrap();
        let spec = FovSpec::new(4, 4, (1, 2), 0).unwrap();
        assert!(matches!(
            ego_fov(&h, &h, DozerPose::new(-0.1, 0.5, 0.0), &spec),
            Err(Error::PoseOutOfBounds { .. })
        ));
    }

    #[test]
    fn fov_pile_ahead_lands_on_forward_axis() {
        let cs = 0.1;
        let target = HeightMap::new_flat(120, 120, cs, 0.0).unwrap();
        let spec = FovSpec::new(60, 41, (10, 20), 0).unwrap();
        for (heading, k) in [(0.0, 15usize), (std::f64::consts::FRAC_PI_2, 22), (2.4, 30)] {
            let pose = DozerPose::new(6.05, 5.95, heading);
            let (fx, fy) = pose.forward();
            let center = (pose.x + fx * k as f64 * cs, pose.y + fy * k as f64 * cs);
            let world = add_pile(&target, &GaussianPile::new(center, (0.4, 0.4), 0.5, 0.0).unwrap());
            let obs = ego_fov(&world, &target, pose, &spec).unwrap();
            let (mut best, mut at) = (f64::MIN, (0, 0));
            for r in 0..obs.rows() {
                for c in 0..obs.cols() {
                    if obs.get(r, c) > best {
                        best = obs.get(r, c);
                        at = (r, c);
                    }
                }
            }
            let dr = at.0 as i64 - (10 + k as i64);
            let dc = at.1 as i64 - 20;
            assert!(dr.abs() <= 1 && dc.abs() <= 1, "heading {heading}: max at {at:?}");
        }
    }

    #[test]
    fn fov_quarter_turn_invariance() {
        // Rotating the pile set and the dozer together by a multiple of a
        // quarter turn about a cell center maps the grid onto itself.
        let cs = 0.1;
        let n = 101;
        let target = HeightMap::new_flat(n, n, cs, 0.0).unwrap();
        let (ox, oy) = target.cell_center(50, 50);
        let piles = [
            GaussianPile::new((ox + 1.2, oy + 0.3), (0.3, 0.5), 0.4, 0.2).unwrap(),
            GaussianPile::new((ox - 0.7, oy + 1.9), (0.27, 0.27), 0.3, 0.0).unwrap(),
        ];
        let spec = FovSpec::new(50, 50, (20, 25), 0).unwrap();
        let mut reference: Option<DiffMap> = None;
        for quarter in 0..4 {
            let theta = quarter as f64 * std::f64::consts::FRAC_PI_2;
            let (s, c) = theta.sin_cos();
            let mut world = target.clone();
            for p in &piles {
                let (dx, dy) = (p.center.0 - ox, p.center.1 - oy);
                let rotated = GaussianPile {
                    center: (ox + c * dx - s * dy, oy + s * dx + c * dy),
                    rotation: p.rotation + theta,
                    ..*p
                };
                add_pile_in_place(&mut world, &rotated);
            }
            let obs = ego_fov(&world, &target, DozerPose::new(ox, oy, 0.3 + theta), &spec).unwrap();
            match &reference {
                None => reference = Some(obs),
                Some(r) => {
                    for (a, b) in r.values().iter().zip(obs.values()) {
                        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn fov_arbitrary_rotation_smooth_world() {
        // For piles that are smooth at the grid scale, bilinear resampling
        // error stays small under arbitrary rotations.
        let cs = 0.05;
        let target = HeightMap::new_flat(240, 240, cs, 0.0).unwrap();
        let (ox, oy) = (6.0, 6.0);
        let base = GaussianPile::new((ox + 2.0, oy + 0.5), (0.8, 0.6), 0.3, 0.1).unwrap();
        let spec = FovSpec::new(80, 80, (20, 40), 0).unwrap();
        let render = |theta: f64| {
            let (s, c) = theta.sin_cos();
            let (dx, dy) = (base.center.0 - ox, base.center.1 - oy);
            let p = GaussianPile {
                center: (ox + c * dx - s * dy, oy + s * dx + c * dy),
                rotation: base.rotation + theta,
                ..base
            };
            ego_fov(&add_pile(&target, &p), &target, DozerPose::new(ox, oy, theta), &spec).unwrap()
        };
        let a = render(0.0);
        let b = render(0.61);
        let worst = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "worst {worst}");
    }

    #[test]
    fn fov_integer_translation_is_bitwise() {
        let cs = 0.25;
        let make = |shift: usize| {
            let target = HeightMap::new_flat(80, 80, cs, 0.0).unwrap();
            let s = shift as f64 * cs;
            let world = add_pile(&target, &GaussianPile::new((7.0 + s, 9.0 + s), (1.0, 0.6), 0.5, 0.4).unwrap());
            let spec = FovSpec::new(30, 30, (5, 15), 0).unwrap();
            ego_fov(&world, &target, DozerPose::new(5.0 + s, 6.5 + s, 0.9), &spec).unwrap()
        };
        let a = make(0);
        let b = make(12);
        assert_eq!(a.values(), b.values());
    }

    proptest! {
        #[test]
        fn add_pile_commutes(
            x1 in 0.0f64..5.0, y1 in 0.0f64..5.0, s1 in 0.1f64..1.0, h1 in 0.05f64..1.0, r1 in -3.0f64..3.0,
            x2 in 0.0f64..5.0, y2 in 0.0f64..5.0, s2 in 0.1f64..1.0, h2 in 0.05f64..1.0, r2 in -3.0f64..3.0,
        ) {
            let m = HeightMap::new_flat(50, 50, 0.1, 0.0).unwrap();
            let p1 = GaussianPile::new((x1, y1), (s1, s1 * 0.7), h1, r1).unwrap();
            let p2 = GaussianPile::new((x2, y2), (s2 * 0.8, s2), h2, r2).unwrap();
            let a = add_pile(&add_pile(&m, &p1), &p2);
            let b = add_pile(&add_pile(&m, &p2), &p1);
            prop_assert_eq!(a.values(), b.values());
        }

        #[test]
        fn self_diff_is_zero(vals in proptest::collection::vec(-5.0f64..5.0, 12)) {
            let h = HeightMap::from(Grid::from_values(3, 4, 0.2, vals).unwrap());
            let d = diff_map(&h, &h).unwrap();
            prop_assert!(d.values().iter().all(|&v| v == 0.0));
        }

        #[test]
        fn pooling_preserves_mass_of_nonnegative_fields(
            vals in proptest::collection::vec(0.0f64..1.0, 64 * 64),
            n in 1u32..4,
        ) {
            let d = DiffMap::from(Grid::from_values(64, 64, 0.05, vals).unwrap());
            let pooled = downsample(&d, n);
            let a = excess_volume(&d);
            let b = excess_volume(&pooled);
            prop_assert!((a - b).abs() <= 0.05 * a.max(1e-12));
        }
    }
}
