//! Self-similar dyadic tiles `T = ∪_j f_j(T)` generated by `M = 2^Q`
//! half-homotheties `f_j(p) = a_j · δ_{1/2}(p)`, and the address algebra
//! `T_w = f_w(T)`.
//!
//! Composite maps keep the same shape: `f_w(y) = g_w · δ_{2^{-m}}(y)` with
//! `g_w = f_w(0)`. All maps are affine in exponential coordinates, which the
//! barycenter and bounding-box computations rely on.
//!
//! Tile membership is approximate. A system keeps the level-`d` tile centers
//! (the "cloud") and an occupancy bitmap built from them; both resolve the
//! tile to about `2^{-d}` of its size.

use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AffineMap, BBox, GridIndex};
use crate::group::{GroupError, GroupSpec, Point};
use crate::seeding::{self, CHUNK};

/// Budget for exhaustive center clouds.
const CLOUD_BUDGET: usize = 1 << 20;
/// Budget for occupancy bitmap cells.
const BITMAP_BUDGET: usize = 1 << 21;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TilingError {
    #[error("expected {expected} digits (2^Q), got {got}")]
    WrongDigitCount { expected: usize, got: usize },
    #[error("digits {first} and {second} coincide")]
    DuplicateDigit { first: usize, second: usize },
    #[error("letter {letter} out of range for {maps} maps")]
    LetterOutOfRange { letter: usize, maps: usize },
    #[error("radius {0} outside (0, 1]")]
    RadiusOutOfRange(f64),
    #[error("level {level} exceeds the addressable maximum {max}")]
    LevelTooDeep { level: usize, max: usize },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// `p ↦ translation · δ_{1/2}(p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homothety {
    pub translation: Point,
}

impl Homothety {
    pub fn apply(&self, spec: &GroupSpec, p: &Point) -> Point {
        spec.mul(&self.translation, &spec.dil(0.5, p))
    }

    pub fn apply_inverse(&self, spec: &GroupSpec, q: &Point) -> Point {
        spec.dil(2.0, &spec.left_quotient(&self.translation, q))
    }
}

/// Word `w_1 … w_m` over `0..M`; `f_w = f_{w_1} ∘ ⋯ ∘ f_{w_m}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TileAddress(Vec<u16>);

impl TileAddress {
    pub fn root() -> Self {
        TileAddress(Vec::new())
    }

    pub fn new(letters: impl Into<Vec<u16>>) -> Self {
        TileAddress(letters.into())
    }

    /// Address of lexicographic index `index` among level-`level` words.
    pub fn from_index(mut index: u64, level: usize, maps: usize) -> Self {
        let mut w = vec![0u16; level];
        for slot in w.iter_mut().rev() {
            *slot = (index % maps as u64) as u16;
            index /= maps as u64;
        }
        TileAddress(w)
    }

    /// Lexicographic index among words of the same length.
    pub fn index(&self, maps: usize) -> u64 {
        self.0
            .iter()
            .fold(0u64, |acc, &l| acc * maps as u64 + l as u64)
    }

    pub fn letters(&self) -> &[u16] {
        &self.0
    }

    pub fn level(&self) -> usize {
        self.0.len()
    }

    pub fn child(&self, j: usize) -> Self {
        let mut w = self.0.clone();
        w.push(j as u16);
        TileAddress(w)
    }

    pub fn concat(&self, other: &TileAddress) -> Self {
        let mut w = self.0.clone();
        w.extend_from_slice(&other.0);
        TileAddress(w)
    }

    pub fn prefix(&self, n: usize) -> Self {
        TileAddress(self.0[..n.min(self.0.len())].to_vec())
    }

    pub fn check(&self, maps: usize) -> Result<(), TilingError> {
        match self.0.iter().find(|&&l| l as usize >= maps) {
            Some(&l) => Err(TilingError::LetterOutOfRange { letter: l as usize, maps }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for TileAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        f.write_str(&parts.join("."))
    }
}

/// Highest level whose addresses fit a `u64` index.
pub fn max_level(maps: usize) -> usize {
    (63.0 / (maps as f64).log2()).floor() as usize
}

/// Level `m` with `2^{-m-1} ≤ r < 2^{-m}` (and `m = 0` at `r = 1`).
pub fn level_for_radius(r: f64) -> Result<usize, TilingError> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(TilingError::RadiusOutOfRange(r));
    }
    Ok((-r.log2()).floor().max(0.0) as usize)
}

/// First-layer digits `{0, ½}^{n1}` crossed with vertical offsets
/// `{0, ¼, ½, ¾}^{n2}` scaled by `vertical_step`; `2^Q` digits in total.
pub fn default_digits(spec: &GroupSpec, vertical_step: f64) -> Vec<Point> {
    let n1 = spec.n1();
    let n2 = spec.n2();
    let mut out = Vec::with_capacity(1 << spec.homogeneous_dim());
    for h in 0..(1usize << n1) {
        for v in 0..(1usize << (2 * n2)) {
            let mut p = Point::zeros(spec.dim());
            for c in 0..n1 {
                if (h >> (n1 - 1 - c)) & 1 == 1 {
                    p.coords_mut()[c] = 0.5;
                }
            }
            for k in 0..n2 {
                let digit = (v >> (2 * (n2 - 1 - k))) & 3;
                p.coords_mut()[n1 + k] = 0.25 * digit as f64 * vertical_step;
            }
            out.push(p);
        }
    }
    out
}

/// Default vertical step; certified by [`certify_tiling`] for `heisenberg:1`.
pub const DEFAULT_VERTICAL_STEP: f64 = 1.0;

/// Occupancy bitmap over a coordinate box.
#[derive(Clone, Debug)]
struct Occupancy {
    bbox: BBox,
    cells: Vec<usize>,
    width: Vec<f64>,
    bits: Vec<u64>,
    /// Cells within one cell of an occupied one; bitmap misses of points
    /// of `T` are only looked for here.
    near: Vec<u64>,
}

impl Occupancy {
    fn build(bbox: BBox, cells_per_axis: usize, cloud: &[f64]) -> Self {
        let d = bbox.dim();
        let cells = vec![cells_per_axis; d];
        let width: Vec<f64> = bbox.widths().iter().map(|w| w / cells_per_axis as f64).collect();
        // Padded grid for the morphological closing.
        let padded: Vec<usize> = cells.iter().map(|c| c + 2).collect();
        let total: usize = padded.iter().product();
        let mut grid = vec![false; total];
        let stride = strides(&padded);
        for p in cloud.chunks_exact(d) {
            let mut idx = 0;
            for c in 0..d {
                let k = ((p[c] - bbox.lo[c]) / width[c]).floor() as isize;
                let k = k.clamp(0, cells[c] as isize - 1) as usize;
                idx += (k + 1) * stride[c];
            }
            grid[idx] = true;
        }
        // Closing with a 3^d cube, done axis by axis.
        for c in 0..d {
            grid = shift_filter(&grid, &padded, &stride, c, true);
        }
        for c in 0..d {
            grid = shift_filter(&grid, &padded, &stride, c, false);
        }
        let mut near_grid = grid.clone();
        for c in 0..d {
            near_grid = shift_filter(&near_grid, &padded, &stride, c, true);
        }
        let pack = |g: &[bool]| {
            let n: usize = cells.iter().product();
            let mut bits = vec![0u64; n.div_ceil(64)];
            for (flat, bit) in bits_iter(&cells) {
                let mut pidx = 0;
                for c in 0..d {
                    pidx += (flat[c] + 1) * stride[c];
                }
                if g[pidx] {
                    bits[bit / 64] |= 1 << (bit % 64);
                }
            }
            bits
        };
        let bits = pack(&grid);
        let near = pack(&near_grid);
        Occupancy { bbox, cells, width, bits, near }
    }

    fn cell(&self, y: &[f64]) -> Option<usize> {
        let mut idx = 0usize;
        for c in 0..y.len() {
            let k = ((y[c] - self.bbox.lo[c]) / self.width[c]).floor();
            if !(k >= 0.0 && (k as usize) < self.cells[c]) {
                return None;
            }
            idx = idx * self.cells[c] + k as usize;
        }
        Some(idx)
    }

    fn contains(&self, y: &[f64]) -> bool {
        self.cell(y).is_some_and(|i| self.bits[i / 64] >> (i % 64) & 1 == 1)
    }

    fn is_near(&self, y: &[f64]) -> bool {
        self.cell(y).is_some_and(|i| self.near[i / 64] >> (i % 64) & 1 == 1)
    }

    fn occupied_fraction(&self) -> f64 {
        let n: usize = self.cells.iter().product();
        self.bits.iter().map(|b| b.count_ones() as usize).sum::<usize>() as f64 / n as f64
    }
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for c in (0..dims.len().saturating_sub(1)).rev() {
        s[c] = s[c + 1] * dims[c + 1];
    }
    s
}

/// Row-major multi-indices with their flat position.
fn bits_iter(dims: &[usize]) -> impl Iterator<Item = (Vec<usize>, usize)> + '_ {
    let n: usize = dims.iter().product();
    let st = strides(dims);
    (0..n).map(move |flat| {
        let idx = (0..dims.len()).map(|c| (flat / st[c]) % dims[c]).collect();
        (idx, flat)
    })
}

/// One-axis dilation (`grow`) or erosion with a width-3 window.
fn shift_filter(grid: &[bool], dims: &[usize], stride: &[usize], axis: usize, grow: bool) -> Vec<bool> {
    let mut out = grid.to_vec();
    let s = stride[axis];
    for (i, o) in out.iter_mut().enumerate() {
        let k = (i / s) % dims[axis];
        // Outside the padded grid counts as empty for both passes.
        let left = k > 0 && grid[i - s];
        let right = k + 1 < dims[axis] && grid[i + s];
        *o = if grow {
            grid[i] || left || right
        } else {
            grid[i] && left && right
        };
    }
    out
}

/// An iterated function system of half-homotheties with derived geometry.
#[derive(Clone, Debug)]
pub struct TileSystem {
    spec: GroupSpec,
    maps: Vec<Homothety>,
    child_boxes: Vec<BBox>,
    center: Point,
    r_in: f64,
    r_out: f64,
    diam: f64,
    bbox: BBox,
    cloud_level: usize,
    cloud: GridIndex,
    occupancy: Occupancy,
}

/// Checks count and distinctness, then builds the system.
pub fn build_system(spec: &GroupSpec, digits: &[Point]) -> Result<TileSystem, TilingError> {
    for (i, a) in digits.iter().enumerate() {
        for (j, b) in digits.iter().enumerate().skip(i + 1) {
            if a.max_abs_diff(b) <= 1e-12 {
                return Err(TilingError::DuplicateDigit { first: i, second: j });
            }
        }
    }
    build_system_unchecked(spec, digits)
}

/// Like [`build_system`] but admits repeated digits, for certification
/// experiments on defective systems. The digit count is still enforced.
pub fn build_system_unchecked(spec: &GroupSpec, digits: &[Point]) -> Result<TileSystem, TilingError> {
    let m = 1usize << spec.homogeneous_dim();
    if digits.len() != m {
        return Err(TilingError::WrongDigitCount { expected: m, got: digits.len() });
    }
    for d in digits {
        spec.check(d)?;
    }
    TileSystem::assemble(spec.clone(), digits.to_vec())
}

/// The system for a named spec with [`default_digits`].
pub fn default_system(spec: &GroupSpec) -> Result<TileSystem, TilingError> {
    build_system(spec, &default_digits(spec, DEFAULT_VERTICAL_STEP))
}

impl TileSystem {
    fn assemble(spec: GroupSpec, digits: Vec<Point>) -> Result<Self, TilingError> {
        let maps: Vec<Homothety> = digits.into_iter().map(|a| Homothety { translation: a }).collect();
        let d = spec.dim();
        let affine: Vec<AffineMap> = maps
            .iter()
            .map(|h| AffineMap::translate_dilate(&spec, &h.translation, 0.5))
            .collect();

        // Barycenter of the self-similar measure: fixed point of the average map.
        let mut center = vec![0.0; d];
        for _ in 0..200 {
            let mut next = vec![0.0; d];
            for a in &affine {
                for (n, v) in next.iter_mut().zip(a.apply(&center)) {
                    *n += v;
                }
            }
            center = next.into_iter().map(|v| v / maps.len() as f64).collect();
        }
        let center = Point::new(center);

        // Smallest box with ∪ f_j(B) ⊆ B, by iterating the hull of images.
        let scale = 4.0
            * (1.0
                + maps
                    .iter()
                    .flat_map(|h| h.translation.coords().iter().map(|v| v.abs()))
                    .fold(0.0, f64::max));
        let mut bbox = BBox::new(
            center.coords().iter().map(|c| c - scale).collect(),
            center.coords().iter().map(|c| c + scale).collect(),
        );
        for _ in 0..200 {
            let mut next = BBox::empty(d);
            for a in &affine {
                let (lo, hi) = a.image_box(&bbox.lo, &bbox.hi);
                next = next.union(&BBox::new(lo, hi));
            }
            bbox = next;
        }
        let pad: Vec<f64> = bbox.widths().iter().map(|w| 1e-9 * w.max(1.0)).collect();
        let bbox = bbox.expanded(&pad);
        let child_boxes = affine
            .iter()
            .map(|a| {
                let (lo, hi) = a.image_box(&bbox.lo, &bbox.hi);
                BBox::new(lo, hi)
            })
            .collect();

        let mut sys = TileSystem {
            cloud: GridIndex::new(d, Vec::new(), vec![1.0; d]),
            occupancy: Occupancy {
                bbox: bbox.clone(),
                cells: vec![1; d],
                width: bbox.widths(),
                bits: vec![u64::MAX],
                near: vec![u64::MAX],
            },
            spec,
            maps,
            child_boxes,
            center,
            r_in: 0.0,
            r_out: 0.0,
            diam: 0.0,
            bbox,
            cloud_level: 0,
        };

        let m = sys.maps.len();
        let cloud_level = ((CLOUD_BUDGET as f64).ln() / (m as f64).ln()).floor().max(1.0) as usize;
        let cloud = sys.centers_at_level(cloud_level);
        let mut far: f64 = 0.0;
        let mut scratch = Point::zeros(d);
        for p in cloud.chunks_exact(d) {
            scratch.coords_mut().copy_from_slice(p);
            far = far.max(sys.spec.quasi_dist(&sys.center, &scratch));
        }
        // T_w ⊂ B(p_w, 2^{-d} R) for every level-d word, so R ≤ M_d + 2^{-d} R.
        let shrink = 0.5f64.powi(cloud_level as i32);
        sys.r_out = far / (1.0 - shrink);

        let diam_level = (1..=cloud_level)
            .rev()
            .find(|&l| m.pow(l as u32) <= 4096)
            .unwrap_or(1);
        let coarse = sys.centers_at_level(diam_level);
        let mut pair_max: f64 = 0.0;
        let mut a = Point::zeros(d);
        let mut b = Point::zeros(d);
        for (i, p) in coarse.chunks_exact(d).enumerate() {
            a.coords_mut().copy_from_slice(p);
            for q in coarse.chunks_exact(d).skip(i + 1) {
                b.coords_mut().copy_from_slice(q);
                pair_max = pair_max.max(sys.spec.quasi_dist(&a, &b));
            }
        }
        let diam_shrink = 0.5f64.powi(diam_level as i32);
        sys.diam = (pair_max + 2.0 * diam_shrink * sys.r_out).min(2.0 * sys.r_out);

        let bits_per_axis = ((BITMAP_BUDGET as f64).log2() / d as f64).floor() as usize;
        let cells_per_axis = 1usize << cloud_level.min(bits_per_axis).max(2);
        sys.occupancy = Occupancy::build(sys.bbox.clone(), cells_per_axis, &cloud);
        sys.cloud_level = cloud_level;
        sys.cloud = GridIndex::for_radius(&sys.spec, cloud, sys.cloud_radius());
        sys.r_in = sys.ray_inner_radius(512, 0);
        Ok(sys)
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn maps(&self) -> &[Homothety] {
        &self.maps
    }

    /// `M = 2^Q`.
    pub fn map_count(&self) -> usize {
        self.maps.len()
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn inner_radius(&self) -> f64 {
        self.r_in
    }

    pub fn outer_radius(&self) -> f64 {
        self.r_out
    }

    /// Estimated `diam T` (never above `2 R^out`).
    pub fn diameter(&self) -> f64 {
        self.diam
    }

    /// Coordinate box enclosing `T`.
    pub fn bounding_box(&self) -> &BBox {
        &self.bbox
    }

    /// Level of the exhaustive center cloud backing membership tests.
    pub fn cloud_level(&self) -> usize {
        self.cloud_level
    }

    /// Radius around cloud points that covers `T`: `2^{-d} R^out`.
    pub fn cloud_radius(&self) -> f64 {
        0.5f64.powi(self.cloud_level as i32) * self.r_out
    }

    /// Fraction of the bounding box marked occupied.
    pub fn occupied_fraction(&self) -> f64 {
        self.occupancy.occupied_fraction()
    }

    pub fn check_address(&self, w: &TileAddress) -> Result<(), TilingError> {
        w.check(self.maps.len())
    }

    /// `g_w = f_w(0)`, so that `f_w(y) = g_w · δ_{2^{-m}}(y)`.
    pub fn address_offset(&self, w: &TileAddress) -> Point {
        let mut g = self.spec.identity();
        let mut s = 1.0;
        for &l in w.letters() {
            g = self.spec.mul(&g, &self.spec.dil(s, &self.maps[l as usize].translation));
            s *= 0.5;
        }
        g
    }

    pub fn apply_address(&self, w: &TileAddress, p: &Point) -> Result<Point, TilingError> {
        self.check_address(w)?;
        self.spec.check(p)?;
        Ok(self.apply_unchecked(w, p))
    }

    fn apply_unchecked(&self, w: &TileAddress, p: &Point) -> Point {
        let mut y = p.clone();
        for &l in w.letters().iter().rev() {
            y = self.maps[l as usize].apply(&self.spec, &y);
        }
        y
    }

    /// `f_w^{-1}(q) = δ_{2^m}(g_w^{-1} q)`.
    pub fn pull_back(&self, w: &TileAddress, q: &Point) -> Result<Point, TilingError> {
        self.check_address(w)?;
        self.spec.check(q)?;
        let g = self.address_offset(w);
        Ok(self.spec.dil(2f64.powi(w.level() as i32), &self.spec.left_quotient(&g, q)))
    }

    /// `p_w = f_w(p)`.
    pub fn tile_center(&self, w: &TileAddress) -> Result<Point, TilingError> {
        self.apply_address(w, &self.center)
    }

    /// `(R^in_w, R^out_w) = 2^{-m} (R^in, R^out)`.
    pub fn tile_radii(&self, w: &TileAddress) -> (f64, f64) {
        let s = 0.5f64.powi(w.level() as i32);
        (s * self.r_in, s * self.r_out)
    }

    /// Flat coordinates of all level-`level` centers in lexicographic order.
    pub fn centers_at_level(&self, level: usize) -> Vec<f64> {
        let d = self.spec.dim();
        let mut out = Vec::with_capacity(self.maps.len().pow(level as u32) * d);
        self.for_each_center(level, |p| out.extend_from_slice(p.coords()));
        out
    }

    /// Streams level-`level` centers in lexicographic word order.
    pub fn for_each_center(&self, level: usize, mut f: impl FnMut(&Point)) {
        self.for_each_image(level, &self.center, &mut f);
    }

    /// Streams `f_w(p)` over all words of length `level`, lexicographically.
    pub fn for_each_image(&self, level: usize, p: &Point, f: &mut impl FnMut(&Point)) {
        // Depth-first over offsets g_w; the image is g_w · δ_{2^{-level}} p.
        let tail = self.spec.dil(0.5f64.powi(level as i32), p);
        let scaled: Vec<Vec<Point>> = (0..level)
            .map(|l| {
                let s = 0.5f64.powi(l as i32);
                self.maps.iter().map(|h| self.spec.dil(s, &h.translation)).collect()
            })
            .collect();
        let mut stack: Vec<Point> = vec![self.spec.identity()];
        let mut letters: Vec<usize> = vec![0];
        if level == 0 {
            f(&self.spec.mul(&stack[0], &tail));
            return;
        }
        loop {
            let depth = letters.len() - 1;
            let j = letters[depth];
            if j == self.maps.len() {
                letters.pop();
                stack.pop();
                if letters.is_empty() {
                    return;
                }
                *letters.last_mut().unwrap() += 1;
                continue;
            }
            let g = self.spec.mul(&stack[depth], &scaled[depth][j]);
            if depth + 1 == level {
                f(&self.spec.mul(&g, &tail));
                letters[depth] += 1;
            } else {
                stack.push(g);
                letters.push(0);
            }
        }
    }

    /// Membership in `T`: the occupancy bitmap, with a cloud fallback for
    /// bitmap misses, which cluster along the fractal boundary.
    pub fn contains(&self, y: &Point) -> bool {
        self.bbox.contains(y.coords())
            && (self.occupancy.contains(y.coords()) || self.occupancy.is_near(y.coords()) && self.contains_precise(y))
    }

    /// Membership at cloud resolution: some level-`d` center within
    /// `2^{-d} R^out`. Slower and tighter than [`Self::contains`].
    pub fn contains_precise(&self, y: &Point) -> bool {
        self.cloud.any_within(&self.spec, y, self.cloud_radius())
    }

    /// Whether child `j` contains `y`; the pulled-back point is left in
    /// `back` either way.
    fn child_pullback(&self, j: usize, y: &Point, back: &mut Point) -> bool {
        if !self.child_boxes[j].contains(y.coords()) {
            return false;
        }
        self.spec.left_quotient_into(&self.maps[j].translation, y, back);
        self.spec.dil_in_place(2.0, back);
        self.contains(back)
    }

    /// Lexicographic indices of level-`m` tiles containing `y`, by descent
    /// through approximate child membership.
    pub fn locate(&self, y: &Point, m: usize) -> Vec<u64> {
        let mut out = Vec::new();
        self.descend(y, m, |level, index| {
            if level == m {
                out.push(index);
            }
        });
        out
    }

    /// Visits every `(level, index)` with `level ≤ m` whose tile contains `y`.
    pub fn descend(&self, y: &Point, m: usize, mut visit: impl FnMut(usize, u64)) {
        if !self.contains(y) {
            return;
        }
        let mm = self.maps.len() as u64;
        let mut stack = vec![(0usize, 0u64, y.clone())];
        let mut back = y.clone();
        while let Some((level, index, p)) = stack.pop() {
            visit(level, index);
            if level == m {
                continue;
            }
            for j in 0..self.maps.len() {
                if self.child_pullback(j, &p, &mut back) {
                    stack.push((level + 1, index * mm + j as u64, back.clone()));
                }
            }
        }
    }

    /// Point `f_{w·u}(p)` for a uniform random suffix `u` of length `depth`.
    pub fn random_point<R: Rng + ?Sized>(&self, w: &TileAddress, depth: usize, rng: &mut R) -> Point {
        let mut y = self.center.clone();
        for _ in 0..depth {
            let j = rng.gen_range(0..self.maps.len());
            y = self.maps[j].apply(&self.spec, &y);
        }
        self.apply_unchecked(w, &y)
    }

    /// Ray-marching estimate of the inner radius: for each random gauge
    /// direction, the first distance at which the precise membership test
    /// fails, refined by bisection. The minimum over directions is returned.
    fn ray_inner_radius(&self, n_dirs: usize, seed: u64) -> f64 {
        let step = 0.5 * self.cloud_radius();
        let limit = 2.0 * self.r_out;
        let exits = seeding::chunked(seed, "tiling/inner-radius", n_dirs, 64, |rng, _, len| {
            (0..len)
                .map(|_| {
                    let u = self.spec.sample_unit_sphere(rng);
                    let at = |t: f64| self.spec.mul(&self.center, &self.spec.dil(t, &u));
                    let mut t = 0.0;
                    while t < limit && self.contains_precise(&at(t)) {
                        t += step;
                    }
                    let (mut lo, mut hi) = ((t - step).max(0.0), t);
                    for _ in 0..20 {
                        let mid = 0.5 * (lo + hi);
                        if self.contains_precise(&at(mid)) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    lo
                })
                .collect::<Vec<f64>>()
        });
        exits.into_iter().fold(f64::INFINITY, f64::min).min(self.r_out)
    }
}

/// Points `f_{w·u}(p)` for `n` uniform random suffixes `u` of length `depth`.
pub fn sample_tile(sys: &TileSystem, w: &TileAddress, n: usize, depth: usize, seed: u64) -> Result<Vec<Point>, TilingError> {
    sys.check_address(w)?;
    Ok(seeding::chunked(seed, "tiling/sample", n, CHUNK, |rng, _, len| {
        (0..len).map(|_| sys.random_point(w, depth, rng)).collect()
    }))
}

/// Inner and outer radius estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Radii {
    #[serde(rename = "R_in")]
    pub r_in: f64,
    #[serde(rename = "R_out")]
    pub r_out: f64,
    pub diameter: f64,
    pub cloud_level: usize,
    pub directions: usize,
}

/// Re-estimates the radii with `n_samples` ray directions.
///
/// `R^out` is the largest center distance over the exhaustive level-`d`
/// cloud, corrected by `1 / (1 - 2^{-d})` for the sub-tile extent; `R^in` is
/// the shortest first exit from `T` along rays out of the center.
pub fn estimate_radii(sys: &TileSystem, n_samples: usize, seed: u64) -> Result<Radii, TilingError> {
    if n_samples < 8 {
        return Err(TilingError::InsufficientSamples { needed: 8, got: n_samples });
    }
    Ok(Radii {
        r_in: sys.ray_inner_radius(n_samples, seed),
        r_out: sys.r_out,
        diameter: sys.diam,
        cloud_level: sys.cloud_level,
        directions: n_samples,
    })
}

/// Parameters of [`certify_tiling`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    /// Monte Carlo points.
    pub n_samples: usize,
    /// Address length of each sample.
    pub depth: usize,
    /// Largest admissible pairwise overlap, as a fraction of `|T|`.
    pub tol: f64,
    pub seed: u64,
    /// Tile whose children are compared; the root for the base tile.
    pub parent: TileAddress,
    /// Balls used for the `K` estimate at level 2; 0 skips it.
    pub k_balls: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            n_samples: 1_000_000,
            depth: 12,
            tol: 1e-2,
            seed: 0,
            parent: TileAddress::root(),
            k_balls: 300,
        }
    }
}

/// Outcome of [`certify_tiling`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub passed: bool,
    pub tol: f64,
    pub n_samples: usize,
    pub cells_per_axis: usize,
    /// `[j, j', overlap / |T|]` for every pair of children.
    pub overlaps: Vec<(usize, usize, f64)>,
    pub max_overlap: f64,
    pub worst_pair: (usize, usize),
    /// Occupied-cell volume of the parent tile.
    pub volume: f64,
    /// Same at half the resolution; a null set shrinks under refinement.
    pub volume_coarse: f64,
    /// `Σ_j |T_j| / |T|` from occupied cells; boundary cells count twice.
    pub child_volume_sum_ratio: f64,
    #[serde(rename = "K_estimate")]
    pub k_estimate: Option<usize>,
    #[serde(rename = "R_in")]
    pub r_in: f64,
    #[serde(rename = "R_out")]
    pub r_out: f64,
}

/// Monte Carlo tiling certificate.
///
/// Samples carry their first letter below `parent`. Each pairwise overlap is
/// `Σ_cells min(n_j, n_j') / N` on a voxel grid with about 40 samples per
/// occupied cell, which estimates `|T_j ∩ T_j'| / |T|`.
pub fn certify_tiling(sys: &TileSystem, cfg: &CertifyConfig) -> Result<CertificationReport, TilingError> {
    sys.check_address(&cfg.parent)?;
    if cfg.n_samples < 1000 {
        return Err(TilingError::InsufficientSamples { needed: 1000, got: cfg.n_samples });
    }
    let spec = &sys.spec;
    let d = spec.dim();
    let m = sys.maps.len();
    let depth = cfg.depth.max(2);
    let samples: Vec<(u16, Point)> = seeding::chunked(cfg.seed, "tiling/certify", cfg.n_samples, CHUNK, |rng, _, len| {
        (0..len)
            .map(|_| {
                let j = rng.gen_range(0..m);
                let w = cfg.parent.child(j);
                (j as u16, sys.random_point(&w, depth - 1, rng))
            })
            .collect()
    });
    let n = samples.len();
    let bbox = BBox::of_points(d, samples.iter().map(|(_, p)| p.coords()));
    // Even, so the midplanes where axis-aligned children meet are cell faces.
    let cells = ((n as f64 / 40.0).powf(1.0 / d as f64).round() as usize).max(4).next_multiple_of(2);

    let cell_counts = |cells: usize| -> Vec<(u64, u16)> {
        let widths: Vec<f64> = bbox.widths().iter().map(|w| w.max(1e-300) / cells as f64).collect();
        let mut keyed: Vec<(u64, u16)> = samples
            .iter()
            .map(|(j, p)| {
                let mut key = 0u64;
                for c in 0..d {
                    let k = ((p[c] - bbox.lo[c]) / widths[c]).floor() as i64;
                    key = key * cells as u64 + k.clamp(0, cells as i64 - 1) as u64;
                }
                (key, *j)
            })
            .collect();
        keyed.sort_unstable();
        keyed
    };
    let cell_volume = |cells: usize| bbox.volume() / (cells as f64).powi(d as i32);

    let keyed = cell_counts(cells);
    let mut overlap = vec![0usize; m * m];
    let mut occupied = 0usize;
    let mut child_cells = 0usize;
    let mut i = 0;
    let mut counts: Vec<(u16, usize)> = Vec::new();
    while i < keyed.len() {
        let key = keyed[i].0;
        counts.clear();
        while i < keyed.len() && keyed[i].0 == key {
            let j = keyed[i].1;
            match counts.last_mut() {
                Some((last, c)) if *last == j => *c += 1,
                _ => counts.push((j, 1)),
            }
            i += 1;
        }
        occupied += 1;
        child_cells += counts.len();
        for a in 0..counts.len() {
            for b in (a + 1)..counts.len() {
                let (ja, ca) = counts[a];
                let (jb, cb) = counts[b];
                overlap[ja as usize * m + jb as usize] += ca.min(cb);
            }
        }
    }
    let coarse_cells = (cells / 2).max(2);
    let coarse = cell_counts(coarse_cells);
    let mut coarse_occupied = 0usize;
    for (k, w) in coarse.iter().enumerate() {
        if k == 0 || coarse[k - 1].0 != w.0 {
            coarse_occupied += 1;
        }
    }

    let mut overlaps = Vec::with_capacity(m * (m - 1) / 2);
    let mut max_overlap = 0.0;
    let mut worst_pair = (0, 1);
    for a in 0..m {
        for b in (a + 1)..m {
            let r = overlap[a * m + b] as f64 / n as f64;
            if r > max_overlap {
                max_overlap = r;
                worst_pair = (a, b);
            }
            overlaps.push((a, b, r));
        }
    }
    let volume = occupied as f64 * cell_volume(cells);
    let volume_coarse = coarse_occupied as f64 * cell_volume(coarse_cells);
    let k_estimate = if cfg.k_balls > 0 {
        Some(estimate_k(sys, 2, cfg.k_balls, 256, cfg.seed)?.k)
    } else {
        None
    };
    let passed = max_overlap < cfg.tol && volume > 0.0 && volume >= 0.5 * volume_coarse;
    let (r_in, r_out) = sys.tile_radii(&cfg.parent);
    Ok(CertificationReport {
        passed,
        tol: cfg.tol,
        n_samples: n,
        cells_per_axis: cells,
        overlaps,
        max_overlap,
        worst_pair,
        volume,
        volume_coarse,
        child_volume_sum_ratio: child_cells as f64 / occupied as f64,
        k_estimate,
        r_in,
        r_out,
    })
}

/// Number of level-`m` tiles, `2^{-m-1} ≤ r < 2^{-m}`, meeting `B(q, r)`.
///
/// The ball is probed by `n_probe` uniform points plus its center; a tile
/// counts when its approximate region contains a probe.
pub fn count_tiles_meeting_ball<R: Rng + ?Sized>(
    sys: &TileSystem,
    q: &Point,
    r: f64,
    n_probe: usize,
    rng: &mut R,
) -> Result<usize, TilingError> {
    let m = level_for_radius(r)?;
    let max = max_level(sys.maps.len());
    if m > max {
        return Err(TilingError::LevelTooDeep { level: m, max });
    }
    sys.spec.check(q)?;
    let mut hit: Vec<u64> = sys.locate(q, m);
    for _ in 0..n_probe {
        let y = sys.spec.sample_ball(q, r, rng);
        hit.extend(sys.locate(&y, m));
    }
    hit.sort_unstable();
    hit.dedup();
    Ok(hit.len())
}

/// Empirical bounded-overlap constant at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    pub level: usize,
    /// Largest count over the sampled balls.
    pub k: usize,
    pub mean: f64,
    pub n_balls: usize,
}

/// Maximum of [`count_tiles_meeting_ball`] over balls with radii uniform in
/// `[2^{-m-1}, 2^{-m})`.
///
/// Centers are uniform in `B(p, R^in / 2)`, away from `∂T`, so that the
/// sampled neighbourhoods do not depend on the level.
pub fn estimate_k(sys: &TileSystem, m: usize, n_balls: usize, n_probe: usize, seed: u64) -> Result<KEstimate, TilingError> {
    let lo = 0.5f64.powi(m as i32 + 1);
    let label = format!("tiling/k/{m}");
    let counts: Vec<Result<usize, TilingError>> = seeding::chunked(seed, &label, n_balls, 16, |rng, _, len| {
        (0..len)
            .map(|_| {
                let q = sys.spec.sample_ball(&sys.center, 0.5 * sys.r_in, rng);
                let r = rng.gen_range(lo..2.0 * lo);
                count_tiles_meeting_ball(sys, &q, r, n_probe, rng)
            })
            .collect()
    });
    let counts: Vec<usize> = counts.into_iter().collect::<Result<_, _>>()?;
    Ok(KEstimate {
        level: m,
        k: counts.iter().copied().max().unwrap_or(0),
        mean: counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64,
        n_balls,
    })
}

/// Largest number of level-`m` tiles containing one of `n_points` random
/// points of `T`.
pub fn max_multiplicity(sys: &TileSystem, m: usize, n_points: usize, seed: u64) -> usize {
    seeding::chunked(seed, "tiling/multiplicity", n_points, CHUNK, |rng, _, len| {
        (0..len)
            .map(|_| sys.locate(&sys.random_point(&TileAddress::root(), m + 10, rng), m).len())
            .collect()
    })
    .into_iter()
    .max()
    .unwrap_or(0)
}

/// Writes `level,word,x1,...,xD` rows.
pub fn write_points_csv<W: Write>(out: &mut W, dim: usize, rows: &[(TileAddress, Point)]) -> io::Result<()> {
    let header: Vec<String> = (1..=dim).map(|c| format!("x{c}")).collect();
    writeln!(out, "level,word,{}", header.join(","))?;
    for (w, p) in rows {
        let coords: Vec<String> = p.coords().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{},{}", w.level(), w, coords.join(","))?;
    }
    Ok(())
}

/// `per_tile` sample points for every level-`level` tile, in address order.
pub fn render_level(sys: &TileSystem, level: usize, per_tile: usize, depth: usize, seed: u64) -> Vec<(TileAddress, Point)> {
    let m = sys.maps.len();
    let n_tiles = m.pow(level as u32);
    seeding::chunked(seed, "tiling/render", n_tiles, 64, |rng, start, len| {
        let mut rows = Vec::with_capacity(len * per_tile);
        for t in start..start + len {
            let w = TileAddress::from_index(t as u64, level, m);
            for _ in 0..per_tile {
                rows.push((w.clone(), sys.random_point(&w, depth, rng)));
            }
        }
        rows
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cube() -> TileSystem {
        default_system(&GroupSpec::euclidean(3).unwrap()).unwrap()
    }

    #[test]
    fn default_digits_layout() {
        let h = GroupSpec::heisenberg(1).unwrap();
        let d = default_digits(&h, 1.0);
        assert_eq!(d.len(), 16);
        assert_eq!(d[0].coords(), &[0.0, 0.0, 0.0]);
        assert_eq!(d[3].coords(), &[0.0, 0.0, 0.75]);
        assert_eq!(d[4].coords(), &[0.0, 0.5, 0.0]);
        assert_eq!(d[15].coords(), &[0.5, 0.5, 0.75]);
        let e = default_digits(&GroupSpec::euclidean(3).unwrap(), 1.0);
        assert_eq!(e.len(), 8);
        assert_eq!(e[5].coords(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn digit_count_and_duplicates() {
        let h = GroupSpec::heisenberg(1).unwrap();
        let mut d = default_digits(&h, 1.0);
        d.pop();
        assert_eq!(
            build_system(&h, &d).unwrap_err(),
            TilingError::WrongDigitCount { expected: 16, got: 15 }
        );
        d.push(d[3].clone());
        assert_eq!(
            build_system(&h, &d).unwrap_err(),
            TilingError::DuplicateDigit { first: 3, second: 15 }
        );
        assert!(build_system_unchecked(&h, &d).is_ok());
    }

    #[test]
    fn cube_geometry() {
        let s = cube();
        assert!(s.center().max_abs_diff(&Point::from([0.5, 0.5, 0.5])) < 1e-12);
        assert!((s.outer_radius() - 3f64.sqrt() / 2.0).abs() < 1e-9);
        assert!((s.diameter() - 3f64.sqrt()).abs() < 1e-9);
        assert!((s.inner_radius() - 0.5).abs() < 0.02, "{}", s.inner_radius());
        assert_eq!(s.bounding_box().lo.iter().map(|v| v.round()).collect::<Vec<_>>(), vec![0.0; 3]);
        assert!((s.occupied_fraction() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn address_algebra() {
        let s = cube();
        let p = Point::from([0.2, 0.9, 0.4]);
        assert_eq!(s.apply_address(&TileAddress::root(), &p).unwrap(), p);
        let w = TileAddress::new([3u16]);
        assert_eq!(s.apply_address(&w, &p).unwrap(), s.maps()[3].apply(s.spec(), &p));
        assert!(matches!(
            s.apply_address(&TileAddress::new([8u16]), &p),
            Err(TilingError::LetterOutOfRange { letter: 8, maps: 8 })
        ));
        let w = TileAddress::new([1u16, 7, 2]);
        let img = s.apply_address(&w, &p).unwrap();
        assert!(s.pull_back(&w, &img).unwrap().max_abs_diff(&p) < 1e-12);
        let g = s.address_offset(&w);
        let via_offset = s.spec().mul(&g, &s.spec().dil(0.125, &p));
        assert!(via_offset.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn address_indexing() {
        let w = TileAddress::new([3u16, 0, 15]);
        assert_eq!(w.index(16), 3 * 256 + 15);
        assert_eq!(TileAddress::from_index(w.index(16), 3, 16), w);
        assert_eq!(w.to_string(), "3.0.15");
        assert_eq!(max_level(16), 15);
    }

    #[test]
    fn centers_stream_in_lexicographic_order() {
        let h = default_system(&GroupSpec::heisenberg(1).unwrap()).unwrap();
        let flat = h.centers_at_level(2);
        assert_eq!(flat.len(), 256 * 3);
        for idx in [0u64, 17, 255] {
            let w = TileAddress::from_index(idx, 2, 16);
            let c = h.tile_center(&w).unwrap();
            let got = &flat[idx as usize * 3..idx as usize * 3 + 3];
            assert!(Point::from_slice(got).max_abs_diff(&c) < 1e-12);
        }
    }

    #[test]
    fn level_for_radius_brackets() {
        assert_eq!(level_for_radius(0.3).unwrap(), 1);
        assert_eq!(level_for_radius(0.25).unwrap(), 2);
        assert_eq!(level_for_radius(1.0).unwrap(), 0);
        assert!(level_for_radius(0.0).is_err());
        assert!(level_for_radius(1.5).is_err());
    }

    #[test]
    fn cube_samples_fill_unit_cube() {
        let s = cube();
        assert!(sample_tile(&s, &TileAddress::root(), 0, 10, 1).unwrap().is_empty());
        let pts = sample_tile(&s, &TileAddress::root(), 20_000, 10, 1).unwrap();
        let b = BBox::of_points(3, pts.iter().map(|p| p.coords()));
        for c in 0..3 {
            assert!(b.lo[c] >= -0.01 && b.lo[c] < 0.01);
            assert!(b.hi[c] <= 1.01 && b.hi[c] > 0.99);
        }
        assert_eq!(pts, sample_tile(&s, &TileAddress::root(), 20_000, 10, 1).unwrap());
    }

    #[test]
    fn cube_locate_is_exact_in_the_interior() {
        let s = cube();
        let y = Point::from([0.3, 0.6, 0.9]);
        let hits = s.locate(&y, 2);
        assert_eq!(hits.len(), 1);
        let w = TileAddress::from_index(hits[0], 2, 8);
        let back = s.pull_back(&w, &y).unwrap();
        assert!(back.coords().iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn cube_ball_counts() {
        let s = cube();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = s.tile_center(&TileAddress::new([0u16, 0])).unwrap();
        let n = count_tiles_meeting_ball(&s, &c, 0.2, 500, &mut rng).unwrap();
        assert!((1..=27).contains(&n), "{n}");
        assert!(count_tiles_meeting_ball(&s, &c, 1.5, 10, &mut rng).is_err());
    }

    #[test]
    fn cube_certifies() {
        let s = cube();
        let cfg = CertifyConfig { n_samples: 100_000, k_balls: 0, ..Default::default() };
        let r = certify_tiling(&s, &cfg).unwrap();
        assert!(r.passed, "{}", r.max_overlap);
        assert!(r.max_overlap < 1e-3);
        assert!((r.volume - 1.0).abs() < 0.1, "{}", r.volume);
        assert_eq!(r.overlaps.len(), 28);
    }

    #[test]
    fn csv_layout() {
        let s = cube();
        let rows = render_level(&s, 1, 2, 6, 3);
        assert_eq!(rows.len(), 16);
        let mut buf = Vec::new();
        write_points_csv(&mut buf, 3, &rows[..1]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("level,word,x1,x2,x3"));
        assert!(lines.next().unwrap().starts_with("1,0,"));
    }
}
