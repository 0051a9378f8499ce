//! Dyadic-net covers and box-counting dimension, Cantor sub-systems of a tile
//! system with prescribed dimension, and Frostman growth checks.
//!
//! A Cantor sub-system keeps `k_ℓ` of the `M` children at every level `ℓ`,
//! with `Σ log₂ k_ℓ ≈ s·depth`. Its uniform measure lives on the level-`depth`
//! tile centers of the surviving words. The atoms are never materialized
//! unless asked for: ball masses and potentials walk the implicit tree, using
//! per-level barycenters and radius bounds for pruning.

use std::collections::{HashMap, HashSet};
use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::geometry::ball_half_widths;
use crate::group::{quasi_triangle_constant, GroupError, GroupSpec, Point};
use crate::seeding;
use crate::stats::{self, DecadeStat, LineFit};
use crate::tiling::{TileAddress, TileSystem, TilingError};

/// Levels with at most this many tiles use a dense bitset.
const DENSE_LEVEL_LIMIT: u64 = 1 << 28;
/// Upper limit on materialized atoms.
pub const MAX_MATERIALIZED_ATOMS: u64 = 1 << 22;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("point {index} lies outside the base tile region")]
    OutsideTile { index: usize },
    #[error("dimension fit needs at least 3 populated levels, got {usable}")]
    DegenerateFit { usable: usize },
    #[error("target dimension {s} outside (0, {q}]")]
    DimensionOutOfRange { s: f64, q: usize },
    #[error("depth {depth} outside [{min}, {max}]")]
    DepthOutOfRange { depth: usize, min: usize, max: usize },
    #[error("{atoms} atoms exceed the materialization limit {limit}")]
    TooManyAtoms { atoms: u64, limit: u64 },
    #[error("invalid radius range [{0}, {1}]")]
    InvalidRadii(f64, f64),
    #[error("measure has no mass")]
    EmptyMeasure,
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// Level-`m` tiles met by a point set, stored by lexicographic index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicCover {
    pub level: usize,
    pub maps: usize,
    pub indices: Vec<u64>,
    /// `2^{-m} · diam T`.
    pub tile_diameter: f64,
    /// Input points that no level-`m` tile claimed.
    pub unmatched: usize,
}

impl DyadicCover {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn addresses(&self) -> Vec<TileAddress> {
        self.indices
            .iter()
            .map(|&i| TileAddress::from_index(i, self.level, self.maps))
            .collect()
    }

    /// `Σ (diam T_w)^s` over the cover.
    pub fn content(&self, s: f64) -> f64 {
        if self.indices.is_empty() {
            0.0
        } else {
            self.indices.len() as f64 * self.tile_diameter.powf(s)
        }
    }
}

enum LevelSet {
    Dense(Vec<u64>),
    Sparse(HashSet<u64>),
}

impl LevelSet {
    fn new(tiles: u64) -> Self {
        if tiles <= DENSE_LEVEL_LIMIT {
            LevelSet::Dense(vec![0; tiles.div_ceil(64) as usize])
        } else {
            LevelSet::Sparse(HashSet::new())
        }
    }

    fn insert(&mut self, i: u64) {
        match self {
            LevelSet::Dense(bits) => bits[(i / 64) as usize] |= 1 << (i % 64),
            LevelSet::Sparse(set) => {
                set.insert(i);
            }
        }
    }

    fn count(&self) -> usize {
        match self {
            LevelSet::Dense(bits) => bits.iter().map(|b| b.count_ones() as usize).sum(),
            LevelSet::Sparse(set) => set.len(),
        }
    }

    fn sorted(&self) -> Vec<u64> {
        match self {
            LevelSet::Dense(bits) => bits
                .iter()
                .enumerate()
                .flat_map(|(w, &b)| (0..64).filter(move |k| b >> k & 1 == 1).map(move |k| w as u64 * 64 + k))
                .collect(),
            LevelSet::Sparse(set) => {
                let mut v: Vec<u64> = set.iter().copied().collect();
                v.sort_unstable();
                v
            }
        }
    }
}

/// Streams points into covers at a range of levels at once.
pub struct CoverCounter<'a> {
    sys: &'a TileSystem,
    levels: RangeInclusive<usize>,
    sets: Vec<LevelSet>,
    unmatched: Vec<usize>,
    seen: usize,
}

impl<'a> CoverCounter<'a> {
    pub fn new(sys: &'a TileSystem, levels: RangeInclusive<usize>) -> Result<Self, MeasureError> {
        let max = crate::tiling::max_level(sys.map_count());
        if *levels.end() > max {
            return Err(TilingError::LevelTooDeep { level: *levels.end(), max }.into());
        }
        let m = sys.map_count() as u64;
        let sets = levels.clone().map(|l| LevelSet::new(m.pow(l as u32))).collect();
        let unmatched = vec![0; levels.clone().count()];
        Ok(CoverCounter { sys, levels, sets, unmatched, seen: 0 })
    }

    /// Records the tiles containing `y`. Points outside `T` but within the
    /// doubled outer ball only count as unmatched.
    pub fn add(&mut self, y: &Point) -> Result<(), MeasureError> {
        let index = self.seen;
        self.seen += 1;
        self.sys.spec().check(y)?;
        if !self.sys.contains(y) {
            if self.sys.spec().quasi_dist(self.sys.center(), y) > 2.0 * self.sys.outer_radius() {
                return Err(MeasureError::OutsideTile { index });
            }
            self.unmatched.iter_mut().for_each(|u| *u += 1);
            return Ok(());
        }
        let lo = *self.levels.start();
        let mut hit: SmallVec<[bool; 16]> = SmallVec::from_elem(false, self.sets.len());
        let sets = &mut self.sets;
        self.sys.descend(y, *self.levels.end(), |level, idx| {
            if level >= lo {
                sets[level - lo].insert(idx);
                hit[level - lo] = true;
            }
        });
        for (u, h) in self.unmatched.iter_mut().zip(hit) {
            if !h {
                *u += 1;
            }
        }
        Ok(())
    }

    pub fn points_seen(&self) -> usize {
        self.seen
    }

    pub fn counts(&self) -> Vec<usize> {
        self.sets.iter().map(LevelSet::count).collect()
    }

    pub fn unmatched(&self) -> &[usize] {
        &self.unmatched
    }

    pub fn covers(&self) -> Vec<DyadicCover> {
        self.levels
            .clone()
            .zip(&self.sets)
            .zip(&self.unmatched)
            .map(|((level, set), &unmatched)| DyadicCover {
                level,
                maps: self.sys.map_count(),
                indices: set.sorted(),
                tile_diameter: self.sys.diameter() * 0.5f64.powi(level as i32),
                unmatched,
            })
            .collect()
    }

    /// Dimension fit from the counts gathered so far.
    pub fn fit(&self) -> Result<DimensionFit, MeasureError> {
        fit_dimension(&self.levels.clone().collect::<Vec<_>>(), &self.counts(), &self.unmatched)
    }
}

/// Tiles of level `m` approximately containing some input point.
pub fn cover_at_level(sys: &TileSystem, points: &[Point], m: usize) -> Result<DyadicCover, MeasureError> {
    Ok(covers(sys, points, m..=m)?.remove(0))
}

pub fn covers(
    sys: &TileSystem,
    points: &[Point],
    levels: RangeInclusive<usize>,
) -> Result<Vec<DyadicCover>, MeasureError> {
    let mut c = CoverCounter::new(sys, levels)?;
    for p in points {
        c.add(p)?;
    }
    Ok(c.covers())
}

/// Least-squares slope of `log₂ N_m` against `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub s_hat: f64,
    pub intercept: f64,
    pub residual: f64,
    pub levels: Vec<usize>,
    pub counts: Vec<usize>,
    pub unmatched: Vec<usize>,
}

pub fn fit_dimension(levels: &[usize], counts: &[usize], unmatched: &[usize]) -> Result<DimensionFit, MeasureError> {
    let used: Vec<(f64, f64)> = levels
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&l, &c)| (l as f64, (c as f64).log2()))
        .collect();
    if used.len() < 3 {
        return Err(MeasureError::DegenerateFit { usable: used.len() });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = used.into_iter().unzip();
    let LineFit { slope, intercept, residual } =
        stats::fit_line(&xs, &ys).ok_or(MeasureError::DegenerateFit { usable: xs.len() })?;
    Ok(DimensionFit {
        s_hat: slope,
        intercept,
        residual,
        levels: levels.to_vec(),
        counts: counts.to_vec(),
        unmatched: unmatched.to_vec(),
    })
}

pub fn dimension_estimate(
    sys: &TileSystem,
    points: &[Point],
    levels: RangeInclusive<usize>,
) -> Result<DimensionFit, MeasureError> {
    if levels.clone().count() < 3 {
        return Err(MeasureError::DegenerateFit { usable: levels.count() });
    }
    let mut c = CoverCounter::new(sys, levels)?;
    for p in points {
        c.add(p)?;
    }
    c.fit()
}

/// Dimension of the whole tile from every level-`depth` tile center.
pub fn tile_dimension(sys: &TileSystem, levels: RangeInclusive<usize>) -> Result<DimensionFit, MeasureError> {
    let depth = *levels.end();
    let mut c = CoverCounter::new(sys, levels)?;
    let mut err = None;
    sys.for_each_center(depth, |p| {
        if err.is_none() {
            err = c.add(p).err();
        }
    });
    match err {
        Some(e) => Err(e),
        None => c.fit(),
    }
}

/// `n` evenly spaced points `base · (τ·direction)` for `τ ∈ [-1/2, 1/2]`.
///
/// With `direction` inside a single layer this is a one-parameter subgroup
/// through `base`: a horizontal line or a vertical fibre.
pub fn segment(spec: &GroupSpec, base: &Point, direction: &Point, n: usize) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let tau = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 - 0.5 };
            let step = Point::new(direction.coords().iter().map(|v| tau * v).collect::<Vec<_>>());
            spec.mul(base, &step)
        })
        .collect()
}

type CellKey = SmallVec<[i64; 8]>;

/// Size of a greedy `r`-net of `points`: every point lies within `r` of a
/// chosen center, and chosen centers are pairwise at least `r` apart.
pub fn greedy_ball_cover(spec: &GroupSpec, points: &[Point], r: f64) -> usize {
    let n1 = spec.n1();
    let cell: Vec<f64> = (0..spec.dim()).map(|c| if c < n1 { r } else { r.max(r * r) }).collect();
    let key = |p: &[f64]| -> CellKey { p.iter().zip(&cell).map(|(v, w)| (v / w).floor() as i64).collect() };
    let mut grid: HashMap<CellKey, Vec<usize>> = HashMap::new();
    let mut centers: Vec<&Point> = Vec::new();
    for p in points {
        let half = ball_half_widths(spec, p.coords(), r);
        let lo: CellKey = (0..p.dim()).map(|c| ((p[c] - half[c]) / cell[c]).floor() as i64).collect();
        let hi: CellKey = (0..p.dim()).map(|c| ((p[c] + half[c]) / cell[c]).floor() as i64).collect();
        let mut covered = false;
        let mut k = lo.clone();
        'scan: loop {
            if let Some(list) = grid.get(&k) {
                if list.iter().any(|&i| spec.quasi_dist(centers[i], p) < r) {
                    covered = true;
                    break 'scan;
                }
            }
            let mut c = 0;
            loop {
                if c == k.len() {
                    break 'scan;
                }
                k[c] += 1;
                if k[c] <= hi[c] {
                    break;
                }
                k[c] = lo[c];
                c += 1;
            }
        }
        if !covered {
            grid.entry(key(p.coords())).or_default().push(centers.len());
            centers.push(p);
        }
    }
    centers.len()
}

/// Children kept at a level of a Cantor sub-system: `k` letters spread
/// evenly over `0..M`, `j = ⌊i·M/k⌋`.
pub fn kept_letters(maps: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| i * maps / k).collect()
}

/// `k_ℓ = 2^{⌊sℓ⌋ - ⌊s(ℓ-1)⌋}` for `ℓ = 1..=depth`, so that
/// `log₂ Π k_ℓ = ⌊s·depth⌋`.
pub fn branching_schedule(s: f64, depth: usize) -> Vec<usize> {
    let fl = |l: usize| (s * l as f64 + 1e-9).floor() as i64;
    (1..=depth).map(|l| 1usize << (fl(l) - fl(l - 1))).collect()
}

/// Provenance of a materialized Cantor measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CantorMeta {
    pub s: f64,
    pub depth: usize,
    pub branching: Vec<usize>,
    pub addresses: Vec<TileAddress>,
}

/// Weighted atoms.
#[derive(Clone, Debug)]
pub struct DiscreteMeasure {
    spec: GroupSpec,
    atoms: Vec<Point>,
    weights: Vec<f64>,
    total_mass: f64,
    resolution: f64,
    meta: Option<CantorMeta>,
}

impl DiscreteMeasure {
    pub fn new(spec: &GroupSpec, atoms: Vec<Point>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if atoms.len() != weights.len() || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(MeasureError::EmptyMeasure);
        }
        for a in &atoms {
            spec.check(a)?;
        }
        let total_mass = weights.iter().sum();
        Ok(DiscreteMeasure { spec: spec.clone(), atoms, weights, total_mass, resolution: 0.0, meta: None })
    }

    pub fn single(spec: &GroupSpec, at: Point, mass: f64) -> Result<Self, MeasureError> {
        DiscreteMeasure::new(spec, vec![at], vec![mass])
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn atoms(&self) -> &[Point] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn meta(&self) -> Option<&CantorMeta> {
        self.meta.as_ref()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `μ₁ + μ₂` as a concatenation of atoms.
    pub fn sum(&self, other: &DiscreteMeasure) -> DiscreteMeasure {
        let mut out = self.clone();
        out.atoms.extend(other.atoms.iter().cloned());
        out.weights.extend(&other.weights);
        out.total_mass += other.total_mass;
        out.resolution = self.resolution.max(other.resolution);
        out.meta = None;
        out
    }

    pub fn scaled(&self, factor: f64) -> DiscreteMeasure {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= factor);
        out.total_mass *= factor;
        out
    }

    /// CSV rows `level,word,x1..xD,weight`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let d = self.spec.dim();
        let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        writeln!(out, "level,word,{},weight", header.join(","))?;
        for (i, (a, w)) in self.atoms.iter().zip(&self.weights).enumerate() {
            let (level, word) = match &self.meta {
                Some(m) => (m.depth.to_string(), m.addresses[i].to_string()),
                None => (String::new(), String::new()),
            };
            let coords: Vec<String> = a.coords().iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{level},{word},{},{w:.17e}", coords.join(","))?;
        }
        Ok(())
    }
}

/// Finite measures that answer ball-mass queries.
pub trait FiniteMeasure: Sync {
    fn spec(&self) -> &GroupSpec;
    fn total_mass(&self) -> f64;
    fn ball_mass(&self, x: &Point, r: f64) -> f64;
    /// A support point drawn with probability proportional to mass.
    fn sample_support(&self, rng: &mut seeding::Rng) -> Point;
    /// Scale below which the atomic approximation is meaningless; zero for
    /// genuinely atomic measures.
    fn resolution(&self) -> f64;
    /// Distance from `x` to the nearest atom.
    fn nearest_atom_distance(&self, x: &Point) -> f64 {
        self.nearest_atom_within(x, f64::INFINITY, 1.0).unwrap_or(f64::INFINITY)
    }
    /// An estimate `e` of the nearest-atom distance `d` with
    /// `d ≤ e ≤ slack · d`, or `None` when `d ≥ cap`. Far points are much
    /// cheaper to reject than to resolve, and a slack at least the
    /// quasi-triangle constant avoids resolving near-ties.
    fn nearest_atom_within(&self, x: &Point, cap: f64, slack: f64) -> Option<f64>;
}

impl FiniteMeasure for DiscreteMeasure {
    fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    fn total_mass(&self) -> f64 {
        self.total_mass
    }

    fn ball_mass(&self, x: &Point, r: f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .filter(|(a, _)| self.spec.quasi_dist(a, x) < r)
            .map(|(_, w)| w)
            .sum()
    }

    fn sample_support(&self, rng: &mut seeding::Rng) -> Point {
        let mut u = rng.gen::<f64>() * self.total_mass;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            if u < *w {
                return a.clone();
            }
            u -= w;
        }
        self.atoms.last().cloned().unwrap_or_else(|| self.spec.identity())
    }

    fn resolution(&self) -> f64 {
        self.resolution
    }

    fn nearest_atom_within(&self, x: &Point, cap: f64, _slack: f64) -> Option<f64> {
        let d = self
            .atoms
            .iter()
            .map(|a| self.spec.quasi_dist(a, x))
            .fold(f64::INFINITY, f64::min);
        (d < cap).then_some(d)
    }
}

/// A node of the implicit Cantor tree: all atoms whose words extend a fixed
/// prefix of length `level`.
#[derive(Clone, Debug)]
pub struct CantorNode {
    pub level: usize,
    /// `g_w`, the offset of the prefix map.
    pub offset: Point,
    /// Coordinate barycenter of the node's atoms.
    pub barycenter: Point,
    /// Every atom of the node lies within this distance of the barycenter.
    pub radius: f64,
    pub mass: f64,
}

/// Uniform measure on a Cantor sub-system of a tile system.
#[derive(Clone, Debug)]
pub struct CantorMeasure {
    spec: GroupSpec,
    translations: Vec<Point>,
    center: Point,
    outer_radius: f64,
    diameter: f64,
    quasi_c: f64,
    s: f64,
    depth: usize,
    kept: Vec<Vec<usize>>,
    /// Barycenter of the normalized level-`ℓ` subtree measure, `ℓ = 0..=depth`.
    bary: Vec<Point>,
    /// Radius bound for the normalized level-`ℓ` subtree.
    spread: Vec<f64>,
    /// Mass of a single level-`ℓ` node.
    node_mass: Vec<f64>,
}

/// Builds the Cantor sub-system keeping `k_ℓ` children per level according
/// to [`branching_schedule`].
pub fn cantor_subsystem(sys: &TileSystem, s: f64, depth: usize) -> Result<CantorMeasure, MeasureError> {
    let q = sys.spec().homogeneous_dim();
    if !(s > 0.0 && s <= q as f64) {
        return Err(MeasureError::DimensionOutOfRange { s, q });
    }
    let max = crate::tiling::max_level(sys.map_count());
    if !(4..=max).contains(&depth) {
        return Err(MeasureError::DepthOutOfRange { depth, min: 4, max });
    }
    let schedule = branching_schedule(s, depth);
    let atoms_log2: u32 = schedule.iter().map(|k| k.trailing_zeros()).sum();
    if atoms_log2 > 62 {
        return Err(MeasureError::DepthOutOfRange { depth, min: 4, max: depth - 1 });
    }
    let spec = sys.spec().clone();
    let kept: Vec<Vec<usize>> = schedule.iter().map(|&k| kept_letters(sys.map_count(), k)).collect();
    let translations: Vec<Point> = sys.maps().iter().map(|h| h.translation.clone()).collect();

    // Subtree barycenters from the leaves up; the maps are affine.
    let mut bary = vec![sys.center().clone(); depth + 1];
    for l in (0..depth).rev() {
        let mut acc = vec![0.0; spec.dim()];
        for &j in &kept[l] {
            let img = spec.mul(&translations[j], &spec.dil(0.5, &bary[l + 1]));
            acc.iter_mut().zip(img.coords()).for_each(|(a, v)| *a += v);
        }
        let k = kept[l].len() as f64;
        bary[l] = Point::new(acc.into_iter().map(|v| v / k).collect::<Vec<_>>());
    }
    let mut rng = seeding::stream(0, "measure/quasi-triangle", 0);
    // Pruning relies on this constant. Any margin c > 1 leaves an undecided
    // band [r / c, c r] around every query radius whose atoms must all be
    // visited, so only a rounding margin is added to the sampled supremum.
    let quasi_c = (1.0 + 1e-9) * quasi_triangle_constant(&spec, 100_000, &mut rng);
    let outer_radius = sys.outer_radius();
    let spread = (0..=depth)
        .map(|l| {
            if l == depth {
                0.0
            } else {
                quasi_c * (spec.quasi_dist(&bary[l], sys.center()) + outer_radius)
            }
        })
        .collect();
    let mut node_mass = vec![1.0; depth + 1];
    for l in 0..depth {
        node_mass[l + 1] = node_mass[l] / kept[l].len() as f64;
    }
    Ok(CantorMeasure {
        spec,
        translations,
        center: sys.center().clone(),
        outer_radius,
        diameter: sys.diameter(),
        quasi_c,
        s,
        depth,
        kept,
        bary,
        spread,
        node_mass,
    })
}

impl CantorMeasure {
    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn target_dimension(&self) -> f64 {
        self.s
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn branching(&self) -> Vec<usize> {
        self.kept.iter().map(Vec::len).collect()
    }

    pub fn kept(&self, level: usize) -> &[usize] {
        &self.kept[level]
    }

    /// `log₂` of the branching product over all levels.
    pub fn dimension_of_schedule(&self) -> f64 {
        self.branching().iter().map(|&k| (k as f64).log2()).sum::<f64>() / self.depth as f64
    }

    pub fn atom_count(&self) -> u64 {
        self.kept.iter().map(|k| k.len() as u64).product()
    }

    pub fn atom_weight(&self) -> f64 {
        self.node_mass[self.depth]
    }

    /// Quasi-triangle constant used for pruning.
    pub fn quasi_constant(&self) -> f64 {
        self.quasi_c
    }

    pub fn root(&self) -> CantorNode {
        CantorNode {
            level: 0,
            offset: self.spec.identity(),
            barycenter: self.bary[0].clone(),
            radius: self.spread[0],
            mass: 1.0,
        }
    }

    pub fn children(&self, node: &CantorNode) -> Vec<CantorNode> {
        if node.level == self.depth {
            return Vec::new();
        }
        let l = node.level;
        let scale = 0.5f64.powi(l as i32);
        let child_scale = 0.5 * scale;
        self.kept[l]
            .iter()
            .map(|&j| {
                let offset = self.spec.mul(&node.offset, &self.spec.dil(scale, &self.translations[j]));
                let barycenter = self.spec.mul(&offset, &self.spec.dil(child_scale, &self.bary[l + 1]));
                CantorNode {
                    level: l + 1,
                    offset,
                    barycenter,
                    radius: child_scale * self.spread[l + 1],
                    mass: self.node_mass[l + 1],
                }
            })
            .collect()
    }

    /// Depth-first walk; `visit` returns whether to open the node.
    pub fn traverse(&self, mut visit: impl FnMut(&CantorNode) -> bool) {
        let mut stack = vec![self.root()];
        while let Some(node) = stack.pop() {
            if visit(&node) && node.level < self.depth {
                stack.extend(self.children(&node));
            }
        }
    }

    /// Surviving words in lexicographic order (bounded by the
    /// materialization limit).
    pub fn addresses(&self) -> Result<Vec<TileAddress>, MeasureError> {
        let n = self.atom_count();
        if n > MAX_MATERIALIZED_ATOMS {
            return Err(MeasureError::TooManyAtoms { atoms: n, limit: MAX_MATERIALIZED_ATOMS });
        }
        let mut words: Vec<Vec<u16>> = vec![Vec::new()];
        for level in &self.kept {
            words = words
                .into_iter()
                .flat_map(|w| {
                    level.iter().map(move |&j| {
                        let mut c = w.clone();
                        c.push(j as u16);
                        c
                    })
                })
                .collect();
        }
        Ok(words.into_iter().map(TileAddress::new).collect())
    }

    /// The atoms (level-`depth` tile centers of surviving words), in the
    /// order of [`Self::addresses`].
    pub fn points(&self) -> Result<Vec<Point>, MeasureError> {
        let n = self.atom_count();
        if n > MAX_MATERIALIZED_ATOMS {
            return Err(MeasureError::TooManyAtoms { atoms: n, limit: MAX_MATERIALIZED_ATOMS });
        }
        let mut out = Vec::with_capacity(n as usize);
        let mut stack = vec![self.root()];
        while let Some(node) = stack.pop() {
            if node.level == self.depth {
                out.push(node.barycenter);
            } else {
                // Reverse so that the stack pops in lexicographic order.
                stack.extend(self.children(&node).into_iter().rev());
            }
        }
        Ok(out)
    }

    pub fn to_discrete(&self) -> Result<DiscreteMeasure, MeasureError> {
        let atoms = self.points()?;
        let addresses = self.addresses()?;
        let w = self.atom_weight();
        Ok(DiscreteMeasure {
            spec: self.spec.clone(),
            weights: vec![w; atoms.len()],
            total_mass: w * atoms.len() as f64,
            atoms,
            resolution: self.resolution(),
            meta: Some(CantorMeta { s: self.s, depth: self.depth, branching: self.branching(), addresses }),
        })
    }

    /// A uniformly random atom.
    pub fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let mut g = self.spec.identity();
        let mut scale = 1.0;
        for level in &self.kept {
            let j = level[rng.gen_range(0..level.len())];
            g = self.spec.mul(&g, &self.spec.dil(scale, &self.translations[j]));
            scale *= 0.5;
        }
        self.spec.mul(&g, &self.spec.dil(scale, &self.center))
    }

    /// Closed form for the atom of a surviving word.
    pub fn atom_of(&self, w: &TileAddress) -> Point {
        let mut g = self.spec.identity();
        let mut scale = 1.0;
        for &j in w.letters() {
            g = self.spec.mul(&g, &self.spec.dil(scale, &self.translations[j as usize]));
            scale *= 0.5;
        }
        self.spec.mul(&g, &self.spec.dil(scale, &self.center))
    }

    /// Outer radius of the parent tile, bounding every atom's distance from
    /// its center.
    pub fn outer_radius(&self) -> f64 {
        self.outer_radius
    }
}

impl FiniteMeasure for CantorMeasure {
    fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    fn total_mass(&self) -> f64 {
        1.0
    }

    fn ball_mass(&self, x: &Point, r: f64) -> f64 {
        let c = self.quasi_c;
        let mut mass = 0.0;
        self.traverse(|node| {
            let d = self.spec.quasi_dist(&node.barycenter, x);
            if node.level == self.depth {
                if d < r {
                    mass += node.mass;
                }
                return false;
            }
            if d >= c * (r + node.radius) {
                return false;
            }
            if c * (d + node.radius) < r {
                mass += node.mass;
                return false;
            }
            true
        });
        mass
    }

    fn sample_support(&self, rng: &mut seeding::Rng) -> Point {
        self.sample_atom(rng)
    }

    fn resolution(&self) -> f64 {
        self.diameter * 0.5f64.powi(self.depth as i32)
    }

    fn nearest_atom_within(&self, x: &Point, cap: f64, slack: f64) -> Option<f64> {
        // Best-first branch and bound over the tree.
        let c = self.quasi_c;
        let mut best = cap;
        let mut stack = vec![self.root()];
        while let Some(node) = stack.pop() {
            let d = self.spec.quasi_dist(&node.barycenter, x);
            if node.level == self.depth {
                best = best.min(d);
                continue;
            }
            // Any atom a of the node has d(a, x) ≥ d / c - radius.
            if d / c - node.radius >= best / slack {
                continue;
            }
            let mut kids = self.children(&node);
            kids.sort_by(|a, b| {
                let da = self.spec.quasi_dist(&a.barycenter, x);
                let db = self.spec.quasi_dist(&b.barycenter, x);
                db.total_cmp(&da)
            });
            stack.extend(kids);
        }
        (best < cap).then_some(best)
    }
}

/// Growth classification of Frostman ratios toward small radii.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Bounded,
    GrowsAtSmallScales,
    DecaysAtSmallScales,
}

/// Slopes of `log median` against `log r` beyond this magnitude count as a
/// trend.
pub const TREND_SLOPE: f64 = 0.25;

pub fn classify_trend(slope: f64) -> Trend {
    if slope < -TREND_SLOPE {
        Trend::GrowsAtSmallScales
    } else if slope > TREND_SLOPE {
        Trend::DecaysAtSmallScales
    } else {
        Trend::Bounded
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstBall {
    pub center: Point,
    pub radius: f64,
    pub mass: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrostmanReport {
    pub s: f64,
    #[serde(rename = "C_hat")]
    pub c_hat: f64,
    pub worst: WorstBall,
    pub decades: Vec<DecadeStat>,
    /// Slope of `log₁₀` decade medians against decade.
    pub slope: f64,
    pub spread: f64,
    pub trend: Trend,
    pub n_balls: usize,
    pub radii: (f64, f64),
    /// Atom resolution of the measure; radii below it are not meaningful.
    pub resolution: f64,
}

/// Samples balls `B(x, r)` with `r` log-uniform in `radii` and `x` within
/// `r` of a support point, and reports `μ(B(x, r)) / r^s`.
pub fn frostman_check<M: FiniteMeasure + ?Sized>(
    mu: &M,
    s: f64,
    n_balls: usize,
    radii: (f64, f64),
    seed: u64,
) -> Result<FrostmanReport, MeasureError> {
    let (lo, hi) = radii;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(MeasureError::InvalidRadii(lo, hi));
    }
    if mu.total_mass() <= 0.0 {
        return Err(MeasureError::EmptyMeasure);
    }
    let spec = mu.spec();
    let samples: Vec<(Point, f64, f64)> = seeding::chunked(seed, "measure/frostman", n_balls, 64, |rng, _, len| {
        (0..len)
            .map(|_| {
                let r = if hi > lo { (rng.gen_range(lo.ln()..hi.ln())).exp() } else { lo };
                let a = mu.sample_support(rng);
                let x = spec.sample_ball(&a, r, rng);
                let m = mu.ball_mass(&x, r);
                (x, r, m)
            })
            .collect()
    });
    let mut worst = WorstBall { center: spec.identity(), radius: 0.0, mass: 0.0, ratio: f64::NEG_INFINITY };
    let mut pairs = Vec::with_capacity(samples.len());
    for (x, r, m) in samples {
        let ratio = m / r.powf(s);
        pairs.push((r, ratio));
        if ratio > worst.ratio {
            worst = WorstBall { center: x, radius: r, mass: m, ratio };
        }
    }
    let decades = stats::by_decade(&pairs);
    let slope = decade_slope(&decades);
    Ok(FrostmanReport {
        s,
        c_hat: worst.ratio,
        worst,
        spread: stats::spread(&decades),
        trend: classify_trend(slope),
        decades,
        slope,
        n_balls,
        radii,
        resolution: mu.resolution(),
    })
}

/// Slope of `log₁₀ median` against decade index; zero with one decade.
pub fn decade_slope(decades: &[DecadeStat]) -> f64 {
    let used: Vec<(f64, f64)> = decades
        .iter()
        .filter(|d| d.median > 0.0)
        .map(|d| (d.decade as f64, d.median.log10()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = used.into_iter().unzip();
    stats::fit_line(&xs, &ys).map_or(0.0, |f| f.slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::{build_system, default_system};
    use rand::SeedableRng;

    fn cube() -> TileSystem {
        let g = GroupSpec::euclidean(3).unwrap();
        default_system(&g).unwrap()
    }

    #[test]
    fn schedules() {
        assert_eq!(branching_schedule(2.0, 4), vec![4, 4, 4, 4]);
        assert_eq!(branching_schedule(2.5, 4), vec![4, 8, 4, 8]);
        assert_eq!(branching_schedule(4.0, 3), vec![16, 16, 16]);
        assert_eq!(branching_schedule(1.5, 4), vec![2, 4, 2, 4]);
        assert_eq!(kept_letters(16, 4), vec![0, 4, 8, 12]);
        assert_eq!(kept_letters(16, 16), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn empty_cover() {
        let sys = cube();
        let c = cover_at_level(&sys, &[], 2).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.content(1.5), 0.0);
    }

    #[test]
    fn cube_full_cover_at_level_two() {
        let sys = cube();
        let pts = crate::tiling::sample_tile(&sys, &TileAddress::root(), 20_000, 10, 4).unwrap();
        let c = cover_at_level(&sys, &pts, 2).unwrap();
        assert_eq!(c.len(), 64);
        assert_eq!(c.unmatched, 0);
        assert!((c.tile_diameter - 3f64.sqrt() / 4.0).abs() < 1e-9);
        // Content decreases in s for tile diameters below one.
        assert!(c.content(2.0) > c.content(3.0));
    }

    #[test]
    fn far_points_are_rejected() {
        let sys = cube();
        let far = Point::from([5.0, 5.0, 5.0]);
        assert_eq!(cover_at_level(&sys, &[far], 1), Err(MeasureError::OutsideTile { index: 0 }));
    }

    #[test]
    fn interior_point_cover_is_small() {
        let sys = cube();
        let p = Point::from([0.3, 0.3, 0.3]);
        let c = cover_at_level(&sys, &[p], 3).unwrap();
        assert_eq!(c.len(), 1);
        let w = &c.addresses()[0];
        let center = sys.tile_center(w).unwrap();
        assert!(sys.spec().quasi_dist(&center, &Point::from([0.3, 0.3, 0.3])) < sys.tile_radii(w).1);
    }

    #[test]
    fn cube_line_dimension() {
        let sys = cube();
        let line = segment(sys.spec(), sys.center(), &Point::from([1.0, 0.0, 0.0]), 4000);
        let fit = dimension_estimate(&sys, &line, 2..=6).unwrap();
        assert!((fit.s_hat - 1.0).abs() < 0.1, "{fit:?}");
        assert_eq!(
            dimension_estimate(&sys, &line, 2..=3),
            Err(MeasureError::DegenerateFit { usable: 2 })
        );
    }

    #[test]
    fn cantor_points_and_addresses_agree() {
        let sys = cube();
        let mu = cantor_subsystem(&sys, 2.0, 4).unwrap();
        assert_eq!(mu.atom_count(), 256);
        let pts = mu.points().unwrap();
        let words = mu.addresses().unwrap();
        for (p, w) in pts.iter().zip(&words) {
            assert!(p.max_abs_diff(&sys.tile_center(w).unwrap()) < 1e-12);
            assert!(p.max_abs_diff(&mu.atom_of(w)) < 1e-12);
        }
        let d = mu.to_discrete().unwrap();
        assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.meta().unwrap().branching, vec![4, 4, 4, 4]);
    }

    #[test]
    fn cantor_tree_bounds_hold() {
        let g = GroupSpec::heisenberg(1).unwrap();
        let sys = default_system(&g).unwrap();
        let mu = cantor_subsystem(&sys, 2.5, 5).unwrap();
        let atoms = mu.points().unwrap();
        // Every node's atoms lie inside its radius bound around its barycenter.
        let mut stack = vec![(mu.root(), TileAddress::root())];
        let mut checked = 0;
        while let Some((node, w)) = stack.pop() {
            if node.level >= 3 {
                continue;
            }
            let mut bary = vec![0.0; 3];
            let mut count = 0.0;
            for (a, word) in atoms.iter().zip(mu.addresses().unwrap()) {
                if word.letters().starts_with(w.letters()) {
                    assert!(g.quasi_dist(&node.barycenter, a) <= node.radius);
                    bary.iter_mut().zip(a.coords()).for_each(|(b, v)| *b += v);
                    count += 1.0;
                }
            }
            let bary = Point::new(bary.into_iter().map(|b| b / count).collect::<Vec<_>>());
            assert!(bary.max_abs_diff(&node.barycenter) < 1e-12);
            assert!((node.mass - count / atoms.len() as f64).abs() < 1e-15);
            checked += 1;
            let kids = mu.children(&node);
            for (k, &j) in kids.into_iter().zip(mu.kept(node.level)) {
                stack.push((k, w.child(j)));
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn tree_ball_mass_matches_brute_force() {
        let g = GroupSpec::heisenberg(1).unwrap();
        let sys = default_system(&g).unwrap();
        let mu = cantor_subsystem(&sys, 2.0, 6).unwrap();
        let d = mu.to_discrete().unwrap();
        let mut rng = seeding::Rng::seed_from_u64(3);
        for _ in 0..60 {
            let a = mu.sample_atom(&mut rng);
            let r = 10f64.powf(rng.gen_range(-2.0..0.0));
            let x = g.sample_ball(&a, r, &mut rng);
            let tree = mu.ball_mass(&x, r);
            let brute = d.ball_mass(&x, r);
            assert!((tree - brute).abs() < 1e-12, "{tree} vs {brute}");
            let near = mu.nearest_atom_distance(&x);
            assert!((near - d.nearest_atom_distance(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_atom_frostman_ratio_decreases() {
        let g = GroupSpec::heisenberg(1).unwrap();
        let mu = DiscreteMeasure::single(&g, g.identity(), 2.0).unwrap();
        let rep = frostman_check(&mu, 1.0, 400, (1.0, 100.0), 1).unwrap();
        // Every ball contains the atom, so the ratio is 2 / r.
        assert!((rep.c_hat - 2.0 / rep.worst.radius).abs() < 1e-12);
        assert_eq!(rep.trend, Trend::GrowsAtSmallScales);
        let meds: Vec<f64> = rep.decades.iter().map(|d| d.median).collect();
        assert!(meds.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn measure_sum_is_linear() {
        let g = GroupSpec::heisenberg(1).unwrap();
        let a = DiscreteMeasure::single(&g, Point::from([0.1, 0.0, 0.0]), 1.0).unwrap();
        let b = DiscreteMeasure::single(&g, Point::from([0.0, 0.2, 0.0]), 0.5).unwrap();
        let ab = a.sum(&b);
        let x = Point::from([0.0, 0.0, 0.05]);
        assert_eq!(ab.ball_mass(&x, 0.3), a.ball_mass(&x, 0.3) + b.ball_mass(&x, 0.3));
        assert_eq!(FiniteMeasure::total_mass(&ab), 1.5);
    }

    #[test]
    fn greedy_net_on_a_line() {
        let g = GroupSpec::euclidean(3).unwrap();
        let line = segment(&g, &g.identity(), &Point::from([1.0, 0.0, 0.0]), 1001);
        // Unit segment, centers spaced just over r apart.
        let n = greedy_ball_cover(&g, &line, 0.1);
        assert!((9..=11).contains(&n), "{n}");
    }

    #[test]
    fn errors() {
        let sys = cube();
        assert!(matches!(cantor_subsystem(&sys, 0.0, 5), Err(MeasureError::DimensionOutOfRange { .. })));
        assert!(matches!(cantor_subsystem(&sys, 3.5, 5), Err(MeasureError::DimensionOutOfRange { .. })));
        assert!(matches!(cantor_subsystem(&sys, 2.0, 3), Err(MeasureError::DepthOutOfRange { .. })));
        let big = cantor_subsystem(&sys, 3.0, 12).unwrap();
        assert!(matches!(big.points(), Err(MeasureError::TooManyAtoms { .. })));
        let digits = crate::tiling::default_digits(sys.spec(), 1.0);
        assert!(build_system(sys.spec(), &digits).is_ok());
    }
}
