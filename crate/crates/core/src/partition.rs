//! Smooth partitions of unity subordinate to finite tile collections, and
//! scale-`ε` cutoffs around point sets.
//!
//! Every tile `T_w` gets the bump `ψ_w(q) = ρ(2^m · d(p_w, q))`, where `ρ`
//! is one on `[0, R^out]` and zero beyond `2 R^out`, so `ψ_w ≡ 1` on `T_w`.
//! With tiles ordered by non-increasing diameter,
//! `φ_i = ψ_i · Π_{k<i} (1 - ψ_k)` and `Σ_{k≤i} φ_k = 1 - Π_{k≤i} (1 - ψ_k)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::ScalarField;
use crate::geometry::GridIndex;
use crate::group::{default_fd_step, GroupError, GroupSpec, MultiIndex, Point};
use crate::measure::{cover_at_level, MeasureError};
use crate::seeding;
use crate::tiling::{max_level, TileAddress, TileSystem, TilingError};

/// Highest derivative order checked by default.
pub const DEFAULT_MAX_ORDER: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("bump radii must satisfy 0 < r1 < r2, got r1 = {r1}, r2 = {r2}")]
    InvalidRadii { r1: f64, r2: f64 },
    #[error("partition needs at least one tile")]
    NoTiles,
    #[error("eps = {eps} needs level {level}, beyond the addressable {max}")]
    ResolutionTooFine { eps: f64, level: usize, max: usize },
    #[error("eps must be positive, got {0}")]
    InvalidEps(f64),
    #[error("p must lie in [1, inf], got {0}")]
    InvalidExponent(f64),
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

fn glue(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth non-increasing profile, one on `[0, r1]` and zero on `[r2, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub r1: f64,
    pub r2: f64,
}

impl BumpProfile {
    pub fn new(r1: f64, r2: f64) -> Result<Self, PartitionError> {
        if !(r1 > 0.0 && r2 > r1 && r2.is_finite()) {
            return Err(PartitionError::InvalidRadii { r1, r2 });
        }
        Ok(BumpProfile { r1, r2 })
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r <= self.r1 {
            1.0
        } else if r >= self.r2 {
            0.0
        } else {
            let u = (self.r2 - r) / (self.r2 - self.r1);
            let a = glue(u);
            a / (a + glue(1.0 - u))
        }
    }
}

/// `q ↦ ρ(d(center, q))`.
#[derive(Clone, Debug)]
pub struct Bump {
    spec: GroupSpec,
    center: Point,
    profile: BumpProfile,
}

pub fn build_bump(spec: &GroupSpec, center: &Point, r1: f64, r2: f64) -> Result<Bump, PartitionError> {
    spec.check(center)?;
    Ok(Bump { spec: spec.clone(), center: center.clone(), profile: BumpProfile::new(r1, r2)? })
}

impl Bump {
    pub fn profile(&self) -> BumpProfile {
        self.profile
    }
}

impl ScalarField for Bump {
    fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    fn eval(&self, p: &Point) -> f64 {
        self.profile.eval(self.spec.quasi_dist(&self.center, p))
    }
}

/// Tiles of one level with a spatial index over their centers.
#[derive(Clone, Debug)]
struct LevelGroup {
    level: usize,
    support: f64,
    index: GridIndex,
    /// Position in the partition order of each indexed center.
    ordinal: Vec<usize>,
}

/// A Harvey–Polking partition over a diameter-sorted tile list.
#[derive(Clone, Debug)]
pub struct HPPartition {
    spec: GroupSpec,
    profile: BumpProfile,
    tiles: Vec<TileAddress>,
    centers: Vec<Point>,
    groups: Vec<LevelGroup>,
}

pub fn build_partition(sys: &TileSystem, tiles: &[TileAddress]) -> Result<HPPartition, PartitionError> {
    if tiles.is_empty() {
        return Err(PartitionError::NoTiles);
    }
    let r = sys.outer_radius();
    let profile = BumpProfile::new(r, 2.0 * r)?;
    let mut tiles = tiles.to_vec();
    // Stable, so equal-diameter tiles keep the caller's order.
    tiles.sort_by_key(TileAddress::level);
    let centers = tiles.iter().map(|w| sys.tile_center(w)).collect::<Result<Vec<_>, _>>()?;
    let spec = sys.spec().clone();
    let mut groups: Vec<LevelGroup> = Vec::new();
    let mut start = 0;
    while start < tiles.len() {
        let level = tiles[start].level();
        let end = start + tiles[start..].iter().take_while(|w| w.level() == level).count();
        let support = profile.r2 * 0.5f64.powi(level as i32);
        let coords: Vec<f64> = centers[start..end].iter().flat_map(|c| c.coords().to_vec()).collect();
        groups.push(LevelGroup {
            level,
            support,
            index: GridIndex::for_radius(&spec, coords, support),
            ordinal: (start..end).collect(),
        });
        start = end;
    }
    Ok(HPPartition { spec, profile, tiles, centers, groups })
}

impl HPPartition {
    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Tiles in partition order.
    pub fn tiles(&self) -> &[TileAddress] {
        &self.tiles
    }

    pub fn center(&self, i: usize) -> &Point {
        &self.centers[i]
    }

    /// `2 R^out_w`, outside of which `ψ_i` vanishes.
    pub fn support_radius(&self, i: usize) -> f64 {
        self.profile.r2 * 0.5f64.powi(self.tiles[i].level() as i32)
    }

    pub fn psi(&self, i: usize, q: &Point) -> f64 {
        let m = self.tiles[i].level();
        self.profile.eval(2f64.powi(m as i32) * self.spec.quasi_dist(&self.centers[i], q))
    }

    /// `(i, ψ_i(q))` for every tile whose support contains `q`, in order.
    pub fn active(&self, q: &Point) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for g in &self.groups {
            let scale = 2f64.powi(g.level as i32);
            g.index.visit_ball(&self.spec, q, g.support, |j, d| {
                out.push((g.ordinal[j], self.profile.eval(scale * d)));
                true
            });
        }
        out.sort_by_key(|&(i, _)| i);
        out
    }

    /// `φ_i(q) = ψ_i(q) Π_{k<i} (1 - ψ_k(q))`.
    pub fn phi(&self, i: usize, q: &Point) -> f64 {
        let mut prod = 1.0;
        for (k, psi) in self.active(q) {
            if k == i {
                return psi * prod;
            }
            if k > i {
                break;
            }
            prod *= 1.0 - psi;
        }
        0.0
    }

    /// Nonzero `(i, φ_i(q))`.
    pub fn phis(&self, q: &Point) -> Vec<(usize, f64)> {
        let mut prod = 1.0;
        let mut out = Vec::new();
        for (i, psi) in self.active(q) {
            let v = psi * prod;
            if v != 0.0 {
                out.push((i, v));
            }
            prod *= 1.0 - psi;
        }
        out
    }

    /// `Σ_i φ_i(q)`, summed term by term.
    pub fn sum(&self, q: &Point) -> f64 {
        self.phis(q).iter().map(|(_, v)| v).sum()
    }

    /// Largest `|Σ_{k≤i} φ_k - (1 - Π_{k≤i}(1 - ψ_k))|` over `i` at `q`.
    pub fn theta_identity_error(&self, q: &Point) -> f64 {
        let mut prod = 1.0;
        let mut partial = 0.0;
        let mut worst: f64 = 0.0;
        for (_, psi) in self.active(q) {
            partial += psi * prod;
            prod *= 1.0 - psi;
            worst = worst.max((partial - (1.0 - prod)).abs());
        }
        worst
    }

    /// `φ_i` as a field.
    pub fn phi_field(&self, i: usize) -> PhiField<'_> {
        PhiField { part: self, i }
    }
}

pub struct PhiField<'a> {
    part: &'a HPPartition,
    i: usize,
}

impl ScalarField for PhiField<'_> {
    fn spec(&self) -> &GroupSpec {
        &self.part.spec
    }

    fn eval(&self, p: &Point) -> f64 {
        self.part.phi(self.i, p)
    }
}

impl ScalarField for HPPartition {
    fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    fn eval(&self, p: &Point) -> f64 {
        self.sum(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CAlphaRow {
    pub alpha: MultiIndex,
    pub level: usize,
    #[serde(rename = "C_alpha")]
    pub c_alpha: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub alpha: MultiIndex,
    /// `max / min` of the per-level estimates.
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub tiles: usize,
    pub n_samples: usize,
    /// `max |Σ φ_i - 1|` over samples of the covered tiles.
    pub sum_error: f64,
    pub theta_identity_error: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    /// Largest `φ_i` seen beyond `2 R^out_w` from `p_w`.
    pub support_leak: f64,
    /// Largest first-order derivative of `Σ φ_i` at deep-interior samples.
    pub interior_derivative: f64,
    #[serde(rename = "C_alpha")]
    pub c_alpha: Vec<CAlphaRow>,
    pub stability: Vec<StabilityRow>,
}

/// Monte Carlo checks of the partition identities and derivative bounds
/// `|X_α φ_i| ≤ C_α 2^{m|α|}`.
pub fn verify_partition(
    sys: &TileSystem,
    part: &HPPartition,
    max_order: usize,
    n_samples: usize,
    seed: u64,
) -> Result<PartitionReport, PartitionError> {
    let spec = part.spec();
    let n_tiles = part.len();
    let depth = 12;

    // Sum and identity checks on tile samples.
    let pts: Vec<(usize, Point)> = seeding::chunked(seed, "partition/tile-samples", n_samples, 512, |rng, _, len| {
        (0..len)
            .map(|_| {
                let i = rng.gen_range(0..n_tiles);
                (i, sys.random_point(&part.tiles()[i], depth, rng))
            })
            .collect()
    });
    let mut sum_error: f64 = 0.0;
    let mut theta_error: f64 = 0.0;
    let mut phi_min: f64 = f64::INFINITY;
    let mut phi_max: f64 = f64::NEG_INFINITY;
    for (_, q) in &pts {
        sum_error = sum_error.max((part.sum(q) - 1.0).abs());
        theta_error = theta_error.max(part.theta_identity_error(q));
        for (_, v) in part.phis(q) {
            phi_min = phi_min.min(v);
            phi_max = phi_max.max(v);
        }
    }

    // Support samples, in the support ball and in the shell just outside it.
    let shell: Vec<(usize, Point, Point)> = seeding::chunked(seed, "partition/support", n_samples, 512, |rng, _, len| {
        (0..len)
            .map(|_| {
                let i = rng.gen_range(0..n_tiles);
                let r = part.support_radius(i);
                let inside = spec.sample_ball(part.center(i), r, rng);
                let u = spec.sample_unit_sphere(rng);
                let outside = spec.mul(part.center(i), &spec.dil(r * rng.gen_range(1.0 + 1e-9..1.5), &u));
                (i, inside, outside)
            })
            .collect()
    });
    let mut support_leak: f64 = 0.0;
    for (i, inside, outside) in &shell {
        support_leak = support_leak.max(part.phi(*i, outside));
        theta_error = theta_error.max(part.theta_identity_error(inside));
        for (_, v) in part.phis(inside) {
            phi_min = phi_min.min(v);
            phi_max = phi_max.max(v);
        }
    }

    let mut levels: Vec<usize> = part.tiles().iter().map(TileAddress::level).collect();
    levels.dedup();
    let mut c_alpha = Vec::new();
    let mut stability = Vec::new();
    for order in 1..=max_order {
        for alpha in MultiIndex::all_of_order(spec.n1(), order) {
            let mut per_level = Vec::new();
            for &level in &levels {
                let scale = 0.5f64.powi(level as i32);
                let h = default_fd_step(order, scale);
                let mut worst: f64 = 0.0;
                let mut n = 0;
                for (i, q, _) in shell.iter().filter(|(i, _, _)| part.tiles()[*i].level() == level) {
                    let d = part.phi_field(*i).derivative(&alpha, q, h)?;
                    worst = worst.max(d.abs() * scale.powi(order as i32));
                    n += 1;
                }
                if n > 0 {
                    per_level.push(worst);
                    c_alpha.push(CAlphaRow { alpha: alpha.clone(), level, c_alpha: worst, n });
                }
            }
            let hi = per_level.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = per_level.iter().copied().fold(f64::INFINITY, f64::min);
            stability.push(StabilityRow { alpha, spread: if lo > 0.0 { hi / lo } else { f64::INFINITY } });
        }
    }

    // Where one ψ has its plateau the sum is locally constant.
    let mut interior_derivative: f64 = 0.0;
    if max_order >= 1 {
        let mut rng = seeding::stream(seed, "partition/interior", 0);
        for _ in 0..n_samples.min(2000) {
            let i = rng.gen_range(0..n_tiles);
            let (r_in, _) = sys.tile_radii(&part.tiles()[i]);
            let q = spec.sample_ball(part.center(i), 0.5 * r_in, &mut rng);
            let h = default_fd_step(1, 0.5f64.powi(part.tiles()[i].level() as i32));
            for alpha in MultiIndex::all_of_order(spec.n1(), 1) {
                interior_derivative = interior_derivative.max(part.derivative(&alpha, &q, h)?.abs());
            }
        }
    }

    Ok(PartitionReport {
        tiles: n_tiles,
        n_samples,
        sum_error,
        theta_identity_error: theta_error,
        phi_min,
        phi_max,
        support_leak,
        interior_derivative,
        c_alpha,
        stability,
    })
}

/// `φ_ε = Σ φ_i` over a single-level tile cover of a point set.
#[derive(Clone, Debug)]
pub struct Cutoff {
    pub eps: f64,
    pub level: usize,
    pub tile_diameter: f64,
    /// Input points the cover missed.
    pub unmatched: usize,
    partition: HPPartition,
}

impl Cutoff {
    pub fn partition(&self) -> &HPPartition {
        &self.partition
    }

    /// Dyadic content `N · (diam T_w)^s` of the cover.
    pub fn content(&self, s: f64) -> f64 {
        self.partition.len() as f64 * self.tile_diameter.powf(s)
    }
}

impl ScalarField for Cutoff {
    fn spec(&self) -> &GroupSpec {
        self.partition.spec()
    }

    fn eval(&self, p: &Point) -> f64 {
        self.partition.sum(p)
    }
}

/// Level whose tiles have diameter at most `eps`.
pub fn level_for_eps(sys: &TileSystem, eps: f64) -> Result<usize, PartitionError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(PartitionError::InvalidEps(eps));
    }
    let level = (sys.diameter() / eps).log2().max(0.0);
    // Tolerate rounding when eps is an exact dyadic fraction of diam T.
    let level = (level - 1e-9).ceil().max(0.0) as usize;
    let max = max_level(sys.map_count());
    if level > max {
        return Err(PartitionError::ResolutionTooFine { eps, level, max });
    }
    Ok(level)
}

pub fn build_cutoff(sys: &TileSystem, e: &[Point], eps: f64) -> Result<Cutoff, PartitionError> {
    let level = level_for_eps(sys, eps)?;
    let cover = cover_at_level(sys, e, level)?;
    let partition = build_partition(sys, &cover.addresses())?;
    Ok(Cutoff { eps, level, tile_diameter: cover.tile_diameter, unmatched: cover.unmatched, partition })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpRow {
    pub alpha: MultiIndex,
    pub level: usize,
    pub eps: f64,
    pub lp_norm: f64,
    /// Relative standard error of the Monte Carlo integral.
    pub rel_std_error: f64,
    pub content: f64,
    pub bound_rhs: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffLpReport {
    pub p: f64,
    pub ell: usize,
    /// `Q - ℓp`, the dimension at which the content is taken.
    pub content_dim: f64,
    pub n_quad: usize,
    /// Set when `n_quad` is too small for a stable estimate.
    pub low_sample_warning: bool,
    pub rows: Vec<LpRow>,
}

/// Below this many quadrature points the report carries a warning.
pub const MIN_QUADRATURE: usize = 1000;

/// `‖X_α φ_ε‖_p` for all `|α| ≤ alpha_max`, against
/// `ε^{ℓ-|α|} (content + ε)^{1/p}` with the content taken at `Q - ℓp`.
///
/// Quadrature points are uniform in a uniformly chosen support ball and
/// weighted by the inverse ball multiplicity, which makes the estimator
/// unbiased over the union of supports.
pub fn cutoff_lp_report(
    cutoff: &Cutoff,
    ell: usize,
    p: f64,
    alpha_max: usize,
    n_quad: usize,
    seed: u64,
) -> Result<CutoffLpReport, PartitionError> {
    if !(p >= 1.0) {
        return Err(PartitionError::InvalidExponent(p));
    }
    let part = &cutoff.partition;
    let spec = part.spec();
    let q_dim = spec.homogeneous_dim() as f64;
    let n = part.len();
    let r = part.support_radius(0);
    let ball_vol = spec.unit_ball_volume() * r.powf(q_dim);
    let scale = 0.5f64.powi(cutoff.level as i32);
    let mut alphas = vec![MultiIndex::identity()];
    for order in 1..=alpha_max {
        alphas.extend(MultiIndex::all_of_order(spec.n1(), order));
    }
    let label = format!("partition/cutoff-lp/{}", cutoff.level);
    let samples: Vec<Result<(f64, Vec<f64>), GroupError>> = seeding::chunked(seed, &label, n_quad, 256, |rng, _, len| {
        (0..len)
            .map(|_| {
                let k = rng.gen_range(0..n);
                let x = spec.sample_ball(part.center(k), r, rng);
                let mult = part.active(&x).len().max(1);
                let weight = n as f64 * ball_vol / mult as f64;
                let vals = alphas
                    .iter()
                    .map(|a| part.derivative(a, &x, default_fd_step(a.order(), scale)))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((weight, vals))
            })
            .collect()
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>, _>>()?;
    let content_dim = q_dim - ell as f64 * p;
    let content = if p.is_finite() { cutoff.content(content_dim) } else { 0.0 };
    let rows = alphas
        .iter()
        .enumerate()
        .map(|(ai, alpha)| {
            let (lp_norm, rel) = if p.is_finite() {
                let terms: Vec<f64> = samples.iter().map(|(w, v)| w * v[ai].abs().powf(p)).collect();
                let mean = terms.iter().sum::<f64>() / terms.len().max(1) as f64;
                let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (terms.len().max(2) - 1) as f64;
                let se = (var / terms.len().max(1) as f64).sqrt();
                (mean.powf(1.0 / p), if mean > 0.0 { se / mean } else { 0.0 })
            } else {
                (samples.iter().map(|(_, v)| v[ai].abs()).fold(0.0, f64::max), 0.0)
            };
            let pow = (ell as i32 - alpha.order() as i32) as f64;
            let bound_rhs = if p.is_finite() {
                cutoff.eps.powf(pow) * (content + cutoff.eps).powf(1.0 / p)
            } else {
                cutoff.eps.powf(pow)
            };
            LpRow {
                alpha: alpha.clone(),
                level: cutoff.level,
                eps: cutoff.eps,
                lp_norm,
                rel_std_error: rel,
                content,
                bound_rhs,
                ratio: lp_norm / bound_rhs,
            }
        })
        .collect();
    Ok(CutoffLpReport {
        p,
        ell,
        content_dim,
        n_quad,
        low_sample_warning: n_quad < MIN_QUADRATURE,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioBand {
    pub alpha: MultiIndex,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `max / min` across the `ε` sequence.
    pub band: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSeries {
    pub reports: Vec<CutoffLpReport>,
    pub bands: Vec<RatioBand>,
}

/// [`cutoff_lp_report`] over a sequence of `ε`, with the per-`α` spread of
/// the bound ratio.
#[allow(clippy::too_many_arguments)]
pub fn cutoff_series(
    sys: &TileSystem,
    e: &[Point],
    eps: &[f64],
    ell: usize,
    p: f64,
    alpha_max: usize,
    n_quad: usize,
    seed: u64,
) -> Result<CutoffSeries, PartitionError> {
    let mut reports = Vec::new();
    for &ep in eps {
        let cutoff = build_cutoff(sys, e, ep)?;
        reports.push(cutoff_lp_report(&cutoff, ell, p, alpha_max, n_quad, seed)?);
    }
    let bands = match reports.first() {
        None => Vec::new(),
        Some(first) => (0..first.rows.len())
            .map(|ai| {
                let ratios: Vec<f64> = reports.iter().map(|r| r.rows[ai].ratio).collect();
                let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                RatioBand { alpha: first.rows[ai].alpha.clone(), min_ratio: lo, max_ratio: hi, band: hi / lo }
            })
            .collect(),
    };
    Ok(CutoffSeries { reports, bands })
}

/// [`verify_partition`] on the children of one fixed tile per level, with
/// the per-`α` spread of `C_α` across levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStudy {
    pub levels: Vec<usize>,
    pub reports: Vec<PartitionReport>,
    pub sum_error: f64,
    pub theta_identity_error: f64,
    pub stability: Vec<StabilityRow>,
}

/// Level `m` uses all children of `[l; m-1]` for a fixed letter `l`, so
/// every partition sees the same neighbour configuration.
pub fn verify_levels(
    sys: &TileSystem,
    levels: &[usize],
    max_order: usize,
    n_samples: usize,
    seed: u64,
) -> Result<LevelStudy, PartitionError> {
    let letter = (sys.map_count() / 3) as u16;
    let mut reports = Vec::with_capacity(levels.len());
    for &m in levels {
        let tiles: Vec<TileAddress> = if m == 0 {
            vec![TileAddress::root()]
        } else {
            let parent = TileAddress::new(vec![letter; m - 1]);
            (0..sys.map_count() as u16).map(|j| parent.concat(&TileAddress::new(vec![j]))).collect()
        };
        let part = build_partition(sys, &tiles)?;
        let level_seed = seeding::stream_seed(seed, "partition/levels", m as u64);
        reports.push(verify_partition(sys, &part, max_order, n_samples, level_seed)?);
    }
    let sum_error = reports.iter().map(|r| r.sum_error).fold(0.0, f64::max);
    let theta_identity_error = reports.iter().map(|r| r.theta_identity_error).fold(0.0, f64::max);
    let stability = match reports.first() {
        None => Vec::new(),
        Some(first) => (0..first.c_alpha.len())
            .map(|ai| {
                let vals: Vec<f64> = reports.iter().map(|r| r.c_alpha[ai].c_alpha).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                StabilityRow { alpha: first.c_alpha[ai].alpha.clone(), spread: if lo > 0.0 { hi / lo } else { f64::INFINITY } }
            })
            .collect(),
    };
    Ok(LevelStudy { levels: levels.to_vec(), reports, sum_error, theta_identity_error, stability })
}
