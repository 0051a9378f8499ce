//! Power-gauge kernels of type `λ`, potentials `f = k * μ` of atomic and
//! Cantor measures, and Monte Carlo estimators for the BMO, Hölder and
//! `L^p` behaviour of such potentials.
//!
//! The kernel is `k(p) = c · gauge(p)^{λ-Q}` and potentials are taken in the
//! left-invariant form `f(x) = ∫ k(y^{-1} x) dμ(y) = c ∫ d(y, x)^{λ-Q} dμ(y)`,
//! so that kernel singularities are measured by the same quasi-distance as
//! balls and Frostman bounds.
//!
//! Cantor potentials use a Barnes–Hut walk over the implicit tree: a node is
//! replaced by its mass at its coordinate barycenter once its radius is below
//! `θ` times its distance. The barycenter makes the first-order error term
//! vanish, so the error is second order in `θ`. Points evaluated together
//! share one set of accepted nodes, which keeps differences between nearby
//! points accurate.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Constant, ScalarField};
use crate::geometry::BBox;
use crate::group::{GroupError, GroupSpec, Point};
use crate::measure::{CantorMeasure, DiscreteMeasure, FiniteMeasure, MeasureError};
use crate::seeding;
use crate::stats::{self, DecadeStat};

/// Opening parameter for the tree walk.
pub const DEFAULT_THETA: f64 = 0.25;
/// Pointwise evaluation fails this close to an atom.
pub const SINGULAR_RADIUS: f64 = 1e-9;
/// Quadrature drops points this close to an atom.
pub const QUADRATURE_EXCLUSION: f64 = 1e-6;
/// Ratio targets `‖Y‖/‖X‖` for the kernel smoothness check.
pub const SMOOTHNESS_RATIOS: [f64; 3] = [0.5, 0.05, 0.005];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("kernel degree {lambda} must satisfy 1 <= lambda < Q = {q}")]
    InvalidLambda { lambda: u32, q: usize },
    #[error("kernel is singular at the identity")]
    AtIdentity,
    #[error("evaluation point within {distance:e} of an atom")]
    Singular { distance: f64 },
    #[error("Hölder exponent {0} outside (0, 1)")]
    InvalidDelta(f64),
    #[error("L^p exponent {0} outside (1, inf)")]
    InvalidExponent(f64),
    #[error("invalid scale range [{0}, {1}]")]
    InvalidRange(f64, f64),
    #[error("kernel and measure live on different groups")]
    GroupMismatch,
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// `k(p) = c · gauge(p)^{λ - Q}`.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    spec: GroupSpec,
    lambda: u32,
    c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub group: String,
    pub lambda: u32,
    pub c: f64,
    pub exponent: f64,
}

impl KernelSpec {
    pub fn new(spec: &GroupSpec, lambda: u32, c: f64) -> Result<Self, PotentialError> {
        let q = spec.homogeneous_dim();
        if lambda < 1 || lambda as usize >= q {
            return Err(PotentialError::InvalidLambda { lambda, q });
        }
        Ok(KernelSpec { spec: spec.clone(), lambda, c })
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `λ - Q`.
    pub fn exponent(&self) -> f64 {
        self.lambda as f64 - self.spec.homogeneous_dim() as f64
    }

    /// Kernel value at gauge `g > 0`.
    pub fn at_gauge(&self, g: f64) -> f64 {
        self.c * g.powf(self.exponent())
    }

    /// Largest `|k|` on the unit sphere, the constant in `|k(p)| ≤ c₁ ‖p‖^{λ-Q}`.
    pub fn sphere_max(&self) -> f64 {
        self.c.abs()
    }

    pub fn summary(&self) -> KernelSummary {
        KernelSummary {
            group: self.spec.label().to_string(),
            lambda: self.lambda,
            c: self.c,
            exponent: self.exponent(),
        }
    }
}

pub fn kernel_eval(ks: &KernelSpec, p: &Point) -> Result<f64, PotentialError> {
    ks.spec.check(p)?;
    let g = ks.spec.gauge(p);
    if g == 0.0 {
        return Err(PotentialError::AtIdentity);
    }
    Ok(ks.at_gauge(g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessBucket {
    /// `‖Y‖ / ‖X‖`.
    pub ratio: f64,
    pub max: f64,
    pub median: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub kernel: KernelSummary,
    pub buckets: Vec<SmoothnessBucket>,
    /// Largest `|k(Y·X) - k(X)| / (‖Y‖ ‖X‖^{λ-Q-1})` seen.
    pub c_smooth: f64,
    /// `max / min` of the bucket medians. Bucket maxima are reported but not
    /// compared, since they come from rare near-worst directions.
    pub bucket_spread: f64,
    /// Largest change of the (dimensionless) ratio under
    /// `(X, Y) ↦ (δ_t X, δ_t Y)`, relative to `max(ratio, 1)`.
    pub dilation_invariance_error: f64,
    /// Largest relative error of `k(δ_t X) = t^{λ-Q} k(X)`.
    pub homogeneity_error: f64,
    /// Largest `|k(p)| / ‖p‖^{λ-Q}` over samples, which saturates at `|c|`.
    pub bound_constant: f64,
}

/// Samples `X` at random scales and `Y` with `‖Y‖ = ρ‖X‖` for each bucket
/// ratio `ρ`, and reports `|k(Y·X) - k(X)| / (‖Y‖ ‖X‖^{λ-Q-1})`.
pub fn kernel_smoothness_check(ks: &KernelSpec, n_pairs: usize, seed: u64) -> SmoothnessReport {
    let spec = &ks.spec;
    let e = ks.exponent();
    let ratio_of = |x: &Point, y: &Point| {
        let gx = spec.gauge(x);
        let gy = spec.gauge(y);
        (ks.at_gauge(spec.gauge(&spec.mul(y, x))) - ks.at_gauge(gx)).abs() / (gy * gx.powf(e - 1.0))
    };
    let mut buckets = Vec::new();
    let mut invariance: f64 = 0.0;
    let mut bound: f64 = 0.0;
    let mut homogeneity: f64 = 0.0;
    for (b, &rho) in SMOOTHNESS_RATIOS.iter().enumerate() {
        let label = format!("potential/smoothness/{b}");
        let rows: Vec<(f64, f64, f64, f64)> = seeding::chunked(seed, &label, n_pairs, 256, |rng, _, len| {
            (0..len)
                .map(|_| {
                    let gx = 10f64.powf(rng.gen_range(-2.0..2.0));
                    let x = spec.dil(gx, &spec.sample_unit_sphere(rng));
                    let y = spec.dil(rho * gx, &spec.sample_unit_sphere(rng));
                    let r = ratio_of(&x, &y);
                    let t = 10f64.powf(rng.gen_range(-3.0..3.0));
                    let rt = ratio_of(&spec.dil(t, &x), &spec.dil(t, &y));
                    let k_bound = ks.at_gauge(gx).abs() / gx.powf(e);
                    let kx = kernel_eval(ks, &x).expect("x is off the origin");
                    let kt = kernel_eval(ks, &spec.dil(t, &x)).expect("x is off the origin");
                    let hom = (kt - t.powf(e) * kx).abs() / kt.abs();
                    (r, (rt - r).abs() / r.max(1.0), k_bound, hom)
                })
                .collect()
        });
        let vals: Vec<f64> = rows.iter().map(|r| r.0).collect();
        for &(_, inv, kb, h) in &rows {
            invariance = invariance.max(inv);
            bound = bound.max(kb);
            homogeneity = homogeneity.max(h);
        }
        buckets.push(SmoothnessBucket {
            ratio: rho,
            max: vals.iter().copied().fold(0.0, f64::max),
            median: stats::median(&vals),
            n: vals.len(),
        });
    }
    let hi = buckets.iter().map(|b| b.median).fold(f64::NEG_INFINITY, f64::max);
    let lo = buckets.iter().map(|b| b.median).fold(f64::INFINITY, f64::min);
    SmoothnessReport {
        kernel: ks.summary(),
        c_smooth: buckets.iter().map(|b| b.max).fold(0.0, f64::max),
        bucket_spread: hi / lo,
        buckets,
        dilation_invariance_error: invariance,
        homogeneity_error: homogeneity,
        bound_constant: bound,
    }
}

/// The measure a potential integrates against.
#[derive(Clone, Debug)]
pub enum Source {
    Atoms(DiscreteMeasure),
    Cantor(CantorMeasure),
}

impl Source {
    fn measure(&self) -> &dyn FiniteMeasure {
        match self {
            Source::Atoms(m) => m,
            Source::Cantor(m) => m,
        }
    }

    /// Coordinate barycenter of the normalized measure.
    pub fn barycenter(&self) -> Point {
        match self {
            Source::Atoms(m) => {
                let mut acc = vec![0.0; m.spec().dim()];
                let total: f64 = m.weights().iter().sum();
                for (a, w) in m.atoms().iter().zip(m.weights()) {
                    acc.iter_mut().zip(a.coords()).for_each(|(s, v)| *s += w * v);
                }
                Point::new(acc.into_iter().map(|v| v / total).collect::<Vec<_>>())
            }
            Source::Cantor(c) => c.root().barycenter,
        }
    }
}

/// `f = k * μ`.
#[derive(Clone, Debug)]
pub struct PotentialField {
    kernel: KernelSpec,
    source: Source,
    theta: f64,
}

impl PotentialField {
    pub fn new(kernel: KernelSpec, source: Source) -> Result<Self, PotentialError> {
        if source.measure().spec() != kernel.spec() {
            return Err(PotentialError::GroupMismatch);
        }
        Ok(PotentialField { kernel, source, theta: DEFAULT_THETA })
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    /// Direct sum over every atom, for small atomic measures and as an
    /// accuracy reference.
    pub fn eval_direct(&self, x: &Point) -> Result<f64, PotentialError> {
        let spec = self.kernel.spec();
        let mut sum = 0.0;
        let mut visit = |a: &Point, w: f64| -> Result<(), PotentialError> {
            let d = spec.quasi_dist(a, x);
            if d < SINGULAR_RADIUS {
                return Err(PotentialError::Singular { distance: d });
            }
            sum += w * self.kernel.at_gauge(d);
            Ok(())
        };
        match &self.source {
            Source::Atoms(m) => {
                for (a, &w) in m.atoms().iter().zip(m.weights()) {
                    visit(a, w)?;
                }
            }
            Source::Cantor(c) => {
                let w = c.atom_weight();
                for a in c.points()? {
                    visit(&a, w)?;
                }
            }
        }
        Ok(sum)
    }

    /// Values at `xs` from one shared walk; `None` for points within
    /// `exclusion` of an atom.
    pub fn eval_joint(&self, xs: &[Point], exclusion: f64) -> Vec<Option<f64>> {
        let spec = self.kernel.spec();
        let mut sums = vec![0.0; xs.len()];
        let mut singular = vec![false; xs.len()];
        match &self.source {
            Source::Atoms(m) => {
                for (a, &w) in m.atoms().iter().zip(m.weights()) {
                    for (i, x) in xs.iter().enumerate() {
                        let d = spec.quasi_dist(a, x);
                        if d < exclusion {
                            singular[i] = true;
                        } else {
                            sums[i] += w * self.kernel.at_gauge(d);
                        }
                    }
                }
            }
            Source::Cantor(c) => {
                let depth = c.depth();
                let mut dist = vec![0.0; xs.len()];
                c.traverse(|node| {
                    let mut dmin = f64::INFINITY;
                    for (d, x) in dist.iter_mut().zip(xs) {
                        *d = spec.quasi_dist(&node.barycenter, x);
                        dmin = dmin.min(*d);
                    }
                    if node.level == depth || node.radius <= self.theta * dmin {
                        for (i, &d) in dist.iter().enumerate() {
                            if d < exclusion {
                                singular[i] = true;
                            } else {
                                sums[i] += node.mass * self.kernel.at_gauge(d);
                            }
                        }
                        false
                    } else {
                        true
                    }
                });
            }
        }
        sums.into_iter()
            .zip(singular)
            .map(|(s, bad)| (!bad).then_some(s))
            .collect()
    }
}

pub fn potential_eval(pf: &PotentialField, x: &Point) -> Result<f64, PotentialError> {
    pf.kernel.spec().check(x)?;
    pf.eval_joint(std::slice::from_ref(x), SINGULAR_RADIUS)[0].ok_or_else(|| PotentialError::Singular {
        distance: pf.source.measure().nearest_atom_distance(x),
    })
}

impl ScalarField for PotentialField {
    fn spec(&self) -> &GroupSpec {
        self.kernel.spec()
    }

    /// `NaN` at singular points.
    fn eval(&self, p: &Point) -> f64 {
        self.eval_joint(std::slice::from_ref(p), SINGULAR_RADIUS)[0].unwrap_or(f64::NAN)
    }
}

/// Borrowed view of the singular support of a field.
#[derive(Clone, Copy)]
pub enum SingularSet<'a> {
    Atoms(&'a DiscreteMeasure),
    Cantor(&'a CantorMeasure),
}

/// Fields the seminorm estimators can sample.
pub trait SampledField: ScalarField {
    /// Values at `xs`, `None` where a point lies within `exclusion` of a
    /// singularity. Implementations may share work across the points.
    fn eval_set(&self, xs: &[Point], _exclusion: f64) -> Vec<Option<f64>> {
        xs.iter().map(|x| Some(self.eval(x))).collect()
    }

    /// A random point of the singular support, if any.
    fn support_point(&self, _rng: &mut seeding::Rng) -> Option<Point> {
        None
    }

    /// Scale below which values reflect atom discreteness.
    fn resolution(&self) -> f64 {
        0.0
    }

    fn singular_set(&self) -> Option<SingularSet<'_>> {
        None
    }
}

impl SampledField for Constant {}

impl SampledField for PotentialField {
    fn eval_set(&self, xs: &[Point], exclusion: f64) -> Vec<Option<f64>> {
        self.eval_joint(xs, exclusion)
    }

    fn support_point(&self, rng: &mut seeding::Rng) -> Option<Point> {
        Some(self.source.measure().sample_support(rng))
    }

    fn resolution(&self) -> f64 {
        self.source.measure().resolution()
    }

    fn singular_set(&self) -> Option<SingularSet<'_>> {
        Some(match &self.source {
            Source::Atoms(m) => SingularSet::Atoms(m),
            Source::Cantor(c) => SingularSet::Cantor(c),
        })
    }
}

/// Where seminorm balls and pairs are centred.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Within the ball radius of a random support point (the identity for
    /// fields without singular support).
    NearSupport,
    /// Uniform in a coordinate box.
    InBox(BBox),
}

fn place<F: SampledField + ?Sized>(field: &F, placement: &Placement, r: f64, rng: &mut seeding::Rng) -> Point {
    let spec = field.spec();
    match placement {
        Placement::NearSupport => {
            let a = field.support_point(rng).unwrap_or_else(|| spec.identity());
            spec.sample_ball(&a, r, rng)
        }
        Placement::InBox(b) => Point::new(
            b.lo.iter()
                .zip(&b.hi)
                .map(|(lo, hi)| if hi > lo { rng.gen_range(*lo..*hi) } else { *lo })
                .collect::<Vec<_>>(),
        ),
    }
}

fn log_uniform(rng: &mut seeding::Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo.ln()..hi.ln()).exp()
    } else {
        lo
    }
}

/// Per-decade statistics of a scale-indexed quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecadeSummary {
    pub decades: Vec<DecadeStat>,
    /// `max / min` of decade medians.
    pub spread: f64,
    /// Slope of `log₁₀ median` against decade.
    pub slope: f64,
    /// Medians strictly increase toward smaller scales.
    pub monotone_growth: bool,
    pub max: f64,
}

impl DecadeSummary {
    fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let decades = stats::by_decade(pairs);
        DecadeSummary {
            spread: stats::spread(&decades),
            slope: crate::measure::decade_slope(&decades),
            monotone_growth: stats::grows_toward_small_scales(&decades),
            max: pairs.iter().map(|p| p.1).fold(0.0, f64::max),
            decades,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmoConfig {
    pub n_balls: usize,
    pub n_quad: usize,
    pub radii: (f64, f64),
    pub placement: Placement,
    pub exclusion: f64,
}

impl Default for BmoConfig {
    fn default() -> Self {
        BmoConfig {
            n_balls: 600,
            n_quad: 64,
            radii: (1e-3, 1.0),
            placement: Placement::NearSupport,
            exclusion: QUADRATURE_EXCLUSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallOscillation {
    pub center: Point,
    pub radius: f64,
    /// `(1/|B|) ∫_B |f - f_B|`.
    pub mean_oscillation: f64,
    /// `(1/|B|) ∫_B |f - median_B f|`.
    pub median_oscillation: f64,
    pub rel_std_error: f64,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmoReport {
    pub config: BmoConfig,
    pub mean_oscillation: DecadeSummary,
    pub median_oscillation: DecadeSummary,
    pub worst: Option<BallOscillation>,
    pub excluded_points: usize,
    pub max_rel_std_error: f64,
    /// Balls whose oscillation estimate has relative standard error above
    /// [`NOISY_REL_ERROR`].
    pub noisy_balls: usize,
    pub resolution: f64,
}

pub const NOISY_REL_ERROR: f64 = 0.25;

/// Mean oscillation of `f` over random balls, grouped by radius decade.
pub fn bmo_seminorm_estimate<F: SampledField + ?Sized>(field: &F, cfg: &BmoConfig, seed: u64) -> Result<BmoReport, PotentialError> {
    let (lo, hi) = cfg.radii;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(PotentialError::InvalidRange(lo, hi));
    }
    let spec = field.spec();
    let balls: Vec<BallOscillation> = seeding::chunked(seed, "potential/bmo", cfg.n_balls, 8, |rng, _, len| {
        (0..len)
            .map(|_| {
                let r = log_uniform(rng, lo, hi);
                let center = place(field, &cfg.placement, r, rng);
                let mut vals = Vec::with_capacity(cfg.n_quad);
                let mut excluded = 0;
                for _ in 0..cfg.n_quad {
                    let x = spec.sample_ball(&center, r, rng);
                    match field.eval_set(std::slice::from_ref(&x), cfg.exclusion)[0] {
                        Some(v) => vals.push(v),
                        None => excluded += 1,
                    }
                }
                let mean = stats::mean(&vals);
                let med = stats::median(&vals);
                let dev: Vec<f64> = vals.iter().map(|v| (v - mean).abs()).collect();
                let osc = stats::mean(&dev);
                let med_osc = stats::mean(&vals.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());
                let sd = (dev.iter().map(|d| (d - osc).powi(2)).sum::<f64>() / (dev.len().max(2) - 1) as f64).sqrt();
                let se = sd / (dev.len().max(1) as f64).sqrt();
                BallOscillation {
                    center,
                    radius: r,
                    mean_oscillation: if vals.is_empty() { 0.0 } else { osc },
                    median_oscillation: if vals.is_empty() { 0.0 } else { med_osc },
                    rel_std_error: if osc > 0.0 { se / osc } else { 0.0 },
                    excluded,
                }
            })
            .collect()
    });
    let mean_pairs: Vec<(f64, f64)> = balls.iter().map(|b| (b.radius, b.mean_oscillation)).collect();
    let med_pairs: Vec<(f64, f64)> = balls.iter().map(|b| (b.radius, b.median_oscillation)).collect();
    let worst = balls
        .iter()
        .max_by(|a, b| a.mean_oscillation.total_cmp(&b.mean_oscillation))
        .cloned();
    Ok(BmoReport {
        config: cfg.clone(),
        mean_oscillation: DecadeSummary::from_pairs(&mean_pairs),
        median_oscillation: DecadeSummary::from_pairs(&med_pairs),
        worst,
        excluded_points: balls.iter().map(|b| b.excluded).sum(),
        max_rel_std_error: balls.iter().map(|b| b.rel_std_error).fold(0.0, f64::max),
        noisy_balls: balls.iter().filter(|b| b.rel_std_error > NOISY_REL_ERROR).count(),
        resolution: field.resolution(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub delta: f64,
    pub n_pairs: usize,
    pub distances: (f64, f64),
    /// `|f(x) - f(z)| / d(x, z)^δ` by distance decade.
    pub ratios: DecadeSummary,
    pub excluded_pairs: usize,
    pub resolution: f64,
}

/// Hölder quotients over pairs `(x, z = x · δ_d(u))` with `u` on the unit
/// sphere, `d` log-uniform in `distances` and `x` within `d` of the support.
pub fn holder_seminorm_estimate<F: SampledField + ?Sized>(
    field: &F,
    delta: f64,
    n_pairs: usize,
    distances: (f64, f64),
    seed: u64,
) -> Result<HolderReport, PotentialError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PotentialError::InvalidDelta(delta));
    }
    let (lo, hi) = distances;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(PotentialError::InvalidRange(lo, hi));
    }
    let spec = field.spec();
    let rows: Vec<Option<(f64, f64)>> = seeding::chunked(seed, "potential/holder", n_pairs, 16, |rng, _, len| {
        (0..len)
            .map(|_| {
                let d = log_uniform(rng, lo, hi);
                let x = place(field, &Placement::NearSupport, d, rng);
                let z = spec.mul(&x, &spec.dil(d, &spec.sample_unit_sphere(rng)));
                let v = field.eval_set(&[x, z], QUADRATURE_EXCLUSION);
                match (v[0], v[1]) {
                    (Some(a), Some(b)) => Some((d, (a - b).abs() / d.powf(delta))),
                    _ => None,
                }
            })
            .collect()
    });
    let pairs: Vec<(f64, f64)> = rows.iter().flatten().copied().collect();
    Ok(HolderReport {
        delta,
        n_pairs,
        distances,
        ratios: DecadeSummary::from_pairs(&pairs),
        excluded_pairs: rows.len() - pairs.len(),
        resolution: field.resolution(),
    })
}

/// Deepest refinement level of the `L^p` proposal: radii down to `2^{-20}`,
/// just below the quadrature exclusion radius.
const LP_LEVELS: usize = 20;
/// Weight of the uniform component of the `L^p` proposal.
const LP_UNIFORM_WEIGHT: f64 = 0.25;
/// Shells are resolved below this distance only.
pub const SHELL_CAP: f64 = 0.25;
/// Tail shell ratio at or above which the integral is flagged divergent.
pub const DIVERGENCE_RATIO: f64 = 0.9;

/// Proposal components concentrated around the singular set: component `J`
/// is uniform in a ball of radius `R_J` about a mass-weighted node of level
/// `J` (or an atom once `J` passes the tree depth).
struct Refinement<'a> {
    set: SingularSet<'a>,
    spec: &'a GroupSpec,
    unit_ball: f64,
    q: f64,
}

impl Refinement<'_> {
    fn radius(&self, j: usize) -> f64 {
        match self.set {
            SingularSet::Cantor(c) if j <= c.depth() => 2.0 * c.outer_radius() * 0.5f64.powi(j as i32),
            _ => 0.5f64.powi(j as i32),
        }
    }

    fn sample(&self, j: usize, rng: &mut seeding::Rng) -> Point {
        let r = self.radius(j);
        let anchor = match self.set {
            SingularSet::Atoms(m) => m.sample_support(rng),
            SingularSet::Cantor(c) => {
                let level = j.min(c.depth());
                let mut node = c.root();
                while node.level < level {
                    let kids = c.children(&node);
                    let i = rng.gen_range(0..kids.len());
                    node = kids.into_iter().nth(i).expect("nonempty level");
                }
                node.barycenter
            }
        };
        self.spec.sample_ball(&anchor, r, rng)
    }

    /// Sum over components of `weight · density_j(x)`.
    fn density(&self, x: &Point, weight: f64) -> f64 {
        let vol = |j: usize| self.unit_ball * self.radius(j).powf(self.q);
        let mut total = 0.0;
        match self.set {
            SingularSet::Atoms(m) => {
                let mass = FiniteMeasure::total_mass(m);
                for j in 0..=LP_LEVELS {
                    total += m.ball_mass(x, self.radius(j)) / mass / vol(j);
                }
            }
            SingularSet::Cantor(c) => {
                // One walk serves every component: nodes at level `j` feed
                // component `j`, leaves also feed the components past the
                // tree depth. Radii decrease with `j`, so a node is opened
                // only if a descendant could lie within the next radius.
                let depth = c.depth();
                let cq = c.quasi_constant();
                c.traverse(|node| {
                    let d = self.spec.quasi_dist(&node.barycenter, x);
                    let l = node.level;
                    if d < self.radius(l) {
                        total += node.mass / vol(l);
                    }
                    if l == depth {
                        for j in depth + 1..=LP_LEVELS {
                            if d < self.radius(j) {
                                total += node.mass / vol(j);
                            }
                        }
                        return false;
                    }
                    // Barycenters of descendants stay within the node radius.
                    d < cq * (self.radius(l + 1) + node.radius)
                });
            }
        }
        weight * total
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    /// Points at distance `[2^{-j-1}, 2^{-j})` from the nearest atom (up to
    /// the quasi-triangle factor for tree measures); `j = 0`
    /// holds everything at distance at least [`SHELL_CAP`].
    pub j: usize,
    pub contribution: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpReport {
    pub p: f64,
    pub domain: BBox,
    pub n_quad: usize,
    /// `(∫_K |f|^p)^{1/p}`.
    pub norm: f64,
    pub integral: f64,
    pub rel_std_error: f64,
    pub shells: Vec<Shell>,
    /// Geometric-mean ratio of successive contributions over the last shells
    /// above the atom resolution.
    pub tail_ratio: Option<f64>,
    pub diverges: bool,
    pub exclusion: f64,
    /// Tail-extrapolated mass of the excluded neighbourhoods; infinite when
    /// the tail does not decay.
    pub exclusion_bias_bound: f64,
    pub resolution: f64,
}

/// `‖f‖_{L^p(K)}` by importance sampling.
///
/// The proposal mixes the uniform law on `K` with ball laws at dyadic radii
/// around the singular support, whose densities are evaluated exactly, so
/// the estimator is unbiased apart from the excluded neighbourhoods. The
/// integral is also split into shells by distance to the nearest atom; if the
/// shell contributions stop decaying the integral is flagged divergent.
pub fn lp_norm_estimate<F: SampledField + ?Sized>(
    field: &F,
    p: f64,
    domain: &BBox,
    n_quad: usize,
    seed: u64,
) -> Result<LpReport, PotentialError> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(PotentialError::InvalidExponent(p));
    }
    let spec = field.spec();
    let vol_k = domain.volume();
    let refine = field.singular_set().map(|set| Refinement {
        set,
        spec,
        unit_ball: spec.unit_ball_volume(),
        q: spec.homogeneous_dim() as f64,
    });
    let uniform_w = if refine.is_some() { LP_UNIFORM_WEIGHT } else { 1.0 };
    let comp_w = (1.0 - uniform_w) / (LP_LEVELS + 1) as f64;
    let exclusion = QUADRATURE_EXCLUSION;
    let nearest = |x: &Point| {
        match field.singular_set() {
            Some(SingularSet::Atoms(m)) => m.nearest_atom_within(x, SHELL_CAP, 1.0),
            Some(SingularSet::Cantor(c)) => c.nearest_atom_within(x, SHELL_CAP, c.quasi_constant()),
            None => None,
        }
        .unwrap_or(f64::INFINITY)
    };

    let rows: Vec<(f64, usize)> = seeding::chunked(seed, "potential/lp", n_quad, 64, |rng, _, len| {
        (0..len)
            .map(|_| {
                let x = match &refine {
                    Some(rf) if rng.gen::<f64>() >= uniform_w => rf.sample(rng.gen_range(0..=LP_LEVELS), rng),
                    _ => place(field, &Placement::InBox(domain.clone()), 0.0, rng),
                };
                if !domain.contains(x.coords()) {
                    return (0.0, 0);
                }
                let mut q = uniform_w / vol_k;
                if let Some(rf) = &refine {
                    q += rf.density(&x, comp_w);
                }
                let dist = nearest(&x);
                let shell = if dist >= SHELL_CAP { 0 } else { (-dist.log2()).floor() as usize };
                match field.eval_set(std::slice::from_ref(&x), exclusion)[0] {
                    Some(v) if dist >= exclusion => (v.abs().powf(p) / q, shell),
                    _ => (0.0, shell),
                }
            })
            .collect()
    });
    let n = rows.len().max(1) as f64;
    let integral = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.0 - integral).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let se = (var / n).sqrt();
    let max_shell = rows.iter().map(|r| r.1).max().unwrap_or(0);
    let mut shells: Vec<Shell> = (0..=max_shell).map(|j| Shell { j, contribution: 0.0, samples: 0 }).collect();
    for &(v, j) in &rows {
        shells[j].contribution += v / n;
        shells[j].samples += 1;
    }
    let resolution = field.resolution();
    let finest = ((-(resolution.max(exclusion)).log2()).floor() as usize).min(LP_LEVELS);
    let tail: Vec<&Shell> = shells
        .iter()
            .filter(|s| s.j >= 2 && s.j <= finest && s.contribution > 0.0)
        .collect();
    let tail_ratio = (tail.len() >= 4).then(|| {
        let last = &tail[tail.len() - 4..];
        let steps = (last[3].j - last[0].j) as f64;
        (last[3].contribution / last[0].contribution).powf(1.0 / steps)
    });
    let diverges = tail_ratio.is_some_and(|r| r >= DIVERGENCE_RATIO);
    let exclusion_bias_bound = match (tail_ratio, tail.last()) {
        (Some(r), Some(s)) if r < 1.0 => s.contribution * r / (1.0 - r),
        (None, _) => 0.0,
        _ => f64::INFINITY,
    };
    Ok(LpReport {
        p,
        domain: domain.clone(),
        n_quad,
        norm: integral.powf(1.0 / p),
        integral,
        rel_std_error: if integral > 0.0 { se / integral } else { 0.0 },
        shells,
        tail_ratio,
        diverges,
        exclusion,
        exclusion_bias_bound,
        resolution,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    /// Atoms with `2^{-j} ≤ d(y, x) < 2^{-j+1}`.
    pub j: i32,
    pub mass: f64,
    pub kernel_sum: f64,
    /// `|c| · μ(A_j) · (2^{-j})^{λ-Q}`, which dominates `|kernel_sum|`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnularReport {
    pub annuli: Vec<Annulus>,
    pub annular_total: f64,
    pub direct_total: f64,
    pub bound_total: f64,
}

/// Splits `f(x)` for an atomic measure into dyadic annuli around `x`.
pub fn annular_decomposition(ks: &KernelSpec, mu: &DiscreteMeasure, x: &Point) -> Result<AnnularReport, PotentialError> {
    let spec = ks.spec();
    let mut by_j: std::collections::BTreeMap<i32, (f64, f64)> = Default::default();
    let mut direct = 0.0;
    for (a, &w) in mu.atoms().iter().zip(mu.weights()) {
        let d = spec.quasi_dist(a, x);
        if d < SINGULAR_RADIUS {
            return Err(PotentialError::Singular { distance: d });
        }
        let k = w * ks.at_gauge(d);
        direct += k;
        let mut j = (-d.log2()).ceil() as i32;
        // Guard the bracket against rounding in log2.
        while 0.5f64.powi(j) > d {
            j += 1;
        }
        while 0.5f64.powi(j - 1) <= d {
            j -= 1;
        }
        let e = by_j.entry(j).or_insert((0.0, 0.0));
        e.0 += w;
        e.1 += k;
    }
    let annuli: Vec<Annulus> = by_j
        .into_iter()
        .map(|(j, (mass, kernel_sum))| Annulus {
            j,
            mass,
            kernel_sum,
            bound: ks.c().abs() * mass * 0.5f64.powi(j).powf(ks.exponent()),
        })
        .collect();
    Ok(AnnularReport {
        annular_total: annuli.iter().map(|a| a.kernel_sum).sum(),
        bound_total: annuli.iter().map(|a| a.bound).sum(),
        annuli,
        direct_total: direct,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarFieldReport {
    pub gauges: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub expected: f64,
}

/// Slope of `log |f|` against `log gauge` along a random ray from the
/// barycenter of the source.
pub fn far_field_decay(pf: &PotentialField, gauges: &[f64], seed: u64) -> Result<FarFieldReport, PotentialError> {
    let spec = pf.kernel.spec();
    let mut rng = seeding::stream(seed, "potential/far-field", 0);
    let dir = spec.sample_unit_sphere(&mut rng);
    let base = pf.source.barycenter();
    let values = gauges
        .iter()
        .map(|&g| potential_eval(pf, &spec.mul(&base, &spec.dil(g, &dir))))
        .collect::<Result<Vec<_>, _>>()?;
    let xs: Vec<f64> = gauges.iter().map(|g| g.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.abs().ln()).collect();
    let slope = stats::fit_line(&xs, &ys).map_or(f64::NAN, |f| f.slope);
    Ok(FarFieldReport { gauges: gauges.to_vec(), values, slope, expected: pf.kernel.exponent() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::cantor_subsystem;
    use crate::tiling::default_system;
    use rand::SeedableRng;

    fn h1() -> GroupSpec {
        GroupSpec::heisenberg(1).unwrap()
    }

    #[test]
    fn kernel_basics() {
        let g = h1();
        let k = KernelSpec::new(&g, 2, 3.0).unwrap();
        assert_eq!(k.exponent(), -2.0);
        assert_eq!(kernel_eval(&k, &Point::from([1.0, 0.0, 0.0])).unwrap(), 3.0);
        let p = Point::from([0.3, -0.2, 0.5]);
        let r = kernel_eval(&k, &g.dil(2.0, &p)).unwrap() / kernel_eval(&k, &p).unwrap();
        assert!((r - 0.25).abs() < 1e-15);
        assert_eq!(kernel_eval(&k, &g.identity()), Err(PotentialError::AtIdentity));
        assert!(KernelSpec::new(&g, 4, 1.0).is_err());
        assert!(KernelSpec::new(&g, 0, 1.0).is_err());
    }

    #[test]
    fn smoothness_small_run() {
        let k = KernelSpec::new(&h1(), 2, 1.0).unwrap();
        let rep = kernel_smoothness_check(&k, 2000, 1);
        assert!(rep.c_smooth.is_finite());
        assert!(rep.bucket_spread < 3.0, "{rep:?}");
        assert!(rep.dilation_invariance_error < 1e-10);
        assert!((rep.bound_constant - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_atom_potential_is_the_kernel() {
        let g = h1();
        let k = KernelSpec::new(&g, 2, 1.0).unwrap();
        let mu = DiscreteMeasure::single(&g, g.identity(), 1.0).unwrap();
        let pf = PotentialField::new(k.clone(), Source::Atoms(mu)).unwrap();
        let x = Point::from([0.4, 0.1, -0.3]);
        assert_eq!(potential_eval(&pf, &x).unwrap(), kernel_eval(&k, &x).unwrap());
        assert!(matches!(potential_eval(&pf, &g.identity()), Err(PotentialError::Singular { .. })));
    }

    #[test]
    fn potentials_are_linear_in_the_measure() {
        let g = h1();
        let k = KernelSpec::new(&g, 2, 1.0).unwrap();
        let a = DiscreteMeasure::new(&g, vec![Point::from([0.1, 0.2, 0.3]), Point::from([-0.5, 0.0, 0.1])], vec![0.3, 0.7]).unwrap();
        let b = DiscreteMeasure::single(&g, Point::from([0.0, 0.9, -0.4]), 2.0).unwrap();
        let f = |m: DiscreteMeasure| PotentialField::new(k.clone(), Source::Atoms(m)).unwrap();
        let x = Point::from([0.25, -0.3, 0.05]);
        let sum = potential_eval(&f(a.sum(&b)), &x).unwrap();
        let parts = potential_eval(&f(a), &x).unwrap() + potential_eval(&f(b), &x).unwrap();
        assert!((sum - parts).abs() < 1e-12 * sum.abs());
    }

    #[test]
    fn tree_walk_matches_direct_sum() {
        let g = h1();
        let sys = default_system(&g).unwrap();
        let mu = cantor_subsystem(&sys, 2.0, 7).unwrap();
        let pf = PotentialField::new(KernelSpec::new(&g, 2, 1.0).unwrap(), Source::Cantor(mu.clone())).unwrap();
        let mut rng = seeding::Rng::seed_from_u64(2);
        let mut worst: f64 = 0.0;
        for _ in 0..40 {
            let a = mu.sample_atom(&mut rng);
            let r = 10f64.powf(rng.gen_range(-2.0..0.5));
            let x = g.sample_ball(&a, r, &mut rng);
            let bh = potential_eval(&pf, &x).unwrap();
            let direct = pf.eval_direct(&x).unwrap();
            worst = worst.max(((bh - direct) / direct).abs());
        }
        assert!(worst < 2e-3, "{worst}");
    }

    #[test]
    fn constant_field_seminorms_vanish() {
        let g = h1();
        let c = Constant { spec: g.clone(), value: 2.5 };
        let cfg = BmoConfig { n_balls: 50, n_quad: 16, ..Default::default() };
        let rep = bmo_seminorm_estimate(&c, &cfg, 1).unwrap();
        assert_eq!(rep.mean_oscillation.max, 0.0);
        assert_eq!(rep.median_oscillation.max, 0.0);
        let h = holder_seminorm_estimate(&c, 0.5, 50, (1e-3, 1.0), 1).unwrap();
        assert_eq!(h.ratios.max, 0.0);
        assert!(holder_seminorm_estimate(&c, 1.5, 50, (1e-3, 1.0), 1).is_err());
    }

    #[test]
    fn lp_of_constant_one_on_unit_box() {
        let g = h1();
        let c = Constant { spec: g.clone(), value: 1.0 };
        let k = BBox::new(vec![0.0; 3], vec![1.0; 3]);
        for p in [1.5, 2.0, 4.0] {
            let rep = lp_norm_estimate(&c, p, &k, 1000, 3).unwrap();
            assert!((rep.norm - 1.0).abs() < 1e-12);
            assert!(!rep.diverges);
        }
        assert!(lp_norm_estimate(&c, 1.0, &k, 10, 3).is_err());
    }

    #[test]
    fn annuli_reproduce_the_direct_sum() {
        let g = h1();
        let sys = default_system(&g).unwrap();
        let mu = cantor_subsystem(&sys, 2.0, 5).unwrap().to_discrete().unwrap();
        let k = KernelSpec::new(&g, 2, 1.5).unwrap();
        let x = Point::from([0.31, 0.47, 0.52]);
        let rep = annular_decomposition(&k, &mu, &x).unwrap();
        assert!((rep.annular_total - rep.direct_total).abs() <= 1e-10 * rep.direct_total.abs());
        for a in &rep.annuli {
            assert!(a.kernel_sum.abs() <= a.bound * (1.0 + 1e-12));
        }
        let mass: f64 = rep.annuli.iter().map(|a| a.mass).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }
}
