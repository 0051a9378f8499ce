//! One function per `<noun> <verb>`. Each resolves its parameters, runs the
//! library call and returns an [`Outcome`]; `main` wraps and writes it.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use carnot_gmt::geometry::BBox;
use carnot_gmt::invariants::{run_suite, SuiteConfig};
use carnot_gmt::measure::{
    cantor_subsystem, dimension_estimate, frostman_check, segment, tile_dimension, CantorMeasure, DiscreteMeasure, Trend,
};
use carnot_gmt::partition::{cutoff_series, verify_levels, DEFAULT_MAX_ORDER};
use carnot_gmt::potential::{
    bmo_seminorm_estimate, far_field_decay, holder_seminorm_estimate, kernel_smoothness_check, lp_norm_estimate,
    potential_eval, BmoConfig, KernelSpec, Placement, PotentialField, Source, QUADRATURE_EXCLUSION,
};
use carnot_gmt::tiling::{
    certify_tiling, estimate_k, estimate_radii, render_level, write_points_csv, CertifyConfig, TileAddress, TileSystem,
};
use carnot_gmt::{GroupSpec, Point};
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::config::{
    config_err, numeric_err, parse_floats, parse_levels, read_points_csv, tile_system, CliError, CommonArgs, Floats,
    Levels,
};
use crate::report::{write_file, Outcome};

/// Decade spread at or below which a seminorm profile counts as bounded.
pub const BOUNDED_SPREAD: f64 = 4.0;
/// Fewest decades a growth verdict needs.
pub const MIN_GROWTH_DECADES: usize = 3;
/// Largest admissible spread of `C_α` across levels.
pub const C_ALPHA_SPREAD: f64 = 3.0;
/// Largest admissible band of cutoff bound ratios across `ε`.
pub const CUTOFF_BAND: f64 = 5.0;
/// Derivative orders above this are computed but flagged.
pub const RELIABLE_ORDER: usize = 2;

fn require_out<'a>(common: &'a CommonArgs, what: &str) -> Result<&'a Path, CliError> {
    common.out.as_deref().ok_or_else(|| config_err(format!("{what} writes a CSV file; pass --out DIR")))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

// ---------------------------------------------------------------- group

#[derive(Args, Debug, Serialize)]
pub struct GroupCheckArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    /// Random triples for the algebraic identities.
    #[arg(long, default_value_t = 10_000)]
    pub triples: usize,
    /// Coordinates are drawn uniformly from `[-range, range]`.
    #[arg(long, default_value_t = 10.0)]
    pub coord_range: f64,
    /// Monte Carlo points for the Haar scaling exponent.
    #[arg(long, default_value_t = 1_000_000)]
    pub haar_samples: usize,
    #[arg(long, default_value_t = 2.0)]
    pub haar_dilation: f64,
    /// Triples for the quasi-triangle constant.
    #[arg(long, default_value_t = 100_000)]
    pub quasi_samples: usize,
}

pub fn group_check(spec: &GroupSpec, a: &GroupCheckArgs) -> Result<Outcome, CliError> {
    if !(a.coord_range > 0.0 && a.haar_dilation > 1.0) {
        return Err(config_err("--coord-range must be positive and --haar-dilation above 1"));
    }
    let cfg = SuiteConfig {
        n_triples: a.triples,
        coord_range: a.coord_range,
        n_haar: a.haar_samples,
        haar_dilation: a.haar_dilation,
        n_quasi: a.quasi_samples,
    };
    let rep = run_suite(spec, &cfg, a.common.seed);
    Outcome::new(rep.pass, &rep)
}

// ---------------------------------------------------------------- tile

#[derive(Args, Debug, Serialize)]
pub struct TileRenderArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 2)]
    pub level: usize,
    /// Random points per level-`level` tile.
    #[arg(long, default_value_t = 4)]
    pub per_tile: usize,
    /// Extra letters appended below each tile when sampling.
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    /// JSON array of digit points replacing the default digit set.
    #[arg(long)]
    pub digits: Option<PathBuf>,
}

#[derive(Serialize)]
struct RenderReport {
    level: usize,
    tiles: usize,
    points: usize,
    csv: String,
}

pub fn tile_render(spec: &GroupSpec, a: &TileRenderArgs) -> Result<Outcome, CliError> {
    let out = require_out(&a.common, "tile render")?;
    let (sys, invalid) = tile_system(spec, a.digits.as_deref())?;
    if a.level > carnot_gmt::tiling::max_level(sys.map_count()) || a.per_tile == 0 {
        return Err(config_err("level too deep for u64 addresses, or --per-tile is zero"));
    }
    let rows = render_level(&sys, a.level, a.per_tile, a.depth, a.common.seed);
    let mut words: Vec<&TileAddress> = rows.iter().map(|(w, _)| w).collect();
    words.dedup();
    let name = format!("tiles-level{}.csv", a.level);
    write_file(&out.join(&name), &csv_bytes(|b| write_points_csv(b, spec.dim(), &rows)))?;
    let rep = RenderReport { level: a.level, tiles: words.len(), points: rows.len(), csv: name };
    let outcome = Outcome::new(true, &rep)?;
    Ok(match invalid {
        Some(msg) => outcome.warn(format!("digit set failed validation: {msg}")),
        None => outcome,
    })
}

#[derive(Args, Debug, Serialize)]
pub struct TileCertifyArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    /// Address length of each sample.
    #[arg(long, default_value_t = 12)]
    pub depth: usize,
    /// Largest admissible pairwise overlap as a fraction of |T|.
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,
    /// Balls for the level-2 overlap-constant estimate; 0 skips it.
    #[arg(long, default_value_t = 300)]
    pub k_balls: usize,
    #[arg(long)]
    pub digits: Option<PathBuf>,
}

#[derive(Serialize)]
struct CertifyReport {
    digit_validation: Option<String>,
    #[serde(flatten)]
    certificate: carnot_gmt::tiling::CertificationReport,
}

pub fn tile_certify(spec: &GroupSpec, a: &TileCertifyArgs) -> Result<Outcome, CliError> {
    if !(a.tol > 0.0) {
        return Err(config_err("--tol must be positive"));
    }
    let (sys, invalid) = tile_system(spec, a.digits.as_deref())?;
    let cfg = CertifyConfig {
        n_samples: a.samples,
        depth: a.depth,
        tol: a.tol,
        seed: a.common.seed,
        parent: TileAddress::root(),
        k_balls: a.k_balls,
    };
    let certificate = certify_tiling(&sys, &cfg).map_err(config_err)?;
    let passed = certificate.passed;
    Outcome::new(passed, &CertifyReport { digit_validation: invalid, certificate })
}

#[derive(Args, Debug, Serialize)]
pub struct TileRadiiArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    /// Ray directions for the inner radius.
    #[arg(long, default_value_t = 4096)]
    pub directions: usize,
    /// Levels for the bounded-overlap constant.
    #[arg(long, default_value = "2..5", value_parser = parse_levels)]
    pub k_levels: Levels,
    #[arg(long, default_value_t = 3000)]
    pub k_balls: usize,
    /// Probe points per ball. Tiles met in thin slivers need many probes;
    /// too few undercount `K`.
    #[arg(long, default_value_t = 1024)]
    pub k_probe: usize,
}

#[derive(Serialize)]
struct RadiiReport {
    radii: carnot_gmt::tiling::Radii,
    #[serde(rename = "K")]
    k: Vec<carnot_gmt::tiling::KEstimate>,
    /// `max K - min K` over the levels.
    #[serde(rename = "K_range")]
    k_range: usize,
}

pub fn tile_radii(spec: &GroupSpec, a: &TileRadiiArgs) -> Result<Outcome, CliError> {
    let (sys, _) = tile_system(spec, None)?;
    let radii = estimate_radii(&sys, a.directions, a.common.seed).map_err(config_err)?;
    let k = a
        .k_levels
        .0
        .iter()
        .map(|&m| estimate_k(&sys, m, a.k_balls, a.k_probe, a.common.seed))
        .collect::<Result<Vec<_>, _>>()
        .map_err(config_err)?;
    let hi = k.iter().map(|e| e.k).max().unwrap_or(0);
    let lo = k.iter().map(|e| e.k).min().unwrap_or(0);
    Outcome::new(true, &RadiiReport { radii, k, k_range: hi - lo })
}

// ---------------------------------------------------------------- measure

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DimSet {
    /// Every tile center at the finest level.
    Tile,
    /// Horizontal segment through the tile center.
    Horizontal,
    /// Vertical segment through the tile center.
    Vertical,
    /// Atoms of the Cantor measure of exponent `--s`.
    Cantor,
}

#[derive(Args, Debug, Serialize)]
pub struct MeasureDimArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = DimSet::Tile)]
    pub set: DimSet,
    /// Contiguous fit levels.
    #[arg(long, default_value = "2..6", value_parser = parse_levels)]
    pub levels: Levels,
    /// Points on a segment.
    #[arg(long, default_value_t = 1 << 16)]
    pub points: usize,
    #[arg(long, default_value_t = 2.0)]
    pub s: f64,
    /// Cantor generation depth.
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    /// Expected dimension; with `--tol`, a miss exits 1.
    #[arg(long)]
    pub expect: Option<f64>,
    #[arg(long, default_value_t = 0.15)]
    pub tol: f64,
}

#[derive(Serialize)]
struct DimReport {
    set: DimSet,
    fit: carnot_gmt::measure::DimensionFit,
    expected: Option<f64>,
    tol: f64,
}

pub fn measure_dim(spec: &GroupSpec, a: &MeasureDimArgs) -> Result<Outcome, CliError> {
    let levels = &a.levels.0;
    let (lo, hi) = (levels[0], *levels.last().unwrap());
    if levels.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(config_err("--levels must be contiguous"));
    }
    let (sys, _) = tile_system(spec, None)?;
    let fit = match a.set {
        DimSet::Tile => tile_dimension(&sys, lo..=hi),
        DimSet::Horizontal | DimSet::Vertical => {
            let mut dir = vec![0.0; spec.dim()];
            match a.set {
                DimSet::Horizontal => dir[0] = 1.0,
                _ => dir[spec.dim() - 1] = 1.0,
            }
            let pts = segment(spec, sys.center(), &Point::new(dir), a.points);
            dimension_estimate(&sys, &pts, lo..=hi)
        }
        DimSet::Cantor => {
            let pts = cantor_subsystem(&sys, a.s, a.depth).and_then(|mu| mu.points()).map_err(config_err)?;
            dimension_estimate(&sys, &pts, lo..=hi)
        }
    }
    .map_err(numeric_err)?;
    let passed = a.expect.is_none_or(|e| (fit.s_hat - e).abs() <= a.tol);
    Outcome::new(passed, &DimReport { set: a.set, fit, expected: a.expect, tol: a.tol })
}

#[derive(Args, Debug, Serialize)]
pub struct MeasureCantorArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    /// Target dimension.
    #[arg(long, default_value_t = 2.0)]
    pub s: f64,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
}

#[derive(Serialize)]
struct CantorReport {
    s: f64,
    depth: usize,
    atoms: u64,
    branching: Vec<usize>,
    dimension_of_schedule: f64,
    csv: String,
}

pub fn measure_cantor(spec: &GroupSpec, a: &MeasureCantorArgs) -> Result<Outcome, CliError> {
    let out = require_out(&a.common, "measure cantor")?;
    let (sys, _) = tile_system(spec, None)?;
    let mu = cantor_subsystem(&sys, a.s, a.depth).map_err(config_err)?;
    let atoms = mu.to_discrete().map_err(config_err)?;
    let name = format!("cantor-s{}-depth{}.csv", a.s, a.depth);
    write_file(&out.join(&name), &csv_bytes(|b| atoms.write_csv(b)))?;
    let rep = CantorReport {
        s: a.s,
        depth: a.depth,
        atoms: mu.atom_count(),
        branching: mu.branching(),
        dimension_of_schedule: mu.dimension_of_schedule(),
        csv: name,
    };
    Outcome::new(true, &rep)
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendArg {
    Bounded,
    Grows,
    Decays,
}

#[derive(Args, Debug, Serialize)]
pub struct MeasureFrostmanArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    /// Exponent of the Cantor measure.
    #[arg(long, default_value_t = 2.0)]
    pub s: f64,
    /// Exponent tested in `μ(B(x, r)) ≤ C r^t`; defaults to `--s`.
    #[arg(long)]
    pub exponent: Option<f64>,
    #[arg(long, default_value_t = 12)]
    pub depth: usize,
    #[arg(long, default_value_t = 600)]
    pub balls: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub r_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r_max: f64,
    /// Expected trend; a mismatch exits 1.
    #[arg(long, value_enum)]
    pub expect: Option<TrendArg>,
}

pub fn measure_frostman(spec: &GroupSpec, a: &MeasureFrostmanArgs) -> Result<Outcome, CliError> {
    let (sys, _) = tile_system(spec, None)?;
    let mu = cantor_subsystem(&sys, a.s, a.depth).map_err(config_err)?;
    let t = a.exponent.unwrap_or(a.s);
    let rep = frostman_check(&mu, t, a.balls, (a.r_min, a.r_max), a.common.seed).map_err(config_err)?;
    let seen = match rep.trend {
        Trend::Bounded => TrendArg::Bounded,
        Trend::GrowsAtSmallScales => TrendArg::Grows,
        Trend::DecaysAtSmallScales => TrendArg::Decays,
    };
    let mut outcome = Outcome::new(a.expect.is_none_or(|e| e == seen), &rep)?;
    if a.r_min < rep.resolution {
        outcome = outcome.warn(format!("radii below the atom resolution {:.3e} see single atoms", rep.resolution));
    }
    Ok(outcome)
}

// ---------------------------------------------------------------- hp

#[derive(Args, Debug, Serialize)]
pub struct HpVerifyArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[arg(long, default_value = "2..5", value_parser = parse_levels)]
    pub levels: Levels,
    /// Highest derivative order |α|.
    #[arg(long, default_value_t = DEFAULT_MAX_ORDER)]
    pub max_order: usize,
    /// Samples per level.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

pub fn hp_verify(spec: &GroupSpec, a: &HpVerifyArgs) -> Result<Outcome, CliError> {
    let (sys, _) = tile_system(spec, None)?;
    let study = verify_levels(&sys, &a.levels.0, a.max_order, a.samples, a.common.seed).map_err(config_err)?;
    let passed = study.sum_error < 1e-8
        && study.theta_identity_error < 1e-12
        && study.stability.iter().filter(|r| r.alpha.order() <= RELIABLE_ORDER).all(|r| r.spread <= C_ALPHA_SPREAD);
    let outcome = Outcome::new(passed, &study)?;
    Ok(order_warning(outcome, a.max_order))
}

fn order_warning(outcome: Outcome, order: usize) -> Outcome {
    if order > RELIABLE_ORDER {
        outcome.warn(format!(
            "derivatives of order {order} come from nested finite differences and are not judged; \
             only |alpha| <= {RELIABLE_ORDER} enter the verdict"
        ))
    } else {
        outcome
    }
}

#[derive(Args, Debug, Serialize)]
pub struct HpCutoffArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    /// Dimension of the Cantor set E.
    #[arg(long, default_value_t = 2.0)]
    pub s: f64,
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    /// Smoothness order ℓ of the bound.
    #[arg(long, default_value_t = 2)]
    pub ell: usize,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, default_value_t = 2)]
    pub alpha_max: usize,
    /// `ε = 2^{-k} diam T` for each listed `k`.
    #[arg(long, default_value = "2..6", value_parser = parse_levels)]
    pub eps_levels: Levels,
    /// Quadrature points per ε.
    #[arg(long, default_value_t = 4000)]
    pub quad: usize,
}

pub fn hp_cutoff(spec: &GroupSpec, a: &HpCutoffArgs) -> Result<Outcome, CliError> {
    let (sys, _) = tile_system(spec, None)?;
    let e = cantor_subsystem(&sys, a.s, a.depth).and_then(|mu| mu.points()).map_err(config_err)?;
    let eps: Vec<f64> = a.eps_levels.0.iter().map(|&k| sys.diameter() * 0.5f64.powi(k as i32)).collect();
    let series = cutoff_series(&sys, &e, &eps, a.ell, a.p, a.alpha_max, a.quad, a.common.seed).map_err(config_err)?;
    let passed = series.bands.iter().filter(|b| b.alpha.order() <= RELIABLE_ORDER).all(|b| b.band <= CUTOFF_BAND);
    let mut outcome = Outcome::new(passed, &series)?;
    if series.reports.iter().any(|r| r.low_sample_warning) {
        outcome = outcome.warn("quadrature below the recommended minimum; ratios are noisy");
    }
    Ok(order_warning(outcome, a.alpha_max))
}

// ---------------------------------------------------------------- potential

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Cantor measure of exponent `--s`.
    Cantor,
    /// Unit point mass at the tile center.
    Atom,
}

#[derive(Args, Debug, Serialize)]
pub struct SourceArgs {
    /// Kernel homogeneity: `k(δ_t p) = t^{λ-Q} k(p)`.
    #[arg(long, default_value_t = 2)]
    pub lambda: u32,
    /// Kernel constant.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, value_enum, default_value_t = SourceKind::Cantor)]
    pub source: SourceKind,
    #[arg(long, default_value_t = 2.0)]
    pub s: f64,
    #[arg(long, default_value_t = 12)]
    pub depth: usize,
    /// Opening angle of the tree summation.
    #[arg(long, default_value_t = carnot_gmt::potential::DEFAULT_THETA)]
    pub theta: f64,
}

impl SourceArgs {
    fn field(&self, spec: &GroupSpec) -> Result<(PotentialField, TileSystem), CliError> {
        let (sys, _) = tile_system(spec, None)?;
        let kernel = KernelSpec::new(spec, self.lambda, self.c).map_err(config_err)?;
        let source = match self.source {
            SourceKind::Cantor => {
                let mu: CantorMeasure = cantor_subsystem(&sys, self.s, self.depth).map_err(config_err)?;
                Source::Cantor(mu)
            }
            SourceKind::Atom => Source::Atoms(DiscreteMeasure::single(spec, sys.center().clone(), 1.0).map_err(config_err)?),
        };
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(config_err("--theta must lie in (0, 1)"));
        }
        let pf = PotentialField::new(kernel, source).map_err(config_err)?.with_theta(self.theta);
        Ok((pf, sys))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Bounded,
    Growing,
    Inconclusive,
}

fn profile(summary: &carnot_gmt::potential::DecadeSummary) -> Profile {
    if summary.spread <= BOUNDED_SPREAD {
        Profile::Bounded
    } else if summary.monotone_growth && summary.decades.len() >= MIN_GROWTH_DECADES {
        Profile::Growing
    } else {
        Profile::Inconclusive
    }
}

#[derive(Serialize)]
struct Verdict<T: Serialize> {
    profile: Profile,
    #[serde(flatten)]
    estimate: T,
}

#[derive(Args, Debug, Serialize)]
pub struct PotentialBmoArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 600)]
    pub balls: usize,
    /// Quadrature points per ball.
    #[arg(long, default_value_t = 64)]
    pub quad: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub r_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r_max: f64,
    /// Expected profile of the median-oscillation decades; a mismatch exits 1.
    #[arg(long, value_enum)]
    pub expect: Option<Profile>,
}

pub fn potential_bmo(spec: &GroupSpec, a: &PotentialBmoArgs) -> Result<Outcome, CliError> {
    let (pf, _) = a.source.field(spec)?;
    let cfg = BmoConfig {
        n_balls: a.balls,
        n_quad: a.quad,
        radii: (a.r_min, a.r_max),
        placement: Placement::NearSupport,
        exclusion: QUADRATURE_EXCLUSION,
    };
    let rep = bmo_seminorm_estimate(&pf, &cfg, a.common.seed).map_err(config_err)?;
    let seen = profile(&rep.median_oscillation);
    let noisy = rep.noisy_balls;
    let mut outcome = Outcome::new(a.expect.is_none_or(|e| e == seen), &Verdict { profile: seen, estimate: rep })?;
    if noisy > 0 {
        outcome = outcome.warn(format!("{noisy} balls have a noisy oscillation estimate; raise --quad"));
    }
    Ok(outcome)
}

#[derive(Args, Debug, Serialize)]
pub struct PotentialHolderArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    #[arg(long, default_value_t = 2000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub d_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub d_max: f64,
    #[arg(long, value_enum)]
    pub expect: Option<Profile>,
}

pub fn potential_holder(spec: &GroupSpec, a: &PotentialHolderArgs) -> Result<Outcome, CliError> {
    let (pf, _) = a.source.field(spec)?;
    let rep = holder_seminorm_estimate(&pf, a.delta, a.pairs, (a.d_min, a.d_max), a.common.seed).map_err(config_err)?;
    let seen = profile(&rep.ratios);
    Outcome::new(a.expect.is_none_or(|e| e == seen), &Verdict { profile: seen, estimate: rep })
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrability {
    Converges,
    Diverges,
}

#[derive(Args, Debug, Serialize)]
pub struct PotentialLpArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 4000)]
    pub quad: usize,
    /// Integration box as `lo,hi` applied to every coordinate.
    #[arg(long, default_value = "-1,2", value_parser = parse_floats)]
    pub domain: Floats,
    #[arg(long, value_enum)]
    pub expect: Option<Integrability>,
}

pub fn potential_lp(spec: &GroupSpec, a: &PotentialLpArgs) -> Result<Outcome, CliError> {
    let [lo, hi] = a.domain.0[..] else {
        return Err(config_err("--domain takes two numbers lo,hi"));
    };
    if !(lo < hi) {
        return Err(config_err("--domain needs lo < hi"));
    }
    let (pf, _) = a.source.field(spec)?;
    let domain = BBox::new(vec![lo; spec.dim()], vec![hi; spec.dim()]);
    let rep = lp_norm_estimate(&pf, a.p, &domain, a.quad, a.common.seed).map_err(config_err)?;
    let seen = if rep.diverges { Integrability::Diverges } else { Integrability::Converges };
    Outcome::new(a.expect.is_none_or(|e| e == seen), &rep)
}

#[derive(Args, Debug, Serialize)]
pub struct KernelCheckArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    /// Gauges of the far-field evaluation points.
    #[arg(long, default_value = "10,100,1000", value_parser = parse_floats)]
    pub far: Floats,
}

#[derive(Serialize)]
struct KernelReport {
    smoothness: carnot_gmt::potential::SmoothnessReport,
    far_field: carnot_gmt::potential::FarFieldReport,
}

/// Tolerances of the kernel verdict.
pub const KERNEL_EXACT_TOL: f64 = 1e-12;
pub const KERNEL_INVARIANCE_TOL: f64 = 1e-10;
pub const KERNEL_BUCKET_SPREAD: f64 = 3.0;
pub const FAR_FIELD_SLOPE_TOL: f64 = 0.05;

pub fn potential_kernel_check(spec: &GroupSpec, a: &KernelCheckArgs) -> Result<Outcome, CliError> {
    let (pf, _) = a.source.field(spec)?;
    let smoothness = kernel_smoothness_check(pf.kernel(), a.pairs, a.common.seed);
    let far_field = far_field_decay(&pf, &a.far.0, a.common.seed).map_err(config_err)?;
    let c = a.source.c.abs();
    let passed = (smoothness.bound_constant - c).abs() <= KERNEL_EXACT_TOL * c
        && smoothness.dilation_invariance_error <= KERNEL_INVARIANCE_TOL
        && smoothness.homogeneity_error <= KERNEL_EXACT_TOL
        && smoothness.bucket_spread <= KERNEL_BUCKET_SPREAD
        && smoothness.c_smooth.is_finite()
        && (far_field.slope - far_field.expected).abs() <= FAR_FIELD_SLOPE_TOL;
    Outcome::new(passed, &KernelReport { smoothness, far_field })
}

#[derive(Args, Debug, Serialize)]
pub struct PotentialEvalArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    /// CSV of evaluation points; the last D columns are coordinates.
    #[arg(long)]
    pub points: PathBuf,
}

#[derive(Serialize)]
struct EvalReport {
    points: usize,
    /// Points within the singular radius of an atom; written as empty cells.
    singular: usize,
    min: Option<f64>,
    max: Option<f64>,
    csv: String,
}

pub fn potential_eval_points(spec: &GroupSpec, a: &PotentialEvalArgs) -> Result<Outcome, CliError> {
    let out = require_out(&a.common, "potential eval")?;
    let pts = read_points_csv(&a.points, spec.dim())?;
    let (pf, _) = a.source.field(spec)?;
    let vals: Vec<Option<f64>> = pts.iter().map(|x| potential_eval(&pf, x).ok()).collect();
    let name = "potential-values.csv".to_string();
    let bytes = csv_bytes(|b| {
        let header: Vec<String> = (1..=spec.dim()).map(|i| format!("x{i}")).collect();
        writeln!(b, "{},value", header.join(","))?;
        for (x, v) in pts.iter().zip(&vals) {
            let coords: Vec<String> = x.coords().iter().map(|c| format!("{c:.17e}")).collect();
            let v = v.map(|v| format!("{v:.17e}")).unwrap_or_default();
            writeln!(b, "{},{v}", coords.join(","))?;
        }
        Ok(())
    });
    write_file(&out.join(&name), &bytes)?;
    let finite: Vec<f64> = vals.iter().flatten().copied().collect();
    let rep = EvalReport {
        points: pts.len(),
        singular: vals.len() - finite.len(),
        min: finite.iter().copied().reduce(f64::min),
        max: finite.iter().copied().reduce(f64::max),
        csv: name,
    };
    Outcome::new(true, &rep)
}
