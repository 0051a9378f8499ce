//! Randomized invariant suite for a group spec, and a generator of random
//! rational step-two specs to run it on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::group::{haar_scaling_exponent, quasi_triangle_constant, GroupError, GroupSpec, Point};
use crate::seeding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub n_triples: usize,
    /// Coordinates of random triples are uniform in `[-range, range]`.
    pub coord_range: f64,
    pub n_haar: usize,
    pub haar_dilation: f64,
    pub n_quasi: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            n_triples: 10_000,
            coord_range: 10.0,
            n_haar: 1_000_000,
            haar_dilation: 2.0,
            n_quasi: 100_000,
        }
    }
}

/// Tolerances the suite is judged against.
pub const ASSOCIATIVITY_TOL: f64 = 1e-9;
pub const EXACT_TOL: f64 = 1e-12;
pub const LEFT_INVARIANCE_TOL: f64 = 1e-9;
pub const HAAR_REL_TOL: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub group: String,
    pub homogeneous_dim: usize,
    pub checks: Vec<Check>,
    pub haar_exponent: f64,
    /// Reported, not judged: any finite value is admissible.
    pub quasi_triangle_constant: f64,
    pub pass: bool,
}

fn random_point(spec: &GroupSpec, range: f64, rng: &mut seeding::Rng) -> Point {
    Point::new((0..spec.dim()).map(|_| rng.gen_range(-range..range)).collect::<Vec<_>>())
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Maxima of the per-sample discrepancies, in check order.
#[derive(Default)]
struct Maxima([f64; 7]);

impl Maxima {
    fn merge(mut self, other: &[f64; 7]) -> Self {
        for (m, v) in self.0.iter_mut().zip(other) {
            *m = m.max(*v);
        }
        self
    }
}

/// Associativity, identity, inverse, dilation homomorphism, gauge
/// homogeneity and symmetry, left invariance of the quasi-distance, and the
/// Haar scaling exponent.
pub fn run_suite(spec: &GroupSpec, cfg: &SuiteConfig, seed: u64) -> SuiteReport {
    let range = cfg.coord_range;
    let rows: Vec<[f64; 7]> = seeding::chunked(seed, "invariants/triples", cfg.n_triples, 1024, |rng, _, len| {
        (0..len)
            .map(|_| {
                let p = random_point(spec, range, rng);
                let q = random_point(spec, range, rng);
                let r = random_point(spec, range, rng);
                let t = 10f64.powf(rng.gen_range(-2.0..2.0));
                let assoc = spec.mul(&spec.mul(&p, &q), &r).max_abs_diff(&spec.mul(&p, &spec.mul(&q, &r)));
                let e = spec.identity();
                let ident = spec.mul(&p, &e).max_abs_diff(&p).max(spec.mul(&e, &p).max_abs_diff(&p));
                let inverse = spec.mul(&p, &spec.inv(&p)).max_abs_diff(&e).max(spec.mul(&spec.inv(&p), &p).max_abs_diff(&e));
                let lhs = spec.dil(t, &spec.mul(&p, &q));
                let rhs = spec.mul(&spec.dil(t, &p), &spec.dil(t, &q));
                let dil_scale = lhs.coords().iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let hom = lhs.max_abs_diff(&rhs) / dil_scale;
                let gauge_hom = rel(spec.gauge(&spec.dil(t, &p)), t * spec.gauge(&p));
                let gauge_sym = rel(spec.gauge(&spec.inv(&p)), spec.gauge(&p));
                let d = spec.quasi_dist(&p, &q);
                let left = (spec.quasi_dist(&spec.mul(&r, &p), &spec.mul(&r, &q)) - d).abs() / d.max(1.0);
                [assoc, ident, inverse, hom, gauge_hom, gauge_sym, left]
            })
            .collect()
    });
    let m = rows.iter().fold(Maxima::default(), |m, r| m.merge(r)).0;

    let mut rng = seeding::stream(seed, "invariants/haar", 0);
    let translation = random_point(spec, 1.0, &mut rng);
    let haar = haar_scaling_exponent(spec, &translation, cfg.haar_dilation, cfg.n_haar, &mut rng);
    let q = spec.homogeneous_dim() as f64;
    let mut rng = seeding::stream(seed, "invariants/quasi", 0);
    let quasi = quasi_triangle_constant(spec, cfg.n_quasi, &mut rng);

    let check = |name: &str, value: f64, tolerance: f64| Check {
        name: name.to_string(),
        value,
        tolerance,
        pass: value.is_finite() && value <= tolerance,
    };
    let checks = vec![
        check("associativity", m[0], ASSOCIATIVITY_TOL),
        check("identity", m[1], EXACT_TOL),
        check("inverse", m[2], EXACT_TOL),
        check("dilation_homomorphism", m[3], EXACT_TOL),
        check("gauge_homogeneity", m[4], EXACT_TOL),
        check("gauge_symmetry", m[5], EXACT_TOL),
        check("left_invariance", m[6], LEFT_INVARIANCE_TOL),
        check("haar_exponent", (haar - q).abs() / q, HAAR_REL_TOL),
        check("quasi_triangle_finite", if quasi.is_finite() { 0.0 } else { f64::INFINITY }, 0.0),
    ];
    SuiteReport {
        group: spec.label().to_string(),
        homogeneous_dim: spec.homogeneous_dim(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        haar_exponent: haar,
        quasi_triangle_constant: quasi,
    }
}

/// A step-two spec with layers `(n1, n2)` whose structure constants are
/// random fractions `a / b` with `|a| ≤ 4`, `1 ≤ b ≤ 4`, redrawn until the
/// first layer generates.
pub fn random_rational_spec(n1: usize, n2: usize, seed: u64) -> Result<GroupSpec, GroupError> {
    let mut rng = seeding::stream(seed, "invariants/random-spec", 0);
    let mut last = None;
    for _ in 0..1000 {
        let mut entries = Vec::new();
        for k in 0..n2 {
            for i in 0..n1 {
                for j in i + 1..n1 {
                    let a: i32 = rng.gen_range(-4..=4);
                    let b: i32 = rng.gen_range(1..=4);
                    if a != 0 {
                        entries.push((k, i, j, a as f64 / b as f64));
                    }
                }
            }
        }
        match GroupSpec::new(&[n1, n2], &entries, 1.0) {
            Ok(s) => return Ok(s.with_label(format!("random-rational({n1},{n2})#{seed}"))),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}
