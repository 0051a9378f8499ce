//! Step-two Carnot groups in exponential coordinates.
//!
//! A point is `(x, t)` with `x` in the horizontal layer and `t` in the
//! vertical layer. The product is
//! `(x, t)·(x', t') = (x + x', t + t' + B(x, x') / 2)` where
//! `B(x, x')_k = Σ_ij B^k_ij x_i x'_j`, and `δ_r` scales the horizontal block
//! by `r` and the vertical block by `r²`.
//!
//! Structure constants are 0-based: `B^k_ij` is the `k`-th vertical component
//! of `[e_i, e_j]`. The Heisenberg convention is `[e_0, e_1] = e_2`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

/// Inline storage for coordinates; groups up to dimension 8 never allocate.
pub type Coords = SmallVec<[f64; 8]>;

/// Largest horizontal-derivative order supported by the stencils.
pub const MAX_DERIVATIVE_ORDER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("point has {got} coordinates but the group has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dilation factor must be positive, got {0}")]
    NonPositiveDilation(f64),
    #[error("invalid group spec: {0}")]
    InvalidSpec(String),
    #[error("derivative order {0} exceeds the supported maximum of {MAX_DERIVATIVE_ORDER}")]
    UnsupportedOrder(usize),
    #[error("multi-index entry {entry} is not a horizontal direction (horizontal dimension {n1})")]
    DirectionOutOfRange { entry: usize, n1: usize },
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("scalar field is not finite at {0:?}")]
    NonFinite(Vec<f64>),
    #[error("unknown group name {0:?}; expected euclidean:<n> or heisenberg:<n>")]
    UnknownName(String),
    #[error("cannot parse group spec: {0}")]
    Parse(String),
}

/// A group element in exponential coordinates, horizontal block first.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Coords);

impl Point {
    pub fn new(coords: impl Into<Vec<f64>>) -> Self {
        Point(Coords::from_vec(coords.into()))
    }

    pub fn from_slice(coords: &[f64]) -> Self {
        Point(Coords::from_slice(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Point(smallvec::smallvec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn max_abs_diff(&self, other: &Point) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl std::ops::Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point::new(v)
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(v: [f64; N]) -> Self {
        Point::from_slice(&v)
    }
}

/// Sequence of horizontal directions `(α_1, …, α_ℓ)`, 0-based, naming the
/// operator `X_{α_1} ⋯ X_{α_ℓ}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(SmallVec<[usize; 4]>);

impl MultiIndex {
    pub fn new(entries: impl Into<Vec<usize>>) -> Self {
        MultiIndex(SmallVec::from_vec(entries.into()))
    }

    pub fn identity() -> Self {
        MultiIndex(SmallVec::new())
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    /// All `n1^order` multi-indices of the given order, lexicographic.
    pub fn all_of_order(n1: usize, order: usize) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex::identity()];
        for _ in 0..order {
            out = out
                .into_iter()
                .flat_map(|m| {
                    (0..n1).map(move |i| {
                        let mut e = m.0.clone();
                        e.push(i);
                        MultiIndex(e)
                    })
                })
                .collect();
        }
        out
    }

    /// Operator label such as `X1X2` (1-based for display), `id` when empty.
    pub fn label(&self) -> String {
        if self.0.is_empty() {
            return "id".to_string();
        }
        self.0.iter().map(|i| format!("X{}", i + 1)).collect()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl std::str::FromStr for MultiIndex {
    type Err = GroupError;

    /// Parses labels like `X1X2` (1-based) or `id`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GroupError::Parse(format!("invalid multi-index label {s:?}"));
        if s == "id" || s.is_empty() {
            return Ok(MultiIndex::identity());
        }
        let mut entries = Vec::new();
        for part in s.split('X').skip(1) {
            let i: usize = part.parse().map_err(|_| bad())?;
            entries.push(i.checked_sub(1).ok_or_else(bad)?);
        }
        if !s.starts_with('X') || entries.is_empty() {
            return Err(bad());
        }
        Ok(MultiIndex::new(entries))
    }
}

impl<'de> Deserialize<'de> for MultiIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// On-disk form of a [`GroupSpec`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpecDocument {
    pub layer_dims: Vec<usize>,
    /// Entries `[k, i, j, value]`; a once-nested list is also accepted.
    #[serde(default)]
    pub structure_constants: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

/// Stratification and structure constants of a step ≤ 2 Carnot group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSpec {
    layer_dims: Vec<usize>,
    /// Dense `B^k_ij` at `k * n1 * n1 + i * n1 + j`.
    structure: Vec<f64>,
    /// Nonzero `(k, i, j, B^k_ij)`, both orientations.
    terms: Vec<(usize, usize, usize, f64)>,
    /// Nonzero `(k, i, j, B^k_ij)` with `i < j`. Products pair the two
    /// orientations so that `B(x, x)` cancels exactly.
    pairs: Vec<(usize, usize, usize, f64)>,
    kappa: f64,
    label: String,
}

impl GroupSpec {
    /// Validates and builds a spec from sparse entries `(k, i, j, value)`.
    ///
    /// Entries missing their antisymmetric partner are completed; an explicit
    /// partner must agree.
    pub fn new(
        layer_dims: &[usize],
        entries: &[(usize, usize, usize, f64)],
        kappa: f64,
    ) -> Result<Self, GroupError> {
        let invalid = |m: String| Err(GroupError::InvalidSpec(m));
        if layer_dims.is_empty() || layer_dims.len() > 2 {
            return invalid(format!(
                "only step 1 or 2 is supported, got {} layers",
                layer_dims.len()
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return invalid("layer dimensions must be positive".into());
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return invalid(format!("gauge constant kappa must be positive, got {kappa}"));
        }
        let n1 = layer_dims[0];
        let n2 = layer_dims.get(1).copied().unwrap_or(0);
        let q = n1 + 2 * n2;
        if q < 3 {
            return invalid(format!("homogeneous dimension must be at least 3, got {q}"));
        }
        if n2 == 0 && !entries.is_empty() {
            return invalid("abelian (step 1) specs take no structure constants".into());
        }
        let mut structure = vec![0.0; n2 * n1 * n1];
        let at = |k: usize, i: usize, j: usize| k * n1 * n1 + i * n1 + j;
        // Canonical orientation i < j; the partner (k, j, i) is implied.
        let mut given: std::collections::BTreeMap<(usize, usize, usize), f64> = Default::default();
        for &(k, i, j, v) in entries {
            if k >= n2 || i >= n1 || j >= n1 {
                return invalid(format!("entry ({k}, {i}, {j}) out of range for layers {layer_dims:?}"));
            }
            if !v.is_finite() {
                return invalid(format!("entry ({k}, {i}, {j}) is not finite"));
            }
            if i == j {
                if v != 0.0 {
                    return invalid(format!("B^{k}_{i}{i} = {v} breaks antisymmetry"));
                }
                continue;
            }
            let (key, val) = if i < j { ((k, i, j), v) } else { ((k, j, i), -v) };
            if let Some(&prev) = given.get(&key) {
                if prev != val {
                    return invalid(format!(
                        "B^{k} is not antisymmetric at ({}, {}): entries {prev} and {}",
                        key.1, key.2, -val
                    ));
                }
            }
            given.insert(key, val);
        }
        for (&(k, i, j), &v) in &given {
            structure[at(k, i, j)] = v;
            structure[at(k, j, i)] = -v;
        }
        if n2 > 0 {
            let rank = matrix_rank(
                &(0..n2)
                    .map(|k| {
                        let mut row = Vec::new();
                        for i in 0..n1 {
                            for j in (i + 1)..n1 {
                                row.push(structure[at(k, i, j)]);
                            }
                        }
                        row
                    })
                    .collect::<Vec<_>>(),
            );
            if rank < n2 {
                return invalid(format!(
                    "brackets of the first layer span {rank} of {n2} vertical directions; the first layer must generate"
                ));
            }
        }
        let mut terms = Vec::new();
        for k in 0..n2 {
            for i in 0..n1 {
                for j in 0..n1 {
                    let v = structure[at(k, i, j)];
                    if v != 0.0 {
                        terms.push((k, i, j, v));
                    }
                }
            }
        }
        let label = if n2 == 0 {
            format!("abelian({n1})")
        } else {
            format!("step2({n1},{n2})")
        };
        let pairs = terms.iter().copied().filter(|&(_, i, j, _)| i < j).collect();
        Ok(GroupSpec {
            layer_dims: layer_dims.to_vec(),
            structure,
            terms,
            pairs,
            kappa,
            label,
        })
    }

    /// Abelian `R^n`, admitted for `n ≥ 3`.
    pub fn euclidean(n: usize) -> Result<Self, GroupError> {
        let mut s = GroupSpec::new(&[n], &[], 1.0)?;
        s.label = format!("euclidean:{n}");
        Ok(s)
    }

    /// Heisenberg group of horizontal dimension `2n`, `[e_i, e_{n+i}] = e_{2n}`.
    pub fn heisenberg(n: usize) -> Result<Self, GroupError> {
        if n == 0 {
            return Err(GroupError::InvalidSpec("heisenberg:n needs n >= 1".into()));
        }
        let entries: Vec<_> = (0..n).map(|i| (0, i, n + i, 1.0)).collect();
        let mut s = GroupSpec::new(&[2 * n, 1], &entries, 1.0)?;
        s.label = format!("heisenberg:{n}");
        Ok(s)
    }

    /// Resolves `euclidean:<n>` or `heisenberg:<n>`.
    pub fn named(name: &str) -> Result<Self, GroupError> {
        let unknown = || GroupError::UnknownName(name.to_string());
        let (family, n) = name.split_once(':').ok_or_else(unknown)?;
        let n: usize = n.trim().parse().map_err(|_| unknown())?;
        match family.trim() {
            "euclidean" => GroupSpec::euclidean(n),
            "heisenberg" => GroupSpec::heisenberg(n),
            _ => Err(unknown()),
        }
    }

    pub fn from_document(doc: &SpecDocument) -> Result<Self, GroupError> {
        let entries = parse_entries(&doc.structure_constants)?;
        GroupSpec::new(&doc.layer_dims, &entries, doc.kappa.unwrap_or(1.0))
    }

    pub fn from_json(text: &str) -> Result<Self, GroupError> {
        let doc: SpecDocument =
            serde_json::from_str(text).map_err(|e| GroupError::Parse(e.to_string()))?;
        let mut s = GroupSpec::from_document(&doc)?;
        s.label = "custom".into();
        Ok(s)
    }

    pub fn to_document(&self) -> SpecDocument {
        let mut entries = Vec::new();
        for &(k, i, j, v) in &self.terms {
            if i < j {
                entries.push(serde_json::json!([k, i, j, v]));
            }
        }
        SpecDocument {
            layer_dims: self.layer_dims.clone(),
            structure_constants: serde_json::Value::Array(entries),
            kappa: Some(self.kappa),
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Result<Self, GroupError> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(GroupError::InvalidSpec(format!(
                "gauge constant kappa must be positive, got {kappa}"
            )));
        }
        self.kappa = kappa;
        Ok(self)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn n1(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n2(&self) -> usize {
        self.layer_dims.get(1).copied().unwrap_or(0)
    }

    pub fn step(&self) -> usize {
        self.layer_dims.len()
    }

    /// Topological dimension.
    pub fn dim(&self) -> usize {
        self.n1() + self.n2()
    }

    /// Homogeneous dimension `Q = n1 + 2 n2`.
    pub fn homogeneous_dim(&self) -> usize {
        self.n1() + 2 * self.n2()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn structure_constant(&self, k: usize, i: usize, j: usize) -> f64 {
        let n1 = self.n1();
        self.structure[k * n1 * n1 + i * n1 + j]
    }

    /// Frobenius norm of `B^k`, an upper bound for its operator norm.
    pub fn bracket_norm(&self, k: usize) -> f64 {
        let n1 = self.n1();
        self.structure[k * n1 * n1..(k + 1) * n1 * n1]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Layer index (1 or 2) of coordinate `c`.
    pub fn layer_of(&self, c: usize) -> usize {
        if c < self.n1() {
            1
        } else {
            2
        }
    }

    pub fn identity(&self) -> Point {
        Point::zeros(self.dim())
    }

    pub fn check(&self, p: &Point) -> Result<(), GroupError> {
        if p.dim() != self.dim() {
            return Err(GroupError::DimensionMismatch {
                expected: self.dim(),
                got: p.dim(),
            });
        }
        Ok(())
    }

    pub fn point(&self, coords: impl Into<Vec<f64>>) -> Result<Point, GroupError> {
        let p = Point::new(coords);
        self.check(&p)?;
        Ok(p)
    }

    /// Group product without dimension checks.
    pub fn mul(&self, p: &Point, q: &Point) -> Point {
        debug_assert_eq!(p.dim(), self.dim());
        debug_assert_eq!(q.dim(), self.dim());
        let n1 = self.n1();
        let mut out = p.clone();
        for (o, b) in out.0.iter_mut().zip(q.0.iter()) {
            *o += b;
        }
        for &(k, i, j, v) in &self.pairs {
            out.0[n1 + k] += 0.5 * v * (p.0[i] * q.0[j] - p.0[j] * q.0[i]);
        }
        out
    }

    pub fn multiply(&self, p: &Point, q: &Point) -> Result<Point, GroupError> {
        self.check(p)?;
        self.check(q)?;
        Ok(self.mul(p, q))
    }

    /// `p^{-1} · q` without forming the inverse.
    pub fn left_quotient(&self, p: &Point, q: &Point) -> Point {
        let n1 = self.n1();
        let mut out = q.clone();
        for (o, a) in out.0.iter_mut().zip(p.0.iter()) {
            *o -= a;
        }
        for &(k, i, j, v) in &self.pairs {
            out.0[n1 + k] -= 0.5 * v * (p.0[i] * q.0[j] - p.0[j] * q.0[i]);
        }
        out
    }

    /// [`Self::left_quotient`] into a caller-owned point of the same dimension.
    pub fn left_quotient_into(&self, p: &Point, q: &Point, out: &mut Point) {
        let n1 = self.n1();
        for ((o, a), b) in out.0.iter_mut().zip(p.0.iter()).zip(q.0.iter()) {
            *o = b - a;
        }
        for &(k, i, j, v) in &self.pairs {
            out.0[n1 + k] -= 0.5 * v * (p.0[i] * q.0[j] - p.0[j] * q.0[i]);
        }
    }

    /// Inverse without checks: coordinate negation.
    pub fn inv(&self, p: &Point) -> Point {
        let mut out = p.clone();
        for c in out.0.iter_mut() {
            *c = -*c;
        }
        out
    }

    pub fn inverse(&self, p: &Point) -> Result<Point, GroupError> {
        self.check(p)?;
        Ok(self.inv(p))
    }

    /// `δ_r` without checks.
    pub fn dil(&self, r: f64, p: &Point) -> Point {
        let n1 = self.n1();
        let mut out = p.clone();
        let r2 = r * r;
        for (c, v) in out.0.iter_mut().enumerate() {
            *v *= if c < n1 { r } else { r2 };
        }
        out
    }

    pub fn dil_in_place(&self, r: f64, p: &mut Point) {
        let n1 = self.n1();
        let r2 = r * r;
        for (c, v) in p.0.iter_mut().enumerate() {
            *v *= if c < n1 { r } else { r2 };
        }
    }

    pub fn dilate(&self, r: f64, p: &Point) -> Result<Point, GroupError> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(GroupError::NonPositiveDilation(r));
        }
        self.check(p)?;
        Ok(self.dil(r, p))
    }

    /// `(|x|⁴ + κ|t|²)^{1/4}`; `|x|` in the abelian case.
    pub fn gauge(&self, p: &Point) -> f64 {
        let n1 = self.n1();
        let h2: f64 = p.0[..n1].iter().map(|v| v * v).sum();
        if self.n2() == 0 {
            return h2.sqrt();
        }
        let v2: f64 = p.0[n1..].iter().map(|v| v * v).sum();
        let s = h2 * h2 + self.kappa * v2;
        if s == 0.0 {
            0.0
        } else {
            s.sqrt().sqrt()
        }
    }

    /// Left-invariant quasi-distance `gauge(p^{-1} q)`.
    pub fn quasi_dist(&self, p: &Point, q: &Point) -> f64 {
        self.gauge(&self.left_quotient(p, q))
    }

    /// `p · exp(τ e_i)` for a horizontal direction `i`.
    pub fn flow(&self, p: &Point, i: usize, tau: f64) -> Point {
        let n1 = self.n1();
        let mut out = p.clone();
        for &(k, a, b, v) in &self.terms {
            if b == i {
                out.0[n1 + k] += 0.5 * v * p.0[a] * tau;
            }
        }
        out.0[i] += tau;
        out
    }

    /// Vertical coefficients of `X_i` at `p`: `X_i = ∂_{x_i} + Σ_k c_k ∂_{t_k}`.
    pub fn horizontal_field(&self, i: usize, p: &Point) -> Vec<f64> {
        let mut c = vec![0.0; self.n2()];
        for &(k, a, b, v) in &self.terms {
            if b == i {
                c[k] += 0.5 * v * p.0[a];
            }
        }
        c
    }

    /// Nested central differences for `X_α f(p)` along `p · exp(τ e_i)`.
    pub fn horizontal_derivative<F>(
        &self,
        f: &F,
        alpha: &MultiIndex,
        p: &Point,
        h: f64,
    ) -> Result<f64, GroupError>
    where
        F: Fn(&Point) -> f64 + ?Sized,
    {
        self.check(p)?;
        if alpha.order() > MAX_DERIVATIVE_ORDER {
            return Err(GroupError::UnsupportedOrder(alpha.order()));
        }
        if let Some(&e) = alpha.entries().iter().find(|&&e| e >= self.n1()) {
            return Err(GroupError::DirectionOutOfRange { entry: e, n1: self.n1() });
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(GroupError::InvalidStep(h));
        }
        self.nested_difference(f, alpha.entries(), p, h)
    }

    fn nested_difference<F>(&self, f: &F, dirs: &[usize], p: &Point, h: f64) -> Result<f64, GroupError>
    where
        F: Fn(&Point) -> f64 + ?Sized,
    {
        match dirs.split_first() {
            None => {
                let v = f(p);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(GroupError::NonFinite(p.coords().to_vec()))
                }
            }
            Some((&i, rest)) => {
                let plus = self.nested_difference(f, rest, &self.flow(p, i, h), h)?;
                let minus = self.nested_difference(f, rest, &self.flow(p, i, -h), h)?;
                Ok((plus - minus) / (2.0 * h))
            }
        }
    }

    /// Haar volume of the unit gauge ball.
    ///
    /// Integrating out the vertical ball of radius `((1 - |x|⁴)/κ)^{1/2}`
    /// leaves a radial integral in `|x|`, done by Simpson's rule after the
    /// substitution `|x| = 1 - u²` that removes the endpoint square root.
    pub fn unit_ball_volume(&self) -> f64 {
        let (n1, n2) = (self.n1(), self.n2());
        let radial = |u: f64| {
            let r = 1.0 - u * u;
            let cap = (1.0 - r.powi(4)).max(0.0);
            cap.powf(0.5 * n2 as f64) * r.powi(n1 as i32 - 1) * 2.0 * u
        };
        let n = 4000;
        let h = 1.0 / n as f64;
        let mut s = radial(0.0) + radial(1.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * radial(i as f64 * h);
        }
        let integral = s * h / 3.0;
        euclidean_ball_volume(n2) * self.kappa.powf(-0.5 * n2 as f64) * n1 as f64 * euclidean_ball_volume(n1) * integral
    }

    /// Uniform sample of the unit gauge ball by rejection from its bounding box.
    pub fn sample_unit_ball<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let n1 = self.n1();
        let vmax = 1.0 / self.kappa.sqrt();
        loop {
            let mut p = Point::zeros(self.dim());
            for c in 0..self.dim() {
                let half = if c < n1 { 1.0 } else { vmax };
                p.0[c] = rng.gen_range(-half..half);
            }
            if self.gauge(&p) < 1.0 {
                return p;
            }
        }
    }

    /// Point with unit gauge in a random direction.
    pub fn sample_unit_sphere<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        loop {
            let p = self.sample_unit_ball(rng);
            let g = self.gauge(&p);
            if g > 1e-3 {
                return self.dil(1.0 / g, &p);
            }
        }
    }

    /// Uniform sample of `B(center, radius)`.
    pub fn sample_ball<R: Rng + ?Sized>(&self, center: &Point, radius: f64, rng: &mut R) -> Point {
        self.mul(center, &self.dil(radius, &self.sample_unit_ball(rng)))
    }

    /// Coordinates uniform in `[-half_width, half_width]`.
    pub fn sample_box<R: Rng + ?Sized>(&self, half_width: f64, rng: &mut R) -> Point {
        let mut p = Point::zeros(self.dim());
        for c in p.0.iter_mut() {
            *c = rng.gen_range(-half_width..=half_width);
        }
        p
    }
}

fn parse_entries(v: &serde_json::Value) -> Result<Vec<(usize, usize, usize, f64)>, GroupError> {
    let bad = |m: &str| GroupError::Parse(m.to_string());
    let list = match v {
        serde_json::Value::Null => return Ok(Vec::new()),
        serde_json::Value::Array(a) => a,
        _ => return Err(bad("structure_constants must be a list")),
    };
    // Accept `[[k,i,j,v], ...]` or `[[[k,i,j,v], ...]]`.
    let flat: Vec<&serde_json::Value> = if list
        .first()
        .and_then(|e| e.as_array())
        .and_then(|e| e.first())
        .is_some_and(|e| e.is_array())
    {
        list.iter()
            .flat_map(|e| e.as_array().into_iter().flatten())
            .collect()
    } else {
        list.iter().collect()
    };
    flat.into_iter()
        .map(|e| {
            let a = e
                .as_array()
                .filter(|a| a.len() == 4)
                .ok_or_else(|| bad("each structure constant must be [k, i, j, value]"))?;
            let idx = |n: usize| {
                a[n].as_u64()
                    .map(|x| x as usize)
                    .ok_or_else(|| bad("structure constant indices must be non-negative integers"))
            };
            let val = a[3]
                .as_f64()
                .ok_or_else(|| bad("structure constant value must be a number"))?;
            Ok((idx(0)?, idx(1)?, idx(2)?, val))
        })
        .collect()
}

/// Rank by Gaussian elimination with partial pivoting.
fn matrix_rank(rows: &[Vec<f64>]) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let ncols = m.first().map_or(0, |r| r.len());
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(1e-300);
    let mut rank = 0;
    for col in 0..ncols {
        let pivot = (rank..m.len()).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()));
        let Some(piv) = pivot else { break };
        if m[piv][col].abs() <= 1e-12 * scale {
            continue;
        }
        m.swap(rank, piv);
        for r in 0..m.len() {
            if r != rank {
                let f = m[r][col] / m[rank][col];
                for c in col..ncols {
                    m[r][c] -= f * m[rank][c];
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Volume of the Euclidean unit ball in `R^n`.
pub fn euclidean_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / n as f64 * euclidean_ball_volume(n - 2),
    }
}

/// Default finite-difference step for derivatives of the given order at a
/// feature length `scale`.
pub fn default_fd_step(order: usize, scale: f64) -> f64 {
    if order <= 1 {
        1e-4 * scale
    } else {
        1e-3 * scale
    }
}

/// Largest observed `gauge(p·q) / (gauge(p) + gauge(q))` over random pairs
/// with relative scales spread over six decades.
pub fn quasi_triangle_constant<R: Rng + ?Sized>(spec: &GroupSpec, n: usize, rng: &mut R) -> f64 {
    let mut worst: f64 = 1.0;
    for _ in 0..n {
        let p = spec.sample_unit_sphere(rng);
        let s = 10f64.powf(rng.gen_range(-3.0..3.0));
        let q = spec.dil(s, &spec.sample_unit_sphere(rng));
        let r = spec.gauge(&spec.mul(&p, &q)) / (1.0 + s);
        worst = worst.max(r);
    }
    worst
}

/// Monte Carlo exponent `log(|g·δ_t(box)| / |box|) / log t` for the unit box.
///
/// The image is sampled inside its exact coordinate bounding box; membership
/// is tested by pulling back with `δ_{1/t}(g^{-1} ·)`.
pub fn haar_scaling_exponent<R: Rng + ?Sized>(
    spec: &GroupSpec,
    translation: &Point,
    t: f64,
    n: usize,
    rng: &mut R,
) -> f64 {
    let d = spec.dim();
    let lo = vec![0.0; d];
    let hi = vec![1.0; d];
    let map = crate::geometry::AffineMap::translate_dilate(spec, translation, t);
    let (blo, bhi) = map.image_box(&lo, &hi);
    let bbox_vol: f64 = blo.iter().zip(&bhi).map(|(a, b)| b - a).product();
    let mut hits = 0usize;
    let mut y = Point::zeros(d);
    for _ in 0..n {
        for c in 0..d {
            y.coords_mut()[c] = rng.gen_range(blo[c]..bhi[c]);
        }
        let back = spec.dil(1.0 / t, &spec.left_quotient(translation, &y));
        if back.coords().iter().all(|&v| (0.0..1.0).contains(&v)) {
            hits += 1;
        }
    }
    let vol = bbox_vol * hits as f64 / n as f64;
    vol.ln() / t.ln()
}
