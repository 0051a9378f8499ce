//! Coordinate-space helpers: affine maps on exponential coordinates,
//! axis-aligned boxes, and a grid hash for gauge-ball queries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::group::{GroupSpec, Point};

/// `y ↦ A y + b` on coordinates. Left translations and dilations are affine
/// in exponential coordinates of a step-two group.
#[derive(Clone, Debug)]
pub struct AffineMap {
    dim: usize,
    /// Row-major `dim × dim`.
    mat: Vec<f64>,
    offset: Vec<f64>,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        let mut mat = vec![0.0; dim * dim];
        for i in 0..dim {
            mat[i * dim + i] = 1.0;
        }
        AffineMap { dim, mat, offset: vec![0.0; dim] }
    }

    /// `y ↦ a · δ_r(y)`.
    pub fn translate_dilate(spec: &GroupSpec, a: &Point, r: f64) -> Self {
        let d = spec.dim();
        let n1 = spec.n1();
        let mut m = AffineMap::identity(d);
        for c in 0..d {
            m.mat[c * d + c] = if c < n1 { r } else { r * r };
            m.offset[c] = a[c];
        }
        // t_k picks up ½ Σ_ij B^k_ij a_i (r y_j).
        for k in 0..spec.n2() {
            for j in 0..n1 {
                let mut s = 0.0;
                for i in 0..n1 {
                    s += spec.structure_constant(k, i, j) * a[i];
                }
                m.mat[(n1 + k) * d + j] += 0.5 * s * r;
            }
        }
        m
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|r| self.offset[r] + (0..d).map(|c| self.mat[r * d + c] * y[c]).sum::<f64>())
            .collect()
    }

    /// Exact coordinate bounding box of the image of `[lo, hi]`.
    pub fn image_box(&self, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut out_lo = self.offset.clone();
        let mut out_hi = self.offset.clone();
        for r in 0..d {
            for c in 0..d {
                let a = self.mat[r * d + c];
                let (u, v) = (a * lo[c], a * hi[c]);
                out_lo[r] += u.min(v);
                out_hi[r] += u.max(v);
            }
        }
        (out_lo, out_hi)
    }
}

/// Axis-aligned coordinate box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        BBox { lo, hi }
    }

    pub fn empty(dim: usize) -> Self {
        BBox {
            lo: vec![f64::INFINITY; dim],
            hi: vec![f64::NEG_INFINITY; dim],
        }
    }

    pub fn of_points<'a>(dim: usize, pts: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut b = BBox::empty(dim);
        for p in pts {
            b.include(p);
        }
        b
    }

    pub fn include(&mut self, p: &[f64]) {
        for (c, &v) in p.iter().enumerate() {
            self.lo[c] = self.lo[c].min(v);
            self.hi[c] = self.hi[c].max(v);
        }
    }

    pub fn union(&self, other: &BBox) -> BBox {
        let mut b = self.clone();
        b.include(&other.lo);
        b.include(&other.hi);
        b
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .enumerate()
            .all(|(c, &v)| v >= self.lo[c] && v <= self.hi[c])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a).max(0.0)).product()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    pub fn expanded(&self, pad: &[f64]) -> BBox {
        BBox {
            lo: self.lo.iter().zip(pad).map(|(a, p)| a - p).collect(),
            hi: self.hi.iter().zip(pad).map(|(a, p)| a + p).collect(),
        }
    }
}

/// Per-coordinate half-widths of the coordinate box enclosing `B(q, r)`.
pub fn ball_half_widths(spec: &GroupSpec, q: &[f64], r: f64) -> SmallVec<[f64; 8]> {
    let n1 = spec.n1();
    let qh = q[..n1].iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut w: SmallVec<[f64; 8]> = SmallVec::with_capacity(spec.dim());
    for _ in 0..n1 {
        w.push(r);
    }
    for k in 0..spec.n2() {
        w.push(r * r / spec.kappa().sqrt() + 0.5 * spec.bracket_norm(k) * qh * r);
    }
    w
}

type CellKey = SmallVec<[i64; 8]>;

/// Grid hash over a point set stored flat, for gauge-ball queries.
#[derive(Clone, Debug)]
pub struct GridIndex {
    dim: usize,
    cell: Vec<f64>,
    coords: Vec<f64>,
    order: Vec<u32>,
    cells: HashMap<CellKey, (u32, u32)>,
}

impl GridIndex {
    /// `cell` is the per-coordinate cell width.
    pub fn new(dim: usize, coords: Vec<f64>, cell: Vec<f64>) -> Self {
        assert_eq!(coords.len() % dim.max(1), 0);
        assert_eq!(cell.len(), dim);
        let n = coords.len() / dim.max(1);
        let key = |i: usize| -> CellKey {
            (0..dim)
                .map(|c| (coords[i * dim + c] / cell[c]).floor() as i64)
                .collect()
        };
        let mut keyed: Vec<(CellKey, u32)> = (0..n).map(|i| (key(i), i as u32)).collect();
        keyed.sort_unstable();
        let mut cells = HashMap::new();
        let mut start = 0;
        while start < keyed.len() {
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == keyed[start].0 {
                end += 1;
            }
            cells.insert(keyed[start].0.clone(), (start as u32, end as u32));
            start = end;
        }
        let order = keyed.into_iter().map(|(_, i)| i).collect();
        GridIndex { dim, cell, coords, order, cells }
    }

    /// Cells sized for queries of radius about `r`.
    pub fn for_radius(spec: &GroupSpec, coords: Vec<f64>, r: f64) -> Self {
        let n1 = spec.n1();
        let cell = (0..spec.dim())
            .map(|c| if c < n1 { r } else { r.max(r * r) })
            .collect();
        GridIndex::new(spec.dim(), coords, cell)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Visits indices of points inside the coordinate box around `q` with the
    /// given half-widths. The visitor returns `false` to stop early.
    pub fn visit_box(&self, q: &[f64], half: &[f64], mut visit: impl FnMut(usize) -> bool) {
        let d = self.dim;
        let lo: CellKey = (0..d).map(|c| ((q[c] - half[c]) / self.cell[c]).floor() as i64).collect();
        let hi: CellKey = (0..d).map(|c| ((q[c] + half[c]) / self.cell[c]).floor() as i64).collect();
        let mut key = lo.clone();
        loop {
            if let Some(&(s, e)) = self.cells.get(&key) {
                for &i in &self.order[s as usize..e as usize] {
                    if !visit(i as usize) {
                        return;
                    }
                }
            }
            // Odometer increment.
            let mut c = 0;
            loop {
                if c == d {
                    return;
                }
                key[c] += 1;
                if key[c] <= hi[c] {
                    break;
                }
                key[c] = lo[c];
                c += 1;
            }
        }
    }

    /// Visits points with `quasi_dist(point, q) < r`.
    pub fn visit_ball(
        &self,
        spec: &GroupSpec,
        q: &Point,
        r: f64,
        mut visit: impl FnMut(usize, f64) -> bool,
    ) {
        let half = ball_half_widths(spec, q.coords(), r);
        let mut scratch = Point::zeros(self.dim);
        self.visit_box(q.coords(), &half, |i| {
            scratch.coords_mut().copy_from_slice(self.point(i));
            let d = spec.quasi_dist(&scratch, q);
            if d < r {
                visit(i, d)
            } else {
                true
            }
        });
    }

    pub fn any_within(&self, spec: &GroupSpec, q: &Point, r: f64) -> bool {
        let mut found = false;
        self.visit_ball(spec, q, r, |_, _| {
            found = true;
            false
        });
        found
    }

    pub fn count_within(&self, spec: &GroupSpec, q: &Point, r: f64) -> usize {
        let mut n = 0;
        self.visit_ball(spec, q, r, |_, _| {
            n += 1;
            true
        });
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_map_matches_group_ops() {
        let g = GroupSpec::heisenberg(1).unwrap();
        let a = Point::from([0.3, -0.7, 1.5]);
        let m = AffineMap::translate_dilate(&g, &a, 0.5);
        let y = Point::from([1.1, 0.4, -2.0]);
        let direct = g.mul(&a, &g.dil(0.5, &y));
        let via = m.apply(y.coords());
        for c in 0..3 {
            assert!((via[c] - direct[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn image_box_encloses_images() {
        let g = GroupSpec::heisenberg(1).unwrap();
        let a = Point::from([2.0, -1.0, 0.5]);
        let m = AffineMap::translate_dilate(&g, &a, 3.0);
        let (lo, hi) = m.image_box(&[0.0; 3], &[1.0; 3]);
        let b = BBox::new(lo, hi);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let y: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            assert!(b.contains(&m.apply(&y)));
        }
    }

    #[test]
    fn grid_queries_match_brute_force() {
        let g = GroupSpec::heisenberg(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point> = (0..2000).map(|_| g.sample_box(1.0, &mut rng)).collect();
        let flat: Vec<f64> = pts.iter().flat_map(|p| p.coords().to_vec()).collect();
        let idx = GridIndex::for_radius(&g, flat, 0.2);
        for _ in 0..50 {
            let q = g.sample_box(1.0, &mut rng);
            let r = rng.gen_range(0.05..0.5);
            let brute = pts.iter().filter(|p| g.quasi_dist(p, &q) < r).count();
            assert_eq!(idx.count_within(&g, &q, r), brute);
        }
    }

    #[test]
    fn bbox_basics() {
        let b = BBox::of_points(2, [[0.0, 1.0].as_slice(), [2.0, -1.0].as_slice()]);
        assert_eq!(b.lo, vec![0.0, -1.0]);
        assert_eq!(b.volume(), 4.0);
        assert!(b.contains(&[1.0, 0.0]));
        assert!(!b.contains(&[3.0, 0.0]));
    }
}
