use std::sync::OnceLock;

use carnot_gmt::measure::cover_at_level;
use carnot_gmt::tiling::{
    build_system, build_system_unchecked, certify_tiling, default_digits, default_system, estimate_k, sample_tile,
    CertifyConfig, TileAddress, TileSystem, DEFAULT_VERTICAL_STEP,
};
use carnot_gmt::{GroupSpec, Point};
use proptest::prelude::*;

fn heisenberg() -> &'static TileSystem {
    static SYS: OnceLock<TileSystem> = OnceLock::new();
    SYS.get_or_init(|| default_system(&GroupSpec::heisenberg(1).unwrap()).unwrap())
}

fn cube() -> &'static TileSystem {
    static SYS: OnceLock<TileSystem> = OnceLock::new();
    SYS.get_or_init(|| default_system(&GroupSpec::euclidean(3).unwrap()).unwrap())
}

fn address(maps: usize, max_len: usize) -> impl Strategy<Value = TileAddress> {
    proptest::collection::vec(0..maps as u16, 0..=max_len).prop_map(TileAddress::new)
}

fn point() -> impl Strategy<Value = Point> {
    proptest::collection::vec(-2.0..2.0f64, 3).prop_map(Point::new)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn index_round_trips(w in address(16, 8)) {
        let i = w.index(16);
        prop_assert_eq!(TileAddress::from_index(i, w.level(), 16), w);
    }

    #[test]
    fn address_maps_compose(u in address(16, 4), v in address(16, 4), p in point()) {
        let sys = heisenberg();
        let joint = sys.apply_address(&u.concat(&v), &p).unwrap();
        let nested = sys.apply_address(&u, &sys.apply_address(&v, &p).unwrap()).unwrap();
        prop_assert!(joint.max_abs_diff(&nested) < 1e-12);
        prop_assert_eq!(u.concat(&v).prefix(u.level()), u);
    }

    #[test]
    fn pull_back_inverts_the_address_map(w in address(16, 8), p in point()) {
        let sys = heisenberg();
        let q = sys.apply_address(&w, &p).unwrap();
        prop_assert!(sys.pull_back(&w, &q).unwrap().max_abs_diff(&p) < 1e-9);
    }

    #[test]
    fn offsets_give_the_affine_form(w in address(16, 6), p in point()) {
        // f_w(y) = g_w · δ_{2^{-m}}(y).
        let sys = heisenberg();
        let g = sys.spec();
        let direct = sys.apply_address(&w, &p).unwrap();
        let affine = g.mul(&sys.address_offset(&w), &g.dil(0.5f64.powi(w.level() as i32), &p));
        prop_assert!(direct.max_abs_diff(&affine) < 1e-12);
    }

    #[test]
    fn tile_distances_scale_by_half_per_letter(w in address(16, 5), p in point(), q in point()) {
        let sys = heisenberg();
        let g = sys.spec();
        let d = g.quasi_dist(&p, &q);
        let dw = g.quasi_dist(&sys.apply_address(&w, &p).unwrap(), &sys.apply_address(&w, &q).unwrap());
        prop_assert!((dw - 0.5f64.powi(w.level() as i32) * d).abs() <= 1e-9 * d.max(1.0));
    }

    #[test]
    fn samples_of_a_tile_lie_in_it(w in address(16, 3), seed in 0u64..1000) {
        let sys = heisenberg();
        let (_, r_out) = sys.tile_radii(&w);
        let c = sys.tile_center(&w).unwrap();
        for y in sample_tile(sys, &w, 20, 10, seed).unwrap() {
            prop_assert!(sys.spec().quasi_dist(&c, &y) <= r_out * (1.0 + 1e-9));
            prop_assert!(sys.contains_precise(&sys.pull_back(&w, &y).unwrap()));
        }
    }
}

#[test]
fn cube_level_two_has_sixty_four_tiles() {
    let sys = cube();
    let pts: Vec<Point> = sample_tile(sys, &TileAddress::root(), 20_000, 8, 1).unwrap();
    let cover = cover_at_level(sys, &pts, 2).unwrap();
    assert_eq!(cover.len(), 64);
    assert_eq!(cover.unmatched, 0);
}

#[test]
fn heisenberg_radii_bracket_the_tile() {
    let sys = heisenberg();
    assert!(sys.inner_radius() > 0.3 && sys.inner_radius() < sys.outer_radius());
    assert!(sys.outer_radius() < 1.5);
    assert!(sys.diameter() <= 2.0 * sys.outer_radius() * (1.0 + 1e-12));
    let c = sys.center().clone();
    assert!((c[0] - 0.5).abs() < 1e-9 && (c[1] - 0.5).abs() < 1e-9 && (c[2] - 0.5).abs() < 1e-9);
}

#[test]
fn bounded_overlap_is_level_independent_on_the_cube() {
    let sys = cube();
    let ks: Vec<usize> = (2..=5).map(|m| estimate_k(sys, m, 200, 64, 3).unwrap().k).collect();
    let (lo, hi) = (ks.iter().min().unwrap(), ks.iter().max().unwrap());
    assert!(hi - lo <= 2, "{ks:?}");
    // A ball of radius below 2^{-m} meets at most 3^3 axis cells at level m.
    assert!(*hi <= 27);
}

#[test]
fn duplicated_digit_fails_certification() {
    let g = GroupSpec::euclidean(3).unwrap();
    let mut digits = default_digits(&g, DEFAULT_VERTICAL_STEP);
    assert!(build_system(&g, &{
        let mut d = digits.clone();
        d[5] = d[2].clone();
        d
    })
    .is_err());
    digits[5] = digits[2].clone();
    let sys = build_system_unchecked(&g, &digits).unwrap();
    let cfg = CertifyConfig { n_samples: 50_000, depth: 8, k_balls: 0, ..Default::default() };
    let rep = certify_tiling(&sys, &cfg).unwrap();
    assert!(!rep.passed);
    assert_eq!(rep.worst_pair, (2, 5));
    assert!(rep.max_overlap > 0.05);
}

#[test]
fn membership_does_not_miss_tile_points() {
    let sys = heisenberg();
    let pts = sample_tile(sys, &TileAddress::root(), 100_000, 14, 5).unwrap();
    let misses = pts.iter().filter(|y| !sys.contains(y)).count();
    assert_eq!(misses, 0);
}
