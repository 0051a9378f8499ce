use std::sync::OnceLock;

use carnot_gmt::field::ScalarField;
use carnot_gmt::measure::cantor_subsystem;
use carnot_gmt::partition::{build_cutoff, build_partition, verify_partition, BumpProfile, HPPartition};
use carnot_gmt::tiling::{default_system, sample_tile, TileAddress, TileSystem};
use carnot_gmt::{GroupSpec, MultiIndex, Point};
use proptest::prelude::*;

fn heisenberg() -> &'static TileSystem {
    static SYS: OnceLock<TileSystem> = OnceLock::new();
    SYS.get_or_init(|| default_system(&GroupSpec::heisenberg(1).unwrap()).unwrap())
}

/// All level-1 tiles plus two level-2 tiles, so that levels mix.
fn mixed_partition() -> &'static HPPartition {
    static PART: OnceLock<HPPartition> = OnceLock::new();
    PART.get_or_init(|| {
        let mut tiles: Vec<TileAddress> = (0..16).map(|j| TileAddress::new(vec![j])).collect();
        tiles.push(TileAddress::new(vec![3, 7]));
        tiles.push(TileAddress::new(vec![12, 0]));
        build_partition(heisenberg(), &tiles).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn profile_is_a_monotone_step(r1 in 0.1..2.0f64, gap in 0.05..2.0f64, r in 0.0..5.0f64) {
        let b = BumpProfile::new(r1, r1 + gap).unwrap();
        let v = b.eval(r);
        prop_assert!((0.0..=1.0).contains(&v));
        if r <= r1 { prop_assert_eq!(v, 1.0); }
        if r >= r1 + gap { prop_assert_eq!(v, 0.0); }
        prop_assert!(b.eval(r + 0.01) <= v);
    }

    #[test]
    fn partition_sums_to_one_on_covered_tiles(letter in 0u16..16, seed in 0u64..10_000) {
        let sys = heisenberg();
        let part = mixed_partition();
        for y in sample_tile(sys, &TileAddress::new(vec![letter]), 8, 12, seed).unwrap() {
            prop_assert!((part.sum(&y) - 1.0).abs() < 1e-8);
            prop_assert!(part.theta_identity_error(&y) < 1e-12);
            for (i, phi) in part.phis(&y) {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&phi));
                let d = sys.spec().quasi_dist(part.center(i), &y);
                prop_assert!(d < part.support_radius(i) || phi == 0.0);
            }
        }
    }

    #[test]
    fn partition_vanishes_far_away(x in proptest::collection::vec(3.0..6.0f64, 3)) {
        let part = mixed_partition();
        prop_assert_eq!(part.sum(&Point::new(x)), 0.0);
    }
}

#[test]
fn derivative_constants_are_level_independent() {
    let sys = heisenberg();
    let mut per_level = Vec::new();
    for m in 2..=4 {
        let w = TileAddress::new(vec![5; m]);
        let part = build_partition(sys, &[w]).unwrap();
        let rep = verify_partition(sys, &part, 2, 2000, 7).unwrap();
        assert!(rep.sum_error < 1e-8);
        per_level.push(rep.c_alpha);
    }
    for rows in per_level.windows(2) {
        for (a, b) in rows[0].iter().zip(&rows[1]) {
            assert_eq!(a.alpha, b.alpha);
            let r = a.c_alpha / b.c_alpha;
            // Same shape one level down: exact 2^{|α|} scaling up to differencing error.
            assert!((0.5..=2.0).contains(&r), "{}: {} vs {}", a.alpha, a.c_alpha, b.c_alpha);
        }
    }
}

#[test]
fn cutoff_is_one_on_the_set_and_zero_far_away() {
    let sys = heisenberg();
    let e = cantor_subsystem(sys, 2.0, 6).unwrap().points().unwrap();
    let cutoff = build_cutoff(sys, &e, sys.diameter() / 8.0).unwrap();
    assert_eq!(cutoff.unmatched, 0);
    for p in e.iter().step_by(37) {
        assert!((cutoff.eval(p) - 1.0).abs() < 1e-12);
        let d = cutoff.derivative(&MultiIndex::new(vec![0]), p, 1e-5).unwrap();
        assert!(d.abs() < 1e-6, "{d}");
    }
    assert_eq!(cutoff.eval(&Point::from([5.0, 5.0, 5.0])), 0.0);
}
