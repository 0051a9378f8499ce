//! Computational machinery for removability questions on step-two Carnot
//! groups: group arithmetic and gauges, self-similar dyadic tilings, net
//! measures and Cantor subsets, smooth partitions of unity subordinate to
//! tiles, and potentials of singular kernels with their seminorm estimators.

pub mod field;
pub mod geometry;
pub mod group;
pub mod invariants;
pub mod measure;
pub mod partition;
pub mod potential;
pub mod seeding;
pub mod stats;
pub mod tiling;

pub use group::{GroupError, GroupSpec, MultiIndex, Point};
