//! Labeled trees, the Schaeffer bijection and the two constructions of the
//! uniform infinite planar quadrangulation.

#![forbid(unsafe_code)]

pub mod formulas;
pub mod map_core;
pub mod samplers;
pub mod tree_core;

pub use formulas::{CountTable, FormulaTable};
pub use map_core::{BallMap, CanonicalCode, QuadMap, RotationMap};
pub use samplers::{CertifiedBall, RandomSource, UipqSampler};
pub use tree_core::{ContourPair, LabeledTree, PlaneTree, SpineTree};
