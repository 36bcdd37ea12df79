//! Trees, their weakenings, and the planar combinatorics of loop vertices.

pub mod decorations;
pub mod dual;
pub mod trees;

pub use decorations::{count_planar_decorations, enumerate_planar_decorations, DecorationPattern, LoopObject};
pub use dual::{dualize, primalize, DecoratedTree, DualCycleWord, DualObject};
pub use trees::{enumerate_labeled_trees, labeled_trees, path_infimum_matrix, LabeledTree, WeakeningAssignment};
