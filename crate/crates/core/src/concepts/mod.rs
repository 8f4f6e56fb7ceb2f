//! Operator-defined concept hierarchies.
//!
//! A concept is a tree of nodes with match conditions over code strings
//! (ICD-10-GM being the canonical example) plus connectors binding it to
//! tables. Codes resolve to the deepest matching node; subtree membership is
//! an interval test on pre-order indices.

mod condition;
mod tree;
pub mod trie;

pub use condition::{AuxValues, Condition, NoAux};
pub use tree::{Assigned, Assignment, ConceptNode, ConceptTree, Connector, NodeId, ValidityDate};
