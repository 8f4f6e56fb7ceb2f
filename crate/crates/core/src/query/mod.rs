//! Query documents, their validated AST and result headers.

mod ast;
pub mod defs;
mod header;

pub use ast::{
    parse_query, ConceptElement, FilterEntry, FilterValue, Query, QueryNode, TableElement, REAL_SCALE,
};
pub use defs::{slug, FilterDef, FilterKind, SelectDef, SelectKind};
pub use header::result_header;

#[cfg(test)]
pub(crate) use ast::tests::{code3 as ast_test_code3, registry as ast_test_registry};
