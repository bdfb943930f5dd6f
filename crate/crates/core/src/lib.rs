pub mod ir;
pub mod scalar;
pub mod sequence;
pub mod rewrite;
pub mod square;
pub mod decompose;
pub mod lattice;
pub mod testkit;
pub mod cli;
