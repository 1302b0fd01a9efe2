//! Bounded model checking of timed security protocols.

pub mod cli;
pub mod encode;
pub mod library;
pub mod model;
pub mod oracle;
pub mod protocol;
pub mod sexp;
pub mod solver;
pub mod term;
pub mod time;
pub mod witness;
