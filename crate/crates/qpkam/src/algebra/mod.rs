//! Symbols, their quantisation on truncation boxes, operator families and
//! structure checks.

mod operator;
mod structure;
mod symbol;
mod tame;

pub use operator::*;
pub use structure::*;
pub use symbol::*;
pub use tame::*;
