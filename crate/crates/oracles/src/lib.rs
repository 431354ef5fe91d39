//! Slow, direct implementations of the engine's statistics and metrics.
//! Everything here follows the textbook definition with no shortcuts and
//! shares no code with the engine.

pub mod cases;
pub mod gbr;
pub mod lexical;
pub mod pool;
pub mod stats;
