//! Hierarchical rotary position embeddings for source code.
//!
//! * [`rope`]: rotary embedding over interleaved pairs.
//! * [`hier`]: hierarchical positions, per-level dimension splits, the
//!   window rule and the baseline extrapolation strategies.
//! * [`code`]: segments, hierarchical positions and defined symbols
//!   extracted from source files.
//! * [`dims`]: rotary periods and the reliable extrapolation split.
//! * [`tinylm`]: a small decoder-only transformer trained from scratch with
//!   any position strategy.
//! * [`metrics`] and [`record`]: evaluation metrics and task records.

pub mod code;
pub mod config;
pub mod dims;
pub mod error;
pub mod hier;
pub mod metrics;
pub mod record;
pub mod rope;
pub mod tinylm;

pub use error::{Error, Result};
pub use hier::{DimSplit, HierPos, PositionStrategy, WindowConfig};
pub use rope::RotaryConfig;
