//! Data-driven dimensional synthesis of planar four-bar function generators.
//!
//! The crate is organised bottom-up:
//!
//! * [`kinematics`]: exact position analysis, type classification and the
//!   cycle-parameterised input/output map.
//! * [`datagen`]: type-specified, defect-free synthetic samples.
//! * [`neural`]: a stacked LSTM regressor with a type-specifying output layer,
//!   trained with Adam on online-generated data.
//! * [`metrics`]: cosine similarity, the simulation metric and per-point errors.
//! * [`moe`]: the sixteen-expert registry, single/multi-type synthesis and
//!   relative-precision-point expansion.

pub mod datagen;
pub mod kinematics;
pub mod metrics;
pub mod moe;
pub mod neural;
pub mod points;

pub use kinematics::{Inversion, LinkageDims, LinkageType, TypeConfig};
pub use points::PrecisionPointSequence;
