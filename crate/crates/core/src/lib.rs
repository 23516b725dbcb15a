//! Sub-sequence splitting benchmark toolkit for sequential recommendation:
//! corpus preparation, training-set construction, two counting baselines,
//! two neural scorers with hand-written gradients, full-catalog evaluation,
//! training-distribution diagnostics and a deterministic experiment grid.

pub mod augment;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod models;
pub mod objective;
pub mod runner;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type AttnRecF32 = models::AttnRec<f32>;
pub type AttnRecF64 = models::AttnRec<f64>;
pub type GruRecF32 = models::GruRec<f32>;
pub type GruRecF64 = models::GruRec<f64>;
pub type ModelF32 = models::AnyModel<f32>;
pub type ModelF64 = models::AnyModel<f64>;
