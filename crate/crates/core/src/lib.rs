//! Kalman–Bucy filtering under drift ambiguity.
//!
//! The observation drift is known only up to a bounded perturbation
//! `|theta| <= mu`. The crate simulates the signal/observation system under
//! the reference and perturbed measures, runs the classical and
//! drift-corrected filters, and measures and solves the worst-case
//! estimation problem.
//!
//! Everything is generic over the scalar type (`f32` or `f64`); the
//! `*64` aliases below fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod report;
pub mod riccati;
pub mod rng;
pub mod robust;
mod scalar;
pub mod sde;

pub use error::{Error, Result};
pub use eval::{McEstimate, Method};
pub use filter::{FilterOutput, KalmanBucy};
pub use model::{ModelSpec, TimeGrid};
pub use riccati::{GainPath, VariancePath};
pub use robust::{EstimatorSpec, GameSolution, GameSpec, MinimaxSolution};
pub use scalar::Scalar;
pub use sde::{PathBundle, ThetaPolicy, ThetaTable};

pub type ModelSpec64 = ModelSpec<f64>;
pub type ModelSpec32 = ModelSpec<f32>;
pub type ThetaTable64 = ThetaTable<f64>;
pub type ThetaPolicy64 = ThetaPolicy<f64>;
pub type EstimatorSpec64 = EstimatorSpec<f64>;
pub type KalmanBucy64<'a> = KalmanBucy<'a, f64>;
pub type FilterOutput64 = FilterOutput<f64>;
pub type PathBundle64 = PathBundle<f64>;
pub type VariancePath64 = VariancePath<f64>;
pub type McEstimate64 = McEstimate<f64>;
