//! Chan-Vese level-set segmentation over truncated signed distance
//! functions, with an unrolled differentiable variant and its exact
//! reverse-mode gradients.
//!
//! Conventions: fields are row-major with `x` along columns and `y` along
//! rows (downward); the level set is positive inside the object.

pub mod chanvese;
pub mod cli;
pub mod diffops;
pub mod error;
pub mod exec;
pub mod fields;
pub mod io;
pub mod metrics;
pub mod synth;
pub mod tsdf;
pub mod unrolled;

pub use chanvese::{evolve, evolve_field, EvolutionResult, EvolveOptions, InstanceHypers, RegionConstants};
pub use error::{Error, Result};
pub use fields::{bilinear_resize, BinaryMask, FeatureField, ScalarField, Tsdf};
pub use tsdf::{mask_from_tsdf, mask_to_tsdf, SoftParams};
pub use unrolled::{backward, evolve_recorded, EvolutionTape, GradientBundle};
