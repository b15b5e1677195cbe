//! Minimal differentiable compute layer: tensors, kernels with exact
//! backward passes, parameter storage, Adam and a finite-difference checker.

mod adam;
mod gradcheck;
pub mod ops;
mod params;
pub mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, DecaySchedule};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, ParamCheck, REL_ERR_FLOOR};
pub use params::{Param, ParamId, ParamSnapshot, ParamStore, StoreSnapshot};
pub use tensor::Tensor;
