pub mod catalog;
pub mod envelope;
pub mod error;
pub mod files;
pub mod format;
pub mod linalg;
pub mod lmi;
pub mod lyapunov;
pub mod reproduce;
pub mod robust;
pub mod simulator;
pub mod spectral;
pub mod systems;
pub mod timevarying;

pub use error::{Error, Result};
