//! Group-theoretic quantum tomography.
//!
//! Tomographic operator sets, their closure identities, and pattern-function
//! reconstruction of density matrices for spin systems, homodyne detection
//! and displaced photon counting.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod displaced_counting;
pub mod error;
pub mod frames;
pub mod homodyne;
pub mod numerics;
pub mod oscillator;
pub mod simulate;
pub mod spin;

pub use error::{Result, TomoError};
pub use frames::{DualFrame, FrameElement, OperatorFrame};
pub use numerics::{ComplexMatrix, DensityMatrix, HermitianEigensystem, C64};
pub use oscillator::FockSpace;
pub use simulate::{MeasurementRecord, ReconstructionResult, SchemeId};
pub use spin::{Direction, SpinSystem};
