//! Cross-task mutual learning for CT reconstruction.
//!
//! Three reconstruction tasks built from one low-dose full-view scan
//! (low-dose full view, sparse view and limited view) are solved by three
//! dual-domain subnetworks that are trained only against each other and the
//! low-dose input, without clean targets.

pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod degradation;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod network;
pub mod phantoms;
pub mod projector;
pub mod trainer;
pub mod verify;

pub use error::{CtError, Result};
pub use geometry::{BeamMode, ScanGeometry, ViewMask};
pub use projector::{FilterWindow, ImageGrid, Projector, Sinogram};
