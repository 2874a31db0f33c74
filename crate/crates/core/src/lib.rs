//! Ellipsoidal invariant-set safety certificates for LTI control loops under
//! bounded sensor and actuator attacks, and synthesis of a secondary
//! output-feedback controller that restores safety.
//!
//! The pipeline: build a [`sysmodel::ClosedLoop`] or [`sysmodel::HatSystem`],
//! check it with [`analysis::verify_safety`], and if that fails, run
//! [`synthesis::synthesize`], [`synthesis::recover_controller`] and
//! [`synthesis::certify`]. [`sim`] replays certificates against concrete
//! attack signals.

extern crate openblas_src;

pub mod analysis;
pub mod ellipsoid;
pub mod error;
pub mod linalg;
pub mod lmi;
pub mod serial;
pub mod sim;
pub mod synthesis;
pub mod sysmodel;

pub use ellipsoid::Ellipsoid;
pub use error::{Error, Result};
