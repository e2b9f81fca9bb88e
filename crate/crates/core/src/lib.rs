//! Learning asymptotically stabilizing controllers from a handful of expert demonstrations.
//!
//! Demonstrations are mapped to feedback-linearized (Brunovsky) coordinates, where affine
//! combinations of them are again solutions. The learned controller re-expresses the current
//! state in the demonstrations' affine frame every period `T`; stability is certified by the
//! norm of the monodromy matrix `Z(T) Z^{-1}(0)`. Larger demonstration sets are split by a
//! Delaunay triangulation of their initial states, and plants without full relative degree are
//! handled through an integrator-chain embedding with auxiliary states.

pub mod certify;
pub mod demos;
pub mod embed;
pub mod error;
pub mod geometry;
pub mod learner;
pub mod linalg;
pub mod multi;
pub mod plant;
pub mod sim;
pub mod systems;

pub use error::{Error, Result};
