//! Forward-Euler Wasserstein gradient flows of the KL divergence in one
//! dimension, computed by exact pushforward of densities.
//!
//! The polynomial and root-finding layers are generic over the scalar type;
//! the flow engine itself runs in `f64` (see [`Poly`]).

pub mod density;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod particles;
pub mod poly;
pub mod potentials;
pub mod pushforward;
pub mod quadrature;
pub mod roots;
pub mod scenarios;
pub mod series;

pub use density::Density;
pub use diagnostics::{Classification, JumpReport};
pub use error::{Error, Result};
pub use flow::{fe_step, FlowState, KLEnergy, Regularity, SmoothnessLedger};
pub use particles::ParticleEnsemble;
pub use poly::Polynomial;
pub use potentials::{PiecewisePotential, PotentialPiece, Side, Smoothness};
pub use pushforward::{BranchSet, PiecewiseMap, PiecewiseVelocity, VelocityField};
pub use quadrature::{Estimate, QuadratureConfig};

/// Double-precision polynomial, the form used throughout the flow engine.
pub type Poly = Polynomial<f64>;
