//! Transmit-signal design and evaluation for noncoherent distributed
//! integrated sensing and communication (D-ISAC) networks.

pub mod comms;
pub mod config;
pub mod designs;
pub mod error;
pub mod evaluate;
pub mod extraction;
pub mod fim;
pub mod matrixcore;
pub mod num;
pub mod scenario;
pub mod sdp;

pub use error::{Error, Result};

/// Double-precision instances of the scalar-generic types.
pub type HermitianMatrix = matrixcore::HermitianMatrix<f64>;
pub type Scenario = scenario::Scenario<f64>;
pub type CovarianceSet = fim::CovarianceSet<f64>;
pub type FimBundle = fim::FimBundle<f64>;

/// Single-precision instances.
pub type HermitianMatrix32 = matrixcore::HermitianMatrix<f32>;
pub type Scenario32 = scenario::Scenario<f32>;
pub type CovarianceSet32 = fim::CovarianceSet<f32>;
pub type FimBundle32 = fim::FimBundle<f32>;
