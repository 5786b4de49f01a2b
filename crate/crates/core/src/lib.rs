//! Forward models for a planar dual-mode sensor: two co-planar spiral coils
//! used both as an inductive (eddy-current) transmitter/receiver pair and as
//! capacitive electrodes.

pub mod circuit;
pub mod config;
pub mod electrostatic;
pub mod error;
pub mod inductive;
pub mod output;
pub mod quadrature;
pub mod scenarios;
pub mod sensor;
pub mod validate;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use sensor::{
    CoilPairGeometry, Drive, Excitation, MeasuredBaseline, PlateSample, ValidationReport, EPS_0,
    MU_0,
};
