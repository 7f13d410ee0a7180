//! Kernel contrastive learning on finite augmentation worlds: exact losses,
//! cluster geometry in the RKHS and machine-checked bounds.
//!
//! Everything is generic over the scalar type (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod bounds;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod objectives;
pub mod real;
pub mod similarity;
pub mod trainer;
pub mod worlds;

pub use error::{Error, Result};
pub use real::Real;

pub type Kernel = kernels::Kernel<f64>;
pub type FiniteWorld = worlds::FiniteWorld<f64>;
pub type ClusterStructure = similarity::ClusterStructure<f64>;
pub type Embedding = encoders::Embedding<f64>;
pub type TableEncoder = encoders::TableEncoder<f64>;
pub type MlpEncoder = encoders::MlpEncoder<f64>;
pub type ClusterGeometry = geometry::ClusterGeometry<f64>;
pub type LossValue = objectives::LossValue<f64>;
pub type InfoNceConfig = objectives::InfoNceConfig<f64>;

pub use bounds::BoundReport;
pub use trainer::{TrainConfig, TrainError, TrainTrace};
