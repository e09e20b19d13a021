#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::assign_op_pattern, clippy::needless_range_loop, clippy::type_complexity)]

pub mod error;
pub mod linalg;
pub mod nn;
pub mod scalar;
pub(crate) mod textio;
pub mod flows;
pub mod dmd;
pub mod metrics;
pub mod systems;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Real;

pub type Mat64 = linalg::Mat<f64>;
pub type FlowNetwork64 = flows::FlowNetwork<f64>;
pub type DmdModel64 = dmd::DmdModel<f64>;
pub type Dataset64 = systems::Dataset<f64>;
pub type Trajectory64 = systems::Trajectory<f64>;
pub type FlowDmdConfig64 = training::FlowDmdConfig<f64>;
pub type TrainedModel64 = training::TrainedModel<f64>;
pub type Checkpoint64 = training::Checkpoint<f64>;
pub type ErrorReport64 = metrics::ErrorReport<f64>;
