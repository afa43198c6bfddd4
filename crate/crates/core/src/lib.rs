//! Functional and cycle-accounted simulator of a continuous-learning
//! accelerator: MX block floating point arithmetic, a precision-flexible
//! dot-product engine, a row-partitionable systolic array, and the runtime
//! that shares it between inference, labeling and retraining on a drifting
//! data stream.

pub mod app;
pub mod dpe;
pub mod error;
pub mod experiment;
pub mod fabric;
pub mod learner;
pub mod mx;
pub mod perf;
pub mod scheduler;
pub mod seed;
pub mod stream;
pub mod tensor;
