//! Models and controllers for power curtailment of single-stage PV systems.
//!
//! - [`pv_array`]: single-diode array model, parameter extraction, MPP search
//! - [`plant`]: dc link, averaged inverter with dq current control, sensor noise
//! - [`mprt`]: perturb-and-observe power reference tracking controllers
//! - [`scenario`]: irradiance series, available-power estimate, power references
//! - [`metrics`]: tracking error, dc-link oscillation and overshoot statistics

pub mod metrics;
pub mod mprt;
pub mod plant;
pub mod pv_array;
pub mod scenario;
