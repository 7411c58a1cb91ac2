//! Monte Carlo study of two-stage adaptive graphical tests: multi-arm
//! trials with a primary and a secondary endpoint per arm, interim arm
//! dropping, and power and FWER estimates for the combination and
//! conditional error methods.

pub mod data;
pub mod error;
pub mod report;
pub mod scenario;
pub mod study;

pub use data::simulate_stage_data;
pub use error::{Result, SimError};
pub use report::{fwer_table, power_table, Estimate, PowerReport};
pub use scenario::{apply_dropping_rule, DroppingRule, GroupSizes, IfAllDropped, Scenario, Selection};
pub use study::{endpoint_knowledge, run_study, run_study_with, study_graph, Method, SimulationConfig, StudyDesign};
