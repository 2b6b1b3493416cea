//! Simulation, learning and dispatch components for resource allocation in
//! multi-process business environments.

pub mod baselines;
pub mod dqn;
pub mod neural;
pub mod process_model;
pub mod sim_engine;

pub use process_model::{
    load_suite, paper_suite, validate_suite, BusinessProcessSuite, ResourceId, TaskId,
};
pub use sim_engine::{Action, Encoding, Engine, EngineConfig, StateVector};
