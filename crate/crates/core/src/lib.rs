pub mod baselines;
pub mod cafe;
pub mod data;
pub mod error;
pub mod fuzz;
pub mod graph;
pub mod influence;
pub mod linalg;
pub mod models;
pub mod report;
pub mod rng;
pub mod robustness;
pub mod sem;
pub mod synth;
