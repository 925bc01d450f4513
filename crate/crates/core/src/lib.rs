pub mod alloc;
pub mod baselines;
pub mod bh;
pub mod channel;
pub mod dpa;
pub mod env;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod numcore;
pub mod pa;
pub mod policy;
pub mod predictor;
pub mod scenario;
pub mod traffic;
