//! Checks shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod graphs;
pub mod aliasing;
pub mod estimator;
pub mod bandit;
pub mod oracles;
pub mod structural;
