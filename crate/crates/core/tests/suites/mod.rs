//! Checks shared by the integration tests and the acceptance runner. Each
//! function panics with a description on failure and returns a one-line
//! summary otherwise.
#![allow(dead_code)]

pub mod e2e;
pub mod engine;
pub mod http;
pub mod queue;
pub mod records;
pub mod sketch;
pub mod workflow;
