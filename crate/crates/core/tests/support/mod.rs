//! Shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod channels;
pub mod fixtures;
pub mod grad;
pub mod oracle;
