//! Fixtures and oracles shared by the integration tests.
#![allow(dead_code)]

pub mod golden;
pub mod anchors;
