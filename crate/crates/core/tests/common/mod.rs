//! Oracles and fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod cka;
pub mod descriptors;
pub mod gradcheck;
pub mod retrieval;
