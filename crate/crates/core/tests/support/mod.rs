//! Test-only oracles and property checks shared by the core integration
//! tests and the acceptance runner.
#![allow(dead_code)]

pub mod oracles;
pub mod properties;
