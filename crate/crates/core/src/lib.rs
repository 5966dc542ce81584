pub mod approximator;
pub mod container;
pub mod envs;
pub mod error;
pub mod explore;
pub mod harness;
pub mod mve;
pub mod replay;
pub mod rng;
pub mod sac;
pub mod selftest;
pub mod worldmodel;

pub use error::{Error, Result};
