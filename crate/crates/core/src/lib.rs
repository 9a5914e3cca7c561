//! Quasistatic mechanics, control and simulation of compliant multi-finger rolling manipulation.

pub mod lie;
pub mod geometry;
pub mod grasp;
pub mod mechanics;
pub mod qp;
pub mod control;
pub mod scenario;
pub mod sim;
pub mod fixtures;
pub mod export;
pub mod runner;
pub mod verify;
