//! Adaptive quiz engine: grading, grade-adaptive item allocation, item bank
//! calibration and analysis of crossover learning experiments.

pub mod allocation;
pub mod bank;
pub mod crossover;
pub mod grading;
pub mod irt;
pub mod log;
pub mod sim;
pub mod stats;
