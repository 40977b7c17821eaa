//! Stochastic fluid networks fed by compound Poisson inputs with Weibull-type
//! jumps: exact Skorokhod reflection of drift-plus-jump paths, the one-big-jump
//! rate optimization for buffer overflow, and crude Monte Carlo to compare
//! against it.

pub mod cli;
pub mod config;
pub mod format;
pub mod linalg;
pub mod network;
pub mod paths;
pub mod ratefn;
pub mod reflection;
pub mod simulate;

pub use network::{FluidNetwork, ReflectionMatrix, TailMultiplier};
pub use paths::{StepDriftPath, VectorPath};
pub use reflection::{reflect, ReflectionSolution};
