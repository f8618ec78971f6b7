pub mod copula;
pub mod dynamics;
pub mod error;
pub mod rng;
pub mod shocks;
pub mod aggregation;
pub mod gaussian;
pub mod objective;
pub mod optimizer;
pub mod config;
pub mod commands;
pub mod service;
