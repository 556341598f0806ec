pub mod numkernel;
pub mod poly;
pub mod geometry;
pub mod subdivision;
pub mod reproduction;
pub mod expr;
pub mod approx;
pub mod rates;
pub mod config;
