pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod heads;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
