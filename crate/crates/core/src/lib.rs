pub mod arena;
pub mod kernels;
pub mod model;
pub mod planner;
pub mod tensor;
pub mod registry;
pub mod interpreter;
pub mod converter;
pub mod tensor_file;
pub mod cli;
