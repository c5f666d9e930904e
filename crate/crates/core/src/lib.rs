//! Simulator, compiler and cycle model for an array of eight bit-serial
//! matrix-vector units driven by an eight-hart barrel RV32I controller.

pub mod bitserial;
pub mod codegen;
pub mod controller;
pub mod error;
pub mod exec;
pub mod ir;
pub mod mvu;
pub mod oracle;
pub mod perf;
pub mod rng;
pub mod sim;
pub mod tensor_io;
pub mod verify;

pub use error::{Error, Result};
