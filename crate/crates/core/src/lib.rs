//! Weight-sharing architecture search: a small reverse-mode tensor engine,
//! the three search spaces, the recurrent controller, shared-parameter
//! supernets and the alternating trainer.

pub mod cnn;
pub mod controller;
pub mod data;
pub mod error;
pub mod layers;
pub mod optim;
pub mod rng;
pub mod rnn;
pub mod schedule;
pub mod space;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{ParamId, ParamStore, Tape, Tensor, Var};
