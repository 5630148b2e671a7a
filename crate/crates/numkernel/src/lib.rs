//! Minimal dense-vector kernel: tensors, a parameter registry, reverse-mode
//! differentiation with a fused GRU cell, plain SGD and a finite-difference
//! gradient checker. Everything is `f64`.

pub mod error;
pub mod gradcheck;
pub mod gru;
pub mod ops;
pub mod optim;
pub mod registry;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{KernelError, Result};
pub use gradcheck::{finite_diff_check, FdOptions, FdReport, TensorCheck};
pub use gru::{bigru_sequence, gru_cell, gru_sequence, BiGruParams, GruParams};
pub use ops::{cross_entropy, dropout, softmax, LOG_FLOOR};
pub use optim::sgd_step;
pub use registry::{ParamId, ParamRegistry};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
