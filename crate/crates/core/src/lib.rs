//! Random-graph spiking neural networks.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors, convolution / batch norm / pooling
//!   kernels and a reverse-mode differentiation tape.
//! - [`neuron`]: leaky integrate-and-fire neurons with soft reset and
//!   surrogate gradients.
//! - [`topology`]: ER/WS random graphs oriented into DAGs, source-to-sink path
//!   enumeration, betweenness centrality and critical-path selection.
//! - [`net`]: the network itself, residual nodes with a selectable skip gate,
//!   dimension-aligning pooling, checkpoints and spike statistics.
//! - [`train`]: losses, optimizers, BPTT training and gradient checking.
//! - [`continual`]: learning without forgetting, restricted to critical paths,
//!   and the Fréchet task-similarity gate.
//! - [`experiment`]: datasets, encodings, config files, energy accounting and
//!   reproducible run manifests used by the command-line tool.

pub mod continual;
pub mod error;
pub mod experiment;
pub mod net;
pub mod neuron;
pub mod tensor;
pub mod topology;
pub mod train;

pub use error::{Error, Result};
pub use net::{CogniSnn, Gate, ModelConfig};
pub use tensor::{Tape, Tensor, Var};
