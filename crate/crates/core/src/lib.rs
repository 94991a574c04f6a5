//! Knowledge-conditioned adaptation of frozen 2D molecular graph encoders.
//!
//! A pre-trained GCN encoder is kept frozen while small projectors,
//! conditional networks and a task head learn to fold per-atom and per-bond
//! chemical knowledge into its message passing.

pub mod adapt;
pub mod align;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod knowledge;
pub mod mol;
pub mod optim;
pub mod par;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{Matrix, Tape, Var};
