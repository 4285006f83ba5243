//! A deliberately small reverse-mode autodiff engine.
//!
//! Design: trainable parameters live in a [`ParamSet`]; each forward pass
//! builds a fresh [`Tape`] of operations over `f64` ndarrays; `backward`
//! walks the tape once and returns a [`GradStore`] aligned with the
//! parameter set. Frozen components (the diffusion denoiser, the latent and
//! text encoders) never enter a tape at all, which makes "no gradient ever
//! reaches them" a structural property rather than a runtime check.
//!
//! Everything is single-threaded and deterministic: the same parameters and
//! inputs produce bit-identical values and gradients.

pub mod init;
pub mod kernels;
pub mod optim;
pub mod param;
pub mod tape;

pub use optim::Sgd;
pub use param::{GradStore, ParamId, ParamSet};
pub use tape::{Tape, Tx};

/// Dynamic-dimension f64 array, the engine's only tensor type.
pub type Arr = ndarray::ArrayD<f64>;
