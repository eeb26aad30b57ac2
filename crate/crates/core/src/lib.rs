//! Cross-task alignment for test-time training.
//!
//! A supervised encoder `f` with classifier `h` and a self-supervised encoder
//! `g` with projector `pi` are pretrained independently on a source domain.
//! `pi(g(.))` is then aligned to the frozen `f` with a cross-encoder
//! contrastive loss, and at test time `g` and `pi` are adapted to an
//! unlabeled, shifted target domain with the contrastive loss alone while `h`
//! classifies `pi(g(x))`.
//!
//! Everything runs on the small reverse-mode engine in [`autodiff`].

pub mod autodiff;
pub mod data;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
