//! Numerical building blocks of transformer language models, each paired
//! with an executable check.
//!
//! | module | contents |
//! |---|---|
//! | [`numkit`] | dense real/complex linear algebra, seeded RNG, matrix files |
//! | [`activations`] | logit, sigmoid, softmax with temperature, softmax amplitudes |
//! | [`micrograd`] | one-hidden-layer network with analytic backprop and a finite-difference oracle |
//! | [`attention`] | scaled dot-product attention, multi-head attention, transformer blocks, sampling |
//! | [`bpe`] | byte-level byte-pair encoding |
//! | [`capacity`] | quasi-orthogonal packing, random projections, analogy arithmetic |
//! | [`contexts`] | orthonormal bases as measurement contexts, observables, Born rule |
//! | [`uattention`] | unitary evolution followed by one terminal measurement |
//! | [`floatlab`] | floating-point reduction order and batch invariance |
//! | [`cli`] | the `llmlab` command-line driver |

pub mod activations;
pub mod attention;
pub mod bpe;
pub mod capacity;
pub mod cli;
pub mod contexts;
pub mod floatlab;
pub mod micrograd;
pub mod numkit;
pub mod uattention;

mod error;

pub use error::{Error, Result};
