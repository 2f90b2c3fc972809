//! Biometric information content of speaker embeddings.
//!
//! The central quantity is the mutual information between speaker identity
//! and a quantized embedding, `I(S;V) = H(V) - H(V|S)`, estimated with
//! plug-in entropies over per-element Lloyd-Max quantization
//! ([`quantizer`], [`entropy`]). Two classical measures are provided for
//! comparison ([`baseline`]), together with a PLDA verification backend
//! ([`backend`]) used to check that quantization preserves equal error rate,
//! synthetic populations with independent oracles ([`synth`]), and a
//! config-driven experiment runner ([`experiment`]).

pub mod backend;
pub mod baseline;
pub mod data;
pub mod entropy;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod quantizer;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
