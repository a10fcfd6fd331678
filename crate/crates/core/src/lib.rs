//! Oblivious frequency-domain convolution for two-party neural-network
//! inference.
//!
//! Alice (the client) transforms her image with a 2D number-theoretic
//! transform, packs the frequency values into the slots of a BFV-style
//! ciphertext and sends it to Bob (the server). Bob multiplies slot by slot
//! with his transformed filter, a single homomorphic Hadamard product, and
//! splits the result into an encrypted share for Alice and a plaintext share
//! for himself. Both parties inverse-transform their shares locally, so no
//! homomorphic rotation is ever needed.
//!
//! Modules, bottom-up:
//! - [`modfield`]: prime-field arithmetic, prime and root search, sampling
//! - [`ntt`]: 1D/2D transforms over the image modulus and the plaintext
//!   convolution oracle
//! - [`ringbfv`]: packed additively homomorphic encryption
//! - [`hss`]: homomorphic secret sharing (HomShare / HomRec)
//! - [`params`]: modulus-chain selection and the reference parameter sets
//! - [`wire`]: framing, codecs, transports and transcripts
//! - [`protocol`]: the Alice/Bob state machines and layer schedules
//! - [`bench`]: per-phase timing and operation-count harness

pub mod bench;
pub mod error;
pub mod hss;
pub mod modfield;
pub mod ntt;
pub mod params;
pub mod protocol;
pub mod ringbfv;
pub mod wire;

pub use error::{Error, Result};
