//! Differentiable discrete communication.
//!
//! A sender turns an unbounded real signal into signed integers by adding
//! shared uniform dither and taking the bin index; the receiver, holding the
//! same dither, rebuilds the signal up to an additive error that is uniform
//! and independent of the signal. Training can therefore treat the discrete
//! link as `ẑ = z + e` with an identity gradient, while a differentiable
//! surrogate of the message length puts a price on every bit.
//!
//! Modules:
//!
//! - [`rng`]: counter-based shared noise
//! - [`channel`]: quantize / reconstruct
//! - [`codec`]: zigzag + Elias-gamma coding and ideal bit lengths
//! - [`wire`]: byte-exact frames
//! - [`loss`]: communication cost surrogate and the fake-quantization baseline
//! - [`nn`]: dense networks with manual backprop and Adam
//! - [`env`]: the speaker/listener goal grid
//! - [`train`]: REINFORCE trainer and λ sweeps
//! - [`analysis`]: per-goal statistics and correlations
//! - [`stats`]: Monte-Carlo checks of the channel's guarantees

pub mod analysis;
pub mod channel;
pub mod codec;
pub mod env;
pub mod error;
pub mod loss;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod train;
pub mod wire;

pub use channel::{DiscreteMessage, Reconstruction, Signal};
pub use error::{CodecError, DdclError, FrameError, Result};
pub use rng::NoiseKey;
