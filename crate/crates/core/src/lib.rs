//! Low-bitrate neural speech codec: a causal two-level contrastive encoder,
//! single-bit delta-modulation bitstream and a two-stage GAN decoder, with
//! the training objective and desk-scale training driver.

pub mod audio;
pub mod bitstream;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod discriminators;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod mel;
pub mod nn;
pub mod optim;
pub mod quantizer;
mod stream;
pub mod tensor;
pub mod trainer;

pub use config::{CodecConfig, DecoderConfig, DiscriminatorConfig, LossWeights, MelSpec, ModelConfig, TrainConfig};
pub use decoder::{Decoder, StreamingSynthesizer};
pub use encoder::{Encoder, EncoderState, Level, RepresentationSequence};
pub use error::{CodecError, Result};
