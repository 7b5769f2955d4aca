//! AdaIN stylization: encode to relu4_1, align channel statistics, decode.

mod archive;
mod engine;
mod network;

pub use archive::{ArchiveTensor, WeightArchive, MAGIC, VERSION};
pub use engine::{adain, channel_stats, AdainModel, StylizeConfig};
pub use network::{decoder_description, encoder_description, LayerOp, Network, NetworkDescription};
