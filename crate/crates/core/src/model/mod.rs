//! Network assembly: the multi-scale ACB network, U-Net and the ablation variants.

mod config;
mod network;

pub use config::{NetworkConfig, Variant};
pub use network::{Decoder, EncoderLevel, MacEntry, Network, UpStage};
