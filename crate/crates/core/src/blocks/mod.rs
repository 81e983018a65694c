//! Building blocks: the asymmetric convolution block (with fusion), the
//! channel attention block and the multi-scale aggregation node.

mod acb;
mod aggregate;
mod cab;
mod layers;

pub use acb::{
    acb_fuse, AcbParams, BlockState, Branches, ConvBlock, FusedConv, FusedIds, HORIZONTAL_GEOM, SQUARE_GEOM,
    VERTICAL_GEOM,
};
pub use aggregate::{AggregateNode, DownBranch, NodeWidths, UpBranch};
pub use cab::{ChannelAttention, DEFAULT_REDUCTION};
pub use layers::{kaiming_uniform, BatchNorm, Conv, Upsample, BN_EPS, BN_MOMENTUM};
