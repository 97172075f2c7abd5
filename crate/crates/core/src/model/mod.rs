//! The denoising network: CBN, Branch and Residual blocks, noise prediction,
//! subtraction-based denoising and checkpoint persistence.

mod blocks;
mod checkpoint;
mod network;
mod spec;

pub use blocks::{
    branch_forward, cbn_forward, res_forward, Block, BlockState, BranchBlock, CbnBlock,
    ParamGrads, ResBlock,
};
pub use checkpoint::{Checkpoint, EpochLoss, TrainingMeta, MAGIC, VERSION};
pub use network::{
    denoise, network_forward, subtract_noise, ForwardTrace, Gradients, Network, MIN_SIDE,
};
pub use spec::{
    ArchitectureAudit, BlockKind, NetworkSpec, CANONICAL_BLOCKS, DEFAULT_WIDTH, KERNEL_SIZE,
    TRUNK_DEPTH,
};

#[cfg(test)]
mod tests;
