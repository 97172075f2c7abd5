use crate::error::{Error, Result};

/// Building blocks of the denoising network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Convolution, batch norm, ReLU.
    Cbn,
    /// `cbn(x) + conv_b(conv_a(x))`.
    Branch,
    /// `relu(x + bn(conv(relu(bn(conv(x))))))`.
    Res,
    /// Plain convolution from the feature width to the image channels.
    OutputConv,
}

impl BlockKind {
    pub fn code(self) -> u8 {
        match self {
            BlockKind::Cbn => 1,
            BlockKind::Branch => 2,
            BlockKind::Res => 3,
            BlockKind::OutputConv => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => BlockKind::Cbn,
            2 => BlockKind::Branch,
            3 => BlockKind::Res,
            4 => BlockKind::OutputConv,
            _ => return None,
        })
    }

    pub fn conv_count(self) -> usize {
        match self {
            BlockKind::Cbn | BlockKind::OutputConv => 1,
            BlockKind::Res => 2,
            BlockKind::Branch => 3,
        }
    }

    /// Convolutions on the deepest path through the block.
    pub fn path_depth(self) -> usize {
        match self {
            BlockKind::Cbn | BlockKind::OutputConv => 1,
            BlockKind::Branch | BlockKind::Res => 2,
        }
    }
}

pub const CANONICAL_BLOCKS: [BlockKind; 9] = [
    BlockKind::Cbn,
    BlockKind::Cbn,
    BlockKind::Branch,
    BlockKind::Res,
    BlockKind::Res,
    BlockKind::Res,
    BlockKind::Cbn,
    BlockKind::Cbn,
    BlockKind::OutputConv,
];

pub const TRUNK_DEPTH: usize = 12;
pub const DEFAULT_WIDTH: usize = 64;
pub const KERNEL_SIZE: usize = 3;

/// Architecture descriptor: the block sequence, feature width, kernel size
/// and image channel count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    blocks: Vec<BlockKind>,
    width: usize,
    kernel: usize,
    in_channels: usize,
}

/// Result of [`NetworkSpec::audit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureAudit {
    /// Longest convolution path through the feature trunk (output head excluded).
    pub trunk_depth: usize,
    pub conv_layers: usize,
    /// Filter count of every convolution before the output head.
    pub hidden_filters: Vec<usize>,
    pub output_filters: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::with_width(DEFAULT_WIDTH)
    }
}

impl NetworkSpec {
    pub fn with_width(width: usize) -> Self {
        NetworkSpec {
            blocks: CANONICAL_BLOCKS.to_vec(),
            width,
            kernel: KERNEL_SIZE,
            in_channels: 1,
        }
    }

    /// Rebuilds a descriptor read from a checkpoint, validating it.
    pub fn from_parts(
        blocks: Vec<BlockKind>,
        width: usize,
        kernel: usize,
        in_channels: usize,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            blocks,
            width,
            kernel,
            in_channels,
        };
        spec.audit()?;
        Ok(spec)
    }

    pub fn blocks(&self) -> &[BlockKind] {
        &self.blocks
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn trunk_depth(&self) -> usize {
        self.blocks
            .iter()
            .filter(|&&b| b != BlockKind::OutputConv)
            .map(|b| b.path_depth())
            .sum()
    }

    /// Checks the block sequence, trunk depth, kernel and channel counts.
    pub fn audit(&self) -> Result<ArchitectureAudit> {
        if self.blocks != CANONICAL_BLOCKS {
            return Err(Error::Config(format!(
                "unsupported block sequence {:?}",
                self.blocks
            )));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.width == 0 || self.in_channels != 1 {
            return Err(Error::Config(format!(
                "width {} and input channels {} (must be >= 1 and 1)",
                self.width, self.in_channels
            )));
        }
        let trunk_depth = self.trunk_depth();
        if trunk_depth != TRUNK_DEPTH {
            return Err(Error::Config(format!(
                "longest convolution path is {trunk_depth}, expected {TRUNK_DEPTH}"
            )));
        }
        let hidden: usize = self
            .blocks
            .iter()
            .filter(|&&b| b != BlockKind::OutputConv)
            .map(|b| b.conv_count())
            .sum();
        Ok(ArchitectureAudit {
            trunk_depth,
            conv_layers: self.blocks.iter().map(|b| b.conv_count()).sum(),
            hidden_filters: vec![self.width; hidden],
            output_filters: self.in_channels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_audit() {
        let a = NetworkSpec::default().audit().unwrap();
        assert_eq!(a.trunk_depth, 12);
        assert_eq!(a.conv_layers, 14);
        assert_eq!(a.hidden_filters.len(), 13);
        assert!(a.hidden_filters.iter().all(|&k| k == 64));
        assert_eq!(a.output_filters, 1);
    }

    #[test]
    fn rejects_other_layouts() {
        let mut blocks = CANONICAL_BLOCKS.to_vec();
        blocks.insert(3, BlockKind::Res);
        assert!(NetworkSpec::from_parts(blocks, 64, 3, 1).is_err());
        assert!(NetworkSpec::from_parts(CANONICAL_BLOCKS.to_vec(), 64, 4, 1).is_err());
        assert!(NetworkSpec::from_parts(CANONICAL_BLOCKS.to_vec(), 8, 3, 1).is_ok());
    }

    #[test]
    fn codes_round_trip() {
        for b in CANONICAL_BLOCKS {
            assert_eq!(BlockKind::from_code(b.code()), Some(b));
        }
        assert_eq!(BlockKind::from_code(0), None);
    }
}
