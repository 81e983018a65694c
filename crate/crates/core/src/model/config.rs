use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::blocks::{Branches, DEFAULT_REDUCTION};
use crate::error::{shape_err, Error, Result};

/// Network family: the multi-scale ACB network, plain U-Net, and the ablations between them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Multi-scale skips with attention, ACBs everywhere.
    Macu,
    /// Plain U-Net.
    Unet,
    /// U-Net with 3×3 + 1×3 blocks.
    UnetH,
    /// U-Net with 3×3 + 3×1 blocks.
    UnetV,
    /// U-Net with full ACBs.
    Acu,
    /// Multi-scale skips with attention, plain conv blocks.
    Mu,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Macu, Variant::Unet, Variant::UnetH, Variant::UnetV, Variant::Acu, Variant::Mu];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Macu => "macu",
            Variant::Unet => "unet",
            Variant::UnetH => "unet_h",
            Variant::UnetV => "unet_v",
            Variant::Acu => "acu",
            Variant::Mu => "mu",
        }
    }

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|&v| v == self).expect("listed") as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn branches(self) -> Branches {
        match self {
            Variant::Macu | Variant::Acu => Branches::Asymmetric,
            Variant::Unet | Variant::Mu => Branches::Square,
            Variant::UnetH => Branches::SquareHorizontal,
            Variant::UnetV => Branches::SquareVertical,
        }
    }

    /// Whether decoder nodes aggregate every scale through attention.
    pub fn multi_scale(self) -> bool {
        matches!(self, Variant::Macu | Variant::Mu)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NetworkConfig {
    pub levels: usize,
    pub base_width: usize,
    pub classes: usize,
    pub in_channels: usize,
    pub variant: Variant,
    pub cab_ratio: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            levels: 5,
            base_width: 16,
            classes: 6,
            in_channels: 3,
            variant: Variant::Macu,
            cab_ratio: DEFAULT_REDUCTION,
        }
    }
}

impl NetworkConfig {
    pub fn new(variant: Variant, levels: usize, base_width: usize, classes: usize) -> Self {
        NetworkConfig { variant, levels, base_width, classes, ..Self::default() }
    }

    pub fn with_ratio(self, cab_ratio: usize) -> Self {
        NetworkConfig { cab_ratio, ..self }
    }

    /// `C_i = base_width · 2^{i−1}`, 1-based.
    pub fn encoder_width(&self, level: usize) -> usize {
        self.base_width << (level - 1)
    }

    /// `D_i = 2·C_i` below the bottom level, `D_N = C_N`.
    pub fn decoder_width(&self, level: usize) -> usize {
        if level == self.levels {
            self.encoder_width(level)
        } else {
            2 * self.encoder_width(level)
        }
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        (1..=self.levels).map(|i| self.encoder_width(i)).collect()
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        (1..=self.levels).map(|i| self.decoder_width(i)).collect()
    }

    /// Spatial dims must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config(format!("levels must be at least 2, got {}", self.levels)));
        }
        if self.levels > 16 {
            return Err(Error::Config(format!("levels {} is unreasonably deep", self.levels)));
        }
        if self.base_width == 0 || self.in_channels == 0 {
            return Err(Error::Config("widths must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.variant.multi_scale() {
            let r = self.cab_ratio;
            for i in 1..self.levels {
                let d = self.decoder_width(i);
                if r == 0 || !d.is_multiple_of(r) {
                    return Err(Error::Config(format!(
                        "decoder width {d} at level {i} is not divisible by attention ratio {r}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.size_multiple();
        if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(shape_err!("input {h}x{w} is not divisible by {m} for {} levels", self.levels));
        }
        Ok(())
    }
}
