use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::N_LABELS;
use crate::nn::Window;

pub const LATENT_DIM: usize = 5;
/// Latent dims `0..3` form the characteristic partition, one per label.
pub const CHARACTERISTIC_DIMS: usize = 3;
pub const MLP_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    Ccvae,
    Cvae,
    VaeCls,
}

impl Framework {
    pub const ALL: [Framework; 3] = [Framework::Ccvae, Framework::Cvae, Framework::VaeCls];

    pub fn as_str(&self) -> &'static str {
        match self {
            Framework::Ccvae => "ccvae",
            Framework::Cvae => "cvae",
            Framework::VaeCls => "vae_cls",
        }
    }

    pub fn has_conditional_prior(&self) -> bool {
        !matches!(self, Framework::VaeCls)
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccvae" => Ok(Framework::Ccvae),
            "cvae" => Ok(Framework::Cvae),
            "vae_cls" | "vae-cls" => Ok(Framework::VaeCls),
            other => Err(Error::Config(format!("unknown framework `{other}` (expected ccvae|cvae|vae_cls)"))),
        }
    }
}

/// Spatial bookkeeping of the conv stack. `channels[0]` is the input channel
/// count; each further entry adds one stride-2 stage. The decoder mirrors the
/// list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub side: usize,
    pub channels: Vec<usize>,
    pub latent: usize,
    pub labels: usize,
    pub mlp_width: usize,
    pub window: Window,
}

impl Default for Architecture {
    fn default() -> Self {
        Self::standard()
    }
}

impl Architecture {
    /// 1x64x64 input, four 5x5 stride-2 stages down to 8x4x4 = 128 features.
    pub fn standard() -> Self {
        Self {
            side: 64,
            channels: vec![1, 8, 16, 16, 8],
            latent: LATENT_DIM,
            labels: N_LABELS,
            mlp_width: MLP_WIDTH,
            window: Window { kernel: 5, stride: 2, pad: 2 },
        }
    }

    /// 8x8 input with two stages; small enough for finite-difference checks.
    pub fn tiny() -> Self {
        Self { side: 8, channels: vec![1, 3, 2], mlp_width: 4, ..Self::standard() }
    }

    pub fn stages(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn bottleneck_side(&self) -> usize {
        self.side >> self.stages()
    }

    pub fn bottleneck_channels(&self) -> usize {
        *self.channels.last().expect("non-empty channel list")
    }

    pub fn flat_len(&self) -> usize {
        self.bottleneck_channels() * self.bottleneck_side() * self.bottleneck_side()
    }

    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 || self.channels[0] != 1 {
            return Err(Error::Model("channel list must start at 1 and have at least one stage".into()));
        }
        if self.side == 0 || !self.side.is_multiple_of(1 << self.stages()) {
            return Err(Error::Model(format!("side {} not divisible by 2^{}", self.side, self.stages())));
        }
        if self.window.stride != 2 || self.window.kernel != 2 * self.window.pad + 1 {
            return Err(Error::Model("only odd kernels with stride 2 and same-style padding are supported".into()));
        }
        if self.latent != LATENT_DIM || self.labels != N_LABELS {
            return Err(Error::Model(format!("latent/label dims fixed at {LATENT_DIM}/{N_LABELS}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_shape_walk() {
        let a = Architecture::standard();
        let mut side = a.side;
        for _ in 0..a.stages() {
            side = a.window.out_len(side);
        }
        assert_eq!(side, 4);
        assert_eq!(a.flat_len(), 8 * 4 * 4);
        assert_eq!(a.flat_len(), 128);
        a.validate().unwrap();
        Architecture::tiny().validate().unwrap();
    }

    #[test]
    fn framework_parse() {
        assert_eq!("vae_cls".parse::<Framework>().unwrap(), Framework::VaeCls);
        assert!("gan".parse::<Framework>().is_err());
    }
}
