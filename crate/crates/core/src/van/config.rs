use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lka::LkaConfig;

/// Input image channels.
pub const IMAGE_CHANNELS: usize = 3;

/// Overall downsampling factor of the four stages.
pub const TOTAL_STRIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageConfig {
    pub channels: usize,
    pub depth: usize,
    pub expansion_ratio: usize,
    pub downsample_kernel: usize,
    pub downsample_stride: usize,
    pub downsample_padding: usize,
}

impl StageConfig {
    /// Stage with the standard downsample: 7x7/4 pad 3 for the first stage,
    /// 3x3/2 pad 1 otherwise.
    pub fn standard(index: usize, channels: usize, depth: usize, expansion_ratio: usize) -> Self {
        let (k, s, p) = if index == 0 { (7, 4, 3) } else { (3, 2, 1) };
        Self {
            channels,
            depth,
            expansion_ratio,
            downsample_kernel: k,
            downsample_stride: s,
            downsample_padding: p,
        }
    }

    pub fn hidden_channels(&self) -> usize {
        self.channels * self.expansion_ratio
    }

    /// Output extent of the downsample conv, which must be exactly
    /// `input / stride`.
    pub fn downsampled_extent(&self, input: usize) -> Result<usize> {
        let s = self.downsample_stride;
        if !input.is_multiple_of(s) {
            return Err(Error::geometry(format!(
                "extent {input} is not divisible by stage stride {s}"
            )));
        }
        let padded = input + 2 * self.downsample_padding;
        if padded < self.downsample_kernel {
            return Err(Error::geometry(format!(
                "extent {input} is smaller than the downsample kernel"
            )));
        }
        let out = (padded - self.downsample_kernel) / s + 1;
        if out != input / s {
            return Err(Error::geometry(format!(
                "downsample {}x{}/{} pad {} maps {input} to {out}, not {}",
                self.downsample_kernel,
                self.downsample_kernel,
                s,
                self.downsample_padding,
                input / s
            )));
        }
        Ok(out)
    }
}

/// Named preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    B0,
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    Micro,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::B0,
        Preset::B1,
        Preset::B2,
        Preset::B3,
        Preset::B4,
        Preset::B5,
        Preset::B6,
        Preset::Micro,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::B0 => "b0",
            Preset::B1 => "b1",
            Preset::B2 => "b2",
            Preset::B3 => "b3",
            Preset::B4 => "b4",
            Preset::B5 => "b5",
            Preset::B6 => "b6",
            Preset::Micro => "micro",
        }
    }

    fn table(self) -> ([usize; 4], [usize; 4], [usize; 4], usize) {
        const ER: [usize; 4] = [8, 8, 4, 4];
        match self {
            Preset::B0 => ([32, 64, 160, 256], [3, 3, 5, 2], ER, 1000),
            Preset::B1 => ([64, 128, 320, 512], [2, 2, 4, 2], ER, 1000),
            Preset::B2 => ([64, 128, 320, 512], [3, 3, 12, 3], ER, 1000),
            Preset::B3 => ([64, 128, 320, 512], [3, 5, 27, 3], ER, 1000),
            Preset::B4 => ([64, 128, 320, 512], [3, 6, 40, 3], ER, 1000),
            Preset::B5 => ([96, 192, 480, 768], [3, 3, 24, 3], ER, 1000),
            Preset::B6 => ([96, 192, 384, 768], [6, 6, 90, 6], ER, 1000),
            Preset::Micro => ([8, 16, 32, 64], [1, 1, 2, 1], [4, 4, 4, 4], 2),
        }
    }

    pub fn variant(self) -> VanVariant {
        let (channels, depths, ratios, num_classes) = self.table();
        VanVariant::from_table(self.name(), channels, depths, ratios, num_classes)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let lower = lower.strip_prefix("van-").unwrap_or(&lower);
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// A full backbone description.
#[derive(Debug, Clone, PartialEq)]
pub struct VanVariant {
    pub name: String,
    pub stages: [StageConfig; 4],
    pub lka_nominal_kernel: usize,
    pub lka_dilation: usize,
    pub num_classes: usize,
    pub layerscale_init: f64,
    /// Depthwise 3x3 conv inside the feed-forward network.
    pub ffn_dwconv: bool,
}

pub const DEFAULT_LKA_KERNEL: usize = 21;
pub const DEFAULT_LKA_DILATION: usize = 3;
pub const DEFAULT_LAYERSCALE_INIT: f64 = 0.01;

impl VanVariant {
    pub fn from_table(
        name: &str,
        channels: [usize; 4],
        depths: [usize; 4],
        ratios: [usize; 4],
        num_classes: usize,
    ) -> Self {
        Self {
            name: name.to_string(),
            stages: std::array::from_fn(|i| {
                StageConfig::standard(i, channels[i], depths[i], ratios[i])
            }),
            lka_nominal_kernel: DEFAULT_LKA_KERNEL,
            lka_dilation: DEFAULT_LKA_DILATION,
            num_classes,
            layerscale_init: DEFAULT_LAYERSCALE_INIT,
            ffn_dwconv: true,
        }
    }

    pub fn preset(p: Preset) -> Self {
        p.variant()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0
                || s.depth == 0
                || s.expansion_ratio == 0
                || s.downsample_kernel == 0
                || s.downsample_stride == 0
            {
                return Err(Error::Config(format!("stage {} has a zero count", i + 1)));
            }
        }
        let product: usize = self.stages.iter().map(|s| s.downsample_stride).product();
        if product != TOTAL_STRIDE {
            return Err(Error::Config(format!(
                "stage strides multiply to {product}, expected {TOTAL_STRIDE}"
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        if !self.layerscale_init.is_finite() {
            return Err(Error::Config("layerscale_init must be finite".into()));
        }
        self.lka_config(self.stages[0].channels)?;
        Ok(())
    }

    /// Attention config used inside a block of width `channels`. Model LKA
    /// convs carry biases.
    pub fn lka_config(&self, channels: usize) -> Result<LkaConfig> {
        Ok(LkaConfig::new(channels, self.lka_nominal_kernel, self.lka_dilation)?.with_bias(true))
    }

    pub fn stage_in_channels(&self, index: usize) -> usize {
        if index == 0 {
            IMAGE_CHANNELS
        } else {
            self.stages[index - 1].channels
        }
    }

    /// Spatial extents after every stage for an `h x w` input.
    pub fn stage_resolutions(&self, h: usize, w: usize) -> Result<[(usize, usize); 4]> {
        if !h.is_multiple_of(TOTAL_STRIDE) || !w.is_multiple_of(TOTAL_STRIDE) {
            return Err(Error::geometry(format!(
                "input {h}x{w} is not divisible by {TOTAL_STRIDE}"
            )));
        }
        let mut res = [(0, 0); 4];
        let (mut ch, mut cw) = (h, w);
        for (i, s) in self.stages.iter().enumerate() {
            ch = s.downsampled_extent(ch)?;
            cw = s.downsampled_extent(cw)?;
            res[i] = (ch, cw);
        }
        Ok(res)
    }
}
