//! Exact integer parameter and multiply-accumulate accounting.
//!
//! One MAC is one multiply-accumulate; reports also show `2 * MACs` for
//! readers who count multiplies and adds separately.

use crate::error::{Error, Result};
use crate::nn::ConvSpec;
use crate::van::VanVariant;

/// Dense `K x K` convolution, `C -> C`, no bias: `K^2 C^2`.
pub fn standard_conv_params(kernel: u64, channels: u64) -> u64 {
    kernel * kernel * channels * channels
}

/// Depthwise `K x K` plus pointwise: `C K^2 + C^2`.
pub fn mobilenet_decomp_params(kernel: u64, channels: u64) -> u64 {
    channels * kernel * kernel + channels * channels
}

/// `ceil(K/d)^2 + (2d-1)^2`, the per-channel depthwise cost of the
/// decomposition.
pub fn dilation_objective(kernel: u64, dilation: u64) -> u64 {
    let far = kernel.div_ceil(dilation);
    let near = 2 * dilation - 1;
    far * far + near * near
}

/// Depthwise `(2d-1)^2`, depthwise dilated `ceil(K/d)^2` and pointwise:
/// `C (ceil(K/d)^2 + (2d-1)^2) + C^2`.
pub fn lka_decomp_params(kernel: u64, dilation: u64, channels: u64) -> u64 {
    channels * dilation_objective(kernel, dilation) + channels * channels
}

/// `lka_decomp_params * H * W`.
pub fn lka_decomp_macs(kernel: u64, dilation: u64, channels: u64, h: u64, w: u64) -> u64 {
    lka_decomp_params(kernel, dilation, channels) * h * w
}

/// The dilation in `1..=min(d_max, K)` minimizing [`dilation_objective`];
/// ties go to the smaller dilation.
pub fn optimal_dilation(kernel: u64, d_max: u64) -> u64 {
    let hi = d_max.min(kernel).max(1);
    (1..=hi)
        .min_by_key(|&d| (dilation_objective(kernel, d), d))
        .unwrap_or(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamsRow {
    pub channels: u64,
    pub standard: u64,
    pub mobilenet: u64,
    pub lka: u64,
}

/// Standard / MobileNet / LKA parameter counts of a `K x K` convolution at
/// each channel width, using `d = optimal_dilation(K, K)`.
pub fn params_comparison_table(kernel: u64, channels: &[u64]) -> Result<Vec<ParamsRow>> {
    if channels.is_empty() {
        return Err(Error::param("channel list is empty"));
    }
    if kernel == 0 || channels.contains(&0) {
        return Err(Error::param("kernel and channel counts must be >= 1"));
    }
    let d = optimal_dilation(kernel, kernel);
    Ok(channels
        .iter()
        .map(|&c| ParamsRow {
            channels: c,
            standard: standard_conv_params(kernel, c),
            mobilenet: mobilenet_decomp_params(kernel, c),
            lka: lka_decomp_params(kernel, d, c),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub total_params: u64,
    pub total_macs: u64,
    pub bias_included: bool,
    pub rows: Vec<CostRow>,
}

impl CostReport {
    /// `2 * total_macs`.
    pub fn total_flops(&self) -> u64 {
        2 * self.total_macs
    }
}

struct Walker {
    bias: bool,
    rows: Vec<CostRow>,
}

impl Walker {
    fn push(&mut self, name: String, params: u64, macs: u64) {
        self.rows.push(CostRow { name, params, macs });
    }

    /// Conv MACs are bias-free params times output positions.
    fn conv(&mut self, name: String, spec: &ConvSpec, positions: u64) {
        let params = spec.param_count(self.bias && spec.has_bias);
        let macs = spec.param_count(false) * positions;
        self.push(name, params, macs);
    }

    fn norm(&mut self, name: String, channels: usize) {
        self.push(name, 2 * channels as u64, 0);
    }
}

/// Structural count of every layer of `variant` at an `h x w` input, batch 1.
///
/// Norms count their two affine vectors, LayerScale its vector; norm and
/// activation arithmetic is not counted as MACs. With `bias` off, conv and
/// classifier biases are left out.
pub fn model_cost(variant: &VanVariant, h: usize, w: usize, bias: bool) -> Result<CostReport> {
    variant.validate()?;
    let res = variant.stage_resolutions(h, w)?;
    let mut walk = Walker {
        bias,
        rows: Vec::new(),
    };
    let k = variant.lka_nominal_kernel;
    let d = variant.lka_dilation;
    for (i, cfg) in variant.stages.iter().enumerate() {
        let pre = format!("stages.{i}");
        let positions = (res[i].0 * res[i].1) as u64;
        let c = cfg.channels;
        let down = ConvSpec::dense(
            variant.stage_in_channels(i),
            c,
            cfg.downsample_kernel,
            cfg.downsample_stride,
            cfg.downsample_padding,
            true,
        );
        walk.conv(format!("{pre}.downsample"), &down, positions);
        walk.norm(format!("{pre}.downsample_norm"), c);
        let hidden = cfg.hidden_channels();
        for j in 0..cfg.depth {
            let b = format!("{pre}.blocks.{j}");
            let pw = ConvSpec::pointwise(c, c, true);
            walk.norm(format!("{b}.norm1"), c);
            walk.conv(format!("{b}.attn.proj_in"), &pw, positions);
            let near = 2 * d - 1;
            let dw = ConvSpec {
                groups: c,
                ..ConvSpec::dense(c, c, near, 1, 0, true)
            };
            walk.conv(format!("{b}.attn.lka.dw"), &dw, positions);
            let far = k.div_ceil(d);
            let dwd = ConvSpec {
                groups: c,
                dilation: d,
                ..ConvSpec::dense(c, c, far, 1, 0, true)
            };
            walk.conv(format!("{b}.attn.lka.dwd"), &dwd, positions);
            walk.conv(format!("{b}.attn.lka.pw"), &pw, positions);
            walk.conv(format!("{b}.attn.proj_out"), &pw, positions);
            walk.push(format!("{b}.scale1"), c as u64, 0);
            walk.norm(format!("{b}.norm2"), c);
            walk.conv(
                format!("{b}.ffn.fc1"),
                &ConvSpec::pointwise(c, hidden, true),
                positions,
            );
            if variant.ffn_dwconv {
                let dw3 = ConvSpec {
                    groups: hidden,
                    ..ConvSpec::dense(hidden, hidden, 3, 1, 1, true)
                };
                walk.conv(format!("{b}.ffn.dwconv"), &dw3, positions);
            }
            walk.conv(
                format!("{b}.ffn.fc2"),
                &ConvSpec::pointwise(hidden, c, true),
                positions,
            );
            walk.push(format!("{b}.scale2"), c as u64, 0);
        }
        walk.norm(format!("{pre}.norm"), c);
    }
    let width = variant.stages[3].channels as u64;
    let classes = variant.num_classes as u64;
    walk.push(
        "head".into(),
        width * classes + if bias { classes } else { 0 },
        width * classes,
    );
    let total_params = walk.rows.iter().map(|r| r.params).sum();
    let total_macs = walk.rows.iter().map(|r| r.macs).sum();
    Ok(CostReport {
        total_params,
        total_macs,
        bias_included: bias,
        rows: walk.rows,
    })
}
