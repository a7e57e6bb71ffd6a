//! Large kernel attention.
//!
//! A nominal `K x K` kernel with dilation `d` is realized as a `(2d-1)^2`
//! depthwise conv, then a `ceil(K/d)^2` depthwise conv with dilation `d`, then
//! a pointwise conv. The result is an unnormalized attention map that gates the
//! input elementwise.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{conv2d, conv2d_vjp, same_padding, sigmoid, sigmoid_vjp, ConvSpec, ConvWeights};
use crate::tensor::{elementwise_add, elementwise_mul, Element, NormalSampler, Tensor};

/// Ablation selector for the attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LkaVariant {
    #[default]
    Full,
    /// Skip the local depthwise conv.
    NoDw,
    /// Skip the dilated depthwise conv.
    NoDwd,
    /// Skip the pointwise conv.
    NoPw,
    /// Return the conv chain without gating the input.
    NonAttention,
    /// `attention + F` instead of `attention * F`.
    AddAttention,
    /// `sigmoid(attention) * F`.
    SigmoidAttention,
}

impl LkaVariant {
    pub const ALL: [LkaVariant; 7] = [
        LkaVariant::Full,
        LkaVariant::NoDw,
        LkaVariant::NoDwd,
        LkaVariant::NoPw,
        LkaVariant::NonAttention,
        LkaVariant::AddAttention,
        LkaVariant::SigmoidAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LkaVariant::Full => "full",
            LkaVariant::NoDw => "no_dw",
            LkaVariant::NoDwd => "no_dwd",
            LkaVariant::NoPw => "no_pw",
            LkaVariant::NonAttention => "non_attention",
            LkaVariant::AddAttention => "add_attention",
            LkaVariant::SigmoidAttention => "sigmoid_attention",
        }
    }

    fn uses_dw(self) -> bool {
        self != LkaVariant::NoDw
    }

    fn uses_dwd(self) -> bool {
        self != LkaVariant::NoDwd
    }

    fn uses_pw(self) -> bool {
        self != LkaVariant::NoPw
    }
}

impl fmt::Display for LkaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LkaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LkaVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown LKA variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LkaConfig {
    pub channels: usize,
    pub nominal_kernel: usize,
    pub dilation: usize,
    pub variant: LkaVariant,
    pub bias: bool,
}

impl LkaConfig {
    /// Full variant without biases.
    pub fn new(channels: usize, nominal_kernel: usize, dilation: usize) -> Result<Self> {
        let cfg = Self {
            channels,
            nominal_kernel,
            dilation,
            variant: LkaVariant::Full,
            bias: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_variant(mut self, variant: LkaVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("LKA needs at least one channel".into()));
        }
        if self.dilation == 0 || self.nominal_kernel < self.dilation {
            return Err(Error::Config(format!(
                "LKA needs 1 <= d <= K, got K={} d={}",
                self.nominal_kernel, self.dilation
            )));
        }
        same_padding(self.dwd_kernel(), self.dilation)
            .map_err(|e| Error::Config(format!("dilated kernel: {e}")))?;
        Ok(())
    }

    /// `2d - 1`.
    pub fn dw_kernel(&self) -> usize {
        2 * self.dilation - 1
    }

    /// `ceil(K / d)`.
    pub fn dwd_kernel(&self) -> usize {
        self.nominal_kernel.div_ceil(self.dilation)
    }

    pub fn dw_spec(&self) -> Result<ConvSpec> {
        ConvSpec::depthwise_same(self.channels, self.dw_kernel(), 1, self.bias)
    }

    pub fn dwd_spec(&self) -> Result<ConvSpec> {
        ConvSpec::depthwise_same(self.channels, self.dwd_kernel(), self.dilation, self.bias)
    }

    pub fn pw_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.channels, self.channels, self.bias)
    }
}

/// Side length of the impulse-response support of the dw -> dwd chain:
/// `(2d - 1) + d * (ceil(K/d) - 1)`.
pub fn receptive_span(cfg: &LkaConfig) -> usize {
    cfg.dw_kernel() + cfg.dilation * (cfg.dwd_kernel() - 1)
}

/// The three convolution weight sets of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct LkaWeights<T> {
    pub dw: ConvWeights<T>,
    pub dwd: ConvWeights<T>,
    pub pw: ConvWeights<T>,
}

impl<T: Element> LkaWeights<T> {
    pub fn zeros(cfg: &LkaConfig) -> Result<Self> {
        Ok(Self {
            dw: ConvWeights::zeros(&cfg.dw_spec()?)?,
            dwd: ConvWeights::zeros(&cfg.dwd_spec()?)?,
            pw: ConvWeights::zeros(&cfg.pw_spec())?,
        })
    }

    /// Center-delta depthwise kernels and an identity pointwise conv, so the
    /// attention map reproduces its input.
    pub fn identity(cfg: &LkaConfig) -> Result<Self> {
        let mut w = Self::zeros(cfg)?;
        for (conv, k) in [(&mut w.dw, cfg.dw_kernel()), (&mut w.dwd, cfg.dwd_kernel())] {
            let centre = (k / 2) * k + k / 2;
            for c in 0..cfg.channels {
                conv.weight.data_mut()[c * k * k + centre] = T::one();
            }
        }
        for c in 0..cfg.channels {
            w.pw.weight.data_mut()[c * cfg.channels + c] = T::one();
        }
        Ok(w)
    }

    /// Every kernel tap set to `value`, biases zero.
    pub fn constant(cfg: &LkaConfig, value: T) -> Result<Self> {
        let mut w = Self::zeros(cfg)?;
        for conv in [&mut w.dw, &mut w.dwd, &mut w.pw] {
            conv.weight.data_mut().fill(value);
        }
        Ok(w)
    }

    /// Normal weights with standard deviation `sqrt(2 / fan_out)`, zero biases.
    pub fn random(cfg: &LkaConfig, sampler: &mut NormalSampler) -> Result<Self> {
        let mut w = Self::zeros(cfg)?;
        for (conv, spec) in [
            (&mut w.dw, cfg.dw_spec()?),
            (&mut w.dwd, cfg.dwd_spec()?),
            (&mut w.pw, cfg.pw_spec()),
        ] {
            let fan_out = spec.kernel_h * spec.kernel_w * spec.out_per_group();
            sampler.fill(conv.weight.data_mut(), 0.0, (2.0 / fan_out as f64).sqrt());
        }
        Ok(w)
    }

    pub fn check(&self, cfg: &LkaConfig) -> Result<()> {
        self.dw.check(&cfg.dw_spec()?)?;
        self.dwd.check(&cfg.dwd_spec()?)?;
        self.pw.check(&cfg.pw_spec())
    }
}

/// Intermediate activations of the conv chain.
struct Chain<T> {
    after_dw: Tensor<T>,
    after_dwd: Tensor<T>,
    attention: Tensor<T>,
}

fn run_chain<T: Element>(f: &Tensor<T>, w: &LkaWeights<T>, cfg: &LkaConfig) -> Result<Chain<T>> {
    cfg.validate()?;
    w.check(cfg)?;
    let (_, c, _, _) = f.dims4()?;
    if c != cfg.channels {
        return Err(Error::shape(format!(
            "LKA configured for {} channels, input has {c}",
            cfg.channels
        )));
    }
    let v = cfg.variant;
    let after_dw = if v.uses_dw() {
        conv2d(f, &w.dw, &cfg.dw_spec()?)?
    } else {
        f.clone()
    };
    let after_dwd = if v.uses_dwd() {
        conv2d(&after_dw, &w.dwd, &cfg.dwd_spec()?)?
    } else {
        after_dw.clone()
    };
    let attention = if v.uses_pw() {
        conv2d(&after_dwd, &w.pw, &cfg.pw_spec())?
    } else {
        after_dwd.clone()
    };
    Ok(Chain {
        after_dw,
        after_dwd,
        attention,
    })
}

/// `PW(DWD(DW(F)))` at the input resolution, honouring the stage-skipping
/// variants. No normalization is applied.
pub fn attention_map<T: Element>(
    f: &Tensor<T>,
    w: &LkaWeights<T>,
    cfg: &LkaConfig,
) -> Result<Tensor<T>> {
    Ok(run_chain(f, w, cfg)?.attention)
}

/// `attention_map(F) * F`. Requires the full variant.
pub fn lka_forward<T: Element>(
    f: &Tensor<T>,
    w: &LkaWeights<T>,
    cfg: &LkaConfig,
) -> Result<Tensor<T>> {
    if cfg.variant != LkaVariant::Full {
        return Err(Error::Config(format!(
            "lka_forward needs the full variant, got {}",
            cfg.variant
        )));
    }
    lka_variant_forward(f, w, cfg)
}

fn combine<T: Element>(
    f: &Tensor<T>,
    attention: &Tensor<T>,
    variant: LkaVariant,
) -> Result<Tensor<T>> {
    match variant {
        LkaVariant::NonAttention => Ok(attention.clone()),
        LkaVariant::AddAttention => elementwise_add(attention, f),
        LkaVariant::SigmoidAttention => elementwise_mul(&sigmoid(attention), f),
        _ => elementwise_mul(attention, f),
    }
}

pub fn lka_variant_forward<T: Element>(
    f: &Tensor<T>,
    w: &LkaWeights<T>,
    cfg: &LkaConfig,
) -> Result<Tensor<T>> {
    let chain = run_chain(f, w, cfg)?;
    combine(f, &chain.attention, cfg.variant)
}

#[derive(Debug, Clone)]
pub struct LkaGrads<T> {
    pub dx: Tensor<T>,
    pub dw: LkaWeights<T>,
}

/// Gradients of `sum(upstream * lka_variant_forward(F))` for any variant.
/// Weights of skipped stages receive zero gradients.
pub fn lka_vjp<T: Element>(
    f: &Tensor<T>,
    w: &LkaWeights<T>,
    cfg: &LkaConfig,
    upstream: &Tensor<T>,
) -> Result<LkaGrads<T>> {
    let chain = run_chain(f, w, cfg)?;
    f.expect_same_shape(upstream)?;
    let a = &chain.attention;
    let (d_attention, df_direct) = match cfg.variant {
        LkaVariant::NonAttention => (upstream.clone(), None),
        LkaVariant::AddAttention => (upstream.clone(), Some(upstream.clone())),
        LkaVariant::SigmoidAttention => (
            sigmoid_vjp(a, &elementwise_mul(upstream, f)?)?,
            Some(elementwise_mul(upstream, &sigmoid(a))?),
        ),
        _ => (
            elementwise_mul(upstream, f)?,
            Some(elementwise_mul(upstream, a)?),
        ),
    };

    let mut grads = LkaWeights::zeros(cfg)?;
    let v = cfg.variant;
    let d_after_dwd = if v.uses_pw() {
        let g = conv2d_vjp(&chain.after_dwd, &w.pw, &cfg.pw_spec(), &d_attention)?;
        grads.pw = g.dw;
        g.dx
    } else {
        d_attention
    };
    let d_after_dw = if v.uses_dwd() {
        let g = conv2d_vjp(&chain.after_dw, &w.dwd, &cfg.dwd_spec()?, &d_after_dwd)?;
        grads.dwd = g.dw;
        g.dx
    } else {
        d_after_dwd
    };
    let mut dx = if v.uses_dw() {
        let g = conv2d_vjp(f, &w.dw, &cfg.dw_spec()?, &d_after_dw)?;
        grads.dw = g.dw;
        g.dx
    } else {
        d_after_dw
    };
    if let Some(direct) = df_direct {
        dx.accumulate(&direct)?;
    }
    Ok(LkaGrads { dx, dw: grads })
}

/// Pushes a centred unit impulse through the conv chain with all-ones kernels
/// and measures the side lengths `(height, width)` of the nonzero support.
pub fn measure_receptive_span(cfg: &LkaConfig) -> Result<(usize, usize)> {
    let span = receptive_span(cfg);
    let side = 2 * span + 1;
    let cfg = LkaConfig {
        channels: 1,
        variant: LkaVariant::Full,
        bias: false,
        ..*cfg
    };
    let mut f = Tensor::<f64>::zeros(&[1, 1, side, side])?;
    f.data_mut()[(side / 2) * side + side / 2] = 1.0;
    let a = attention_map(&f, &LkaWeights::constant(&cfg, 1.0)?, &cfg)?;
    Ok(support_extent(a.data(), side, side))
}

/// Bounding-box side lengths of the nonzero entries of an `h x w` plane.
pub fn support_extent(plane: &[f64], h: usize, w: usize) -> (usize, usize) {
    let mut rows = (usize::MAX, 0);
    let mut cols = (usize::MAX, 0);
    for i in 0..h {
        for j in 0..w {
            if plane[i * w + j] != 0.0 {
                rows = (rows.0.min(i), rows.1.max(i));
                cols = (cols.0.min(j), cols.1.max(j));
            }
        }
    }
    if rows.0 == usize::MAX {
        return (0, 0);
    }
    (rows.1 - rows.0 + 1, cols.1 - cols.0 + 1)
}
