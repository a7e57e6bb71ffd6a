//! Model parameter containers and deterministic construction.
//!
//! Every container implements [`Visit`], which walks its tensors in a fixed
//! order with dotted names. That order is the checkpoint order and the order
//! in which [`build_van`] draws random numbers.

use crate::error::{Error, Result};
use crate::lka::{LkaConfig, LkaWeights};
use crate::nn::{BatchNorm, ConvSpec, ConvWeights, Linear};
use crate::tensor::{Element, NormalSampler, Tensor};
use crate::van::config::VanVariant;

/// Whether a tensor is trained or is a fixed statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Param,
    Buffer,
}

pub trait Visit<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Role, &'a Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut Tensor<T>));
}

fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

impl<T> Visit<T> for Tensor<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Role, &'a Tensor<T>)) {
        f(prefix, Role::Param, self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut Tensor<T>)) {
        f(prefix, Role::Param, self)
    }
}

impl<T, V: Visit<T>> Visit<T> for Option<V> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Role, &'a Tensor<T>)) {
        if let Some(v) = self {
            v.visit(prefix, f)
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut Tensor<T>)) {
        if let Some(v) = self {
            v.visit_mut(prefix, f)
        }
    }
}

impl<T, V: Visit<T>> Visit<T> for Vec<V> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Role, &'a Tensor<T>)) {
        for (i, v) in self.iter().enumerate() {
            v.visit(&join(prefix, &i.to_string()), f)
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut Tensor<T>)) {
        for (i, v) in self.iter_mut().enumerate() {
            v.visit_mut(&join(prefix, &i.to_string()), f)
        }
    }
}

impl<T> Visit<T> for BatchNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Role, &'a Tensor<T>)) {
        f(&join(prefix, "gamma"), Role::Param, &self.gamma);
        f(&join(prefix, "beta"), Role::Param, &self.beta);
        f(
            &join(prefix, "running_mean"),
            Role::Buffer,
            &self.running_mean,
        );
        f(
            &join(prefix, "running_var"),
            Role::Buffer,
            &self.running_var,
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), Role::Param, &mut self.gamma);
        f(&join(prefix, "beta"), Role::Param, &mut self.beta);
        f(
            &join(prefix, "running_mean"),
            Role::Buffer,
            &mut self.running_mean,
        );
        f(
            &join(prefix, "running_var"),
            Role::Buffer,
            &mut self.running_var,
        );
    }
}

macro_rules! impl_visit {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T> Visit<T> for $ty<T> {
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Role, &'a Tensor<T>)) {
                $( self.$field.visit(&join(prefix, stringify!($field)), f); )*
            }

            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut Tensor<T>)) {
                $( self.$field.visit_mut(&join(prefix, stringify!($field)), f); )*
            }
        }
    };
}

impl_visit!(ConvWeights { weight, bias });
impl_visit!(Linear { weight, bias });
impl_visit!(LkaWeights { dw, dwd, pw });
impl_visit!(AttentionWeights {
    proj_in,
    lka,
    proj_out
});
impl_visit!(FfnWeights { fc1, dwconv, fc2 });
impl_visit!(BlockWeights {
    norm1,
    attn,
    scale1,
    norm2,
    ffn,
    scale2
});
impl_visit!(StageWeights {
    downsample,
    downsample_norm,
    blocks,
    norm
});
impl_visit!(ModelWeights { stages, head });

/// A convolution and its geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: ConvSpec,
    pub weights: ConvWeights<T>,
}

impl<T> Visit<T> for ConvLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Role, &'a Tensor<T>)) {
        self.weights.visit(prefix, f)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut Tensor<T>)) {
        self.weights.visit_mut(prefix, f)
    }
}

/// `PWConv -> GELU -> LKA -> PWConv`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub proj_in: ConvLayer<T>,
    pub lka_config: LkaConfig,
    pub lka: LkaWeights<T>,
    pub proj_out: ConvLayer<T>,
}

/// `PWConv(C -> eC) -> DWConv 3x3 -> GELU -> PWConv(eC -> C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights<T> {
    pub fc1: ConvLayer<T>,
    pub dwconv: Option<ConvLayer<T>>,
    pub fc2: ConvLayer<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub norm1: BatchNorm<T>,
    pub attn: AttentionWeights<T>,
    /// LayerScale of the attention sub-block.
    pub scale1: Tensor<T>,
    pub norm2: BatchNorm<T>,
    pub ffn: FfnWeights<T>,
    /// LayerScale of the feed-forward sub-block.
    pub scale2: Tensor<T>,
}

impl<T> BlockWeights<T> {
    pub fn channels(&self) -> usize {
        self.attn.proj_in.spec.in_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights<T> {
    pub downsample: ConvLayer<T>,
    pub downsample_norm: BatchNorm<T>,
    pub blocks: Vec<BlockWeights<T>>,
    pub norm: BatchNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub variant: VanVariant,
    pub stages: Vec<StageWeights<T>>,
    pub head: Linear<T>,
}

/// One entry of [`ModelWeights::named_tensors`].
#[derive(Debug)]
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub role: Role,
    pub tensor: &'a Tensor<T>,
}

impl<T: Element> ModelWeights<T> {
    pub fn named_tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        self.visit("", &mut |name, role, tensor| {
            out.push(NamedTensor {
                name: name.to_string(),
                role,
                tensor,
            })
        });
        out
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> u64 {
        let mut n = 0u64;
        self.visit("", &mut |_, role, t| {
            if role == Role::Param {
                n += t.len() as u64
            }
        });
        n
    }

    pub fn tensor_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, _| n += 1);
        n
    }

    /// Same structure with every tensor zeroed; used as a gradient container.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.visit_mut("", &mut |_, _, t| t.data_mut().fill(T::zero()));
        out
    }

    /// Blocks removed from every stage.
    pub fn without_blocks(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.stages {
            s.blocks.clear();
        }
        out
    }
}

/// Source of initial weight values. Without a sampler every weight tensor
/// stays zero.
struct Init(Option<NormalSampler>);

impl Init {
    fn fill<T: Element>(&mut self, out: &mut [T], std: f64) {
        if let Some(s) = &mut self.0 {
            s.fill(out, 0.0, std);
        }
    }
}

/// Normal with std `sqrt(2 / fan_out)`, zero bias.
fn init_conv<T: Element>(spec: ConvSpec, init: &mut Init) -> Result<ConvLayer<T>> {
    let mut weights = ConvWeights::zeros(&spec)?;
    let fan_out = spec.kernel_h * spec.kernel_w * spec.out_per_group();
    init.fill(weights.weight.data_mut(), (2.0 / fan_out as f64).sqrt());
    Ok(ConvLayer { spec, weights })
}

fn build_block<T: Element>(
    variant: &VanVariant,
    channels: usize,
    expansion: usize,
    init: &mut Init,
) -> Result<BlockWeights<T>> {
    let hidden = channels * expansion;
    let lka_config = variant.lka_config(channels)?;
    let norm1 = BatchNorm::identity(channels)?;
    let proj_in = init_conv(ConvSpec::pointwise(channels, channels, true), init)?;
    let lka = match &mut init.0 {
        Some(s) => LkaWeights::random(&lka_config, s)?,
        None => LkaWeights::zeros(&lka_config)?,
    };
    let proj_out = init_conv(ConvSpec::pointwise(channels, channels, true), init)?;
    let scale = T::of(variant.layerscale_init);
    let scale1 = Tensor::filled(&[channels], scale)?;
    let norm2 = BatchNorm::identity(channels)?;
    let fc1 = init_conv(ConvSpec::pointwise(channels, hidden, true), init)?;
    let dwconv = if variant.ffn_dwconv {
        Some(init_conv(
            ConvSpec::depthwise_same(hidden, 3, 1, true)?,
            init,
        )?)
    } else {
        None
    };
    let fc2 = init_conv(ConvSpec::pointwise(hidden, channels, true), init)?;
    let scale2 = Tensor::filled(&[channels], scale)?;
    Ok(BlockWeights {
        norm1,
        attn: AttentionWeights {
            proj_in,
            lka_config,
            lka,
            proj_out,
        },
        scale1,
        norm2,
        ffn: FfnWeights { fc1, dwconv, fc2 },
        scale2,
    })
}

/// Deterministically initialized weights for `variant`.
///
/// Convs draw `N(0, 2 / fan_out)`, the classifier `N(0, 0.02^2)`; biases are
/// zero, norms are identities and LayerScale vectors hold
/// `variant.layerscale_init`.
pub fn build_van<T: Element>(variant: &VanVariant, seed: u64) -> Result<ModelWeights<T>> {
    build(variant, Init(Some(NormalSampler::new(seed))))
}

/// The tensors of `variant` without random initialization: conv and
/// classifier weights are zero, everything else is as in [`build_van`].
pub fn skeleton_van<T: Element>(variant: &VanVariant) -> Result<ModelWeights<T>> {
    build(variant, Init(None))
}

fn build<T: Element>(variant: &VanVariant, mut init: Init) -> Result<ModelWeights<T>> {
    variant.validate()?;
    let mut stages = Vec::with_capacity(4);
    for (i, cfg) in variant.stages.iter().enumerate() {
        let spec = ConvSpec::dense(
            variant.stage_in_channels(i),
            cfg.channels,
            cfg.downsample_kernel,
            cfg.downsample_stride,
            cfg.downsample_padding,
            true,
        );
        let downsample = init_conv(spec, &mut init)?;
        let downsample_norm = BatchNorm::identity(cfg.channels)?;
        let blocks = (0..cfg.depth)
            .map(|_| build_block(variant, cfg.channels, cfg.expansion_ratio, &mut init))
            .collect::<Result<Vec<_>>>()?;
        stages.push(StageWeights {
            downsample,
            downsample_norm,
            blocks,
            norm: BatchNorm::identity(cfg.channels)?,
        });
    }
    let width = variant.stages[3].channels;
    let mut head = Linear {
        weight: Tensor::zeros(&[variant.num_classes, width])?,
        bias: Tensor::zeros(&[variant.num_classes])?,
    };
    init.fill(head.weight.data_mut(), 0.02);
    Ok(ModelWeights {
        variant: variant.clone(),
        stages,
        head,
    })
}

/// Checks that `model` has exactly the tensors `build_van` would produce for
/// its variant, reporting the first mismatching tensor by name.
pub fn check_structure<T: Element>(model: &ModelWeights<T>) -> Result<()> {
    let expected: ModelWeights<T> = skeleton_van(&model.variant)?;
    let want = expected.named_tensors();
    let got = model.named_tensors();
    for (i, w) in want.iter().enumerate() {
        match got.get(i) {
            None => {
                return Err(Error::Integrity {
                    name: w.name.clone(),
                    detail: "missing".into(),
                })
            }
            Some(g) if g.name != w.name || g.tensor.shape() != w.tensor.shape() => {
                return Err(Error::Integrity {
                    name: w.name.clone(),
                    detail: format!(
                        "found `{}` with shape {:?}, expected {:?}",
                        g.name,
                        g.tensor.shape(),
                        w.tensor.shape()
                    ),
                })
            }
            _ => {}
        }
    }
    if let Some(extra) = got.get(want.len()) {
        return Err(Error::Integrity {
            name: extra.name.clone(),
            detail: "unexpected extra tensor".into(),
        });
    }
    Ok(())
}
