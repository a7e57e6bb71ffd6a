//! Named finite-difference checks covering every differentiable operation,
//! the LKA variants, one block and the full micro model.

use crate::error::{Error, Result};
use crate::lka::{lka_variant_forward, lka_vjp, LkaConfig, LkaVariant, LkaWeights};
use crate::nn::{
    batch_norm_infer, batch_norm_vjp, conv2d, conv2d_vjp, finite_diff_check, gelu, gelu_vjp,
    global_avg_pool, global_avg_pool_vjp, linear, linear_vjp, sigmoid, sigmoid_vjp,
    softmax_cross_entropy, softmax_cross_entropy_vjp, ConvSpec, ConvWeights, DifferentiableOp,
    GradCheckConfig, GradCheckReport,
};
use crate::tensor::{
    elementwise_add, elementwise_mul, scale_channels, scale_channels_vjp, NormalSampler, Tensor,
};
use crate::van::{
    block_forward, block_vjp, build_van, model_forward, model_vjp, Preset, Role, Visit,
};

/// Tolerance for pointwise and dense ops.
pub const POINTWISE_TOLERANCE: f64 = 1e-6;
/// Tolerance for convolutions, LKA and blocks.
pub const CONV_TOLERANCE: f64 = 1e-4;
/// Tolerance for the end-to-end model check.
pub const MODEL_TOLERANCE: f64 = 1e-3;

pub const CHECK_NAMES: &[&str] = &[
    "mul",
    "add",
    "scale_channels",
    "gelu",
    "sigmoid",
    "batch_norm",
    "avg_pool",
    "linear",
    "softmax_ce",
    "conv2d",
    "conv2d_strided_grouped",
    "conv2d_dw_dilated",
    "lka_full",
    "lka_no_dw",
    "lka_no_dwd",
    "lka_no_pw",
    "lka_non_attention",
    "lka_add_attention",
    "lka_sigmoid_attention",
    "lka_k21",
    "block",
    "model",
];

type Forward = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;
type Backward = Box<dyn Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>>;

struct FnOp {
    forward: Forward,
    backward: Backward,
    fault: bool,
}

impl DifferentiableOp for FnOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        (self.forward)(inputs)
    }

    fn vjp(&self, inputs: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut grads = (self.backward)(inputs, upstream)?;
        if self.fault {
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= 0.5);
            }
        }
        Ok(grads)
    }
}

fn op(
    forward: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static,
    backward: impl Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>> + 'static,
) -> FnOp {
    FnOp {
        forward: Box::new(forward),
        backward: Box::new(backward),
        fault: false,
    }
}

/// One configured check: the op, its inputs, the upstream gradient and the
/// tolerance settings.
struct Case {
    op: FnOp,
    inputs: Vec<Tensor<f64>>,
    upstream: Tensor<f64>,
    config: GradCheckConfig,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub seed: u64,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

fn normal(shape: &[usize], sampler: &mut NormalSampler) -> Result<Tensor<f64>> {
    let mut t = Tensor::zeros(shape)?;
    sampler.fill(t.data_mut(), 0.0, 1.0);
    Ok(t)
}

/// Parameter tensors of `w` in traversal order.
fn params<W: Visit<f64>>(w: &W) -> Vec<Tensor<f64>> {
    let mut out = Vec::new();
    w.visit("", &mut |_, role, t| {
        if role == Role::Param {
            out.push(t.clone())
        }
    });
    out
}

/// `template` with its parameter tensors replaced, in traversal order.
fn with_params<W: Visit<f64> + Clone>(template: &W, values: &[Tensor<f64>]) -> Result<W> {
    let mut w = template.clone();
    let mut it = values.iter();
    let mut bad = None;
    w.visit_mut("", &mut |name, role, t| {
        if role != Role::Param {
            return;
        }
        match it.next() {
            Some(v) if v.shape() == t.shape() => *t = v.clone(),
            _ => bad = Some(name.to_string()),
        }
    });
    match bad {
        Some(name) => Err(Error::shape(format!(
            "parameter `{name}` missing or misshapen"
        ))),
        None => Ok(w),
    }
}

fn conv_case(spec: ConvSpec, input: [usize; 4], sampler: &mut NormalSampler) -> Result<Case> {
    let x = normal(&input, sampler)?;
    let w = normal(&spec.weight_shape(), sampler)?;
    let b = normal(&[spec.out_channels], sampler)?;
    let split = move |inp: &[Tensor<f64>]| ConvWeights {
        weight: inp[1].clone(),
        bias: Some(inp[2].clone()),
    };
    let spec = ConvSpec {
        has_bias: true,
        ..spec
    };
    let (oh, ow) = spec.output_hw(input[2], input[3])?;
    let upstream = normal(&[input[0], spec.out_channels, oh, ow], sampler)?;
    Ok(Case {
        op: op(
            move |inp| conv2d(&inp[0], &split(inp), &spec),
            move |inp, up| {
                let g = conv2d_vjp(&inp[0], &split(inp), &spec, up)?;
                Ok(vec![g.dx, g.dw.weight, g.dw.bias.expect("bias")])
            },
        ),
        inputs: vec![x, w, b],
        upstream,
        config: GradCheckConfig::new(CONV_TOLERANCE),
    })
}

fn lka_case(cfg: LkaConfig, input: [usize; 4], sampler: &mut NormalSampler) -> Result<Case> {
    let template = LkaWeights::<f64>::zeros(&cfg)?;
    let mut w = template.clone();
    w.visit_mut("", &mut |_, _, t| sampler.fill(t.data_mut(), 0.0, 0.5));
    let mut inputs = vec![normal(&input, sampler)?];
    inputs.extend(params(&w));
    let upstream = normal(&input, sampler)?;
    let t2 = template.clone();
    Ok(Case {
        op: op(
            move |inp| lka_variant_forward(&inp[0], &with_params(&template, &inp[1..])?, &cfg),
            move |inp, up| {
                let g = lka_vjp(&inp[0], &with_params(&t2, &inp[1..])?, &cfg, up)?;
                let mut out = vec![g.dx];
                out.extend(params(&g.dw));
                Ok(out)
            },
        ),
        inputs,
        upstream,
        config: GradCheckConfig::new(CONV_TOLERANCE),
    })
}

fn build_case(name: &str, seed: u64) -> Result<Case> {
    let mut s = NormalSampler::new(seed);
    let pointwise = GradCheckConfig::new(POINTWISE_TOLERANCE);
    let shape = [2, 3, 4, 4];
    let case = match name {
        "mul" | "add" => {
            let inputs = vec![normal(&shape, &mut s)?, normal(&shape, &mut s)?];
            let upstream = normal(&shape, &mut s)?;
            let op = if name == "mul" {
                op(
                    |i| elementwise_mul(&i[0], &i[1]),
                    |i, u| Ok(vec![elementwise_mul(u, &i[1])?, elementwise_mul(u, &i[0])?]),
                )
            } else {
                op(
                    |i| elementwise_add(&i[0], &i[1]),
                    |_, u| Ok(vec![u.clone(), u.clone()]),
                )
            };
            Case {
                op,
                inputs,
                upstream,
                config: pointwise,
            }
        }
        "scale_channels" => Case {
            inputs: vec![normal(&shape, &mut s)?, normal(&[3], &mut s)?],
            upstream: normal(&shape, &mut s)?,
            op: op(
                |i| scale_channels(&i[0], i[1].data()),
                |i, u| {
                    let (dx, dl) = scale_channels_vjp(&i[0], i[1].data(), u)?;
                    Ok(vec![dx, Tensor::from_vec(&[dl.len()], dl)?])
                },
            ),
            config: pointwise,
        },
        "gelu" | "sigmoid" => {
            let mut x = normal(&shape, &mut s)?;
            x = x.map(|v| 2.0 * v);
            let op = if name == "gelu" {
                op(|i| Ok(gelu(&i[0])), |i, u| Ok(vec![gelu_vjp(&i[0], u)?]))
            } else {
                op(
                    |i| Ok(sigmoid(&i[0])),
                    |i, u| Ok(vec![sigmoid_vjp(&i[0], u)?]),
                )
            };
            Case {
                op,
                inputs: vec![x],
                upstream: normal(&shape, &mut s)?,
                config: pointwise,
            }
        }
        "batch_norm" => {
            let mean = normal(&[3], &mut s)?;
            let var = normal(&[3], &mut s)?.map(|v| 0.5 + v * v);
            let (m2, v2) = (mean.clone(), var.clone());
            Case {
                inputs: vec![
                    normal(&shape, &mut s)?,
                    normal(&[3], &mut s)?,
                    normal(&[3], &mut s)?,
                ],
                upstream: normal(&shape, &mut s)?,
                op: op(
                    move |i| {
                        batch_norm_infer(
                            &i[0],
                            i[1].data(),
                            i[2].data(),
                            mean.data(),
                            var.data(),
                            1e-5,
                        )
                    },
                    move |i, u| {
                        let g = batch_norm_vjp(&i[0], i[1].data(), m2.data(), v2.data(), 1e-5, u)?;
                        Ok(vec![g.dx, g.dgamma, g.dbeta])
                    },
                ),
                config: pointwise,
            }
        }
        "avg_pool" => Case {
            inputs: vec![normal(&shape, &mut s)?],
            upstream: normal(&[2, 3], &mut s)?,
            op: op(
                |i| global_avg_pool(&i[0]),
                |i, u| Ok(vec![global_avg_pool_vjp(i[0].shape(), u)?]),
            ),
            config: pointwise,
        },
        "linear" => Case {
            inputs: vec![
                normal(&[2, 3], &mut s)?,
                normal(&[4, 3], &mut s)?,
                normal(&[4], &mut s)?,
            ],
            upstream: normal(&[2, 4], &mut s)?,
            op: op(
                |i| linear(&i[0], &i[1], &i[2]),
                |i, u| {
                    let g = linear_vjp(&i[0], &i[1], &i[2], u)?;
                    Ok(vec![g.dx, g.dw, g.db])
                },
            ),
            config: pointwise,
        },
        "softmax_ce" => {
            let labels = vec![0usize, 3, 1];
            let l2 = labels.clone();
            Case {
                inputs: vec![normal(&[3, 4], &mut s)?],
                upstream: Tensor::filled(&[1], 1.0)?,
                op: op(
                    move |i| Tensor::from_vec(&[1], vec![softmax_cross_entropy(&i[0], &labels)?]),
                    move |i, u| Ok(vec![softmax_cross_entropy_vjp(&i[0], &l2, u.data()[0])?]),
                ),
                config: pointwise,
            }
        }
        "conv2d" => conv_case(ConvSpec::dense(3, 4, 3, 1, 1, true), [1, 3, 6, 6], &mut s)?,
        "conv2d_strided_grouped" => conv_case(
            ConvSpec {
                groups: 2,
                dilation: 2,
                ..ConvSpec::dense(4, 6, 3, 2, 2, true)
            },
            [2, 4, 7, 7],
            &mut s,
        )?,
        "conv2d_dw_dilated" => conv_case(
            ConvSpec::depthwise_same(3, 3, 2, true)?,
            [1, 3, 7, 7],
            &mut s,
        )?,
        "lka_k21" => lka_case(
            LkaConfig::new(2, 21, 3)?.with_bias(true),
            [1, 2, 8, 8],
            &mut s,
        )?,
        _ if name.starts_with("lka_") => {
            let variant: LkaVariant = name["lka_".len()..].parse()?;
            let cfg = LkaConfig::new(2, 7, 2)?
                .with_variant(variant)
                .with_bias(true);
            lka_case(cfg, [1, 2, 8, 8], &mut s)?
        }
        "block" => {
            let mut v = Preset::Micro.variant();
            v.layerscale_init = 0.5;
            let model = build_van::<f64>(&v, seed)?;
            let mut block = model.stages[0].blocks[0].clone();
            // non-trivial norm statistics
            for bn in [&mut block.norm1, &mut block.norm2] {
                sampler_fill(&mut s, &mut bn.running_mean, 0.0, 0.3);
                sampler_fill(&mut s, &mut bn.running_var, 1.0, 0.0);
                sampler_fill(&mut s, &mut bn.gamma, 1.0, 0.2);
            }
            let mut inputs = vec![normal(&[1, 8, 8, 8], &mut s)?];
            inputs.extend(params(&block));
            let upstream = normal(&[1, 8, 8, 8], &mut s)?;
            let t2 = block.clone();
            Case {
                op: op(
                    move |i| block_forward(&i[0], &with_params(&block, &i[1..])?),
                    move |i, u| {
                        let (dx, g) = block_vjp(&i[0], &with_params(&t2, &i[1..])?, u)?;
                        let mut out = vec![dx];
                        out.extend(params(&g));
                        Ok(out)
                    },
                ),
                inputs,
                upstream,
                config: GradCheckConfig::new(CONV_TOLERANCE).sampled(64, seed),
            }
        }
        "model" => {
            // Larger residual scales and head weights than at initialisation
            // so the gradients are far from zero.
            let mut v = Preset::Micro.variant();
            v.layerscale_init = 0.5;
            let mut model = build_van::<f64>(&v, seed)?;
            model.head.weight = model.head.weight.map(|w| 10.0 * w);
            let mut inputs = vec![normal(&[2, 3, 32, 32], &mut s)?];
            inputs.extend(params(&model));
            let t2 = model.clone();
            Case {
                op: op(
                    move |i| {
                        let m = with_params(&model, &i[1..])?;
                        Ok(model_forward(&i[0], &m)?.logits)
                    },
                    move |i, u| {
                        let m = with_params(&t2, &i[1..])?;
                        let (dx, g) = model_vjp(&i[0], &m, u)?;
                        let mut out = vec![dx];
                        out.extend(params(&g));
                        Ok(out)
                    },
                ),
                inputs,
                upstream: normal(&[2, 2], &mut s)?,
                config: GradCheckConfig::new(MODEL_TOLERANCE).sampled(8, seed),
            }
        }
        _ => return Err(Error::param(format!("unknown gradient check `{name}`"))),
    };
    Ok(case)
}

fn sampler_fill(s: &mut NormalSampler, t: &mut Tensor<f64>, mean: f64, std: f64) {
    s.fill(t.data_mut(), mean, std);
}

/// Runs the named check. With `inject_fault`, every analytic gradient is
/// halved, which must make the check fail.
pub fn run_check(name: &str, seed: u64, inject_fault: bool) -> Result<CheckOutcome> {
    let mut case = build_case(name, seed)?;
    case.op.fault = inject_fault;
    let report = finite_diff_check(&case.op, &case.inputs, &case.upstream, &case.config)?;
    Ok(CheckOutcome {
        name: name.to_string(),
        seed,
        tolerance: case.config.tolerance,
        report,
    })
}
