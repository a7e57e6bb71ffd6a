//! Forward and reverse passes through blocks, stages and the whole model.
//!
//! A block applies two residual sub-blocks with the modified LayerScale
//! `x + diag(scale) * (f(x) + x)`:
//! `f1 = proj_out(LKA(GELU(proj_in(norm1(x)))))` and
//! `f2 = fc2(GELU(dwconv(fc1(norm2(y)))))`.

use crate::error::{Error, Result};
use crate::lka::{lka_variant_forward, lka_vjp};
use crate::nn::{
    conv2d, conv2d_vjp, gelu, gelu_vjp, global_avg_pool, global_avg_pool_vjp, linear, linear_vjp,
    softmax_cross_entropy, softmax_cross_entropy_vjp,
};
use crate::tensor::{elementwise_add, scale_channels, scale_channels_vjp, Element, Tensor};
use crate::van::config::TOTAL_STRIDE;
use crate::van::weights::{BlockWeights, ConvLayer, ModelWeights, Role, StageWeights, Visit};

impl<T: Element> ConvLayer<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weights, &self.spec)
    }
}

/// Activations of one residual sub-block kept for the reverse pass.
struct AttentionTrace<T> {
    normed: Tensor<T>,
    projected: Tensor<T>,
    activated: Tensor<T>,
    gated: Tensor<T>,
    branch: Tensor<T>,
}

struct FfnTrace<T> {
    normed: Tensor<T>,
    expanded: Tensor<T>,
    mixed: Tensor<T>,
    activated: Tensor<T>,
    branch: Tensor<T>,
}

fn layer_scale_residual<T: Element>(
    x: &Tensor<T>,
    branch: &Tensor<T>,
    scale: &Tensor<T>,
) -> Result<Tensor<T>> {
    elementwise_add(
        x,
        &scale_channels(&elementwise_add(branch, x)?, scale.data())?,
    )
}

fn attention_trace<T: Element>(x: &Tensor<T>, b: &BlockWeights<T>) -> Result<AttentionTrace<T>> {
    let normed = b.norm1.forward(x)?;
    let projected = b.attn.proj_in.forward(&normed)?;
    let activated = gelu(&projected);
    let gated = lka_variant_forward(&activated, &b.attn.lka, &b.attn.lka_config)?;
    let branch = b.attn.proj_out.forward(&gated)?;
    Ok(AttentionTrace {
        normed,
        projected,
        activated,
        gated,
        branch,
    })
}

fn ffn_trace<T: Element>(y: &Tensor<T>, b: &BlockWeights<T>) -> Result<FfnTrace<T>> {
    let normed = b.norm2.forward(y)?;
    let expanded = b.ffn.fc1.forward(&normed)?;
    let mixed = match &b.ffn.dwconv {
        Some(dw) => dw.forward(&expanded)?,
        None => expanded.clone(),
    };
    let activated = gelu(&mixed);
    let branch = b.ffn.fc2.forward(&activated)?;
    Ok(FfnTrace {
        normed,
        expanded,
        mixed,
        activated,
        branch,
    })
}

fn check_block_input<T: Element>(x: &Tensor<T>, b: &BlockWeights<T>) -> Result<()> {
    let (_, c, _, _) = x.dims4()?;
    if c != b.channels() {
        return Err(Error::shape(format!(
            "block of width {} got {c} channels",
            b.channels()
        )));
    }
    Ok(())
}

pub fn block_forward<T: Element>(x: &Tensor<T>, b: &BlockWeights<T>) -> Result<Tensor<T>> {
    check_block_input(x, b)?;
    let attn = attention_trace(x, b)?;
    let y = layer_scale_residual(x, &attn.branch, &b.scale1)?;
    let ffn = ffn_trace(&y, b)?;
    layer_scale_residual(&y, &ffn.branch, &b.scale2)
}

/// Reverse of `x + diag(s) (branch + x)`: returns `(dx_total_partial,
/// dbranch, dscale)` where the partial omits the path through `branch`.
fn layer_scale_residual_vjp<T: Element>(
    x: &Tensor<T>,
    branch: &Tensor<T>,
    scale: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let inner = elementwise_add(branch, x)?;
    let (d_inner, d_scale) = scale_channels_vjp(&inner, scale.data(), upstream)?;
    let dx = elementwise_add(upstream, &d_inner)?;
    let d_scale = Tensor::from_vec(scale.shape(), d_scale)?;
    Ok((dx, d_inner, d_scale))
}

fn conv_back<T: Element>(
    layer: &ConvLayer<T>,
    input: &Tensor<T>,
    upstream: &Tensor<T>,
    grad: &mut ConvLayer<T>,
) -> Result<Tensor<T>> {
    let g = conv2d_vjp(input, &layer.weights, &layer.spec, upstream)?;
    grad.weights = g.dw;
    Ok(g.dx)
}

/// Gradients of `sum(upstream * block_forward(x))` with respect to `x` and
/// every block tensor (running statistics get zeros).
pub fn block_vjp<T: Element>(
    x: &Tensor<T>,
    b: &BlockWeights<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, BlockWeights<T>)> {
    check_block_input(x, b)?;
    let mut g = b.clone();
    g.visit_mut("", &mut |_, _, t| t.data_mut().fill(T::zero()));

    let attn = attention_trace(x, b)?;
    let y = layer_scale_residual(x, &attn.branch, &b.scale1)?;
    let ffn = ffn_trace(&y, b)?;

    // feed-forward sub-block
    let (mut dy, d_branch, d_scale2) =
        layer_scale_residual_vjp(&y, &ffn.branch, &b.scale2, upstream)?;
    g.scale2 = d_scale2;
    let d_act = conv_back(&b.ffn.fc2, &ffn.activated, &d_branch, &mut g.ffn.fc2)?;
    let d_mixed = gelu_vjp(&ffn.mixed, &d_act)?;
    let d_expanded = match (&b.ffn.dwconv, &mut g.ffn.dwconv) {
        (Some(layer), Some(grad)) => conv_back(layer, &ffn.expanded, &d_mixed, grad)?,
        _ => d_mixed,
    };
    let d_normed = conv_back(&b.ffn.fc1, &ffn.normed, &d_expanded, &mut g.ffn.fc1)?;
    let bn = b.norm2.vjp(&y, &d_normed)?;
    g.norm2.gamma = bn.dgamma;
    g.norm2.beta = bn.dbeta;
    dy.accumulate(&bn.dx)?;

    // attention sub-block
    let (mut dx, d_branch, d_scale1) = layer_scale_residual_vjp(x, &attn.branch, &b.scale1, &dy)?;
    g.scale1 = d_scale1;
    let d_gated = conv_back(
        &b.attn.proj_out,
        &attn.gated,
        &d_branch,
        &mut g.attn.proj_out,
    )?;
    let lka = lka_vjp(&attn.activated, &b.attn.lka, &b.attn.lka_config, &d_gated)?;
    g.attn.lka = lka.dw;
    let d_projected = gelu_vjp(&attn.projected, &lka.dx)?;
    let d_normed = conv_back(
        &b.attn.proj_in,
        &attn.normed,
        &d_projected,
        &mut g.attn.proj_in,
    )?;
    let bn = b.norm1.vjp(x, &d_normed)?;
    g.norm1.gamma = bn.dgamma;
    g.norm1.beta = bn.dbeta;
    dx.accumulate(&bn.dx)?;
    Ok((dx, g))
}

/// Downsample conv, norm, the blocks, then the stage norm.
pub fn stage_forward<T: Element>(x: &Tensor<T>, s: &StageWeights<T>) -> Result<Tensor<T>> {
    Ok(stage_trace(x, s)?.output)
}

struct StageTrace<T> {
    downsampled: Tensor<T>,
    /// Input of every block, then the input of the stage norm.
    block_inputs: Vec<Tensor<T>>,
    output: Tensor<T>,
}

fn stage_trace<T: Element>(x: &Tensor<T>, s: &StageWeights<T>) -> Result<StageTrace<T>> {
    let (_, _, h, w) = x.dims4()?;
    let stride = s.downsample.spec.stride;
    if h % stride != 0 || w % stride != 0 {
        return Err(Error::geometry(format!(
            "input {h}x{w} is not divisible by stage stride {stride}"
        )));
    }
    let downsampled = s.downsample.forward(x)?;
    let (_, _, oh, ow) = downsampled.dims4()?;
    if (oh, ow) != (h / stride, w / stride) {
        return Err(Error::geometry(format!(
            "downsample produced {oh}x{ow} from {h}x{w} at stride {stride}"
        )));
    }
    let mut cur = s.downsample_norm.forward(&downsampled)?;
    let mut block_inputs = Vec::with_capacity(s.blocks.len() + 1);
    for b in &s.blocks {
        let next = block_forward(&cur, b)?;
        block_inputs.push(cur);
        cur = next;
    }
    let output = s.norm.forward(&cur)?;
    block_inputs.push(cur);
    Ok(StageTrace {
        downsampled,
        block_inputs,
        output,
    })
}

fn stage_vjp<T: Element>(
    x: &Tensor<T>,
    s: &StageWeights<T>,
    upstream: &Tensor<T>,
    g: &mut StageWeights<T>,
) -> Result<Tensor<T>> {
    let trace = stage_trace(x, s)?;
    let last = trace.block_inputs.last().expect("stage norm input");
    let bn = s.norm.vjp(last, upstream)?;
    g.norm.gamma = bn.dgamma;
    g.norm.beta = bn.dbeta;
    let mut d = bn.dx;
    for (i, b) in s.blocks.iter().enumerate().rev() {
        let (dx, gb) = block_vjp(&trace.block_inputs[i], b, &d)?;
        g.blocks[i] = gb;
        d = dx;
    }
    let bn = s.downsample_norm.vjp(&trace.downsampled, &d)?;
    g.downsample_norm.gamma = bn.dgamma;
    g.downsample_norm.beta = bn.dbeta;
    conv_back(&s.downsample, x, &bn.dx, &mut g.downsample)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput<T> {
    pub logits: Tensor<T>,
    /// Output of every stage, highest resolution first.
    pub features: Vec<Tensor<T>>,
}

fn check_images<T: Element>(images: &Tensor<T>, model: &ModelWeights<T>) -> Result<()> {
    let (_, c, h, w) = images.dims4()?;
    let expected = model.stages[0].downsample.spec.in_channels;
    if c != expected {
        return Err(Error::shape(format!(
            "model expects {expected} input channels, got {c}"
        )));
    }
    if h % TOTAL_STRIDE != 0 || w % TOTAL_STRIDE != 0 {
        return Err(Error::geometry(format!(
            "input {h}x{w} is not divisible by {TOTAL_STRIDE}"
        )));
    }
    Ok(())
}

/// Logits `(n, classes)` and the four stage feature maps.
pub fn model_forward<T: Element>(
    images: &Tensor<T>,
    model: &ModelWeights<T>,
) -> Result<ModelOutput<T>> {
    check_images(images, model)?;
    let mut features = Vec::with_capacity(model.stages.len());
    let mut cur = images.clone();
    for s in &model.stages {
        cur = stage_forward(&cur, s)?;
        features.push(cur.clone());
    }
    let pooled = global_avg_pool(&cur)?;
    let logits = linear(&pooled, &model.head.weight, &model.head.bias)?;
    Ok(ModelOutput { logits, features })
}

/// Gradients of `sum(upstream * logits)` with respect to the images and all
/// model tensors (buffers get zeros).
pub fn model_vjp<T: Element>(
    images: &Tensor<T>,
    model: &ModelWeights<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, ModelWeights<T>)> {
    check_images(images, model)?;
    let mut inputs = Vec::with_capacity(model.stages.len());
    let mut cur = images.clone();
    for s in &model.stages {
        let next = stage_forward(&cur, s)?;
        inputs.push(cur);
        cur = next;
    }
    let pooled = global_avg_pool(&cur)?;
    let mut g = model.zeros_like();
    let lin = linear_vjp(&pooled, &model.head.weight, &model.head.bias, upstream)?;
    g.head.weight = lin.dw;
    g.head.bias = lin.db;
    let mut d = global_avg_pool_vjp(cur.shape(), &lin.dx)?;
    for (i, s) in model.stages.iter().enumerate().rev() {
        d = stage_vjp(&inputs[i], s, &d, &mut g.stages[i])?;
    }
    Ok((d, g))
}

/// Mean softmax cross-entropy of the model on a labelled batch.
pub fn model_loss<T: Element>(
    images: &Tensor<T>,
    labels: &[usize],
    model: &ModelWeights<T>,
) -> Result<f64> {
    softmax_cross_entropy(&model_forward(images, model)?.logits, labels)
}

/// One step of plain gradient descent on the softmax cross-entropy of a
/// batch. Returns the updated weights and the loss before the update.
/// Running statistics are left untouched.
pub fn train_micro_step<T: Element>(
    mut model: ModelWeights<T>,
    images: &Tensor<T>,
    labels: &[usize],
    lr: f64,
) -> Result<(ModelWeights<T>, f64)> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::param(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    let logits = model_forward(images, &model)?.logits;
    let loss = softmax_cross_entropy(&logits, labels)?;
    if lr == 0.0 {
        return Ok((model, loss));
    }
    let d_logits = softmax_cross_entropy_vjp(&logits, labels, 1.0)?;
    let (_, grads) = model_vjp(images, &model, &d_logits)?;
    let mut flat: Vec<&Tensor<T>> = Vec::new();
    grads.visit("", &mut |_, _, t| flat.push(t));
    let mut k = 0;
    let step = T::of(lr);
    model.visit_mut("", &mut |_, role, t| {
        let g = flat[k];
        k += 1;
        if role == Role::Param {
            for (w, &d) in t.data_mut().iter_mut().zip(g.data()) {
                *w = *w - step * d;
            }
        }
    });
    Ok((model, loss))
}
