//! Direct-summation 2-D convolution over NCHW tensors.
//!
//! Each output element accumulates its contributions in (input channel,
//! kernel row, kernel column) order starting from zero, then adds the bias.
//! Out-of-bounds taps read the implicit zero padding and are skipped.

#![allow(clippy::needless_range_loop)]

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Geometry of one convolution layer. Padding is symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Dense square convolution with `groups = 1`.
    pub fn dense(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        has_bias: bool,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            dilation: 1,
            padding,
            groups: 1,
            has_bias,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize, has_bias: bool) -> Self {
        Self::dense(in_channels, out_channels, 1, 1, 0, has_bias)
    }

    /// Resolution-preserving depthwise convolution.
    pub fn depthwise_same(
        channels: usize,
        kernel: usize,
        dilation: usize,
        has_bias: bool,
    ) -> Result<Self> {
        Ok(Self {
            in_channels: channels,
            out_channels: channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            dilation,
            padding: same_padding(kernel, dilation)?,
            groups: channels,
            has_bias,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::geometry("channel counts must be >= 1"));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::geometry("kernel extents must be >= 1"));
        }
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::geometry("stride and dilation must be >= 1"));
        }
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::geometry(format!(
                "groups {} must divide in_channels {} and out_channels {}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_per_group(),
            self.kernel_h,
            self.kernel_w,
        ]
    }

    /// Parameter count, optionally including the bias.
    pub fn param_count(&self, with_bias: bool) -> u64 {
        let w = self
            .weight_shape()
            .iter()
            .map(|&e| e as u64)
            .product::<u64>();
        w + if with_bias {
            self.out_channels as u64
        } else {
            0
        }
    }

    /// `floor((in + 2p - dilation*(k-1) - 1) / stride) + 1`, or a geometry
    /// error when no window fits.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(Error::geometry(format!(
                "input extent {input} with padding {} is smaller than the kernel span {span}",
                self.padding
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            self.output_extent(h, self.kernel_h)?,
            self.output_extent(w, self.kernel_w)?,
        ))
    }
}

/// Padding that keeps a stride-1 convolution at the input resolution:
/// `dilation*(kernel-1)/2`. Rejects geometries whose total padding is odd.
pub fn same_padding(kernel: usize, dilation: usize) -> Result<usize> {
    if kernel == 0 || dilation == 0 {
        return Err(Error::geometry("kernel and dilation must be >= 1"));
    }
    let total = dilation * (kernel - 1);
    if !total.is_multiple_of(2) {
        return Err(Error::geometry(format!(
            "kernel {kernel} with dilation {dilation} needs asymmetric padding"
        )));
    }
    Ok(total / 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Element> ConvWeights<T> {
    pub fn zeros(spec: &ConvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            weight: Tensor::zeros(&spec.weight_shape())?,
            bias: if spec.has_bias {
                Some(Tensor::zeros(&[spec.out_channels])?)
            } else {
                None
            },
        })
    }

    pub fn check(&self, spec: &ConvSpec) -> Result<()> {
        spec.validate()?;
        if self.weight.shape() != spec.weight_shape() {
            return Err(Error::shape(format!(
                "conv weight {:?} does not match {:?}",
                self.weight.shape(),
                spec.weight_shape()
            )));
        }
        match (&self.bias, spec.has_bias) {
            (Some(b), true) if b.shape() == [spec.out_channels] => Ok(()),
            (None, false) => Ok(()),
            (Some(b), true) => Err(Error::shape(format!(
                "conv bias {:?} does not match [{}]",
                b.shape(),
                spec.out_channels
            ))),
            (Some(_), false) => Err(Error::shape("bias given for a bias-free conv")),
            (None, true) => Err(Error::shape("conv expects a bias")),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

/// Gradients of `sum(upstream * conv2d(x, w))`.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: ConvWeights<T>,
}

/// Range of output columns `ox` for which `ox*stride + offset` lies in
/// `[0, extent)`, clipped to `[0, out)`.
fn valid_range(offset: isize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        (-offset + s - 1) / s
    };
    let room = extent as isize - offset;
    let hi = if room <= 0 { 0 } else { (room + s - 1) / s };
    let lo = (lo as usize).min(out);
    (lo, (hi as usize).clamp(lo, out))
}

/// Below this many multiply-accumulates a conv runs on the calling thread.
const PARALLEL_THRESHOLD: usize = 1 << 18;

/// Applies `f` to consecutive `chunk`-sized pieces of `buf`, in parallel when
/// `work` is large enough. Each piece is written by exactly one call.
fn for_each_chunk<T: Send>(
    buf: &mut [T],
    chunk: usize,
    work: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    if work < PARALLEL_THRESHOLD {
        buf.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        buf.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

fn check_input<T: Element>(
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    spec: &ConvSpec,
) -> Result<(usize, usize, usize, usize, usize)> {
    w.check(spec)?;
    let (n, c, h, wd) = x.dims4()?;
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    let (oh, ow) = spec.output_hw(h, wd)?;
    Ok((n, h, wd, oh, ow))
}

pub fn conv2d<T: Element>(x: &Tensor<T>, w: &ConvWeights<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let (n, h, wd, oh, ow) = check_input(x, w, spec)?;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (cin_g, cout_g) = (spec.in_per_group(), spec.out_per_group());
    let (stride, dil, pad) = (spec.stride, spec.dilation, spec.padding as isize);
    let xs = x.data();
    let ws = w.weight.data();
    let bias = w.bias.as_ref().map(Tensor::data);
    let cin = spec.in_channels;
    let cout = spec.out_channels;

    let work = n * cout * oh * ow * cin_g * kh * kw;
    let pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;
    let mut out = vec![T::zero(); n * cout * oh * ow];
    for_each_chunk(&mut out, oh * ow, work, |idx, plane| {
        let (b, oc) = (idx / cout, idx % cout);
        let g = oc / cout_g;
        for icg in 0..cin_g {
            let ic = g * cin_g + icg;
            let xin = &xs[(b * cin + ic) * h * wd..][..h * wd];
            let wk = &ws[(oc * cin_g + icg) * kh * kw..][..kh * kw];
            if pointwise {
                for (o, &xv) in plane.iter_mut().zip(xin) {
                    *o += wk[0] * xv;
                }
                continue;
            }
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range((ky * dil) as isize - pad, stride, h, oh);
                for kx in 0..kw {
                    let wv = wk[ky * kw + kx];
                    let off_x = (kx * dil) as isize - pad;
                    let (ox_lo, ox_hi) = valid_range(off_x, stride, wd, ow);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky * dil - spec.padding;
                        let row = &xin[iy * wd..][..wd];
                        let orow = &mut plane[oy * ow..][..ow];
                        for ox in ox_lo..ox_hi {
                            let ix = (ox * stride) as isize + off_x;
                            orow[ox] += wv * row[ix as usize];
                        }
                    }
                }
            }
        }
        if let Some(bias) = bias {
            for v in plane.iter_mut() {
                *v += bias[oc];
            }
        }
    });
    Tensor::from_vec(&[n, cout, oh, ow], out)
}

pub fn conv2d_vjp<T: Element>(
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    spec: &ConvSpec,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, h, wd, oh, ow) = check_input(x, w, spec)?;
    let cout = spec.out_channels;
    if upstream.shape() != [n, cout, oh, ow] {
        return Err(Error::shape(format!(
            "upstream {:?} does not match conv output {:?}",
            upstream.shape(),
            [n, cout, oh, ow]
        )));
    }
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (cin_g, cout_g) = (spec.in_per_group(), spec.out_per_group());
    let (stride, dil, pad) = (spec.stride, spec.dilation, spec.padding as isize);
    let cin = spec.in_channels;
    let xs = x.data();
    let ws = w.weight.data();
    let us = upstream.data();

    // Weight gradient, one output channel per task.
    let work = n * cout * oh * ow * cin_g * kh * kw;
    let mut dw = vec![T::zero(); ws.len()];
    for_each_chunk(&mut dw, cin_g * kh * kw, work, |oc, dwk| {
        let g = oc / cout_g;
        for b in 0..n {
            let up = &us[(b * cout + oc) * oh * ow..][..oh * ow];
            for icg in 0..cin_g {
                let ic = g * cin_g + icg;
                let xin = &xs[(b * cin + ic) * h * wd..][..h * wd];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range((ky * dil) as isize - pad, stride, h, oh);
                    for kx in 0..kw {
                        let off_x = (kx * dil) as isize - pad;
                        let (ox_lo, ox_hi) = valid_range(off_x, stride, wd, ow);
                        let mut acc = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky * dil - spec.padding;
                            let row = &xin[iy * wd..][..wd];
                            let urow = &up[oy * ow..][..ow];
                            for ox in ox_lo..ox_hi {
                                let ix = (ox * stride) as isize + off_x;
                                acc += urow[ox] * row[ix as usize];
                            }
                        }
                        dwk[(icg * kh + ky) * kw + kx] += acc;
                    }
                }
            }
        }
    });

    let db = if spec.has_bias {
        let mut db = vec![T::zero(); cout];
        for (idx, plane) in us.chunks(oh * ow).enumerate() {
            db[idx % cout] += plane.iter().copied().sum();
        }
        Some(Tensor::from_vec(&[cout], db)?)
    } else {
        None
    };

    // Input gradient, one input plane per task.
    let mut dx = vec![T::zero(); xs.len()];
    for_each_chunk(&mut dx, h * wd, work, |idx, dplane| {
        let (b, ic) = (idx / cin, idx % cin);
        let g = ic / cin_g;
        let icg = ic % cin_g;
        for ocg in 0..cout_g {
            let oc = g * cout_g + ocg;
            let up = &us[(b * cout + oc) * oh * ow..][..oh * ow];
            let wk = &ws[(oc * cin_g + icg) * kh * kw..][..kh * kw];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range((ky * dil) as isize - pad, stride, h, oh);
                for kx in 0..kw {
                    let wv = wk[ky * kw + kx];
                    let off_x = (kx * dil) as isize - pad;
                    let (ox_lo, ox_hi) = valid_range(off_x, stride, wd, ow);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky * dil - spec.padding;
                        let urow = &up[oy * ow..][..ow];
                        let drow = &mut dplane[iy * wd..][..wd];
                        for ox in ox_lo..ox_hi {
                            let ix = (ox * stride) as isize + off_x;
                            drow[ix as usize] += wv * urow[ox];
                        }
                    }
                }
            }
        }
    });

    Ok(ConvGrads {
        dx: Tensor::from_vec(x.shape(), dx)?,
        dw: ConvWeights {
            weight: Tensor::from_vec(w.weight.shape(), dw)?,
            bias: db,
        },
    })
}
