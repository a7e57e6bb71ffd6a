use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Per-channel affine parameters and running statistics for inference-mode
/// batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
}

pub const DEFAULT_EPS: f64 = 1e-5;

impl<T: Element> BatchNorm<T> {
    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::filled(&[channels], T::one())?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::filled(&[channels], T::one())?,
            eps: DEFAULT_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        batch_norm_infer(
            x,
            self.gamma.data(),
            self.beta.data(),
            self.running_mean.data(),
            self.running_var.data(),
            self.eps,
        )
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn vjp(&self, x: &Tensor<T>, upstream: &Tensor<T>) -> Result<BatchNormGrads<T>> {
        batch_norm_vjp(
            x,
            self.gamma.data(),
            self.running_mean.data(),
            self.running_var.data(),
            self.eps,
            upstream,
        )
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

fn inv_std<T: Element>(c: usize, parts: [&[T]; 4], eps: f64) -> Result<Vec<f64>> {
    if parts.iter().any(|p| p.len() != c) {
        return Err(Error::shape(format!(
            "batch norm vectors must all have length {c}"
        )));
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::param(format!("eps must be >= 0, got {eps}")));
    }
    parts[3]
        .iter()
        .map(|&v| {
            let v = v.as_f64();
            if v < 0.0 || v + eps <= 0.0 {
                Err(Error::param(format!(
                    "variance {v} with eps {eps} is not positive"
                )))
            } else {
                Ok(1.0 / (v + eps).sqrt())
            }
        })
        .collect()
}

/// `gamma[c] * (x - mean[c]) / sqrt(var[c] + eps) + beta[c]`.
pub fn batch_norm_infer<T: Element>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: f64,
) -> Result<Tensor<T>> {
    let (_, c, h, w) = x.dims4()?;
    let inv = inv_std(c, [gamma, beta, mean, var], eps)?;
    let plane = h * w;
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = (i / plane) % c;
            let norm = (v - mean[ch]) * T::of(inv[ch]);
            gamma[ch] * norm + beta[ch]
        })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn batch_norm_vjp<T: Element>(
    x: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    var: &[T],
    eps: f64,
    upstream: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    x.expect_same_shape(upstream)?;
    let (_, c, h, w) = x.dims4()?;
    let inv = inv_std(c, [gamma, gamma, mean, var], eps)?;
    let plane = h * w;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = Vec::with_capacity(x.len());
    for (i, (&v, &u)) in x.data().iter().zip(upstream.data()).enumerate() {
        let ch = (i / plane) % c;
        let s = T::of(inv[ch]);
        dgamma[ch] += u * (v - mean[ch]) * s;
        dbeta[ch] += u;
        dx.push(u * gamma[ch] * s);
    }
    Ok(BatchNormGrads {
        dx: Tensor::from_vec(x.shape(), dx)?,
        dgamma: Tensor::from_vec(&[c], dgamma)?,
        dbeta: Tensor::from_vec(&[c], dbeta)?,
    })
}
