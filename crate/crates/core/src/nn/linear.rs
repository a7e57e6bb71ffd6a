use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `(out, in)`.
    pub weight: Tensor<T>,
    /// `(out)`.
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

fn dims<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (&[n, i], &[o, wi], &[bo]) = (x.shape(), w.shape(), b.shape()) else {
        return Err(Error::shape(format!(
            "linear expects x (n, in), w (out, in), b (out); got {:?}, {:?}, {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    };
    if i != wi || o != bo {
        return Err(Error::shape(format!(
            "linear extents disagree: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    Ok((n, i, o))
}

/// `out[n, o] = b[o] + sum_i w[o, i] * x[n, i]`.
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, i, o) = dims(x, w, b)?;
    let (xs, ws, bs) = (x.data(), w.data(), b.data());
    let mut out = Vec::with_capacity(n * o);
    for r in 0..n {
        let xr = &xs[r * i..][..i];
        for c in 0..o {
            let acc: T = ws[c * i..][..i].iter().zip(xr).map(|(&a, &b)| a * b).sum();
            out.push(bs[c] + acc);
        }
    }
    Tensor::from_vec(&[n, o], out)
}

pub fn linear_vjp<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, i, o) = dims(x, w, b)?;
    if upstream.shape() != [n, o] {
        return Err(Error::shape(format!(
            "upstream {:?} does not match [{n}, {o}]",
            upstream.shape()
        )));
    }
    let (xs, ws, us) = (x.data(), w.data(), upstream.data());
    let mut dx = vec![T::zero(); n * i];
    let mut dw = vec![T::zero(); o * i];
    let mut db = vec![T::zero(); o];
    for r in 0..n {
        for c in 0..o {
            let u = us[r * o + c];
            db[c] += u;
            for k in 0..i {
                dx[r * i + k] += u * ws[c * i + k];
                dw[c * i + k] += u * xs[r * i + k];
            }
        }
    }
    Ok(LinearGrads {
        dx: Tensor::from_vec(&[n, i], dx)?,
        dw: Tensor::from_vec(&[o, i], dw)?,
        db: Tensor::from_vec(&[o], db)?,
    })
}
