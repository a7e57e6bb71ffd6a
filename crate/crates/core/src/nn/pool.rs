use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Mean over the spatial axes: `(n, c, h, w) -> (n, c)`.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let denom = T::of((h * w) as f64);
    let data = x
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() / denom)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

/// Spreads each pooled gradient evenly back over its plane.
pub fn global_avg_pool_vjp<T: Element>(
    input_shape: &[usize],
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input_shape else {
        return Err(Error::shape(format!("expected NCHW, got {input_shape:?}")));
    };
    if upstream.shape() != [n, c] {
        return Err(Error::shape(format!(
            "upstream {:?} does not match pooled shape [{n}, {c}]",
            upstream.shape()
        )));
    }
    let denom = T::of((h * w) as f64);
    let data = upstream
        .data()
        .iter()
        .flat_map(|&u| std::iter::repeat_n(u / denom, h * w))
        .collect();
    Tensor::from_vec(input_shape, data)
}
