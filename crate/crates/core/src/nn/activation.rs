use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Standard normal CDF, `0.5 * erfc(-x / sqrt 2)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        let v = v.as_f64();
        T::of(v * normal_cdf(v))
    })
}

pub fn gelu_vjp<T: Element>(x: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(upstream, |v, u| {
        let v = v.as_f64();
        T::of((normal_cdf(v) + v * normal_pdf(v)) * u.as_f64())
    })
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::of(logistic(v.as_f64())))
}

pub fn sigmoid_vjp<T: Element>(x: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(upstream, |v, u| {
        let s = logistic(v.as_f64());
        T::of(s * (1.0 - s) * u.as_f64())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(&scalar(0.0)).data()[0], 0.0);
        // Phi(1) = 0.841344746068542948...
        assert!((gelu(&scalar(1.0)).data()[0] - 0.841_344_746_068_543).abs() < 1e-12);
        assert!(gelu(&scalar(-10.0)).data()[0].abs() < 1e-8);
    }

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(sigmoid(&scalar(0.0)).data()[0], 0.5);
        assert!((sigmoid(&scalar(3f64.ln())).data()[0] - 0.75).abs() < 1e-15);
        let x = Tensor::<f64>::random_normal(&[200], 0.0, 8.0, 3).unwrap();
        assert!(sigmoid(&x).data().iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn monotone_on_grid() {
        let grid: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.025).collect();
        let x = Tensor::from_vec(&[grid.len()], grid).unwrap();
        // gelu dips below zero on the negative axis; it is monotone for x >= -0.75
        let g = gelu(&x);
        let start = x.data().iter().position(|&v| v >= -0.75).unwrap();
        assert!(g.data()[start..].windows(2).all(|p| p[0] <= p[1]));
        let s = sigmoid(&x);
        assert!(s.data().windows(2).all(|p| p[0] <= p[1]));
    }
}
