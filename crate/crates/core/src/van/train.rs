//! A tiny end-to-end training loop on synthetic data.

use crate::error::Result;
use crate::tensor::{NormalSampler, Tensor};
use crate::van::config::{Preset, IMAGE_CHANNELS};
use crate::van::forward::train_micro_step;
use crate::van::weights::{build_van, ModelWeights};

pub const DEMO_BATCH: usize = 8;
pub const DEMO_EXTENT: usize = 32;
pub const DEMO_LR: f64 = 0.05;

/// `count` images of `extent x extent` with alternating labels 0, 1, ....
///
/// Pixels are `N(0, 0.5^2)` noise plus 1 on the top half of every channel for
/// class 0, or on the bottom half for class 1.
pub fn synthetic_batch(
    count: usize,
    extent: usize,
    seed: u64,
) -> Result<(Tensor<f64>, Vec<usize>)> {
    let mut sampler = NormalSampler::new(seed);
    let mut images = Tensor::zeros(&[count, IMAGE_CHANNELS, extent, extent])?;
    sampler.fill(images.data_mut(), 0.0, 0.5);
    let labels: Vec<usize> = (0..count).map(|i| i % 2).collect();
    let plane = extent * extent;
    for (idx, chunk) in images.data_mut().chunks_mut(plane).enumerate() {
        let label = labels[idx / IMAGE_CHANNELS];
        let rows = if label == 0 {
            0..extent / 2
        } else {
            extent / 2..extent
        };
        for y in rows {
            for v in &mut chunk[y * extent..][..extent] {
                *v += 1.0;
            }
        }
    }
    Ok((images, labels))
}

#[derive(Debug, Clone)]
pub struct TrainDemo {
    pub model: ModelWeights<f64>,
    /// Loss before each step, then the loss after the last step.
    pub losses: Vec<f64>,
}

/// Trains VAN-micro with plain gradient descent on a fixed synthetic batch.
pub fn train_demo(steps: usize, seed: u64, lr: f64) -> Result<TrainDemo> {
    let mut model = build_van::<f64>(&Preset::Micro.variant(), seed)?;
    let (images, labels) = synthetic_batch(DEMO_BATCH, DEMO_EXTENT, seed)?;
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (next, loss) = train_micro_step(model, &images, &labels, lr)?;
        losses.push(loss);
        model = next;
    }
    losses.push(crate::van::model_loss(&images, &labels, &model)?);
    Ok(TrainDemo { model, losses })
}
