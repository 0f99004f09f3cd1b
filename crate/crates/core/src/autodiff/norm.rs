use serde::{Deserialize, Serialize};

use crate::autodiff::ops::Mode;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running per-channel statistics kept by a batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: NORM_EPS,
        }
    }
}

fn check_affine(channels: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(Error::Dimension(format!(
            "norm affine shapes {:?}/{:?} do not match {channels} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

fn affine(normalized: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let c = gamma.len();
    normalized
        .mul_bcast(&gamma.reshape(&[1, c, 1])?)?
        .add_bcast(&beta.reshape(&[1, c, 1])?)
}

/// Normalizes over `axes` with the biased variance, composed from
/// differentiable primitives.
fn normalize(x: &Tensor, axes: &[usize], eps: f64) -> Result<(Tensor, Tensor, Tensor)> {
    let count: usize = axes.iter().map(|a| x.shape()[*a]).product();
    let inv_n = 1.0 / count as f64;
    let mean = x.sum_keep(axes)?.scale(inv_n)?;
    let centered = x.sub_bcast(&mean)?;
    let var = centered.square()?.sum_keep(axes)?.scale(inv_n)?;
    let inv_std = var.add_scalar(eps)?.powf(-0.5)?;
    Ok((centered.mul_bcast(&inv_std)?, mean, var))
}

/// Batch normalization of `[B, C, L]` per channel over `(B, L)`.
///
/// Train mode uses batch statistics and folds them into `stats` (running
/// variance is the unbiased estimate); eval mode uses `stats` only.
pub fn batch_norm1d(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<Tensor> {
    let (b, c, l) = input.dims3("batch_norm1d input")?;
    check_affine(c, gamma, beta)?;
    if stats.mean.len() != c {
        return Err(Error::Dimension(format!(
            "running stats hold {} channels, input has {c}",
            stats.mean.len()
        )));
    }
    match mode {
        Mode::Train => {
            let n = b * l;
            if n < 2 {
                return Err(Error::Parameter(format!(
                    "batch norm in train mode needs at least 2 values per channel, got {n}"
                )));
            }
            let (normalized, mean, var) = normalize(input, &[0, 2], stats.eps)?;
            let m = stats.momentum;
            let unbias = n as f64 / (n - 1) as f64;
            for ch in 0..c {
                stats.mean[ch] = (1.0 - m) * stats.mean[ch] + m * mean.data()[ch];
                stats.var[ch] = (1.0 - m) * stats.var[ch] + m * var.data()[ch] * unbias;
            }
            affine(&normalized, gamma, beta)
        }
        Mode::Eval => {
            let mean = Tensor::new(&[1, c, 1], stats.mean.clone())?;
            let inv_std = Tensor::new(
                &[1, c, 1],
                stats.var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect(),
            )?;
            let normalized = input.sub_bcast(&mean)?.mul_bcast(&inv_std)?;
            affine(&normalized, gamma, beta)
        }
    }
}

/// Instance normalization: each `(b, c)` row normalized over its own samples.
pub fn instance_norm1d(input: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (_, c, l) = input.dims3("instance_norm1d input")?;
    check_affine(c, gamma, beta)?;
    if l < 2 {
        return Err(Error::Parameter(format!(
            "instance norm needs rows of at least 2 samples, got {l}"
        )));
    }
    let (normalized, _, _) = normalize(input, &[2], NORM_EPS)?;
    affine(&normalized, gamma, beta)
}
