//! 1-D convolution, transposed convolution and the convolution weight
//! gradient. The three are closed under differentiation: the backward rule
//! of each is expressed with the other two, so gradients of gradients work.

use rayon::prelude::*;

use crate::autodiff::tape::Op;
use crate::autodiff::tensor::{deterministic_reductions, Tensor};
use crate::error::{Error, Result};

/// Output length of a strided, zero-padded convolution.
pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Geometry("stride must be at least 1".into()));
    }
    let padded = len + 2 * padding;
    if padded < kernel {
        return Err(Error::Geometry(format!(
            "kernel {kernel} longer than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output length of a transposed convolution: `(len - 1) * stride - 2 * padding + kernel`.
pub fn conv_transpose1d_out_len(
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Geometry("stride must be at least 1".into()));
    }
    if len == 0 {
        return Err(Error::Geometry("empty input".into()));
    }
    let full = (len - 1) * stride + kernel;
    if full <= 2 * padding {
        return Err(Error::Geometry(format!(
            "transposed convolution output length {full} - 2*{padding} is not positive"
        )));
    }
    Ok(full - 2 * padding)
}

#[derive(Clone, Copy)]
struct Geom {
    stride: usize,
    padding: usize,
}

impl Geom {
    #[inline]
    fn src(&self, t: usize, k: usize, len: usize) -> Option<usize> {
        let i = (t * self.stride + k).checked_sub(self.padding)?;
        (i < len).then_some(i)
    }
}

fn for_each_batch(out: &mut [f64], chunk: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    if chunk == 0 {
        return;
    }
    if deterministic_reductions() {
        out.chunks_mut(chunk).enumerate().for_each(|(b, o)| f(b, o));
    } else {
        out.par_chunks_mut(chunk).enumerate().for_each(|(b, o)| f(b, o));
    }
}

impl Tensor {
    /// Convolution without bias. `kernel` is `[c_out, c_in, k]`.
    pub(crate) fn conv1d_raw(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let (batch, c_in, len) = self.dims3("conv1d input")?;
        let (c_out, kc_in, k) = kernel.dims3("conv1d kernel")?;
        if kc_in != c_in {
            return Err(Error::Dimension(format!(
                "conv1d kernel expects {kc_in} input channels, input has {c_in}"
            )));
        }
        let out_len = conv1d_out_len(len, k, stride, padding)?;
        let g = Geom { stride, padding };
        let x = self.data();
        let w = kernel.data();
        let mut out = vec![0.0; batch * c_out * out_len];
        for_each_batch(&mut out, c_out * out_len, |b, ob| {
            for o in 0..c_out {
                let orow = &mut ob[o * out_len..(o + 1) * out_len];
                for c in 0..c_in {
                    let xrow = &x[(b * c_in + c) * len..][..len];
                    let wrow = &w[(o * c_in + c) * k..][..k];
                    for (t, ov) in orow.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (kk, wv) in wrow.iter().enumerate() {
                            if let Some(i) = g.src(t, kk, len) {
                                acc += xrow[i] * wv;
                            }
                        }
                        *ov += acc;
                    }
                }
            }
        });
        Tensor::record(
            Op::Conv1d { stride, padding },
            "conv1d",
            &[self, kernel],
            vec![batch, c_out, out_len],
            out,
        )
    }

    /// Transposed convolution without bias producing exactly `out_len`
    /// samples. `kernel` is `[c_in, c_out, k]`.
    pub(crate) fn conv_transpose1d_raw(
        &self,
        kernel: &Tensor,
        stride: usize,
        padding: usize,
        out_len: usize,
    ) -> Result<Tensor> {
        let (batch, c_in, len) = self.dims3("conv_transpose1d input")?;
        let (kc_in, c_out, k) = kernel.dims3("conv_transpose1d kernel")?;
        if kc_in != c_in {
            return Err(Error::Dimension(format!(
                "conv_transpose1d kernel expects {kc_in} input channels, input has {c_in}"
            )));
        }
        if stride == 0 || out_len == 0 {
            return Err(Error::Geometry(format!(
                "invalid transposed geometry: stride {stride}, output length {out_len}"
            )));
        }
        let g = Geom { stride, padding };
        let x = self.data();
        let w = kernel.data();
        let mut out = vec![0.0; batch * c_out * out_len];
        for_each_batch(&mut out, c_out * out_len, |b, ob| {
            for c in 0..c_in {
                let xrow = &x[(b * c_in + c) * len..][..len];
                for o in 0..c_out {
                    let wrow = &w[(c * c_out + o) * k..][..k];
                    let orow = &mut ob[o * out_len..(o + 1) * out_len];
                    for (t, xv) in xrow.iter().enumerate() {
                        for (kk, wv) in wrow.iter().enumerate() {
                            if let Some(j) = g.src(t, kk, out_len) {
                                orow[j] += xv * wv;
                            }
                        }
                    }
                }
            }
        });
        Tensor::record(
            Op::ConvTranspose1d { stride, padding },
            "conv_transpose1d",
            &[self, kernel],
            vec![batch, c_out, out_len],
            out,
        )
    }

    /// Gradient of `conv1d(self, w)` with respect to `w`, given the output
    /// gradient `grad_out`: `dw[o, c, k] = sum_{b,t} grad_out[b,o,t] * x[b,c,t*s+k-p]`.
    pub(crate) fn conv1d_weight_grad(
        &self,
        grad_out: &Tensor,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (batch, c_x, len) = self.dims3("weight-grad signal")?;
        let (gb, c_g, g_len) = grad_out.dims3("weight-grad output gradient")?;
        if gb != batch {
            return Err(Error::Dimension(format!(
                "weight-grad batch mismatch: {batch} vs {gb}"
            )));
        }
        let expect = conv1d_out_len(len, kernel, stride, padding)?;
        if expect != g_len {
            return Err(Error::Dimension(format!(
                "weight-grad output gradient length {g_len}, geometry gives {expect}"
            )));
        }
        let geom = Geom { stride, padding };
        let x = self.data();
        let gd = grad_out.data();
        let size = c_g * c_x * kernel;
        let partial = |b: usize| {
            let mut acc = vec![0.0; size];
            for o in 0..c_g {
                let grow = &gd[(b * c_g + o) * g_len..][..g_len];
                for c in 0..c_x {
                    let xrow = &x[(b * c_x + c) * len..][..len];
                    let arow = &mut acc[(o * c_x + c) * kernel..][..kernel];
                    for (kk, av) in arow.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for (t, gv) in grow.iter().enumerate() {
                            if let Some(i) = geom.src(t, kk, len) {
                                s += gv * xrow[i];
                            }
                        }
                        *av += s;
                    }
                }
            }
            acc
        };
        let out = if deterministic_reductions() {
            let mut out = vec![0.0; size];
            for b in 0..batch {
                for (a, p) in out.iter_mut().zip(partial(b)) {
                    *a += p;
                }
            }
            out
        } else {
            (0..batch)
                .into_par_iter()
                .map(partial)
                .reduce(
                    || vec![0.0; size],
                    |mut a, b| {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                        a
                    },
                )
        };
        Tensor::record(
            Op::ConvWeightGrad { stride, padding },
            "conv1d_weight_grad",
            &[self, grad_out],
            vec![c_g, c_x, kernel],
            out,
        )
    }

    /// Adds a per-channel bias `[C]` to a `[B, C, L]` signal.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (_, c, _) = self.dims3("biased input")?;
        if bias.shape() != [c] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} does not match {c} channels",
                bias.shape()
            )));
        }
        self.add_bcast(&bias.reshape(&[1, c, 1])?)
    }
}

/// `input [B, C_in, L]`, `kernel [C_out, C_in, K]`, `bias [C_out]`.
pub fn conv1d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let y = input.conv1d_raw(kernel, stride, padding)?;
    match bias {
        Some(b) => y.add_channel_bias(b),
        None => Ok(y),
    }
}

/// `input [B, C_in, L]`, `kernel [C_in, C_out, K]`, `bias [C_out]`; output
/// length `(L - 1) * stride - 2 * padding + K`.
pub fn conv_transpose1d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (_, _, len) = input.dims3("conv_transpose1d input")?;
    let (_, _, k) = kernel.dims3("conv_transpose1d kernel")?;
    let out_len = conv_transpose1d_out_len(len, k, stride, padding)?;
    let y = input.conv_transpose1d_raw(kernel, stride, padding, out_len)?;
    match bias {
        Some(b) => y.add_channel_bias(b),
        None => Ok(y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_lengths_of_the_network_layers() {
        assert_eq!(conv1d_out_len(1024, 4, 2, 1).unwrap(), 512);
        assert_eq!(conv1d_out_len(64, 64, 2, 0).unwrap(), 1);
        assert_eq!(conv_transpose1d_out_len(1, 64, 2, 0).unwrap(), 64);
        assert_eq!(conv_transpose1d_out_len(512, 4, 2, 1).unwrap(), 1024);
    }

    #[test]
    fn geometry_errors() {
        assert!(matches!(conv1d_out_len(2, 5, 1, 1), Err(Error::Geometry(_))));
        assert!(matches!(conv1d_out_len(8, 2, 0, 0), Err(Error::Geometry(_))));
        assert!(matches!(
            conv_transpose1d_out_len(1, 2, 2, 1),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn zero_input_yields_bias() {
        let x = Tensor::zeros(&[2, 3, 16]);
        let w = Tensor::new(&[2, 3, 4], (0..24).map(|i| i as f64 * 0.1).collect()).unwrap();
        let b = Tensor::new(&[2], vec![0.5, -1.5]).unwrap();
        let y = conv1d(&x, &w, Some(&b), 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 2, 8]);
        for (i, v) in y.data().iter().enumerate() {
            let ch = (i / 8) % 2;
            assert_eq!(*v, b.data()[ch]);
        }
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::zeros(&[1, 2, 8]);
        let w = Tensor::zeros(&[1, 3, 2]);
        assert!(matches!(conv1d(&x, &w, None, 1, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn hand_computed_convolution() {
        // x = [1, 2, 3], w = [1, -1], stride 1, no padding -> [-1, -1]
        let x = Tensor::new(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::new(&[1, 1, 2], vec![1.0, -1.0]).unwrap();
        assert_eq!(conv1d(&x, &w, None, 1, 0).unwrap().data(), &[-1.0, -1.0]);
        // transposed: y[t + k] += x[t] * w[k]
        let y = conv_transpose1d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 1.0, -3.0]);
    }
}
