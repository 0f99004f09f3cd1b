//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamWHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamWHyper {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper {
            lr: 1e-3,
            beta1: 0.0,
            beta2: 0.9,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub hyper: AdamWHyper,
}

impl AdamWState {
    pub fn new(params: &[Tensor], hyper: AdamWHyper) -> Self {
        AdamWState {
            step_count: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            hyper,
        }
    }

    /// One update of every parameter in place.
    ///
    /// The parameter is first shrunk by `lr * weight_decay`, then moved by the
    /// bias-corrected Adam direction.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        let h = self.hyper;
        if !(h.lr >= 0.0) {
            return Err(Error::Parameter(format!("learning rate must be non-negative, got {}", h.lr)));
        }
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Dimension(format!(
                "AdamW got {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first_moment[i].len() != p.len() {
                return Err(Error::Dimension(format!(
                    "AdamW parameter {i}: shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let mut values = p.to_vec();
            for (j, (w, gj)) in values.iter_mut().zip(g.data()).enumerate() {
                m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
                v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w *= 1.0 - h.lr * h.weight_decay;
                *w -= h.lr * m_hat / (v_hat.sqrt() + h.epsilon);
            }
            *p = Tensor::new(p.shape(), values)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_without_decay_is_fixed_point() {
        let mut params = vec![Tensor::new(&[2], vec![0.3, -1.2]).unwrap()];
        let hyper = AdamWHyper {
            weight_decay: 0.0,
            ..AdamWHyper::with_lr(0.1)
        };
        let mut st = AdamWState::new(&params, hyper);
        st.step(&mut params, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(params[0].data(), &[0.3, -1.2]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn decoupled_decay_with_zero_grad() {
        let (lr, wd) = (0.05, 0.2);
        let mut params = vec![Tensor::new(&[1], vec![2.0]).unwrap()];
        let mut st = AdamWState::new(
            &params,
            AdamWHyper {
                weight_decay: wd,
                ..AdamWHyper::with_lr(lr)
            },
        );
        st.step(&mut params, &[Tensor::zeros(&[1])]).unwrap();
        assert!((params[0].data()[0] - 2.0 * (1.0 - lr * wd)).abs() < 1e-15);
    }

    #[test]
    fn single_step_closed_form() {
        let hyper = AdamWHyper {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.1,
        };
        let (p0, g) = (0.7_f64, -0.35_f64);
        let mut params = vec![Tensor::new(&[1], vec![p0]).unwrap()];
        let mut st = AdamWState::new(&params, hyper);
        st.step(&mut params, &[Tensor::new(&[1], vec![g]).unwrap()]).unwrap();
        // After one step the bias-corrected moments are g and g^2.
        let m_hat = (1.0 - 0.9) * g / (1.0 - 0.9);
        let v_hat = (1.0 - 0.999) * g * g / (1.0 - 0.999);
        let expect = p0 * (1.0 - 0.01 * 0.1) - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((params[0].data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut st = AdamWState::new(&params, AdamWHyper::default());
        assert!(matches!(
            st.step(&mut params, &[Tensor::zeros(&[3])]),
            Err(Error::Dimension(_))
        ));
    }
}
