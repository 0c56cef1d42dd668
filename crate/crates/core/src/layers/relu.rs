//! Rectified linear activation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise `max(0, x)`. The input is cached for the backward mask.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    cache: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Relu {
        Relu { cache: None }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut out = input.clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.cache = Some(input.clone());
        Ok(out)
    }

    /// Passes the gradient where the input was strictly positive; the kink
    /// at zero takes the zero branch.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::layer("relu backward without a cached forward"))?;
        if upstream.shape() != input.shape() {
            return Err(Error::shape(format!(
                "relu upstream gradient has shape {:?}, expected {:?}",
                upstream.shape(),
                input.shape()
            )));
        }
        let mut dx = upstream.clone();
        for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
            if x <= 0.0 {
                *d = 0.0;
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, max_relative_error};
    use crate::rng::Rng;

    #[test]
    fn clamps_negatives_and_keeps_positives() {
        let mut relu = Relu::new();
        let x = Tensor::from_vec(&[1, 5], vec![-2.0, -0.0, 0.0, 0.5, 3.0]).unwrap();
        let y = relu.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 0.5, 3.0]);
    }

    #[test]
    fn gradient_masks_non_positive_inputs() {
        let mut relu = Relu::new();
        let x = Tensor::from_vec(&[1, 4], vec![-1.0, 0.0, 2.0, 5.0]).unwrap();
        relu.forward(&x).unwrap();
        let g = Tensor::filled(&[1, 4], 1.0);
        let dx = relu.backward(&g).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_matches_finite_differences_away_from_kink() {
        for seed in 0..5u64 {
            let mut rng = Rng::new(400 + seed);
            // Keep samples away from 0 so the finite-difference probe never crosses it.
            let mut x = rng.uniform_tensor(&[2, 9, 3], 0.5, 2.0);
            for (i, v) in x.data_mut().iter_mut().enumerate() {
                if i % 2 == 0 {
                    *v = -*v;
                }
            }
            let gsel = rng.uniform_tensor(&[2, 9, 3], -1.0, 1.0);
            let mut relu = Relu::new();
            relu.forward(&x).unwrap();
            let dx = relu.backward(&gsel).unwrap();
            let num = finite_diff_grad(
                |p| {
                    let mut r = Relu::new();
                    let y = r.forward(p).unwrap();
                    y.data().iter().zip(gsel.data()).map(|(a, b)| a * b).sum()
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(max_relative_error(&dx, &num) < 1e-7);
        }
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut relu = Relu::new();
        assert!(relu.backward(&Tensor::zeros(&[1, 2])).is_err());
    }
}
