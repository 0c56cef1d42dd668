//! Max pooling and global average pooling.
//!
//! Max pooling uses non-overlapping windows (stride equals window size) and
//! floor semantics: a trailing remainder shorter than the window is dropped.
//! An input whose spatial extent is smaller than the window is rejected —
//! plans that would pool away a dimension entirely must fail loudly instead
//! of emitting empty tensors. Ties route the gradient to the first maximal
//! element of the window.

use crate::error::{Error, Result};
use crate::layers::Rank;
use crate::tensor::Tensor;

/// Non-overlapping max pooling over the spatial axes.
#[derive(Debug, Clone)]
pub struct MaxPool {
    rank: Rank,
    /// Window extent per spatial axis (`[s]` or `[sh, sw]`).
    size: Vec<usize>,
    cache: Option<PoolCache>,
}

#[derive(Debug, Clone)]
struct PoolCache {
    in_shape: Vec<usize>,
    /// Flat input index of the window maximum, one per output element.
    argmax: Vec<usize>,
}

impl MaxPool {
    pub fn rank1(size: usize) -> Result<MaxPool> {
        if size == 0 {
            return Err(Error::invalid("max pool window must be positive"));
        }
        Ok(MaxPool {
            rank: Rank::One,
            size: vec![size],
            cache: None,
        })
    }

    pub fn rank2(size: (usize, usize)) -> Result<MaxPool> {
        if size.0 == 0 || size.1 == 0 {
            return Err(Error::invalid("max pool window must be positive"));
        }
        Ok(MaxPool {
            rank: Rank::Two,
            size: vec![size.0, size.1],
            cache: None,
        })
    }

    pub fn size(&self) -> &[usize] {
        &self.size
    }

    /// Output shape for an input shape, or an error when a window does not fit.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let want = match self.rank {
            Rank::One => 3,
            Rank::Two => 4,
        };
        if input.len() != want {
            return Err(Error::shape(format!(
                "max pool rank {} expects {}-axis input, got {:?}",
                self.rank.as_u8(),
                want,
                input
            )));
        }
        let mut out = vec![input[0]];
        for (axis, &s) in self.size.iter().enumerate() {
            let extent = input[1 + axis];
            if extent < s {
                return Err(Error::layer(format!(
                    "max pool window {} exceeds spatial extent {} on axis {}",
                    s, extent, axis
                )));
            }
            out.push(extent / s);
        }
        out.push(input[input.len() - 1]);
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let mut out = Tensor::zeros(&out_shape);
        let mut argmax = vec![0usize; out.len()];
        match self.rank {
            Rank::One => self.forward1(input, &mut out, &mut argmax),
            Rank::Two => self.forward2(input, &mut out, &mut argmax),
        }
        self.cache = Some(PoolCache {
            in_shape: input.shape().to_vec(),
            argmax,
        });
        Ok(out)
    }

    fn forward1(&self, input: &Tensor, out: &mut Tensor, argmax: &mut [usize]) {
        let (b, l, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let s = self.size[0];
        let lout = l / s;
        let x = input.data();
        let od = out.data_mut();
        for bi in 0..b {
            for j in 0..lout {
                for ci in 0..c {
                    let mut best_idx = (bi * l + j * s) * c + ci;
                    let mut best = x[best_idx];
                    for t in 1..s {
                        let idx = (bi * l + j * s + t) * c + ci;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                    let o = (bi * lout + j) * c + ci;
                    od[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }

    fn forward2(&self, input: &Tensor, out: &mut Tensor, argmax: &mut [usize]) {
        let sh = input.shape();
        let (b, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
        let (ph, pw) = (self.size[0], self.size[1]);
        let (hout, wout) = (h / ph, w / pw);
        let x = input.data();
        let od = out.data_mut();
        for bi in 0..b {
            for oy in 0..hout {
                for ox in 0..wout {
                    for ci in 0..c {
                        let mut best_idx = ((bi * h + oy * ph) * w + ox * pw) * c + ci;
                        let mut best = x[best_idx];
                        for ty in 0..ph {
                            for tx in 0..pw {
                                let idx =
                                    ((bi * h + oy * ph + ty) * w + ox * pw + tx) * c + ci;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = ((bi * hout + oy) * wout + ox) * c + ci;
                        od[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::layer("max pool backward without a cached forward"))?;
        if upstream.len() != cache.argmax.len() {
            return Err(Error::shape(format!(
                "max pool upstream gradient has {} elements, expected {}",
                upstream.len(),
                cache.argmax.len()
            )));
        }
        let mut dx = Tensor::zeros(&cache.in_shape);
        let xd = dx.data_mut();
        for (&g, &idx) in upstream.data().iter().zip(&cache.argmax) {
            xd[idx] += g;
        }
        Ok(dx)
    }
}

/// Mean over every spatial axis, collapsing `[batch, ..., channels]` to
/// `[batch, channels]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    cache: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> GlobalAvgPool {
        GlobalAvgPool { cache: None }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let shape = input.shape();
        if shape.len() < 3 {
            return Err(Error::shape(format!(
                "global average pool expects spatial axes, got {:?}",
                shape
            )));
        }
        let b = shape[0];
        let c = shape[shape.len() - 1];
        let spatial: usize = shape[1..shape.len() - 1].iter().product();
        if b == 0 || c == 0 || spatial == 0 {
            return Err(Error::shape(format!(
                "global average pool input has a zero axis: {:?}",
                shape
            )));
        }
        let mut out = Tensor::zeros(&[b, c]);
        let x = input.data();
        let od = out.data_mut();
        for bi in 0..b {
            let rows = &x[bi * spatial * c..][..spatial * c];
            let orow = &mut od[bi * c..][..c];
            for row in rows.chunks_exact(c) {
                for (o, &v) in orow.iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in orow {
                *o /= spatial as f64;
            }
        }
        self.cache = Some(shape.to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let in_shape = self
            .cache
            .take()
            .ok_or_else(|| Error::layer("global average pool backward without a cached forward"))?;
        let b = in_shape[0];
        let c = in_shape[in_shape.len() - 1];
        if upstream.shape() != [b, c] {
            return Err(Error::shape(format!(
                "global average pool upstream gradient has shape {:?}, expected {:?}",
                upstream.shape(),
                [b, c]
            )));
        }
        let spatial: usize = in_shape[1..in_shape.len() - 1].iter().product();
        let mut dx = Tensor::zeros(&in_shape);
        let g = upstream.data();
        let xd = dx.data_mut();
        for bi in 0..b {
            let grow = &g[bi * c..][..c];
            for row in xd[bi * spatial * c..][..spatial * c].chunks_exact_mut(c) {
                for (d, &gv) in row.iter_mut().zip(grow) {
                    *d = gv / spatial as f64;
                }
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
    fn pools_non_overlapping_windows_and_drops_remainder() {
        let mut pool = MaxPool::rank1(4).unwrap();
        let x = Tensor::from_vec(
            &[1, 10, 1],
            vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 8.0, 7.0],
        )
        .unwrap();
        let y = pool.forward(&x).unwrap();
        // Floor(10 / 4) = 2 windows; the trailing {8, 7} is dropped.
        assert_eq!(y.shape(), &[1, 2, 1]);
        assert_eq!(y.data(), &[4.0, 9.0]);
    }

    #[test]
    fn window_larger_than_extent_is_rejected() {
        let mut pool = MaxPool::rank1(4).unwrap();
        let x = Tensor::zeros(&[1, 3, 2]);
        let err = pool.forward(&x).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");
    }

    #[test]
    fn ties_route_to_the_first_maximal_element() {
        let mut pool = MaxPool::rank1(2).unwrap();
        let x = Tensor::from_vec(&[1, 2, 1], vec![5.0, 5.0]).unwrap();
        pool.forward(&x).unwrap();
        let g = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let dx = pool.backward(&g).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0]);
    }

    #[test]
    fn rank2_pools_both_axes() {
        let mut pool = MaxPool::rank2((2, 2)).unwrap();
        let x = Tensor::from_vec(
            &[1, 2, 4, 1],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        )
        .unwrap();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 1]);
        assert_eq!(y.data(), &[6.0, 8.0]);
    }

    #[test]
    fn backward_conserves_gradient_mass() {
        let mut rng = Rng::new(11);
        let x = rng.uniform_tensor(&[2, 9, 3], -1.0, 1.0);
        let mut pool = MaxPool::rank1(4).unwrap();
        pool.forward(&x).unwrap();
        let g = rng.uniform_tensor(&[2, 2, 3], -1.0, 1.0);
        let dx = pool.backward(&g).unwrap();
        let g_sum: f64 = g.data().iter().sum();
        let dx_sum: f64 = dx.data().iter().sum();
        assert!((g_sum - dx_sum).abs() < 1e-12);
    }

    #[test]
    fn max_pool_gradient_matches_finite_differences() {
        for seed in 0..5u64 {
            let mut rng = Rng::new(500 + seed);
            let x = rng.uniform_tensor(&[2, 8, 2], -1.0, 1.0);
            let gsel = rng.uniform_tensor(&[2, 2, 2], -1.0, 1.0);
            let mut pool = MaxPool::rank1(4).unwrap();
            pool.forward(&x).unwrap();
            let dx = pool.backward(&gsel).unwrap();
            let num = finite_diff_grad(
                |p| {
                    let mut pl = MaxPool::rank1(4).unwrap();
                    let y = pl.forward(p).unwrap();
                    y.data().iter().zip(gsel.data()).map(|(a, b)| a * b).sum()
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(max_relative_error(&dx, &num) < 1e-7);
        }
    }

    #[test]
    fn global_average_is_exact_on_a_hand_example() {
        let mut gap = GlobalAvgPool::new();
        let x = Tensor::from_vec(&[1, 3, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        let y = gap.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[2.0, 20.0]);
    }

    #[test]
    fn global_average_handles_rank2_inputs() {
        let mut gap = GlobalAvgPool::new();
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = gap.forward(&x).unwrap();
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn global_average_gradient_matches_finite_differences() {
        for seed in 0..3u64 {
            let mut rng = Rng::new(600 + seed);
            let x = rng.uniform_tensor(&[2, 5, 3], -1.0, 1.0);
            let gsel = rng.uniform_tensor(&[2, 3], -1.0, 1.0);
            let mut gap = GlobalAvgPool::new();
            gap.forward(&x).unwrap();
            let dx = gap.backward(&gsel).unwrap();
            let num = finite_diff_grad(
                |p| {
                    let mut g = GlobalAvgPool::new();
                    let y = g.forward(p).unwrap();
                    y.data().iter().zip(gsel.data()).map(|(a, b)| a * b).sum()
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(max_relative_error(&dx, &num) < 1e-9);
        }
    }
}
