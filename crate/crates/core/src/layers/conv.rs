//! Strided cross-correlation with "same" padding.
//!
//! Padding follows the ceil-division convention: the output extent is
//! `ceil(in / stride)` and the total padding `max((out - 1) * stride +
//! kernel - in, 0)` is split with the smaller half at the leading edge.
//! Kernels are applied without flipping. Weight layout is `[k, c_in,
//! c_out]` for rank 1 and `[kh, kw, c_in, c_out]` for rank 2, so the
//! innermost loops run contiguously over output channels.

use crate::error::{Error, Result};
use crate::layers::{ParamKind, Rank};
use crate::rng::{glorot_uniform, Rng};
use crate::tensor::Tensor;

/// Output extent and leading pad for one spatial axis under "same" padding.
pub fn same_pad(extent: usize, kernel: usize, stride: usize) -> (usize, usize) {
    debug_assert!(stride > 0 && kernel > 0);
    let out = extent.div_ceil(stride);
    let span = (out.max(1) - 1) * stride + kernel;
    let total = span.saturating_sub(extent);
    (out, total / 2)
}

/// Static description of a convolution: kernel extents, strides, channel fan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub rank: Rank,
    /// Kernel extent per spatial axis (`[k]` or `[kh, kw]`).
    pub kernel: Vec<usize>,
    /// Stride per spatial axis, same arity as `kernel`.
    pub stride: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn rank1(kernel: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            rank: Rank::One,
            kernel: vec![kernel],
            stride: vec![stride],
            in_channels,
            out_channels,
        }
    }

    pub fn rank2(
        kernel: (usize, usize),
        stride: (usize, usize),
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        ConvSpec {
            rank: Rank::Two,
            kernel: vec![kernel.0, kernel.1],
            stride: vec![stride.0, stride.1],
            in_channels,
            out_channels,
        }
    }

    fn validate(&self) -> Result<()> {
        let arity = match self.rank {
            Rank::One => 1,
            Rank::Two => 2,
        };
        if self.kernel.len() != arity || self.stride.len() != arity {
            return Err(Error::invalid(format!(
                "conv rank {} needs {} kernel/stride extents, got {}/{}",
                arity,
                arity,
                self.kernel.len(),
                self.stride.len()
            )));
        }
        if self.kernel.iter().any(|&k| k == 0) || self.stride.iter().any(|&s| s == 0) {
            return Err(Error::invalid("conv kernel and stride extents must be positive"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("conv channel counts must be positive"));
        }
        Ok(())
    }

    fn weight_shape(&self) -> Vec<usize> {
        let mut s = self.kernel.clone();
        s.push(self.in_channels);
        s.push(self.out_channels);
        s
    }

    /// (trainable, non_trainable): kernel taps plus one bias per filter.
    pub fn param_count(&self) -> (usize, usize) {
        let taps: usize = self.kernel.iter().product();
        ((taps * self.in_channels + 1) * self.out_channels, 0)
    }
}

/// A convolution layer holding its weights, bias, and gradient buffers.
#[derive(Debug, Clone)]
pub struct Conv {
    spec: ConvSpec,
    pub(crate) weight: Tensor,
    pub(crate) bias: Tensor,
    weight_grad: Tensor,
    bias_grad: Tensor,
    cache: Option<Tensor>,
}

impl Conv {
    /// Builds a layer with Glorot-uniform kernels and zero bias.
    pub fn new(spec: ConvSpec, rng: &mut Rng) -> Result<Conv> {
        spec.validate()?;
        let taps: usize = spec.kernel.iter().product();
        let fan_in = taps * spec.in_channels;
        let fan_out = taps * spec.out_channels;
        let weight = glorot_uniform(&spec.weight_shape(), fan_in, fan_out, rng)?;
        let bias = Tensor::zeros(&[spec.out_channels]);
        let weight_grad = Tensor::zeros(&spec.weight_shape());
        let bias_grad = Tensor::zeros(&[spec.out_channels]);
        Ok(Conv {
            spec,
            weight,
            bias,
            weight_grad,
            bias_grad,
            cache: None,
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    pub fn weight_grad(&self) -> &Tensor {
        &self.weight_grad
    }

    pub fn bias_grad(&self) -> &Tensor {
        &self.bias_grad
    }

    /// Output shape for a given input shape, without running the layer.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.check_input_shape(input)?;
        let mut out = vec![input[0]];
        for (axis, (&k, &s)) in self.spec.kernel.iter().zip(&self.spec.stride).enumerate() {
            out.push(same_pad(input[1 + axis], k, s).0);
        }
        out.push(self.spec.out_channels);
        Ok(out)
    }

    fn check_input_shape(&self, shape: &[usize]) -> Result<()> {
        let want = match self.spec.rank {
            Rank::One => 3,
            Rank::Two => 4,
        };
        if shape.len() != want {
            return Err(Error::shape(format!(
                "conv rank {} expects {}-axis input, got {:?}",
                self.spec.rank.as_u8(),
                want,
                shape
            )));
        }
        let cin = shape[shape.len() - 1];
        if cin != self.spec.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.spec.in_channels, cin
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("conv input has a zero axis: {:?}", shape)));
        }
        Ok(())
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.check_input_shape(input.shape())?;
        let out = match self.spec.rank {
            Rank::One => self.forward1(input),
            Rank::Two => self.forward2(input),
        };
        self.cache = Some(input.clone());
        Ok(out)
    }

    /// Gradients of loss wrt weights/bias are stored; the input gradient is returned.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::layer("conv backward without a cached forward"))?;
        let expect = self.output_shape(input.shape())?;
        if upstream.shape() != expect.as_slice() {
            return Err(Error::shape(format!(
                "conv upstream gradient has shape {:?}, expected {:?}",
                upstream.shape(),
                expect
            )));
        }
        self.weight_grad.fill(0.0);
        self.bias_grad.fill(0.0);
        let out = match self.spec.rank {
            Rank::One => self.backward1(&input, upstream),
            Rank::Two => self.backward2(&input, upstream),
        };
        Ok(out)
    }

    fn forward1(&self, input: &Tensor) -> Tensor {
        let (b, l, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let cout = self.spec.out_channels;
        let (k, s) = (self.spec.kernel[0], self.spec.stride[0]);
        let (lout, pad) = same_pad(l, k, s);
        let mut out = Tensor::zeros(&[b, lout, cout]);
        let x = input.data();
        let w = self.weight.data();
        let bias = self.bias.data();
        let od = out.data_mut();
        for bi in 0..b {
            let xb = &x[bi * l * cin..][..l * cin];
            for i in 0..lout {
                let orow = &mut od[(bi * lout + i) * cout..][..cout];
                orow.copy_from_slice(bias);
                let start = (i * s) as isize - pad as isize;
                for t in 0..k {
                    let p = start + t as isize;
                    if p < 0 || p >= l as isize {
                        continue;
                    }
                    let xrow = &xb[p as usize * cin..][..cin];
                    let wt = &w[t * cin * cout..][..cin * cout];
                    for (ci, &xv) in xrow.iter().enumerate() {
                        let wrow = &wt[ci * cout..][..cout];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
        out
    }

    fn backward1(&mut self, input: &Tensor, upstream: &Tensor) -> Tensor {
        let (b, l, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let cout = self.spec.out_channels;
        let (k, s) = (self.spec.kernel[0], self.spec.stride[0]);
        let (lout, pad) = same_pad(l, k, s);
        let mut dx = Tensor::zeros(input.shape());
        let x = input.data();
        let g = upstream.data();
        let w = self.weight.data();
        let wg = self.weight_grad.data_mut();
        let bg = self.bias_grad.data_mut();
        let xd = dx.data_mut();
        for bi in 0..b {
            let xb = &x[bi * l * cin..][..l * cin];
            let xgb = &mut xd[bi * l * cin..][..l * cin];
            for i in 0..lout {
                let grow = &g[(bi * lout + i) * cout..][..cout];
                for (bgv, &gv) in bg.iter_mut().zip(grow) {
                    *bgv += gv;
                }
                let start = (i * s) as isize - pad as isize;
                for t in 0..k {
                    let p = start + t as isize;
                    if p < 0 || p >= l as isize {
                        continue;
                    }
                    let xrow = &xb[p as usize * cin..][..cin];
                    let xgrow = &mut xgb[p as usize * cin..][..cin];
                    let wt = &w[t * cin * cout..][..cin * cout];
                    let wgt = &mut wg[t * cin * cout..][..cin * cout];
                    for ci in 0..cin {
                        let xv = xrow[ci];
                        let wrow = &wt[ci * cout..][..cout];
                        let wgrow = &mut wgt[ci * cout..][..cout];
                        let mut acc = 0.0;
                        for co in 0..cout {
                            let gv = grow[co];
                            wgrow[co] += xv * gv;
                            acc += wrow[co] * gv;
                        }
                        xgrow[ci] += acc;
                    }
                }
            }
        }
        dx
    }

    fn forward2(&self, input: &Tensor) -> Tensor {
        let sh = input.shape();
        let (b, h, w_in, cin) = (sh[0], sh[1], sh[2], sh[3]);
        let cout = self.spec.out_channels;
        let (kh, kw) = (self.spec.kernel[0], self.spec.kernel[1]);
        let (sh_, sw) = (self.spec.stride[0], self.spec.stride[1]);
        let (hout, pad_h) = same_pad(h, kh, sh_);
        let (wout, pad_w) = same_pad(w_in, kw, sw);
        let mut out = Tensor::zeros(&[b, hout, wout, cout]);
        let x = input.data();
        let wt = self.weight.data();
        let bias = self.bias.data();
        let od = out.data_mut();
        for bi in 0..b {
            let xb = &x[bi * h * w_in * cin..][..h * w_in * cin];
            for oy in 0..hout {
                let y0 = (oy * sh_) as isize - pad_h as isize;
                for ox in 0..wout {
                    let x0 = (ox * sw) as isize - pad_w as isize;
                    let orow = &mut od[((bi * hout + oy) * wout + ox) * cout..][..cout];
                    orow.copy_from_slice(bias);
                    for ty in 0..kh {
                        let py = y0 + ty as isize;
                        if py < 0 || py >= h as isize {
                            continue;
                        }
                        for tx in 0..kw {
                            let px = x0 + tx as isize;
                            if px < 0 || px >= w_in as isize {
                                continue;
                            }
                            let xrow = &xb[(py as usize * w_in + px as usize) * cin..][..cin];
                            let wk = &wt[(ty * kw + tx) * cin * cout..][..cin * cout];
                            for (ci, &xv) in xrow.iter().enumerate() {
                                let wrow = &wk[ci * cout..][..cout];
                                for (o, &wv) in orow.iter_mut().zip(wrow) {
                                    *o += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward2(&mut self, input: &Tensor, upstream: &Tensor) -> Tensor {
        let sh = input.shape();
        let (b, h, w_in, cin) = (sh[0], sh[1], sh[2], sh[3]);
        let cout = self.spec.out_channels;
        let (kh, kw) = (self.spec.kernel[0], self.spec.kernel[1]);
        let (sh_, sw) = (self.spec.stride[0], self.spec.stride[1]);
        let (hout, pad_h) = same_pad(h, kh, sh_);
        let (wout, pad_w) = same_pad(w_in, kw, sw);
        let mut dx = Tensor::zeros(input.shape());
        let x = input.data();
        let g = upstream.data();
        let wt = self.weight.data();
        let wg = self.weight_grad.data_mut();
        let bg = self.bias_grad.data_mut();
        let xd = dx.data_mut();
        for bi in 0..b {
            let xb = &x[bi * h * w_in * cin..][..h * w_in * cin];
            let xgb = &mut xd[bi * h * w_in * cin..][..h * w_in * cin];
            for oy in 0..hout {
                let y0 = (oy * sh_) as isize - pad_h as isize;
                for ox in 0..wout {
                    let x0 = (ox * sw) as isize - pad_w as isize;
                    let grow = &g[((bi * hout + oy) * wout + ox) * cout..][..cout];
                    for (bgv, &gv) in bg.iter_mut().zip(grow) {
                        *bgv += gv;
                    }
                    for ty in 0..kh {
                        let py = y0 + ty as isize;
                        if py < 0 || py >= h as isize {
                            continue;
                        }
                        for tx in 0..kw {
                            let px = x0 + tx as isize;
                            if px < 0 || px >= w_in as isize {
                                continue;
                            }
                            let base = (py as usize * w_in + px as usize) * cin;
                            let xrow = &xb[base..][..cin];
                            let xgrow = &mut xgb[base..][..cin];
                            let wk = &wt[(ty * kw + tx) * cin * cout..][..cin * cout];
                            let wgk = &mut wg[(ty * kw + tx) * cin * cout..][..cin * cout];
                            for ci in 0..cin {
                                let xv = xrow[ci];
                                let wrow = &wk[ci * cout..][..cout];
                                let wgrow = &mut wgk[ci * cout..][..cout];
                                let mut acc = 0.0;
                                for co in 0..cout {
                                    let gv = grow[co];
                                    wgrow[co] += xv * gv;
                                    acc += wrow[co] * gv;
                                }
                                xgrow[ci] += acc;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamKind, &mut Tensor, &mut Tensor)) {
        f(ParamKind::Kernel, &mut self.weight, &mut self.weight_grad);
        f(ParamKind::Bias, &mut self.bias, &mut self.bias_grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv1(kernel: usize, stride: usize, cin: usize, cout: usize) -> Conv {
        let mut rng = Rng::new(7);
        Conv::new(ConvSpec::rank1(kernel, stride, cin, cout), &mut rng).unwrap()
    }

    #[test]
    fn same_pad_matches_ceil_convention() {
        // Unit stride keeps the extent; the pad splits with the short half leading.
        assert_eq!(same_pad(4, 3, 1), (4, 1));
        assert_eq!(same_pad(5, 2, 1), (5, 0));
        // Strided: 32000 / 4 with k = 80 pads 38 on the left.
        assert_eq!(same_pad(32_000, 80, 4), (8_000, 38));
        assert_eq!(same_pad(1, 3, 1), (1, 1));
    }

    #[test]
    fn same_pad_output_never_undershoots() {
        for extent in 1..100usize {
            for &stride in &[1usize, 2, 4] {
                for &kernel in &[1usize, 3, 7, 80] {
                    let (out, pad) = same_pad(extent, kernel, stride);
                    assert_eq!(out, extent.div_ceil(stride));
                    // The last window must not begin beyond the padded signal.
                    let last_start = (out - 1) * stride;
                    assert!(last_start + kernel <= extent + pad + (pad + 1));
                }
            }
        }
    }

    #[test]
    fn hand_convolution_with_padding() {
        let mut conv = conv1(3, 1, 1, 1);
        conv.weight.data_mut().copy_from_slice(&[1.0, 0.0, -1.0]);
        conv.bias.data_mut()[0] = 0.0;
        let x = Tensor::from_vec(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(&x).unwrap();
        // Window [pad, x1, x2] .. [x3, x4, pad] with taps (1, 0, -1).
        assert_eq!(y.data(), &[-2.0, -2.0, -2.0, 3.0]);
    }

    #[test]
    fn bias_shifts_every_output() {
        let mut conv = conv1(3, 1, 1, 1);
        conv.weight.data_mut().copy_from_slice(&[1.0, 0.0, -1.0]);
        conv.bias.data_mut()[0] = 0.5;
        let x = Tensor::from_vec(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), &[-1.5, -1.5, -1.5, 3.5]);
    }

    #[test]
    fn stride_two_picks_alternate_windows() {
        let mut conv = conv1(2, 2, 1, 1);
        conv.weight.data_mut().copy_from_slice(&[1.0, 1.0]);
        let x = Tensor::from_vec(&[1, 6, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 1]);
        assert_eq!(y.data(), &[3.0, 7.0, 11.0]);
    }

    #[test]
    fn rank2_identity_kernel_passes_input_through() {
        let mut rng = Rng::new(3);
        let mut conv = Conv::new(ConvSpec::rank2((1, 1), (1, 1), 1, 1), &mut rng).unwrap();
        conv.weight.data_mut()[0] = 1.0;
        conv.bias.data_mut()[0] = 0.0;
        let x = Tensor::from_vec(&[1, 2, 3, 1], (1..=6).map(f64::from).collect()).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn rejects_channel_mismatch_and_zero_axes() {
        let mut conv = conv1(3, 1, 2, 1);
        let bad = Tensor::zeros(&[1, 4, 3]);
        assert!(conv.forward(&bad).is_err());
        let empty = Tensor::zeros(&[0, 4, 2]);
        assert!(conv.forward(&empty).is_err());
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut conv = conv1(3, 1, 1, 1);
        let g = Tensor::zeros(&[1, 4, 1]);
        assert!(conv.backward(&g).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_rank1() {
        use crate::gradcheck::{finite_diff_grad, max_relative_error};
        for seed in 0..5u64 {
            let mut rng = Rng::new(100 + seed);
            let spec = ConvSpec::rank1(5, 2, 3, 4);
            let conv = Conv::new(spec.clone(), &mut rng).unwrap();
            let x = rng.uniform_tensor(&[2, 11, 3], -1.0, 1.0);
            let gsel = rng.uniform_tensor(&[2, 6, 4], -1.0, 1.0);

            // Scalar objective: <forward(x), gsel>.
            let loss = |c: &mut Conv, xin: &Tensor| -> f64 {
                let y = c.forward(xin).unwrap();
                y.data().iter().zip(gsel.data()).map(|(a, b)| a * b).sum()
            };

            let mut live = conv.clone();
            live.forward(&x).unwrap();
            let dx = live.backward(&gsel).unwrap();

            let num_dx = finite_diff_grad(|p| loss(&mut conv.clone(), p), &x, 1e-5).unwrap();
            assert!(max_relative_error(&dx, &num_dx) < 1e-7);

            // Weight gradient against a perturbed-weight oracle.
            let num_dw = finite_diff_grad(
                |wp| {
                    let mut c = conv.clone();
                    c.weight.data_mut().copy_from_slice(wp.data());
                    loss(&mut c, &x)
                },
                conv.weight(),
                1e-5,
            )
            .unwrap();
            assert!(max_relative_error(live.weight_grad(), &num_dw) < 1e-7);

            let num_db = finite_diff_grad(
                |bp| {
                    let mut c = conv.clone();
                    c.bias.data_mut().copy_from_slice(bp.data());
                    loss(&mut c, &x)
                },
                &conv.bias.clone(),
                1e-5,
            )
            .unwrap();
            assert!(max_relative_error(live.bias_grad(), &num_db) < 1e-7);
        }
    }

    #[test]
    fn backward_matches_finite_differences_rank2() {
        use crate::gradcheck::{finite_diff_grad, max_relative_error};
        for seed in 0..5u64 {
            let mut rng = Rng::new(200 + seed);
            let spec = ConvSpec::rank2((3, 3), (2, 1), 2, 3);
            let conv = Conv::new(spec, &mut rng).unwrap();
            let x = rng.uniform_tensor(&[2, 5, 4, 2], -1.0, 1.0);
            let gsel = rng.uniform_tensor(&[2, 3, 4, 3], -1.0, 1.0);

            let loss = |c: &mut Conv, xin: &Tensor| -> f64 {
                let y = c.forward(xin).unwrap();
                y.data().iter().zip(gsel.data()).map(|(a, b)| a * b).sum()
            };

            let mut live = conv.clone();
            live.forward(&x).unwrap();
            let dx = live.backward(&gsel).unwrap();

            let num_dx = finite_diff_grad(|p| loss(&mut conv.clone(), p), &x, 1e-5).unwrap();
            assert!(max_relative_error(&dx, &num_dx) < 1e-7);

            let num_dw = finite_diff_grad(
                |wp| {
                    let mut c = conv.clone();
                    c.weight.data_mut().copy_from_slice(wp.data());
                    loss(&mut c, &x)
                },
                conv.weight(),
                1e-5,
            )
            .unwrap();
            assert!(max_relative_error(live.weight_grad(), &num_dw) < 1e-7);
        }
    }

    #[test]
    fn param_count_includes_bias() {
        let spec = ConvSpec::rank1(80, 4, 1, 48);
        assert_eq!(spec.param_count(), (48 * 81, 0));
        let spec2 = ConvSpec::rank2((3, 3), (1, 1), 48, 48);
        assert_eq!(spec2.param_count(), ((9 * 48 + 1) * 48, 0));
    }
}
