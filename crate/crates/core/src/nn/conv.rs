//! Convolutions as patch gathering plus a single matrix product.
//!
//! candle's CPU convolution backward runs through transposed convolutions
//! and whole-image kernels, which dominates GAN training time at desk
//! scale. Here both directions are `Patches` (gather) and `Scatter` (its
//! adjoint) around one GEMM, so every gradient is another GEMM.

use std::ops::AddAssign;

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

use crate::error::{Error, Result};

/// A sliding window over a `channels x height x width` plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Window {
    channels: usize,
    height: usize,
    width: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
}

impl Window {
    fn out_dims(&self) -> Result<(usize, usize)> {
        let span = |n: usize, k: usize| {
            let padded = n + 2 * self.padding;
            (padded >= k).then(|| (padded - k) / self.stride + 1)
        };
        match (span(self.height, self.kernel_h), span(self.width, self.kernel_w)) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::shape(
                format!("plane of at least {}x{} after padding", self.kernel_h, self.kernel_w),
                format!("{}x{}", self.height, self.width),
            )),
        }
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    /// Calls `f(patch_row, column, pixel)` for every in-bounds tap. Rows
    /// are output positions, columns run over `(channel, ky, kx)`.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) -> Result<()> {
        let (oh, ow) = self.out_dims()?;
        let (kh, kw, plane) = (self.kernel_h, self.kernel_w, self.height * self.width);
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for ky in 0..kh {
                    let Some(iy) = (oy * self.stride + ky).checked_sub(self.padding).filter(|&y| y < self.height) else {
                        continue;
                    };
                    for kx in 0..kw {
                        let Some(ix) = (ox * self.stride + kx).checked_sub(self.padding).filter(|&x| x < self.width) else {
                            continue;
                        };
                        for c in 0..self.channels {
                            f(row, (c * kh + ky) * kw + kx, c * plane + iy * self.width + ix);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => Err(candle_core::Error::RequiresContiguous { op: "patches" }),
    }
}

fn gather<T: WithDType>(w: &Window, batch: usize, src: &[T]) -> Result<Vec<T>> {
    let (oh, ow) = w.out_dims()?;
    let (rows, cols, plane) = (oh * ow, w.patch_len(), w.channels * w.height * w.width);
    let mut out = vec![T::zero(); batch * rows * cols];
    for b in 0..batch {
        let (s, o) = (&src[b * plane..(b + 1) * plane], &mut out[b * rows * cols..(b + 1) * rows * cols]);
        w.for_each_tap(|row, col, pix| o[row * cols + col] = s[pix])?;
    }
    Ok(out)
}

fn scatter<T: WithDType + AddAssign>(w: &Window, batch: usize, src: &[T]) -> Result<Vec<T>> {
    let (oh, ow) = w.out_dims()?;
    let (rows, cols, plane) = (oh * ow, w.patch_len(), w.channels * w.height * w.width);
    let mut out = vec![T::zero(); batch * plane];
    for b in 0..batch {
        let (s, o) = (&src[b * rows * cols..(b + 1) * rows * cols], &mut out[b * plane..(b + 1) * plane]);
        w.for_each_tap(|row, col, pix| o[pix] += s[row * cols + col])?;
    }
    Ok(out)
}

fn to_candle(e: Error) -> candle_core::Error {
    candle_core::Error::Msg(e.to_string())
}

/// `(B, C, H, W)` to `(B, OH*OW, C*kh*kw)`.
struct Patches(Window);

/// `(B, OH*OW, C*kh*kw)` to `(B, C, H, W)`, summing overlapping taps.
struct Scatter(Window);

impl CustomOp1 for Patches {
    fn name(&self) -> &'static str {
        "patches"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let w = &self.0;
        let batch = layout.dims()[0];
        let (oh, ow) = w.out_dims().map_err(to_candle)?;
        let shape = Shape::from((batch, oh * ow, w.patch_len()));
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(gather(w, batch, contiguous(d, layout)?).map_err(to_candle)?),
            CpuStorage::F64(d) => CpuStorage::F64(gather(w, batch, contiguous(d, layout)?).map_err(to_candle)?),
            _ => return Err(candle_core::Error::Msg("patches supports f32 and f64".into())),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Scatter(self.0))?))
    }
}

impl CustomOp1 for Scatter {
    fn name(&self) -> &'static str {
        "scatter"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let w = &self.0;
        let batch = layout.dims()[0];
        let shape = Shape::from((batch, w.channels, w.height, w.width));
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(scatter(w, batch, contiguous(d, layout)?).map_err(to_candle)?),
            CpuStorage::F64(d) => CpuStorage::F64(scatter(w, batch, contiguous(d, layout)?).map_err(to_candle)?),
            _ => return Err(candle_core::Error::Msg("scatter supports f32 and f64".into())),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Patches(self.0))?))
    }
}

/// Cross-correlation of `x (B, Cin, H, W)` with `weight (Cout, Cin, kh, kw)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (batch, channels, height, width) = x.dims4()?;
    let (cout, cin, kernel_h, kernel_w) = weight.dims4()?;
    if cin != channels {
        return Err(Error::shape(format!("({cout}, {channels}, kh, kw) kernel"), format!("{:?}", weight.dims())));
    }
    let win = Window { channels, height, width, kernel_h, kernel_w, stride, padding };
    let (oh, ow) = win.out_dims()?;
    let cols = x.contiguous()?.apply_op1(Patches(win))?.reshape((batch * oh * ow, win.patch_len()))?;
    let y = cols.matmul(&weight.reshape((cout, win.patch_len()))?.t()?)?;
    Ok(y.reshape((batch, oh, ow, cout))?.permute((0, 3, 1, 2))?.contiguous()?)
}

/// Transposed convolution of `x (B, Cin, H, W)` with `weight (Cin, Cout, kh, kw)`;
/// the output is `(H - 1) * stride - 2 * padding + kh` high and likewise wide.
pub fn conv_transpose2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (batch, cin, height, width) = x.dims4()?;
    let (w_in, cout, kernel_h, kernel_w) = weight.dims4()?;
    if w_in != cin {
        return Err(Error::shape(format!("({cin}, out, kh, kw) kernel"), format!("{:?}", weight.dims())));
    }
    let grow = |n: usize, k: usize| ((n - 1) * stride + k).checked_sub(2 * padding);
    let (Some(oh), Some(ow)) = (grow(height, kernel_h), grow(width, kernel_w)) else {
        return Err(Error::shape("padding below the kernel span", format!("padding {padding}, kernel {kernel_h}x{kernel_w}")));
    };
    let win = Window { channels: cout, height: oh, width: ow, kernel_h, kernel_w, stride, padding };
    if win.out_dims()? != (height, width) {
        return Err(Error::shape(format!("{height}x{width} window grid"), format!("{:?}", win.out_dims()?)));
    }
    let rows = x.permute((0, 2, 3, 1))?.contiguous()?.reshape((batch * height * width, cin))?;
    let cols = rows.matmul(&weight.reshape((cin, win.patch_len()))?)?;
    Ok(cols.reshape((batch, height * width, win.patch_len()))?.apply_op1(Scatter(win))?)
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device, Var};

    use super::*;

    fn ramp(shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|i| ((i * 7919 % 97) as f64 / 48.5 - 1.0) * scale).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn close(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn matches_native_conv_and_its_gradients() {
        for (kh, kw, s, p, h, w) in [(3, 3, 1, 1, 8, 4), (4, 4, 2, 1, 8, 6), (7, 7, 1, 3, 9, 5), (3, 3, 2, 0, 7, 7), (4, 2, 1, 0, 4, 2)] {
            let x = Var::from_tensor(&ramp(&[2, 3, h, w], 1.0)).unwrap();
            let wt = Var::from_tensor(&ramp(&[5, 3, kh, kw], 0.3)).unwrap();
            let ours = conv2d(&x, &wt, s, p).unwrap();
            let native = x.conv2d(&wt, p, s, 1, 1).unwrap();
            assert_eq!(ours.dims(), native.dims());
            assert!(close(&ours, &native) < 1e-12);
            let probe = ramp(native.dims(), 1.0);
            let g1 = (&ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            let g2 = (&native * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            for v in [&x, &wt] {
                assert!(close(g1.get(v).unwrap(), g2.get(v).unwrap()) < 1e-11);
            }
        }
    }

    #[test]
    fn matches_native_transposed_conv_and_its_gradients() {
        for (k, s, p, h, w) in [(4, 2, 1, 4, 2), (3, 1, 1, 5, 3), (4, 2, 1, 3, 3)] {
            let x = Var::from_tensor(&ramp(&[2, 6, h, w], 1.0)).unwrap();
            let wt = Var::from_tensor(&ramp(&[6, 4, k, k], 0.3)).unwrap();
            let ours = conv_transpose2d(&x, &wt, s, p).unwrap();
            let native = x.conv_transpose2d(&wt, p, 0, s, 1).unwrap();
            assert_eq!(ours.dims(), native.dims());
            assert!(close(&ours, &native) < 1e-12);
            let probe = ramp(native.dims(), 1.0);
            let g1 = (&ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            let g2 = (&native * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            for v in [&x, &wt] {
                assert!(close(g1.get(v).unwrap(), g2.get(v).unwrap()) < 1e-11);
            }
        }
    }

    #[test]
    fn works_in_single_precision() {
        let x = ramp(&[1, 2, 6, 4], 1.0).to_dtype(DType::F32).unwrap();
        let w = ramp(&[3, 2, 3, 3], 0.5).to_dtype(DType::F32).unwrap();
        let a = conv2d(&x, &w, 1, 1).unwrap();
        let b = x.conv2d(&w, 1, 1, 1, 1).unwrap();
        let d = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(d < 1e-5);
    }

    #[test]
    fn rejects_mismatched_kernels() {
        let x = ramp(&[1, 2, 6, 4], 1.0);
        assert!(conv2d(&x, &ramp(&[3, 4, 3, 3], 1.0), 1, 1).is_err());
        assert!(conv_transpose2d(&x, &ramp(&[3, 4, 3, 3], 1.0), 2, 1).is_err());
        assert!(conv2d(&x, &ramp(&[3, 2, 9, 9], 1.0), 1, 0).is_err());
    }
}
