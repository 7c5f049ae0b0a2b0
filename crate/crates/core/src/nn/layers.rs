//! Stateless layer primitives over NCHW tensors.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};

pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let y = super::conv::conv2d(x, weight, stride, padding)?;
    add_channel_bias(y, bias)
}

/// `weight` is `(in, out, k, k)`.
pub fn conv_transpose2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let y = super::conv::conv_transpose2d(x, weight, stride, padding)?;
    add_channel_bias(y, bias)
}

fn add_channel_bias(y: Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    match bias {
        Some(b) => Ok(y.broadcast_add(&b.reshape((1, b.elem_count(), 1, 1))?)?),
        None => Ok(y),
    }
}

fn per_channel(t: &Tensor) -> Result<Tensor> {
    Ok(t.reshape((1, t.elem_count(), 1, 1))?)
}

/// Normalizes each (sample, channel) plane over its spatial positions, then
/// applies the per-channel affine `gain * x_hat + bias`.
pub fn instance_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?.reshape((b, c, h, w))?;
    Ok(normed.broadcast_mul(&per_channel(gain)?)?.broadcast_add(&per_channel(bias)?)?)
}

/// Batch statistics normalization. Returns the output together with the
/// batch mean and the unbiased batch variance (for running averages).
pub fn batch_norm_train(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, c, h, w) = x.dims4()?;
    let count = b * h * w;
    if count < 2 {
        return Err(Error::Precondition("batch normalization in train mode needs more than one value per channel".into()));
    }
    let xt = x.transpose(0, 1)?.reshape((c, count))?;
    let mean = xt.mean_keepdim(D::Minus1)?;
    let centered = xt.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered
        .broadcast_div(&(&var + eps)?.sqrt()?)?
        .reshape((c, b, h, w))?
        .transpose(0, 1)?;
    let y = normed.broadcast_mul(&per_channel(gain)?)?.broadcast_add(&per_channel(bias)?)?;
    let unbiased = (var.detach() * (count as f64 / (count - 1) as f64))?;
    Ok((y, mean.detach().flatten_all()?, unbiased.flatten_all()?))
}

pub fn batch_norm_eval(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let scale = gain.div(&(running_var + eps)?.sqrt()?)?;
    let shift = bias.sub(&running_mean.mul(&scale)?)?;
    Ok(x.broadcast_mul(&per_channel(&scale)?)?.broadcast_add(&per_channel(&shift)?)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// `x @ weight^T + bias` with `weight` shaped `(out, in)`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let y = x.matmul(&weight.t()?)?;
    match bias {
        Some(b) => Ok(y.broadcast_add(b)?),
        None => Ok(y),
    }
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h * w))?.mean(D::Minus1)?)
}

/// Row-wise `log softmax` via the log-sum-exp shift.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    Ok(log_softmax(logits)?.exp()?)
}

/// Rescales each row to unit Euclidean norm.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    Ok(x.broadcast_div(&(norm + 1e-12)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn log_softmax_is_stable() {
        let t = Tensor::new(&[[1000f64, 0.0, -1000.0]], &Device::Cpu).unwrap();
        let v = log_softmax(&t).unwrap().to_vec2::<f64>().unwrap();
        assert!(v[0][0].abs() < 1e-12);
        assert!((v[0][1] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn batch_norm_eval_matches_train_stats_on_frozen_batch() {
        let dev = Device::Cpu;
        let x = Tensor::arange(0f32, 24.0, &dev).unwrap().reshape((2, 3, 2, 2)).unwrap();
        let g = Tensor::ones(3, DType::F32, &dev).unwrap();
        let b = Tensor::zeros(3, DType::F32, &dev).unwrap();
        let (y, mean, var) = batch_norm_train(&x, &g, &b, 1e-5).unwrap();
        // biased variance used in normalization = unbiased * (n-1)/n
        let biased = (var * (7.0 / 8.0)).unwrap();
        let y2 = batch_norm_eval(&x, &g, &b, &mean, &biased, 1e-5).unwrap();
        let diff = (y - y2).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-5);
    }

    #[test]
    fn transposed_conv_doubles_size() {
        let dev = Device::Cpu;
        let x = Tensor::ones((1, 2, 4, 3), DType::F32, &dev).unwrap();
        let w = Tensor::ones((2, 5, 4, 4), DType::F32, &dev).unwrap();
        assert_eq!(conv_transpose2d(&x, &w, None, 2, 1).unwrap().dims(), &[1, 5, 8, 6]);
    }
}
