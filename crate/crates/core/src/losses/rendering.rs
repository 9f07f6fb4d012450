use super::LossValue;
use crate::geometry::DepthMap;
use crate::nn::DenseArray;
use crate::{Error, Result};

/// `lambda_rc` times the mean squared error over all pixels and channels.
pub fn rendering_color_loss(
    rendered: &DenseArray,
    image: &DenseArray,
    lambda_rc: f64,
) -> Result<LossValue> {
    if rendered.shape() != image.shape() {
        return Err(Error::dim(
            format!("{:?}", image.shape()),
            format!("{:?}", rendered.shape()),
        ));
    }
    let n = rendered.len();
    let mut grad = DenseArray::zeros(rendered.shape().to_vec());
    if n == 0 {
        return Ok(LossValue {
            value: 0.0,
            grad,
            count: 0,
        });
    }
    let scale = lambda_rc / n as f64;
    let mut total = 0.0;
    for ((g, &a), &b) in grad
        .data_mut()
        .iter_mut()
        .zip(rendered.data())
        .zip(image.data())
    {
        let d = a - b;
        total += d * d;
        *g = 2.0 * scale * d;
    }
    Ok(LossValue {
        value: total * scale,
        grad,
        count: n,
    })
}

/// `lambda_rd` times the mean absolute error over mask-valid pixels. The
/// subgradient at zero error is zero; an empty mask gives 0 with `count == 0`.
pub fn rendering_depth_loss(
    rendered: &DenseArray,
    target: &DepthMap,
    lambda_rd: f64,
) -> Result<LossValue> {
    if rendered.shape() != [target.h, target.w] {
        return Err(Error::dim(
            format!("[{}, {}]", target.h, target.w),
            format!("{:?}", rendered.shape()),
        ));
    }
    let mut grad = DenseArray::zeros(rendered.shape().to_vec());
    let count = target.valid_count();
    if count == 0 {
        return Ok(LossValue {
            value: 0.0,
            grad,
            count,
        });
    }
    let scale = lambda_rd / count as f64;
    let mut total = 0.0;
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        if !target.mask[i] {
            continue;
        }
        let d = rendered.data()[i] - target.depth[i];
        total += d.abs();
        *g = if d > 0.0 {
            scale
        } else if d < 0.0 {
            -scale
        } else {
            0.0
        };
    }
    Ok(LossValue {
        value: total * scale,
        grad,
        count,
    })
}
