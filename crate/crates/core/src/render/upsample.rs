use crate::nn::DenseArray;
use crate::{Error, Result};

/// Corner-aligned source position for each output index along one axis.
fn axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            if n_in == 1 || n_out == 1 {
                return (0, 0, 0.0);
            }
            let x = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let i0 = (x.floor() as usize).min(n_in - 2);
            (i0, i0 + 1, x - i0 as f64)
        })
        .collect()
}

fn dims(map: &DenseArray) -> Result<(usize, usize, usize)> {
    match *map.shape() {
        [h, w] => Ok((h, w, 1)),
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::dim(
            "[h, w] or [h, w, ch]",
            format!("{:?}", map.shape()),
        )),
    }
}

fn out_shape(map: &DenseArray, h2: usize, w2: usize) -> Vec<usize> {
    let mut s = map.shape().to_vec();
    s[0] = h2;
    s[1] = w2;
    s
}

/// Separable bilinear upsampling of an `[h, w]` or `[h, w, ch]` map.
pub fn upsample_bilinear(map: &DenseArray, h2: usize, w2: usize) -> Result<DenseArray> {
    let (h, w, c) = dims(map)?;
    if h2 < h || w2 < w {
        return Err(Error::config(format!(
            "cannot upsample {h}x{w} to smaller {h2}x{w2}"
        )));
    }
    let (ay, ax) = (axis(h, h2), axis(w, w2));
    let src = map.data();
    let mut out = vec![0.0; h2 * w2 * c];
    for (oy, &(y0, y1, fy)) in ay.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in ax.iter().enumerate() {
            let dst = &mut out[(oy * w2 + ox) * c..(oy * w2 + ox + 1) * c];
            for (y, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                for (x, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    let wt = wy * wx;
                    if wt == 0.0 {
                        continue;
                    }
                    for (d, &s) in dst
                        .iter_mut()
                        .zip(&src[(y * w + x) * c..(y * w + x + 1) * c])
                    {
                        *d += wt * s;
                    }
                }
            }
        }
    }
    DenseArray::new(out_shape(map, h2, w2), out)
}

/// Adjoint of [`upsample_bilinear`]: gradient w.r.t. the `[h, w(, ch)]` input.
pub fn upsample_bilinear_backward(
    input_shape: &[usize],
    grad_out: &DenseArray,
) -> Result<DenseArray> {
    let probe = DenseArray::zeros(input_shape.to_vec());
    let (h, w, c) = dims(&probe)?;
    let (h2, w2, c2) = dims(grad_out)?;
    if c2 != c || input_shape.len() != grad_out.shape().len() {
        return Err(Error::dim(
            format!("{input_shape:?} channel layout"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let (ay, ax) = (axis(h, h2), axis(w, w2));
    let g = grad_out.data();
    let mut out = vec![0.0; h * w * c];
    for (oy, &(y0, y1, fy)) in ay.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in ax.iter().enumerate() {
            let src = &g[(oy * w2 + ox) * c..(oy * w2 + ox + 1) * c];
            for (y, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                for (x, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    let wt = wy * wx;
                    if wt == 0.0 {
                        continue;
                    }
                    for (d, &s) in out[(y * w + x) * c..(y * w + x + 1) * c]
                        .iter_mut()
                        .zip(src)
                    {
                        *d += wt * s;
                    }
                }
            }
        }
    }
    DenseArray::new(input_shape.to_vec(), out)
}
