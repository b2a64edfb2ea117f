//! Spatial operations: 2-D convolution for the small backbone, the
//! separable 1-D convolution used by the feed-forward paths, and bilinear
//! feature-map upsampling.

use super::Tensor;
use crate::error::{dim_error, Error, Result};

/// 3x3 (or `kh x kw`) convolution over an `h x w x c_in` map with
/// same-padding and the given stride. Kernel layout is `kh x kw x c_in x
/// c_out`, output is `h' x w' x c_out`.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let xs = x.shape();
    let ks = kernel.shape();
    if xs.len() != 3 || ks.len() != 4 || ks[2] != xs[2] {
        return Err(dim_error("conv2d", &xs, &ks));
    }
    if stride == 0 {
        return Err(Error::Contract("conv2d stride must be >= 1".to_string()));
    }
    let (h, w, cin) = (xs[0], xs[1], xs[2]);
    let (kh, kw, cout) = (ks[0], ks[1], ks[3]);
    if bias.shape_ref() != [cout] {
        return Err(dim_error("conv2d bias", &ks, bias.shape_ref()));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let oh = (h + 2 * ph - kh) / stride + 1;
    let ow = (w + 2 * pw - kw) / stride + 1;

    let mut out = vec![0.0; oh * ow * cout];
    {
        let xv = x.data();
        let kv = kernel.data();
        let bv = bias.data();
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (oy * ow + ox) * cout;
                out[base..base + cout].copy_from_slice(&bv);
                for dy in 0..kh {
                    let iy = (oy * stride + dy) as isize - ph as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for dx in 0..kw {
                        let ix = (ox * stride + dx) as isize - pw as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let xoff = ((iy as usize) * w + ix as usize) * cin;
                        let koff = (dy * kw + dx) * cin * cout;
                        for ci in 0..cin {
                            let xval = xv[xoff + ci];
                            if xval == 0.0 {
                                continue;
                            }
                            let krow = koff + ci * cout;
                            for co in 0..cout {
                                out[base + co] += xval * kv[krow + co];
                            }
                        }
                    }
                }
            }
        }
    }

    let (px, pk, pb) = (x.clone(), kernel.clone(), bias.clone());
    Ok(Tensor::from_op(
        vec![oh, ow, cout],
        out,
        vec![x.clone(), kernel.clone(), bias.clone()],
        move |g| {
            let xv = px.data();
            let kv = pk.data();
            let mut gx = vec![0.0; xv.len()];
            let mut gk = vec![0.0; kv.len()];
            let mut gb = vec![0.0; cout];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (oy * ow + ox) * cout;
                    for co in 0..cout {
                        gb[co] += g[base + co];
                    }
                    for dy in 0..kh {
                        let iy = (oy * stride + dy) as isize - ph as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for dx in 0..kw {
                            let ix = (ox * stride + dx) as isize - pw as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let xoff = ((iy as usize) * w + ix as usize) * cin;
                            let koff = (dy * kw + dx) * cin * cout;
                            for ci in 0..cin {
                                let krow = koff + ci * cout;
                                let mut acc = 0.0;
                                for co in 0..cout {
                                    let gval = g[base + co];
                                    acc += gval * kv[krow + co];
                                    gk[krow + co] += gval * xv[xoff + ci];
                                }
                                gx[xoff + ci] += acc;
                            }
                        }
                    }
                }
            }
            drop(xv);
            drop(kv);
            px.accumulate_grad(&gx);
            pk.accumulate_grad(&gk);
            pb.accumulate_grad(&gb);
        },
    ))
}

/// Per-channel 1-D convolution with a size-3 kernel, zero same-padding,
/// stride 1. Kernel layout is `3 x C`.
fn depthwise_conv1d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let ks = kernel.shape();
    if xs.len() != 2 || ks.len() != 2 || ks[0] != 3 || ks[1] != xs[1] {
        return Err(dim_error("depthwise_conv1d", &xs, &ks));
    }
    let (l, c) = (xs[0], xs[1]);
    let mut out = vec![0.0; l * c];
    {
        let xv = x.data();
        let kv = kernel.data();
        for pos in 0..l {
            for t in 0..3usize {
                let ip = pos as isize + t as isize - 1;
                if ip < 0 || ip as usize >= l {
                    continue;
                }
                let xrow = (ip as usize) * c;
                for ch in 0..c {
                    out[pos * c + ch] += xv[xrow + ch] * kv[t * c + ch];
                }
            }
        }
    }
    let (px, pk) = (x.clone(), kernel.clone());
    Ok(Tensor::from_op(
        vec![l, c],
        out,
        vec![x.clone(), kernel.clone()],
        move |g| {
            let xv = px.data();
            let kv = pk.data();
            let mut gx = vec![0.0; l * c];
            let mut gk = vec![0.0; 3 * c];
            for pos in 0..l {
                for t in 0..3usize {
                    let ip = pos as isize + t as isize - 1;
                    if ip < 0 || ip as usize >= l {
                        continue;
                    }
                    let xrow = (ip as usize) * c;
                    for ch in 0..c {
                        let gval = g[pos * c + ch];
                        gx[xrow + ch] += gval * kv[t * c + ch];
                        gk[t * c + ch] += gval * xv[xrow + ch];
                    }
                }
            }
            drop(xv);
            drop(kv);
            px.accumulate_grad(&gx);
            pk.accumulate_grad(&gk);
        },
    ))
}

impl Tensor {
    /// Depthwise separable 1-D convolution over an `L x C` sequence:
    /// size-3 depthwise convolution (zero same-padding, stride 1), 1x1
    /// pointwise channel mixing, bias add, then relu.
    pub fn conv1d_separable(
        &self,
        depthwise: &Tensor,
        pointwise: &Tensor,
        bias: &Tensor,
    ) -> Result<Tensor> {
        let c = *self
            .shape_ref()
            .last()
            .ok_or_else(|| Error::Contract("conv1d_separable on empty shape".to_string()))?;
        if pointwise.shape_ref() != [c, c] {
            return Err(dim_error(
                "conv1d_separable pointwise",
                self.shape_ref(),
                pointwise.shape_ref(),
            ));
        }
        if bias.shape_ref() != [c] {
            return Err(dim_error(
                "conv1d_separable bias",
                self.shape_ref(),
                bias.shape_ref(),
            ));
        }
        let spatial = depthwise_conv1d(self, depthwise)?;
        let mixed = spatial.matmul(pointwise)?;
        Ok(mixed.add(bias)?.relu())
    }
}

/// Bilinear upsampling of an `h x w x c` map to `target x target x c`,
/// half-pixel-center convention with edge clamping. Downsampling is out of
/// scope: the target must be at least the source side.
pub fn bilinear_upsample(x: &Tensor, target: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(dim_error("bilinear_upsample", &xs, &[target, target, 0]));
    }
    let (h, w, c) = (xs[0], xs[1], xs[2]);
    if target < h || target < w {
        return Err(Error::Contract(format!(
            "bilinear_upsample target {target} smaller than source {h}x{w}"
        )));
    }
    if target == h && target == w {
        // Scale 1 is exactly the identity; pass values straight through.
        let p = x.clone();
        return Ok(Tensor::from_op(xs, x.to_vec(), vec![x.clone()], move |g| {
            p.accumulate_grad(g);
        }));
    }

    // Source coordinate for output index d: (d + 0.5) / scale - 0.5,
    // then the four clamped corners are blended.
    let taps = |src_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = target as f64 / src_len as f64;
        (0..target)
            .map(|d| {
                let s = (d as f64 + 0.5) / scale - 0.5;
                let i0 = s.floor();
                let frac = s - i0;
                let a = (i0.max(0.0) as usize).min(src_len - 1);
                let b = ((i0 + 1.0).max(0.0) as usize).min(src_len - 1);
                (a, b, frac)
            })
            .collect()
    };
    let ytaps = taps(h);
    let xtaps = taps(w);

    let mut out = vec![0.0; target * target * c];
    {
        let xv = x.data();
        for dy in 0..target {
            let (y0, y1, fy) = ytaps[dy];
            for dx in 0..target {
                let (x0, x1, fx) = xtaps[dx];
                let o = (dy * target + dx) * c;
                let p00 = (y0 * w + x0) * c;
                let p01 = (y0 * w + x1) * c;
                let p10 = (y1 * w + x0) * c;
                let p11 = (y1 * w + x1) * c;
                for ch in 0..c {
                    out[o + ch] = (1.0 - fy) * (1.0 - fx) * xv[p00 + ch]
                        + (1.0 - fy) * fx * xv[p01 + ch]
                        + fy * (1.0 - fx) * xv[p10 + ch]
                        + fy * fx * xv[p11 + ch];
                }
            }
        }
    }

    let px = x.clone();
    Ok(Tensor::from_op(
        vec![target, target, c],
        out,
        vec![x.clone()],
        move |g| {
            let mut gx = vec![0.0; h * w * c];
            for dy in 0..target {
                let (y0, y1, fy) = ytaps[dy];
                for dx in 0..target {
                    let (x0, x1, fx) = xtaps[dx];
                    let o = (dy * target + dx) * c;
                    let p00 = (y0 * w + x0) * c;
                    let p01 = (y0 * w + x1) * c;
                    let p10 = (y1 * w + x0) * c;
                    let p11 = (y1 * w + x1) * c;
                    for ch in 0..c {
                        let gv = g[o + ch];
                        gx[p00 + ch] += (1.0 - fy) * (1.0 - fx) * gv;
                        gx[p01 + ch] += (1.0 - fy) * fx * gv;
                        gx[p10 + ch] += fy * (1.0 - fx) * gv;
                        gx[p11 + ch] += fy * fx * gv;
                    }
                }
            }
            px.accumulate_grad(&gx);
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn separable_delta_kernel_is_relu() {
        let c = 2;
        let x = t(&[3, 2], &[1.0, -1.0, 2.0, -2.0, 3.0, -3.0]);
        let dw = t(&[3, 2], &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let pw = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let bias = t(&[2], &[0.0; 2]);
        let y = x.conv1d_separable(&dw, &pw, &bias).unwrap();
        let expect: Vec<f64> = x.to_vec().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(y.to_vec(), expect);
        assert_eq!(y.shape(), vec![3, c]);
    }

    #[test]
    fn separable_box_kernel_boundary() {
        // Constant rows r = [2, 4]; depthwise [1,1,1] sums 3 rows in the
        // interior and 2 at the zero-padded boundary.
        let x = t(&[4, 2], &[2.0, 4.0, 2.0, 4.0, 2.0, 4.0, 2.0, 4.0]);
        let dw = t(&[3, 2], &[1.0; 6]);
        let pw = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let bias = t(&[2], &[0.0; 2]);
        let y = x.conv1d_separable(&dw, &pw, &bias).unwrap();
        let v = y.to_vec();
        assert_eq!(&v[0..2], &[4.0, 8.0]);
        assert_eq!(&v[2..4], &[6.0, 12.0]);
        assert_eq!(&v[4..6], &[6.0, 12.0]);
        assert_eq!(&v[6..8], &[4.0, 8.0]);
    }

    #[test]
    fn separable_channel_mismatch() {
        let x = t(&[3, 2], &[0.0; 6]);
        let dw = t(&[3, 3], &[0.0; 9]);
        let pw = t(&[2, 2], &[0.0; 4]);
        let bias = t(&[2], &[0.0; 2]);
        assert!(x.conv1d_separable(&dw, &pw, &bias).is_err());
    }

    #[test]
    fn upsample_identity_at_source_size() {
        let x = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let y = bilinear_upsample(&x, 2).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn upsample_hand_case() {
        // Column gradient [[0,1],[0,1]] doubled: each row becomes
        // [0, 0.25, 0.75, 1] under half-pixel centers with edge clamp.
        let x = t(&[2, 2, 1], &[0.0, 1.0, 0.0, 1.0]);
        let y = bilinear_upsample(&x, 4).unwrap();
        let v = y.to_vec();
        for row in 0..4 {
            let r = &v[row * 4..(row + 1) * 4];
            for (got, want) in r.iter().zip(&[0.0, 0.25, 0.75, 1.0]) {
                assert!((got - want).abs() < 1e-12, "row {row}: {r:?}");
            }
        }
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let x = t(&[3, 3, 2], &[7.0; 18]);
        let y = bilinear_upsample(&x, 8).unwrap();
        assert!(y.to_vec().iter().all(|v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn upsample_rejects_downsampling() {
        let x = t(&[4, 4, 1], &[0.0; 16]);
        assert!(bilinear_upsample(&x, 3).is_err());
    }

    #[test]
    fn conv2d_shape_arithmetic() {
        let x = t(&[8, 8, 3], &[0.1; 192]);
        let k = t(&[3, 3, 3, 4], &[0.01; 108]);
        let b = t(&[4], &[0.0; 4]);
        let y = conv2d(&x, &k, &b, 2).unwrap();
        assert_eq!(y.shape(), vec![4, 4, 4]);
    }

    #[test]
    fn conv2d_zero_input_zero_bias_gives_zero() {
        let x = t(&[4, 4, 2], &[0.0; 32]);
        let k = t(&[3, 3, 2, 3], &[0.5; 54]);
        let b = t(&[3], &[0.0; 3]);
        let y = conv2d(&x, &k, &b, 1).unwrap();
        assert!(y.to_vec().iter().all(|v| *v == 0.0));
    }
}
