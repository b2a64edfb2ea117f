//! Differentiable operations. Forward paths compute plain `Vec<f64>`
//! buffers; backward closures do raw arithmetic on slices and accumulate
//! into parent gradient buffers, so no graph is built during backward.

use super::{same_shape, Tensor};
use crate::error::{dim_error, Error, Result};

enum Broadcast {
    Same,
    /// `b` is a vector applied across the trailing axis of `a`.
    RightVec,
    /// `a` is a vector applied across the trailing axis of `b`.
    LeftVec,
}

fn classify(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape_ref() == b.shape_ref() {
        return Ok(Broadcast::Same);
    }
    let (ash, bsh) = (a.shape_ref(), b.shape_ref());
    if bsh.len() == 1 && ash.last() == Some(&bsh[0]) {
        return Ok(Broadcast::RightVec);
    }
    if ash.len() == 1 && bsh.last() == Some(&ash[0]) {
        return Ok(Broadcast::LeftVec);
    }
    Err(dim_error(op, ash, bsh))
}

impl Tensor {
    /// Elementwise addition; the second operand may be a vector broadcast
    /// over the trailing axis.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        match classify("add", self, other)? {
            Broadcast::Same => {
                let out: Vec<f64> = {
                    let (a, b) = (self.data(), other.data());
                    a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
                };
                let (pa, pb) = (self.clone(), other.clone());
                Ok(Tensor::from_op(
                    self.shape(),
                    out,
                    vec![self.clone(), other.clone()],
                    move |g| {
                        pa.accumulate_grad(g);
                        pb.accumulate_grad(g);
                    },
                ))
            }
            Broadcast::RightVec => add_vec(self, other),
            Broadcast::LeftVec => add_vec(other, self),
        }
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-1.0))
    }

    /// Elementwise (Hadamard) product with the same broadcast rule as `add`.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        match classify("mul", self, other)? {
            Broadcast::Same => {
                let out: Vec<f64> = {
                    let (a, b) = (self.data(), other.data());
                    a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
                };
                let (pa, pb) = (self.clone(), other.clone());
                Ok(Tensor::from_op(
                    self.shape(),
                    out,
                    vec![self.clone(), other.clone()],
                    move |g| {
                        if pa.requires_grad() {
                            let b = pb.data();
                            let ga: Vec<f64> =
                                g.iter().zip(b.iter()).map(|(gi, bi)| gi * bi).collect();
                            pa.accumulate_grad(&ga);
                        }
                        if pb.requires_grad() {
                            let a = pa.data();
                            let gb: Vec<f64> =
                                g.iter().zip(a.iter()).map(|(gi, ai)| gi * ai).collect();
                            pb.accumulate_grad(&gb);
                        }
                    },
                ))
            }
            Broadcast::RightVec => mul_vec(self, other),
            Broadcast::LeftVec => mul_vec(other, self),
        }
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, k: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x * k).collect();
        let p = self.clone();
        Tensor::from_op(self.shape(), out, vec![self.clone()], move |g| {
            let gx: Vec<f64> = g.iter().map(|gi| gi * k).collect();
            p.accumulate_grad(&gx);
        })
    }

    /// Add a constant to every element.
    pub fn shift(&self, k: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x + k).collect();
        let p = self.clone();
        Tensor::from_op(self.shape(), out, vec![self.clone()], move |g| {
            p.accumulate_grad(g);
        })
    }

    /// Multiply by a learnable one-element tensor.
    pub fn mul_scalar_param(&self, s: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(dim_error("mul_scalar_param", self.shape_ref(), s.shape_ref()));
        }
        let sv = s.item();
        let out: Vec<f64> = self.data().iter().map(|x| x * sv).collect();
        let (px, ps) = (self.clone(), s.clone());
        Ok(Tensor::from_op(
            self.shape(),
            out,
            vec![self.clone(), s.clone()],
            move |g| {
                if px.requires_grad() {
                    let gx: Vec<f64> = g.iter().map(|gi| gi * sv).collect();
                    px.accumulate_grad(&gx);
                }
                if ps.requires_grad() {
                    let x = px.data();
                    let gs: f64 = g.iter().zip(x.iter()).map(|(gi, xi)| gi * xi).sum();
                    ps.accumulate_grad(&[gs]);
                }
            },
        ))
    }

    /// Add a learnable one-element tensor to every element.
    pub fn add_scalar_param(&self, s: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(dim_error("add_scalar_param", self.shape_ref(), s.shape_ref()));
        }
        let sv = s.item();
        let out: Vec<f64> = self.data().iter().map(|x| x + sv).collect();
        let (px, ps) = (self.clone(), s.clone());
        Ok(Tensor::from_op(
            self.shape(),
            out,
            vec![self.clone(), s.clone()],
            move |g| {
                px.accumulate_grad(g);
                if ps.requires_grad() {
                    ps.accumulate_grad(&[g.iter().sum()]);
                }
            },
        ))
    }

    pub fn tanh(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x.tanh()).collect();
        let y = out.clone();
        let p = self.clone();
        Tensor::from_op(self.shape(), out, vec![self.clone()], move |g| {
            let gx: Vec<f64> = g
                .iter()
                .zip(y.iter())
                .map(|(gi, yi)| gi * (1.0 - yi * yi))
                .collect();
            p.accumulate_grad(&gx);
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| sigmoid(*x)).collect();
        let y = out.clone();
        let p = self.clone();
        Tensor::from_op(self.shape(), out, vec![self.clone()], move |g| {
            let gx: Vec<f64> = g
                .iter()
                .zip(y.iter())
                .map(|(gi, yi)| gi * yi * (1.0 - yi))
                .collect();
            p.accumulate_grad(&gx);
        })
    }

    pub fn relu(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x.max(0.0)).collect();
        let p = self.clone();
        Tensor::from_op(self.shape(), out, vec![self.clone()], move |g| {
            let x = p.data();
            let gx: Vec<f64> = g
                .iter()
                .zip(x.iter())
                .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                .collect();
            drop(x);
            p.accumulate_grad(&gx);
        })
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (ash, bsh) = (self.shape(), other.shape());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(dim_error("matmul", &ash, &bsh));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let out = {
            let a = self.data();
            let b = other.data();
            matmul_raw(&a, &b, m, k, n)
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            move |g| {
                if pa.requires_grad() {
                    // dA = g @ B^T
                    let b = pb.data();
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for p in 0..k {
                                ga[i * k + p] += gij * b[p * n + j];
                            }
                        }
                    }
                    drop(b);
                    pa.accumulate_grad(&ga);
                }
                if pb.requires_grad() {
                    // dB = A^T @ g
                    let a = pa.data();
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = a[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    drop(a);
                    pb.accumulate_grad(&gb);
                }
            },
        ))
    }

    /// Softmax over the trailing axis, computed with max subtraction so
    /// large logits cannot overflow.
    pub fn softmax_last(&self) -> Tensor {
        let shape = self.shape();
        let n = *shape.last().expect("softmax on empty shape");
        let rows = self.numel() / n;
        let mut out = vec![0.0; self.numel()];
        {
            let x = self.data();
            for r in 0..rows {
                let row = &x[r * n..(r + 1) * n];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (o, xi) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                    *o = (xi - m).exp();
                    sum += *o;
                }
                for o in &mut out[r * n..(r + 1) * n] {
                    *o /= sum;
                }
            }
        }
        let y = out.clone();
        let p = self.clone();
        Tensor::from_op(shape, out, vec![self.clone()], move |g| {
            let mut gx = vec![0.0; g.len()];
            for r in 0..rows {
                let ys = &y[r * n..(r + 1) * n];
                let gs = &g[r * n..(r + 1) * n];
                let dot: f64 = ys.iter().zip(gs).map(|(yi, gi)| yi * gi).sum();
                for ((gxi, yi), gi) in gx[r * n..(r + 1) * n].iter_mut().zip(ys).zip(gs) {
                    *gxi = yi * (gi - dot);
                }
            }
            p.accumulate_grad(&gx);
        })
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let p = self.clone();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![s], vec![self.clone()], move |g| {
            p.accumulate_grad(&vec![g[0]; n]);
        })
    }

    /// Mean of all elements as a one-element tensor.
    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum::<f64>() / n as f64;
        let p = self.clone();
        Tensor::from_op(vec![1], vec![s], vec![self.clone()], move |g| {
            p.accumulate_grad(&vec![g[0] / n as f64; n]);
        })
    }

    /// Same data, new shape; element count must be preserved.
    pub fn reshape(&self, new_shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = new_shape.iter().product();
        if n != self.numel() || new_shape.iter().any(|&d| d == 0) {
            return Err(dim_error("reshape", self.shape_ref(), &new_shape));
        }
        let p = self.clone();
        Ok(Tensor::from_op(
            new_shape,
            self.to_vec(),
            vec![self.clone()],
            move |g| {
                p.accumulate_grad(g);
            },
        ))
    }

    /// Extract one element as a one-element tensor.
    pub fn pick(&self, index: usize) -> Result<Tensor> {
        let n = self.numel();
        if index >= n {
            return Err(Error::Contract(format!(
                "pick index {index} out of range for {n} elements"
            )));
        }
        let v = self.data()[index];
        let p = self.clone();
        Ok(Tensor::from_op(
            vec![1],
            vec![v],
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; n];
                gx[index] = g[0];
                p.accumulate_grad(&gx);
            },
        ))
    }

    /// Natural log with the argument floored at `floor` (gradient is zero
    /// on the floored region).
    pub fn ln_clamped(&self, floor: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x.max(floor).ln()).collect();
        let p = self.clone();
        Tensor::from_op(self.shape(), out, vec![self.clone()], move |g| {
            let x = p.data();
            let gx: Vec<f64> = g
                .iter()
                .zip(x.iter())
                .map(|(gi, xi)| if *xi > floor { gi / xi } else { 0.0 })
                .collect();
            drop(x);
            p.accumulate_grad(&gx);
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aip * b[p * n + j];
            }
        }
    }
    c
}

fn add_vec(mat: &Tensor, vec_t: &Tensor) -> Result<Tensor> {
    let n = vec_t.numel();
    let rows = mat.numel() / n;
    let out: Vec<f64> = {
        let (a, b) = (mat.data(), vec_t.data());
        a.iter()
            .enumerate()
            .map(|(i, x)| x + b[i % n])
            .collect()
    };
    let (pm, pv) = (mat.clone(), vec_t.clone());
    Ok(Tensor::from_op(
        mat.shape(),
        out,
        vec![mat.clone(), vec_t.clone()],
        move |g| {
            pm.accumulate_grad(g);
            if pv.requires_grad() {
                let mut gv = vec![0.0; n];
                for r in 0..rows {
                    for j in 0..n {
                        gv[j] += g[r * n + j];
                    }
                }
                pv.accumulate_grad(&gv);
            }
        },
    ))
}

fn mul_vec(mat: &Tensor, vec_t: &Tensor) -> Result<Tensor> {
    let n = vec_t.numel();
    let rows = mat.numel() / n;
    let out: Vec<f64> = {
        let (a, b) = (mat.data(), vec_t.data());
        a.iter()
            .enumerate()
            .map(|(i, x)| x * b[i % n])
            .collect()
    };
    let (pm, pv) = (mat.clone(), vec_t.clone());
    Ok(Tensor::from_op(
        mat.shape(),
        out,
        vec![mat.clone(), vec_t.clone()],
        move |g| {
            if pm.requires_grad() {
                let b = pv.data();
                let gm: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * b[i % n]).collect();
                drop(b);
                pm.accumulate_grad(&gm);
            }
            if pv.requires_grad() {
                let a = pm.data();
                let mut gv = vec![0.0; n];
                for r in 0..rows {
                    for j in 0..n {
                        gv[j] += g[r * n + j] * a[r * n + j];
                    }
                }
                drop(a);
                pv.accumulate_grad(&gv);
            }
        },
    ))
}

/// All pairwise row sums of two row matrices: row (i, j) of the output is
/// `a[i, :] + b[j, :]`, with the `i` index varying slowest.
pub fn pairwise_row_sum(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ash, bsh) = (a.shape(), b.shape());
    if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[1] {
        return Err(dim_error("pairwise_row_sum", &ash, &bsh));
    }
    let (m, n, c) = (ash[0], bsh[0], ash[1]);
    let mut out = vec![0.0; m * n * c];
    {
        let (av, bv) = (a.data(), b.data());
        for i in 0..m {
            for j in 0..n {
                let row = (i * n + j) * c;
                for ch in 0..c {
                    out[row + ch] = av[i * c + ch] + bv[j * c + ch];
                }
            }
        }
    }
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        vec![m * n, c],
        out,
        vec![a.clone(), b.clone()],
        move |g| {
            if pa.requires_grad() {
                let mut ga = vec![0.0; m * c];
                for i in 0..m {
                    for j in 0..n {
                        let row = (i * n + j) * c;
                        for ch in 0..c {
                            ga[i * c + ch] += g[row + ch];
                        }
                    }
                }
                pa.accumulate_grad(&ga);
            }
            if pb.requires_grad() {
                let mut gb = vec![0.0; n * c];
                for i in 0..m {
                    for j in 0..n {
                        let row = (i * n + j) * c;
                        for ch in 0..c {
                            gb[j * c + ch] += g[row + ch];
                        }
                    }
                }
                pb.accumulate_grad(&gb);
            }
        },
    ))
}

/// Per-vector layer normalization over the trailing axis: subtract the mean,
/// divide by the population standard deviation (epsilon inside the root),
/// then apply the learned elementwise gain and bias.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let shape = x.shape();
    let c = *shape.last().expect("layer_norm on empty shape");
    if gain.shape_ref() != [c] {
        return Err(dim_error("layer_norm gain", &shape, gain.shape_ref()));
    }
    same_shape("layer_norm bias", gain, bias)?;
    let rows = x.numel() / c;
    let mut out = vec![0.0; x.numel()];
    {
        let xv = x.data();
        let gv = gain.data();
        let bv = bias.data();
        for r in 0..rows {
            let xr = &xv[r * c..(r + 1) * c];
            let (mu, s) = row_moments(xr, eps);
            for j in 0..c {
                out[r * c + j] = (xr[j] - mu) / s * gv[j] + bv[j];
            }
        }
    }
    let (px, pg, pb) = (x.clone(), gain.clone(), bias.clone());
    Ok(Tensor::from_op(
        shape,
        out,
        vec![x.clone(), gain.clone(), bias.clone()],
        move |g| {
            let xv = px.data();
            let gv = pg.data();
            let mut gx = vec![0.0; xv.len()];
            let mut ggain = vec![0.0; c];
            let mut gbias = vec![0.0; c];
            for r in 0..rows {
                let xr = &xv[r * c..(r + 1) * c];
                let gr = &g[r * c..(r + 1) * c];
                let (mu, s) = row_moments(xr, eps);
                let xhat: Vec<f64> = xr.iter().map(|xi| (xi - mu) / s).collect();
                let h: Vec<f64> = gr.iter().zip(gv.iter()).map(|(gi, wi)| gi * wi).collect();
                let m1: f64 = h.iter().sum::<f64>() / c as f64;
                let m2: f64 = h.iter().zip(&xhat).map(|(hi, xi)| hi * xi).sum::<f64>() / c as f64;
                for j in 0..c {
                    gx[r * c + j] = (h[j] - m1 - xhat[j] * m2) / s;
                    ggain[j] += gr[j] * xhat[j];
                    gbias[j] += gr[j];
                }
            }
            drop(xv);
            drop(gv);
            px.accumulate_grad(&gx);
            pg.accumulate_grad(&ggain);
            pb.accumulate_grad(&gbias);
        },
    ))
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let c = row.len() as f64;
    let mu = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c;
    (mu, (var + eps).sqrt())
}

/// Padding mode for 1-D average pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Pad so the output keeps ceil(L / stride) positions; padded slots are
    /// excluded from the mean (division by the count of real elements).
    Same,
    /// No padding; the window must fit inside the sequence.
    None,
}

/// Sliding per-channel mean over the rows of an `L x C` sequence. With
/// `window == L`, `stride == L`, `Padding::None` this is global average
/// pooling over positions.
pub fn avgpool1d(x: &Tensor, window: usize, stride: usize, padding: Padding) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(dim_error("avgpool1d", &shape, &[0]));
    }
    let (l, _c) = (shape[0], shape[1]);
    if window == 0 || stride == 0 {
        return Err(Error::Contract(
            "avgpool1d window and stride must be >= 1".to_string(),
        ));
    }
    if padding == Padding::None && window > l {
        return Err(dim_error("avgpool1d", &shape, &[window]));
    }
    let (out_len, pad_left) = match padding {
        Padding::Same => {
            let out = l.div_ceil(stride);
            let total = ((out - 1) * stride + window).saturating_sub(l);
            (out, (total / 2) as isize)
        }
        Padding::None => ((l - window) / stride + 1, 0),
    };
    // The pool is a fixed row-stochastic matrix; matmul supplies the
    // backward pass.
    let mut pool = vec![0.0; out_len * l];
    for o in 0..out_len {
        let start = (o * stride) as isize - pad_left;
        let valid: Vec<usize> = (start..start + window as isize)
            .filter(|&i| i >= 0 && (i as usize) < l)
            .map(|i| i as usize)
            .collect();
        if valid.is_empty() {
            return Err(Error::Contract(format!(
                "avgpool1d window at position {o} covers no input elements"
            )));
        }
        let w = 1.0 / valid.len() as f64;
        for i in valid {
            pool[o * l + i] = w;
        }
    }
    let pool_t = Tensor::new(vec![out_len, l], pool)?;
    pool_t.matmul(x)
}
