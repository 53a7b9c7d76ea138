//! Stride-1, same-padded depthwise convolution as a CPU kernel. Input is
//! `(N, C, H, W)`, weight `(C, 1, K, K)` with odd `K`.

use std::ops::{Add, Mul};

use candle_core::{CpuStorage, CustomOp2, Layout, Result, Shape, Tensor};

trait Elem: Copy + Default + Add<Output = Self> + Mul<Output = Self> {}
impl Elem for f32 {}
impl Elem for f64 {}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
}

fn dims(x: &Layout, w: &Layout) -> Result<Dims> {
    let (n, c, h, wd) = x.shape().dims4()?;
    let (wc, one, k, k2) = w.shape().dims4()?;
    if wc != c || one != 1 || k != k2 || k % 2 == 0 {
        candle_core::bail!(
            "depthwise weight {:?} incompatible with input {:?}",
            w.shape(),
            x.shape()
        );
    }
    Ok(Dims { n, c, h, w: wd, k })
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("depthwise kernels require contiguous inputs"),
    }
}

/// out[n,c,y,x] = sum_ij src[n,c,y+i-p,x+j-p] * w[c,i,j], optionally with the
/// kernel flipped (used for the input gradient).
fn correlate<T: Elem>(src: &[T], w: &[T], d: Dims, flip: bool) -> Vec<T> {
    let p = d.k / 2;
    let plane = d.h * d.w;
    let mut out = vec![T::default(); d.n * d.c * plane];
    for n in 0..d.n {
        for c in 0..d.c {
            let base = (n * d.c + c) * plane;
            let s = &src[base..base + plane];
            let o = &mut out[base..base + plane];
            let kw = &w[c * d.k * d.k..(c + 1) * d.k * d.k];
            for i in 0..d.k {
                for j in 0..d.k {
                    let tap = if flip {
                        kw[(d.k - 1 - i) * d.k + (d.k - 1 - j)]
                    } else {
                        kw[i * d.k + j]
                    };
                    // Output rows/cols whose source index stays in bounds.
                    let y0 = p.saturating_sub(i);
                    let y1 = (d.h + p).saturating_sub(i).min(d.h);
                    let x0 = p.saturating_sub(j);
                    let x1 = (d.w + p).saturating_sub(j).min(d.w);
                    for y in y0..y1 {
                        let sy = y + i - p;
                        let orow = &mut o[y * d.w..(y + 1) * d.w];
                        let srow = &s[sy * d.w..(sy + 1) * d.w];
                        for x in x0..x1 {
                            orow[x] = orow[x] + srow[x + j - p] * tap;
                        }
                    }
                }
            }
        }
    }
    out
}

/// grad_w[c,i,j] = sum_{n,y,x} g[n,c,y,x] * src[n,c,y+i-p,x+j-p]
fn weight_grad<T: Elem>(g: &[T], src: &[T], d: Dims) -> Vec<T> {
    let p = d.k / 2;
    let plane = d.h * d.w;
    let mut out = vec![T::default(); d.c * d.k * d.k];
    for c in 0..d.c {
        for i in 0..d.k {
            for j in 0..d.k {
                let y0 = p.saturating_sub(i);
                let y1 = (d.h + p).saturating_sub(i).min(d.h);
                let x0 = p.saturating_sub(j);
                let x1 = (d.w + p).saturating_sub(j).min(d.w);
                let mut acc = T::default();
                for n in 0..d.n {
                    let base = (n * d.c + c) * plane;
                    for y in y0..y1 {
                        let sy = y + i - p;
                        for x in x0..x1 {
                            acc = acc + g[base + y * d.w + x] * src[base + sy * d.w + x + j - p];
                        }
                    }
                }
                out[(c * d.k + i) * d.k + j] = acc;
            }
        }
    }
    out
}

struct Forward;
struct InputGrad;
struct WeightGrad {
    kernel: usize,
}

impl CustomOp2 for Forward {
    fn name(&self) -> &'static str {
        "depthwise-conv"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = dims(l1, l2)?;
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(w)) => {
                CpuStorage::F32(correlate(contiguous(x, l1)?, contiguous(w, l2)?, d, false))
            }
            (CpuStorage::F64(x), CpuStorage::F64(w)) => {
                CpuStorage::F64(correlate(contiguous(x, l1)?, contiguous(w, l2)?, d, false))
            }
            _ => candle_core::bail!("depthwise-conv supports f32/f64 with matching dtypes"),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let gx = grad.apply_op2_no_bwd(w, &InputGrad)?;
        let k = w.dim(2)?;
        let gw = grad.apply_op2_no_bwd(&x.contiguous()?, &WeightGrad { kernel: k })?;
        Ok((Some(gx), Some(gw)))
    }
}

impl CustomOp2 for InputGrad {
    fn name(&self) -> &'static str {
        "depthwise-conv-input-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = dims(l1, l2)?;
        let out = match (s1, s2) {
            (CpuStorage::F32(g), CpuStorage::F32(w)) => {
                CpuStorage::F32(correlate(contiguous(g, l1)?, contiguous(w, l2)?, d, true))
            }
            (CpuStorage::F64(g), CpuStorage::F64(w)) => {
                CpuStorage::F64(correlate(contiguous(g, l1)?, contiguous(w, l2)?, d, true))
            }
            _ => candle_core::bail!("depthwise-conv supports f32/f64 with matching dtypes"),
        };
        Ok((out, l1.shape().clone()))
    }
}

impl CustomOp2 for WeightGrad {
    fn name(&self) -> &'static str {
        "depthwise-conv-weight-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = l1.shape().dims4()?;
        if l2.shape() != l1.shape() {
            candle_core::bail!("gradient and input shapes differ");
        }
        let d = Dims { n, c, h, w, k: self.kernel };
        let out = match (s1, s2) {
            (CpuStorage::F32(g), CpuStorage::F32(x)) => {
                CpuStorage::F32(weight_grad(contiguous(g, l1)?, contiguous(x, l2)?, d))
            }
            (CpuStorage::F64(g), CpuStorage::F64(x)) => {
                CpuStorage::F64(weight_grad(contiguous(g, l1)?, contiguous(x, l2)?, d))
            }
            _ => candle_core::bail!("depthwise-conv supports f32/f64 with matching dtypes"),
        };
        Ok((out, Shape::from((c, 1, self.kernel, self.kernel))))
    }
}

pub(crate) fn depthwise_conv(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    x.contiguous()?.apply_op2(&weight.contiguous()?, Forward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn reference(x: &Tensor, w: &Tensor) -> Tensor {
        let c = x.dim(1).unwrap();
        x.conv2d(w, 1, 1, 1, c).unwrap()
    }

    #[test]
    fn matches_grouped_convolution() {
        let dev = Device::Cpu;
        let x = Tensor::randn(0f64, 1.0, (2, 3, 5, 4), &dev).unwrap();
        let w = Tensor::randn(0f64, 1.0, (3, 1, 3, 3), &dev).unwrap();
        let got = depthwise_conv(&x, &w).unwrap();
        let want = reference(&x, &w);
        let diff = (got - want).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (1, 2, 4, 3), &dev).unwrap()).unwrap();
        let w = Var::from_tensor(&Tensor::randn(0f64, 1.0, (2, 1, 3, 3), &dev).unwrap()).unwrap();
        let probe = Tensor::randn(0f64, 1.0, (1, 2, 4, 3), &dev).unwrap();
        let loss = |x: &Tensor, w: &Tensor| -> f64 {
            (depthwise_conv(x, w).unwrap() * &probe)
                .unwrap()
                .sum_all()
                .unwrap()
                .to_scalar::<f64>()
                .unwrap()
        };
        let out = (depthwise_conv(x.as_tensor(), w.as_tensor()).unwrap() * &probe)
            .unwrap()
            .sum_all()
            .unwrap();
        let grads = out.backward().unwrap();
        for var in [&x, &w] {
            let analytic = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            for (i, a) in analytic.iter().enumerate() {
                let eps = 1e-6;
                let bump = |delta: f64| {
                    let mut v = base.clone();
                    v[i] += delta;
                    Tensor::from_vec(v, var.as_tensor().shape(), &dev).unwrap()
                };
                let (xp, xm, wp, wm) = if std::ptr::eq(var, &x) {
                    (bump(eps), bump(-eps), w.as_tensor().clone(), w.as_tensor().clone())
                } else {
                    (x.as_tensor().clone(), x.as_tensor().clone(), bump(eps), bump(-eps))
                };
                let numeric = (loss(&xp, &wp) - loss(&xm, &wm)) / (2.0 * eps);
                assert!((a - numeric).abs() < 1e-6, "{i}: {a} vs {numeric}");
            }
        }
    }
}
