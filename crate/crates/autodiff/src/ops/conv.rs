use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::as_matrix;
use super::linalg::{gemm, gemm_nt, gemm_tn};
use crate::error::{shape_err, Result};
use crate::{Scalar, Tensor, Var};

/// Geometry of a 3-D convolution over `[channels, frames, rows, cols]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Dims {
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
}

fn out_len(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    (n + 2 * p).checked_sub(k).map(|v| v / s + 1)
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Direct-loop 3-D convolution with per-output-channel bias.
    ///
    /// `self`: `[cin, t, h, w]`, `weight`: `[cout, cin, kt, kh, kw]`,
    /// `bias`: `[cout]`; output `[cout, t', h', w']`.
    pub fn conv3d(
        &self,
        weight: &Var<'t, T>,
        bias: &Var<'t, T>,
        spec: Conv3dSpec,
    ) -> Result<Var<'t, T>> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 5 || ws[1] != xs[0] || b.len() != ws[0] {
            return shape_err(
                "conv3d",
                format!("input {xs:?}, weight {ws:?}, bias {:?}", b.shape()),
            );
        }
        let mut output = [0; 3];
        for d in 0..3 {
            output[d] = out_len(xs[d + 1], ws[d + 2], spec.stride[d], spec.pad[d])
                .filter(|_| spec.stride[d] > 0)
                .ok_or_else(|| crate::AutodiffError::Shape {
                    op: "conv3d",
                    detail: format!("kernel {ws:?} does not fit input {xs:?}"),
                })?;
        }
        let dims = Dims {
            cin: xs[0],
            cout: ws[0],
            input: [xs[1], xs[2], xs[3]],
            kernel: [ws[2], ws[3], ws[4]],
            output,
        };
        let plane = output.iter().product::<usize>();
        let rows = dims.cin * dims.kernel.iter().product::<usize>();
        let index = cached_index(dims, spec);
        let cols: Vec<T> = index
            .iter()
            .map(|&i| {
                if i == usize::MAX {
                    T::zero()
                } else {
                    x.data()[i]
                }
            })
            .collect();
        let mut out = vec![T::zero(); dims.cout * plane];
        gemm(w.data(), &cols, &mut out, dims.cout, rows, plane);
        for (co, chunk) in out.chunks_mut(plane).enumerate() {
            let bv = b.data()[co];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let shape = vec![dims.cout, output[0], output[1], output[2]];
        let out = Tensor::new(shape, out)?;
        Ok(self
            .tape()
            .record("conv3d", out, &[*self, *weight, *bias], move |g, need| {
                let gx = need[0].then(|| {
                    let mut gcols = vec![T::zero(); rows * plane];
                    gemm_tn(w.data(), g, &mut gcols, dims.cout, rows, plane);
                    let mut gx = vec![T::zero(); x.len()];
                    for (&i, v) in index.iter().zip(&gcols) {
                        if i != usize::MAX {
                            gx[i] += *v;
                        }
                    }
                    gx
                });
                let gw = need[1].then(|| {
                    let mut gw = vec![T::zero(); w.len()];
                    gemm_nt(g, &cols, &mut gw, dims.cout, rows, plane);
                    gw
                });
                let gb =
                    need[2].then(|| g.chunks(plane).map(|c| c.iter().copied().sum()).collect());
                vec![gx, gw, gb]
            }))
    }

    /// Mean over the last two axes: `[c, t, h, w] -> [c, t]`.
    pub fn spatial_mean(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 4 {
            return shape_err("spatial_mean", format!("expected rank 4, got {s:?}"));
        }
        let (rows, plane) = (s[0] * s[1], s[2] * s[3]);
        let inv = T::one() / T::of(plane as f64);
        let data = x
            .data()
            .chunks(plane)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![s[0], s[1]], data)?;
        Ok(self
            .tape()
            .record("spatial_mean", out, &[*self], move |g, _| {
                let mut gx = Vec::with_capacity(rows * plane);
                for gv in g {
                    gx.extend(std::iter::repeat_n(*gv * inv, plane));
                }
                vec![Some(gx)]
            }))
    }

    /// Causal depthwise 1-D convolution along rows.
    ///
    /// `self`: `[len, ch]`, `weight`: `[ch, width]`, `bias`: `[ch]`;
    /// `y[t,c] = bias[c] + Σ_j weight[c,j] · x[t - (width-1) + j, c]`.
    pub fn depthwise_conv1d(&self, weight: &Var<'t, T>, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let (len, ch) = as_matrix("depthwise_conv1d", x.shape())?;
        let (wc, width) = as_matrix("depthwise_conv1d", w.shape())?;
        if wc != ch || b.len() != ch {
            return shape_err(
                "depthwise_conv1d",
                format!(
                    "input [{len},{ch}], weight {:?}, bias {:?}",
                    w.shape(),
                    b.shape()
                ),
            );
        }
        let mut y = vec![T::zero(); len * ch];
        for t in 0..len {
            let row = &mut y[t * ch..(t + 1) * ch];
            row.copy_from_slice(b.data());
            for j in 0..width {
                let Some(src) = (t + j).checked_sub(width - 1) else {
                    continue;
                };
                let xrow = &x.data()[src * ch..(src + 1) * ch];
                for c in 0..ch {
                    row[c] += w.data()[c * width + j] * xrow[c];
                }
            }
        }
        let out = Tensor::new(vec![len, ch], y)?;
        Ok(self.tape().record(
            "depthwise_conv1d",
            out,
            &[*self, *weight, *bias],
            move |g, need| {
                let mut gx = vec![T::zero(); len * ch];
                let mut gw = vec![T::zero(); ch * width];
                let mut gb = vec![T::zero(); ch];
                for t in 0..len {
                    let grow = &g[t * ch..(t + 1) * ch];
                    for (acc, gv) in gb.iter_mut().zip(grow) {
                        *acc += *gv;
                    }
                    for j in 0..width {
                        let Some(src) = (t + j).checked_sub(width - 1) else {
                            continue;
                        };
                        for c in 0..ch {
                            gx[src * ch + c] += grow[c] * w.data()[c * width + j];
                            gw[c * width + j] += grow[c] * x.data()[src * ch + c];
                        }
                    }
                }
                vec![
                    need[0].then_some(gx),
                    need[1].then_some(gw),
                    need[2].then_some(gb),
                ]
            },
        ))
    }
}

thread_local! {
    static INDEX_CACHE: RefCell<HashMap<(Dims, Conv3dSpec), Rc<Vec<usize>>>> = RefCell::new(HashMap::new());
}

fn cached_index(d: Dims, spec: Conv3dSpec) -> Rc<Vec<usize>> {
    INDEX_CACHE.with(|c| {
        let mut c = c.borrow_mut();
        if c.len() > 64 {
            c.clear();
        }
        c.entry((d, spec))
            .or_insert_with(|| Rc::new(im2col_index(d, spec)))
            .clone()
    })
}

/// Input offset feeding each `(tap, output position)` pair, row-major over
/// `[cin·kt·kh·kw, t'·h'·w']`; `usize::MAX` marks zero padding.
fn im2col_index(d: Dims, spec: Conv3dSpec) -> Vec<usize> {
    let [it, ih, iw] = d.input;
    let [kt, kh, kw] = d.kernel;
    let [ot, oh, ow] = d.output;
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.pad;
    let plane = ot * oh * ow;
    let mut index = vec![usize::MAX; d.cin * kt * kh * kw * plane];
    let mut r = 0;
    for ci in 0..d.cin {
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let row = &mut index[r * plane..(r + 1) * plane];
                    r += 1;
                    for zt in 0..ot {
                        let Some(xt) = (zt * st + dt).checked_sub(pt).filter(|&v| v < it) else {
                            continue;
                        };
                        for zh in 0..oh {
                            let Some(xh) = (zh * sh + dh).checked_sub(ph).filter(|&v| v < ih)
                            else {
                                continue;
                            };
                            let base = ((ci * it + xt) * ih + xh) * iw;
                            for zw in 0..ow {
                                if let Some(xw) = (zw * sw + dw).checked_sub(pw).filter(|&v| v < iw)
                                {
                                    row[(zt * oh + zh) * ow + zw] = base + xw;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    index
}
