use super::rows_cols;
use crate::error::{shape_err, Result};
use crate::{Scalar, Tensor, Var};

impl<'t, T: Scalar> Var<'t, T> {
    /// Row-wise layer normalization with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let (x, gm, bt) = (self.value(), gamma.value(), beta.value());
        let (rows, n) = rows_cols(x.shape());
        if gm.len() != n || bt.len() != n {
            return shape_err("layer_norm", format!("affine params for width {n}"));
        }
        let nf = T::of(n as f64);
        let mut xhat = vec![T::zero(); rows * n];
        let mut inv_std = vec![T::zero(); rows];
        let mut y = vec![T::zero(); rows * n];
        for r in 0..rows {
            let xs = &x.data()[r * n..(r + 1) * n];
            let mean = xs.iter().copied().sum::<T>() / nf;
            let var = xs.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (xs[j] - mean) * is;
                xhat[r * n + j] = h;
                y[r * n + j] = h * gm.data()[j] + bt.data()[j];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), y)?;
        Ok(self.tape().record(
            "layer_norm",
            out,
            &[*self, *gamma, *beta],
            move |g, need| {
                let mut gx = vec![T::zero(); rows * n];
                let mut gg = vec![T::zero(); n];
                let mut gb = vec![T::zero(); n];
                for r in 0..rows {
                    let grow = &g[r * n..(r + 1) * n];
                    let hrow = &xhat[r * n..(r + 1) * n];
                    let mut sum_d = T::zero();
                    let mut sum_dh = T::zero();
                    for j in 0..n {
                        let d = grow[j] * gm.data()[j];
                        sum_d += d;
                        sum_dh += d * hrow[j];
                        gg[j] += grow[j] * hrow[j];
                        gb[j] += grow[j];
                    }
                    for j in 0..n {
                        let d = grow[j] * gm.data()[j];
                        gx[r * n + j] = inv_std[r] * (d - sum_d / nf - hrow[j] * sum_dh / nf);
                    }
                }
                vec![
                    need[0].then_some(gx),
                    need[1].then_some(gg),
                    need[2].then_some(gb),
                ]
            },
        ))
    }

    /// Row-wise RMS normalization with per-column `weight`.
    pub fn rms_norm(&self, weight: &Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let (x, wv) = (self.value(), weight.value());
        let (rows, n) = rows_cols(x.shape());
        if wv.len() != n {
            return shape_err("rms_norm", format!("weight for width {n}"));
        }
        let nf = T::of(n as f64);
        let mut inv_rms = vec![T::zero(); rows];
        let mut y = vec![T::zero(); rows * n];
        for r in 0..rows {
            let xs = &x.data()[r * n..(r + 1) * n];
            let ms = xs.iter().map(|v| *v * *v).sum::<T>() / nf;
            let ir = T::one() / (ms + eps).sqrt();
            inv_rms[r] = ir;
            for j in 0..n {
                y[r * n + j] = xs[j] * ir * wv.data()[j];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), y)?;
        Ok(self
            .tape()
            .record("rms_norm", out, &[*self, *weight], move |g, need| {
                let mut gx = vec![T::zero(); rows * n];
                let mut gw = vec![T::zero(); n];
                for r in 0..rows {
                    let xs = &x.data()[r * n..(r + 1) * n];
                    let grow = &g[r * n..(r + 1) * n];
                    let ir = inv_rms[r];
                    let mut dot = T::zero();
                    for j in 0..n {
                        dot += grow[j] * wv.data()[j] * xs[j];
                        gw[j] += grow[j] * xs[j] * ir;
                    }
                    let coef = dot * ir * ir * ir / nf;
                    for j in 0..n {
                        gx[r * n + j] = grow[j] * wv.data()[j] * ir - xs[j] * coef;
                    }
                }
                vec![need[0].then_some(gx), need[1].then_some(gw)]
            }))
    }
}
