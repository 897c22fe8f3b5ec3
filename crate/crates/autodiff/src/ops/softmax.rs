use super::rows_cols;
use crate::error::{AutodiffError, Result};
use crate::{Scalar, Tensor, Var};

pub(crate) fn softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for (o, v) in out.iter_mut().zip(x) {
        *o = (*v - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

fn log_softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + x.iter().map(|v| (*v - m).exp()).sum::<T>().ln();
    for (o, v) in out.iter_mut().zip(x) {
        *o = *v - lse;
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Softmax over the last axis.
    pub fn softmax(&self) -> Var<'t, T> {
        let x = self.value();
        let (rows, n) = rows_cols(x.shape());
        let mut y = vec![T::zero(); x.len()];
        for r in 0..rows {
            softmax_row(&x.data()[r * n..(r + 1) * n], &mut y[r * n..(r + 1) * n]);
        }
        let out = Tensor::new(x.shape().to_vec(), y.clone()).expect("same shape");
        self.tape().record("softmax", out, &[*self], move |g, _| {
            vec![Some(softmax_backward(&y, g, rows, n, T::one()))]
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Var<'t, T> {
        let x = self.value();
        let (rows, n) = rows_cols(x.shape());
        let mut y = vec![T::zero(); x.len()];
        for r in 0..rows {
            log_softmax_row(&x.data()[r * n..(r + 1) * n], &mut y[r * n..(r + 1) * n]);
        }
        let out = Tensor::new(x.shape().to_vec(), y.clone()).expect("same shape");
        self.tape()
            .record("log_softmax", out, &[*self], move |g, _| {
                let mut gx = vec![T::zero(); rows * n];
                for r in 0..rows {
                    let gs: T = g[r * n..(r + 1) * n].iter().copied().sum();
                    for j in 0..n {
                        gx[r * n + j] = g[r * n + j] - y[r * n + j].exp() * gs;
                    }
                }
                vec![Some(gx)]
            })
    }

    /// Multiclass cross-entropy `-log softmax(logits)[label]` of a logit vector.
    pub fn cross_entropy(&self, label: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let n = x.len();
        if label >= n {
            return Err(AutodiffError::Argument(format!(
                "label {label} out of range for {n} classes"
            )));
        }
        let mut p = vec![T::zero(); n];
        softmax_row(x.data(), &mut p);
        let mut lp = vec![T::zero(); n];
        log_softmax_row(x.data(), &mut lp);
        let loss = -lp[label];
        Ok(self.tape().record(
            "cross_entropy",
            Tensor::scalar(loss),
            &[*self],
            move |g, _| {
                let mut gx: Vec<T> = p.iter().map(|v| *v * g[0]).collect();
                gx[label] -= g[0];
                vec![Some(gx)]
            },
        ))
    }
}

/// Backward of a row softmax scaled by `inv_tau` (for tempered variants).
pub(crate) fn softmax_backward<T: Scalar>(
    y: &[T],
    g: &[T],
    rows: usize,
    n: usize,
    inv_tau: T,
) -> Vec<T> {
    let mut gx = vec![T::zero(); rows * n];
    for r in 0..rows {
        let ys = &y[r * n..(r + 1) * n];
        let gs = &g[r * n..(r + 1) * n];
        let dot: T = ys.iter().zip(gs).map(|(a, b)| *a * *b).sum();
        for j in 0..n {
            gx[r * n + j] = ys[j] * (gs[j] - dot) * inv_tau;
        }
    }
    gx
}
