use std::rc::Rc;

use super::{rows_cols, same_shape};
use crate::error::{shape_err, Result};
use crate::{Scalar, Tensor, Var};

impl<'t, T: Scalar> Var<'t, T> {
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let x = self.value();
        let y: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape().to_vec(), y).expect("same shape");
        let y = Rc::new(out.data().to_vec());
        self.tape().record(op, out, &[*self], move |g, _| {
            let gx = g
                .iter()
                .zip(x.data())
                .zip(y.iter())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", a.shape(), b.shape())?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| *x + *y)
            .collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.tape().record("add", out, &[*self, *other], |g, need| {
            vec![need[0].then(|| g.to_vec()), need[1].then(|| g.to_vec())]
        }))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", a.shape(), b.shape())?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| *x - *y)
            .collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.tape().record("sub", out, &[*self, *other], |g, need| {
            vec![
                need[0].then(|| g.to_vec()),
                need[1].then(|| g.iter().map(|v| -*v).collect()),
            ]
        }))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", a.shape(), b.shape())?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| *x * *y)
            .collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self
            .tape()
            .record("mul", out, &[*self, *other], move |g, need| {
                vec![
                    need[0].then(|| g.iter().zip(b.data()).map(|(g, y)| *g * *y).collect()),
                    need[1].then(|| g.iter().zip(a.data()).map(|(g, x)| *g * *x).collect()),
                ]
            }))
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        self.unary("scale", |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: T) -> Var<'t, T> {
        self.unary("add_scalar", |x| x + c, |_, _| T::one())
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn square(&self) -> Var<'t, T> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn silu(&self) -> Var<'t, T> {
        self.unary(
            "silu",
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&self) -> Var<'t, T> {
        self.unary("gelu", gelu, gelu_grad)
    }

    pub fn softplus(&self) -> Var<'t, T> {
        self.unary("softplus", softplus, |x, _| sigmoid(x))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&self, lo: T, hi: T) -> Var<'t, T> {
        self.unary(
            "clamp",
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x < lo || x > hi {
                    T::zero()
                } else {
                    T::one()
                }
            },
        )
    }

    /// `x[.., j] + bias[j]`.
    pub fn add_bias(&self, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, b) = (self.value(), bias.value());
        let (rows, cols) = rows_cols(x.shape());
        if b.len() != cols {
            return shape_err(
                "add_bias",
                format!("bias of {} for last dim {cols}", b.len()),
            );
        }
        let mut data = x.data().to_vec();
        for r in 0..rows {
            for (v, bb) in data[r * cols..(r + 1) * cols].iter_mut().zip(b.data()) {
                *v += *bb;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self
            .tape()
            .record("add_bias", out, &[*self, *bias], move |g, need| {
                let gb = need[1].then(|| {
                    let mut gb = vec![T::zero(); cols];
                    for r in 0..rows {
                        for (acc, v) in gb.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *acc += *v;
                        }
                    }
                    gb
                });
                vec![need[0].then(|| g.to_vec()), gb]
            }))
    }

    /// `x[.., j] * w[j]`.
    pub fn mul_row(&self, w: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, wv) = (self.value(), w.value());
        let (rows, cols) = rows_cols(x.shape());
        if wv.len() != cols {
            return shape_err(
                "mul_row",
                format!("weight of {} for last dim {cols}", wv.len()),
            );
        }
        let mut data = x.data().to_vec();
        for r in 0..rows {
            for (v, ww) in data[r * cols..(r + 1) * cols].iter_mut().zip(wv.data()) {
                *v *= *ww;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self
            .tape()
            .record("mul_row", out, &[*self, *w], move |g, need| {
                let gx = need[0].then(|| {
                    let mut gx = g.to_vec();
                    for r in 0..rows {
                        for (v, ww) in gx[r * cols..(r + 1) * cols].iter_mut().zip(wv.data()) {
                            *v *= *ww;
                        }
                    }
                    gx
                });
                let gw = need[1].then(|| {
                    let mut gw = vec![T::zero(); cols];
                    for r in 0..rows {
                        let xs = &x.data()[r * cols..(r + 1) * cols];
                        for ((acc, gv), xv) in gw.iter_mut().zip(&g[r * cols..]).zip(xs) {
                            *acc += *gv * *xv;
                        }
                    }
                    gw
                });
                vec![gx, gw]
            }))
    }

    pub fn sum(&self) -> Var<'t, T> {
        let x = self.value();
        let n = x.len();
        let s = x.data().iter().copied().sum();
        self.tape()
            .record("sum", Tensor::scalar(s), &[*self], move |g, _| {
                vec![Some(vec![g[0]; n])]
            })
    }

    pub fn mean(&self) -> Var<'t, T> {
        let n = self.value().len();
        self.sum().scale(T::one() / T::of(n as f64))
    }

    /// `Σ w ⊙ x` against a constant weight tensor.
    pub fn dot_const(&self, w: &Tensor<T>) -> Result<Var<'t, T>> {
        let x = self.value();
        same_shape("dot_const", x.shape(), w.shape())?;
        let s = x.data().iter().zip(w.data()).map(|(a, b)| *a * *b).sum();
        let w = w.data().to_vec();
        Ok(self
            .tape()
            .record("dot_const", Tensor::scalar(s), &[*self], move |g, _| {
                vec![Some(w.iter().map(|v| *v * g[0]).collect())]
            }))
    }

    /// Sum of a list of same-shaped variables.
    pub fn sum_all(items: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let (first, rest) = items
            .split_first()
            .ok_or_else(|| crate::AutodiffError::Argument("sum_all of nothing".into()))?;
        rest.iter().try_fold(*first, |acc, v| acc.add(v))
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(SQRT_2_OVER_PI);
    let inner = c * (x + T::of(0.044715) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T, _y: T) -> T {
    let c = T::of(SQRT_2_OVER_PI);
    let inner = c * (x + T::of(0.044715) * x * x * x);
    let th = inner.tanh();
    let dinner = c * (T::one() + T::of(3.0 * 0.044715) * x * x);
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * dinner
}
