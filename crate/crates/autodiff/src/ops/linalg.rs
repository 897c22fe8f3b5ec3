use super::as_matrix;
use crate::error::{shape_err, Result};
use crate::{Scalar, Tensor, Var};

/// `out[m,n] += a[m,k] * b[k,n]`, i-k-j loop order.
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * *bv;
            }
        }
    }
}

/// Inner product with eight interleaved partial sums, so the loop
/// vectorizes; the summation order is fixed.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ar.iter().zip(br) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out[m,k] += g[m,n] * b[k,n]^T`.
pub(crate) fn gemm_nt<T: Scalar>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`.
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * *gv;
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_named("matmul", other)
    }

    pub(crate) fn matmul_named(&self, op: &'static str, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = as_matrix(op, a.shape())?;
        let (k2, n) = as_matrix(op, b.shape())?;
        if k != k2 {
            return shape_err(op, format!("[{m},{k}] x [{k2},{n}]"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(a.data(), b.data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self
            .tape()
            .record(op, out, &[*self, *other], move |g, need| {
                let ga = need[0].then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    gemm_nt(g, b.data(), &mut ga, m, k, n);
                    ga
                });
                let gb = need[1].then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    gemm_tn(a.data(), g, &mut gb, m, k, n);
                    gb
                });
                vec![ga, gb]
            }))
    }

    pub fn transpose(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (r, c) = as_matrix("transpose", x.shape())?;
        let data = transpose_data(x.data(), r, c);
        let out = Tensor::new(vec![c, r], data)?;
        Ok(self.tape().record("transpose", out, &[*self], move |g, _| {
            vec![Some(transpose_data(g, c, r))]
        }))
    }
}

pub(crate) fn transpose_data<T: Scalar>(x: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}
