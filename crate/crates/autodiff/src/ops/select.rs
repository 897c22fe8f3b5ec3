use super::as_matrix;
use super::softmax::{softmax_backward, softmax_row};
use crate::error::{shape_err, AutodiffError, Result};
use crate::{Scalar, Tensor, Var};

/// Index of the largest element; ties go to the lowest index.
pub fn argmax_lowest<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Mask-weighted frame contraction `out[k] = Σ_p mask[k,p] · frames[p]`.
    ///
    /// `self`: mask `[k, p]`, `frames`: `[p, features]`.
    pub fn gather_contract(&self, frames: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_named("gather_contract", frames)
    }

    /// Straight-through Gumbel-softmax over each row of a score matrix.
    ///
    /// The forward value is the one-hot argmax of `(scores + noise) / tau`;
    /// the backward pass uses the Jacobian of the tempered softmax at that
    /// point. `noise` is a frozen Gumbel(0, 1) draw of the same shape.
    pub fn gumbel_softmax_st(&self, noise: &Tensor<T>, tau: T) -> Result<Var<'t, T>> {
        let s = self.value();
        let (rows, n) = as_matrix("gumbel_softmax_st", s.shape())?;
        if noise.shape() != s.shape() {
            return shape_err(
                "gumbel_softmax_st",
                format!("noise {:?} for scores {:?}", noise.shape(), s.shape()),
            );
        }
        if !(tau > T::zero()) {
            return Err(AutodiffError::Argument(format!(
                "gumbel_softmax_st: temperature must be positive, got {tau}"
            )));
        }
        if !s.is_finite() {
            return Err(AutodiffError::Numeric {
                op: "gumbel_softmax_st",
                detail: "non-finite scores".into(),
            });
        }
        let logits: Vec<T> = s
            .data()
            .iter()
            .zip(noise.data())
            .map(|(a, b)| (*a + *b) / tau)
            .collect();
        let mut soft = vec![T::zero(); rows * n];
        let mut hard = vec![T::zero(); rows * n];
        for r in 0..rows {
            softmax_row(&logits[r * n..(r + 1) * n], &mut soft[r * n..(r + 1) * n]);
            hard[r * n + argmax_lowest(&logits[r * n..(r + 1) * n])] = T::one();
        }
        let out = Tensor::new(vec![rows, n], hard)?;
        let inv_tau = T::one() / tau;
        Ok(self
            .tape()
            .record("gumbel_softmax_st", out, &[*self], move |g, _| {
                vec![Some(softmax_backward(&soft, g, rows, n, inv_tau))]
            }))
    }

    /// Tempered softmax of `(scores + noise) / tau`; the soft path of
    /// [`Var::gumbel_softmax_st`].
    pub fn gumbel_softmax_soft(&self, noise: &Tensor<T>, tau: T) -> Result<Var<'t, T>> {
        let s = self.value();
        if noise.shape() != s.shape() {
            return shape_err(
                "gumbel_softmax_soft",
                format!("noise {:?} for scores {:?}", noise.shape(), s.shape()),
            );
        }
        let tape = self.tape();
        let noised = self.add(&tape.constant(noise.clone()))?;
        Ok(noised.scale(T::one() / tau).softmax())
    }
}
