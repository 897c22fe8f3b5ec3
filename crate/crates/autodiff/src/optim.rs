//! Named parameter storage, AdamW, and batch gradient reduction.

use std::collections::HashMap;

use crate::error::{AutodiffError, Result};
use crate::{Scalar, Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

/// Ordered collection of uniquely named parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        decay: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::Argument(format!(
                "duplicate parameter name {name}"
            )));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, value, decay });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Places every parameter on `tape` as a gradient-requiring leaf, in
    /// store order.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.entries
            .iter()
            .map(|e| tape.param(e.value.clone()))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    decay: e.decay,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// AdamW with bias-corrected moments and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(beta1: T, beta2: T, eps: T) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `store` with the matching gradient.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Tensor<T>],
        lr: T,
        weight_decay: T,
    ) -> Result<()> {
        if grads.len() != store.len() {
            return Err(AutodiffError::Argument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (e, g) in store.entries.iter().zip(grads) {
            if e.value.shape() != g.shape() {
                return Err(AutodiffError::Shape {
                    op: "adamw_step",
                    detail: format!("{}: {:?} vs {:?}", e.name, e.value.shape(), g.shape()),
                });
            }
            if !g.is_finite() {
                return Err(AutodiffError::Numeric {
                    op: "adamw_step",
                    detail: format!("gradient of parameter {}", e.name),
                });
            }
        }
        if self.m.is_empty() {
            self.m = store
                .entries
                .iter()
                .map(|e| vec![T::zero(); e.value.len()])
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (i, (e, g)) in store.entries.iter_mut().zip(grads).enumerate() {
            let decay = if e.decay {
                T::one() - lr * weight_decay
            } else {
                T::one()
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in e.value.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (T::one() - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (T::one() - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p = *p * decay - lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Neumaier-compensated running sum in `f64`.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean of per-sample gradient lists, summed in sample order with
/// compensated `f64` accumulation.
pub fn reduce_gradients<T: Scalar>(per_sample: &[Vec<Tensor<T>>]) -> Result<Vec<Tensor<T>>> {
    let Some(first) = per_sample.first() else {
        return Err(AutodiffError::Argument("no gradients to reduce".into()));
    };
    let scale = 1.0 / per_sample.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(p, proto)| {
            let mut acc = vec![CompensatedSum::default(); proto.len()];
            for sample in per_sample {
                let g = &sample[p];
                if g.shape() != proto.shape() {
                    return Err(AutodiffError::Shape {
                        op: "reduce_gradients",
                        detail: format!("{:?} vs {:?}", g.shape(), proto.shape()),
                    });
                }
                for (a, v) in acc.iter_mut().zip(g.data()) {
                    a.add(v.as_f64());
                }
            }
            Tensor::new(
                proto.shape().to_vec(),
                acc.iter().map(|a| T::of(a.value() * scale)).collect(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64, decay: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(v), decay).unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut store = scalar_store(0.37, true);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8);
        opt.step(&mut store, &[Tensor::scalar(0.0)], 1e-3, 0.0)
            .unwrap();
        assert_eq!(store.get(ParamId(0)).item(), 0.37);
    }

    #[test]
    fn first_step_is_bias_corrected() {
        let mut store = scalar_store(1.0, true);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8);
        opt.step(&mut store, &[Tensor::scalar(1.0)], 0.1, 0.0)
            .unwrap();
        // m̂ = 1, v̂ = 1 → p = 1 − 0.1 · 1 / (1 + 1e-8)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((store.get(ParamId(0)).item() - expected).abs() < 1e-15);
        assert!((store.get(ParamId(0)).item() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_scales_parameter() {
        let mut store = scalar_store(1.0, true);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8);
        opt.step(&mut store, &[Tensor::scalar(0.0)], 1e-3, 0.05)
            .unwrap();
        assert!((store.get(ParamId(0)).item() - 0.99995).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = scalar_store(1.0, true);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8);
        let err = opt
            .step(&mut store, &[Tensor::scalar(f64::NAN)], 1e-3, 0.0)
            .unwrap_err();
        assert!(err.to_string().contains("parameter p"), "{err}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = scalar_store(1.0, true);
        assert!(s.insert("p", Tensor::scalar(2.0), true).is_err());
    }

    #[test]
    fn reduction_is_order_independent() {
        let mut state = 12345u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 10f64.powi((state % 9) as i32 - 4)
        };
        let samples: Vec<Vec<Tensor<f64>>> = (0..33)
            .map(|_| vec![Tensor::from_fn(vec![4], |_| next())])
            .collect();
        let forward = reduce_gradients(&samples).unwrap();
        let mut reversed = samples.clone();
        reversed.reverse();
        let mut rotated = samples.clone();
        rotated.rotate_left(11);
        for other in [
            reduce_gradients(&reversed).unwrap(),
            reduce_gradients(&rotated).unwrap(),
        ] {
            for (a, b) in forward[0].data().iter().zip(other[0].data()) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "{a} vs {b}");
            }
        }
    }
}
