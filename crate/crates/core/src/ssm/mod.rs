//! Selective state-space primitives: zero-order-hold discretization, the
//! input-dependent scan, and a blocked variant that splits the sequence into
//! independently processed chunks.

mod checkpoint;
mod model;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, sidecar_path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use model::{
    assemble_sequence, forward_classify, mamba_block, mamba_branch, patch_embed, BlockParams,
    Classifier, DirectionParams, ModelConfig, Preset,
};

use evssm_autodiff::ops::{scan_forward, zoh};
use evssm_autodiff::Scalar;
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::par::*;

/// Discretizes one diagonal system: `Â = exp(Δa)` and
/// `B̂ = (exp(Δa) − 1)/a · b`, which is `Δ·b` at `a = 0`.
pub fn discretize(a: &[f64], b: &[f64], delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(delta > 0.0) {
        return Err(CoreError::Domain(format!(
            "Δ must be positive, got {delta}"
        )));
    }
    if a.len() != b.len() {
        return Err(CoreError::Shape(format!(
            "A has {} entries, B has {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&a, &b)| {
            let (abar, phi) = zoh(delta, a);
            (abar, phi * b)
        })
        .unzip())
}

/// Parameters of one selective scan over `d_inner` channels with `n_state`
/// states each. `Δ`, `B` and `C` are projected from the input at every step.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<T> {
    pub d_inner: usize,
    pub n_state: usize,
    pub dt_rank: usize,
    /// `[d_inner, n_state]`, with `A = −exp(a_log)`.
    pub a_log: Vec<T>,
    /// `[d_inner]` skip connection.
    pub d: Vec<T>,
    /// `[d_inner, dt_rank + 2·n_state]`.
    pub x_proj: Vec<T>,
    /// `[dt_rank, d_inner]`.
    pub dt_proj: Vec<T>,
    /// `[d_inner]`.
    pub dt_bias: Vec<T>,
}

/// Per-step quantities derived from the input sequence.
pub struct Projected<T> {
    pub delta: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub a: Vec<T>,
}

fn softplus<T: Scalar>(x: T) -> T {
    if x > T::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl<T: Scalar> SsmParams<T> {
    /// Random parameters in the usual initialization ranges.
    pub fn random<R: Rng>(d_inner: usize, n_state: usize, dt_rank: usize, rng: &mut R) -> Self {
        let mut u =
            |n: usize, s: f64| -> Vec<T> { (0..n).map(|_| T::of(rng.gen_range(-s..=s))).collect() };
        let proj_w = dt_rank + 2 * n_state;
        let x_proj = u(d_inner * proj_w, (d_inner as f64).sqrt().recip());
        let dt_proj = u(dt_rank * d_inner, (dt_rank as f64).sqrt().recip());
        let d = u(d_inner, 1.0);
        let a_log = (0..d_inner * n_state)
            .map(|i| T::of((((i % n_state) + 1) as f64).ln()))
            .collect();
        let dt_bias = (0..d_inner)
            .map(|_| {
                let dt: f64 = (rng.gen_range(1e-3f64.ln()..1e-1f64.ln())).exp();
                T::of(dt + (-(-dt).exp_m1()).ln())
            })
            .collect();
        Self {
            d_inner,
            n_state,
            dt_rank,
            a_log,
            d,
            x_proj,
            dt_proj,
            dt_bias,
        }
    }

    /// `Δ = softplus(x W_x[:, :R] W_dt + b_dt)`, `B`, `C` from the remaining
    /// projection columns.
    pub fn project(&self, x: &[T], len: usize) -> Result<Projected<T>> {
        let (ch, ns, r) = (self.d_inner, self.n_state, self.dt_rank);
        if x.len() != len * ch {
            return Err(CoreError::Shape(format!(
                "input of {} values for [{len}, {ch}]",
                x.len()
            )));
        }
        let pw = r + 2 * ns;
        let mut delta = vec![T::zero(); len * ch];
        let mut b = vec![T::zero(); len * ns];
        let mut c = vec![T::zero(); len * ns];
        let mut proj = vec![T::zero(); pw];
        for t in 0..len {
            proj.iter_mut().for_each(|v| *v = T::zero());
            for k in 0..ch {
                let xv = x[t * ch + k];
                for (p, w) in proj.iter_mut().zip(&self.x_proj[k * pw..(k + 1) * pw]) {
                    *p += xv * *w;
                }
            }
            for k in 0..ch {
                let mut acc = self.dt_bias[k];
                for j in 0..r {
                    acc += proj[j] * self.dt_proj[j * ch + k];
                }
                delta[t * ch + k] = softplus(acc);
            }
            b[t * ns..(t + 1) * ns].copy_from_slice(&proj[r..r + ns]);
            c[t * ns..(t + 1) * ns].copy_from_slice(&proj[r + ns..]);
        }
        let a = self.a_log.iter().map(|v| -v.exp()).collect();
        Ok(Projected { delta, b, c, a })
    }
}

fn check_finite<T: Scalar>(y: &[T], ch: usize) -> Result<()> {
    match y.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(CoreError::Numeric(format!(
            "selective scan diverged at step {}",
            i / ch
        ))),
        None => Ok(()),
    }
}

/// Sequential selective scan of `x` (`[len, d_inner]`, row-major).
pub fn selective_scan<T: Scalar>(x: &[T], len: usize, params: &SsmParams<T>) -> Result<Vec<T>> {
    let pr = params.project(x, len)?;
    let (ch, ns) = (params.d_inner, params.n_state);
    let (y, _) = scan_forward(x, &pr.delta, &pr.a, &pr.b, &pr.c, &params.d, len, ch, ns);
    check_finite(&y, ch)?;
    Ok(y)
}

/// Same recurrence evaluated in chunks of `block` steps: every chunk is first
/// scanned from a zero state while accumulating its decay product, the chunk
/// start states are then chained sequentially, and finally every chunk is
/// rescanned from its true start state. The first and last passes run in
/// parallel over chunks.
pub fn selective_scan_blocked<T: Scalar>(
    x: &[T],
    len: usize,
    params: &SsmParams<T>,
    block: usize,
) -> Result<Vec<T>> {
    if block == 0 {
        return Err(CoreError::Argument(
            "block length must be at least 1".into(),
        ));
    }
    let pr = params.project(x, len)?;
    let y = scan_blocked(
        x,
        &pr,
        &params.d,
        len,
        params.d_inner,
        params.n_state,
        block,
    );
    check_finite(&y, params.d_inner)?;
    Ok(y)
}

#[allow(clippy::too_many_arguments)]
fn scan_blocked<T: Scalar>(
    u: &[T],
    pr: &Projected<T>,
    d: &[T],
    len: usize,
    ch: usize,
    ns: usize,
    block: usize,
) -> Vec<T> {
    let state = ch * ns;
    let chunks = len.div_ceil(block);
    let range = |i: usize| i * block..((i + 1) * block).min(len);
    let summaries: Vec<(Vec<T>, Vec<T>)> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut h = vec![T::zero(); state];
            let mut decay = vec![T::one(); state];
            for t in range(i) {
                for k in 0..ch {
                    let (x, dl) = (u[t * ch + k], pr.delta[t * ch + k]);
                    for n in 0..ns {
                        let idx = k * ns + n;
                        let (abar, phi) = zoh(dl, pr.a[idx]);
                        h[idx] = abar * h[idx] + phi * pr.b[t * ns + n] * x;
                        decay[idx] *= abar;
                    }
                }
            }
            (h, decay)
        })
        .collect();
    let mut starts = Vec::with_capacity(chunks);
    let mut carry = vec![T::zero(); state];
    for (end, decay) in &summaries {
        starts.push(carry.clone());
        for ((c, e), a) in carry.iter_mut().zip(end).zip(decay) {
            *c = *a * *c + *e;
        }
    }
    let mut y = vec![T::zero(); len * ch];
    y.par_chunks_mut(block * ch)
        .enumerate()
        .for_each(|(i, ys)| {
            let mut h = starts[i].clone();
            let r = range(i);
            for (local, t) in r.enumerate() {
                for k in 0..ch {
                    let (x, dl) = (u[t * ch + k], pr.delta[t * ch + k]);
                    let mut acc = d[k] * x;
                    for n in 0..ns {
                        let idx = k * ns + n;
                        let (abar, phi) = zoh(dl, pr.a[idx]);
                        h[idx] = abar * h[idx] + phi * pr.b[t * ns + n] * x;
                        acc += pr.c[t * ns + n] * h[idx];
                    }
                    ys[local * ch + k] = acc;
                }
            }
        });
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_half() {
        let (a, b) = discretize(&[-1.0], &[1.0], std::f64::consts::LN_2).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-15);
        assert!((b[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn small_step_limit() {
        let delta = 1e-8;
        let (a, b) = discretize(&[-2.0, 0.0, 3.0], &[0.7, 1.5, -1.0], delta).unwrap();
        for (i, &(av, bv)) in [(-2.0, 0.7), (0.0, 1.5), (3.0, -1.0)].iter().enumerate() {
            // first order: Â ≈ 1 + Δa, B̂ ≈ Δb
            assert!((a[i] - (1.0 + delta * av)).abs() < 1e-15);
            assert!((b[i] - delta * bv).abs() < 1e-15 * delta.max(1.0) + 1e-16);
        }
        assert!(matches!(
            discretize(&[1.0], &[1.0], 0.0),
            Err(CoreError::Domain(_))
        ));
    }

    fn params(ch: usize, ns: usize, seed: u64) -> SsmParams<f64> {
        SsmParams::random(ch, ns, 2, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_input_zero_output() {
        let p = params(3, 4, 1);
        let y = selective_scan(&[0.0; 30], 10, &p).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_formula() {
        let p = params(2, 3, 2);
        let x = [0.4, -1.1];
        let pr = p.project(&x, 1).unwrap();
        let y = selective_scan(&x, 1, &p).unwrap();
        for k in 0..2 {
            let mut expect = p.d[k] * x[k];
            for n in 0..3 {
                let (_, bbar) = discretize(&[pr.a[k * 3 + n]], &[pr.b[n]], pr.delta[k]).unwrap();
                expect += pr.c[n] * bbar[0] * x[k];
            }
            assert!((y[k] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn blocked_degenerate_cases_are_exact() {
        let p = params(3, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..3 * 37).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seq = selective_scan(&x, 37, &p).unwrap();
        assert_eq!(selective_scan_blocked(&x, 37, &p, 1).unwrap(), seq);
        assert_eq!(selective_scan_blocked(&x, 37, &p, 37).unwrap(), seq);
        for block in [2, 7, 64] {
            let b = selective_scan_blocked(&x, 37, &p, block).unwrap();
            for (u, v) in b.iter().zip(&seq) {
                assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
        assert!(selective_scan_blocked(&x, 37, &p, 0).is_err());
    }
}
