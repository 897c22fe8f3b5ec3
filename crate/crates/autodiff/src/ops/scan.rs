use super::as_matrix;
use crate::error::{shape_err, AutodiffError, Result};
use crate::{Scalar, Tensor, Var};

/// Zero-order-hold discretization of one diagonal state entry.
///
/// Returns `(Â, φ)` with `Â = exp(Δa)` and `φ = (exp(Δa) − 1) / a`, so that
/// `B̂ = φ · b`. At `a = 0` the removable singularity evaluates to `φ = Δ`.
pub fn zoh<T: Scalar>(delta: T, a: T) -> (T, T) {
    let em1 = (delta * a).exp_m1();
    let phi = if a == T::zero() { delta } else { em1 / a };
    (em1 + T::one(), phi)
}

/// Partial derivatives `(∂Â/∂Δ, ∂Â/∂a, ∂φ/∂Δ, ∂φ/∂a)` of [`zoh`].
pub fn zoh_grad<T: Scalar>(delta: T, a: T) -> (T, T, T, T) {
    zoh_grad_from(delta, a, zoh(delta, a).0)
}

/// [`zoh_grad`] given `Â = exp(Δa)` already computed.
fn zoh_grad_from<T: Scalar>(delta: T, a: T, abar: T) -> (T, T, T, T) {
    let x = delta * a;
    let dphi_da = if x.abs() < T::of(1e-2) {
        // Δ² Σ_{k≥2} (k−1) x^{k−2} / k!
        let series = T::of(0.5)
            + x * (T::of(1.0 / 3.0)
                + x * (T::of(1.0 / 8.0)
                    + x * (T::of(1.0 / 30.0) + x * (T::of(1.0 / 144.0) + x * T::of(1.0 / 840.0)))));
        delta * delta * series
    } else {
        (x * abar - (abar - T::one())) / (a * a)
    };
    (a * abar, delta * abar, abar, dphi_da)
}

/// Hidden states saved by [`scan_forward`], laid out `[len, channels, state]`.
#[derive(Clone, Debug)]
pub struct ScanTrace<T> {
    pub states: Vec<T>,
    /// Discretized `Â` and `φ` per step, same layout as `states`.
    pub abar: Vec<T>,
    pub phi: Vec<T>,
}

/// Sequential selective scan over a diagonal state space.
///
/// Shapes: `u`, `delta`: `[len, ch]`; `a`: `[ch, ns]` (already negative);
/// `b`, `c`: `[len, ns]`; `d`: `[ch]`. Per channel and step,
/// `h_t = Â_t h_{t−1} + B̂_t u_t` and `y_t = ⟨C_t, h_t⟩ + d · u_t` with `h_0 = 0`.
/// Returns the outputs `[len, ch]` and the state trace.
#[allow(clippy::too_many_arguments)]
pub fn scan_forward<T: Scalar>(
    u: &[T],
    delta: &[T],
    a: &[T],
    b: &[T],
    c: &[T],
    d: &[T],
    len: usize,
    ch: usize,
    ns: usize,
) -> (Vec<T>, ScanTrace<T>) {
    let mut y = vec![T::zero(); len * ch];
    let mut states = vec![T::zero(); len * ch * ns];
    let mut abars = vec![T::zero(); len * ch * ns];
    let mut phis = vec![T::zero(); len * ch * ns];
    let mut h = vec![T::zero(); ch * ns];
    for t in 0..len {
        let (bt, ct) = (&b[t * ns..(t + 1) * ns], &c[t * ns..(t + 1) * ns]);
        for k in 0..ch {
            let x = u[t * ch + k];
            let dl = delta[t * ch + k];
            let off = (t * ch + k) * ns;
            let hk = &mut h[k * ns..(k + 1) * ns];
            let ak = &a[k * ns..(k + 1) * ns];
            let (ab, ph) = (&mut abars[off..off + ns], &mut phis[off..off + ns]);
            let mut acc = d[k] * x;
            for n in 0..ns {
                let (abar, phi) = zoh(dl, ak[n]);
                ab[n] = abar;
                ph[n] = phi;
                hk[n] = abar * hk[n] + phi * bt[n] * x;
                acc += ct[n] * hk[n];
            }
            y[t * ch + k] = acc;
        }
        states[t * ch * ns..(t + 1) * ch * ns].copy_from_slice(&h);
    }
    (
        y,
        ScanTrace {
            states,
            abar: abars,
            phi: phis,
        },
    )
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Selective scan with `A = −exp(a_log)`; see [`scan_forward`] for the
    /// recurrence. `self` is the input sequence `u`.
    pub fn selective_scan(
        &self,
        delta: &Var<'t, T>,
        a_log: &Var<'t, T>,
        b: &Var<'t, T>,
        c: &Var<'t, T>,
        d: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let (u, dl, al, bv, cv, dv) = (
            self.value(),
            delta.value(),
            a_log.value(),
            b.value(),
            c.value(),
            d.value(),
        );
        let (len, ch) = as_matrix("selective_scan", u.shape())?;
        let (_, ns) = as_matrix("selective_scan", al.shape())?;
        let ok = dl.shape() == [len, ch]
            && al.shape() == [ch, ns]
            && bv.shape() == [len, ns]
            && cv.shape() == [len, ns]
            && dv.shape() == [ch];
        if !ok {
            return shape_err(
                "selective_scan",
                format!(
                    "u {:?}, delta {:?}, a_log {:?}, b {:?}, c {:?}, d {:?}",
                    u.shape(),
                    dl.shape(),
                    al.shape(),
                    bv.shape(),
                    cv.shape(),
                    dv.shape()
                ),
            );
        }
        let a: Vec<T> = al.data().iter().map(|v| -v.exp()).collect();
        let (y, trace) = scan_forward(
            u.data(),
            dl.data(),
            &a,
            bv.data(),
            cv.data(),
            dv.data(),
            len,
            ch,
            ns,
        );
        if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
            return Err(AutodiffError::Numeric {
                op: "selective_scan",
                detail: format!("output at step {}", bad / ch),
            });
        }
        let out = Tensor::new(vec![len, ch], y)?;
        Ok(self.tape().record(
            "selective_scan",
            out,
            &[*self, *delta, *a_log, *b, *c, *d],
            move |g, need| {
                let (u, dl, bv, cv, dv) = (u.data(), dl.data(), bv.data(), cv.data(), dv.data());
                let hs = &trace.states;
                let mut gu = vec![T::zero(); len * ch];
                let mut gdl = vec![T::zero(); len * ch];
                let mut ga = vec![T::zero(); ch * ns];
                let mut gb = vec![T::zero(); len * ns];
                let mut gc = vec![T::zero(); len * ns];
                let mut gd = vec![T::zero(); ch];
                // adjoint of h_t flowing back from step t+1
                let mut carry = vec![T::zero(); ch * ns];
                let zero = vec![T::zero(); ns];
                for t in (0..len).rev() {
                    let (bt, ct) = (&bv[t * ns..(t + 1) * ns], &cv[t * ns..(t + 1) * ns]);
                    for k in 0..ch {
                        let gy = g[t * ch + k];
                        let x = u[t * ch + k];
                        let step = dl[t * ch + k];
                        let mut gx = gy * dv[k];
                        let mut gstep = T::zero();
                        gd[k] += gy * x;
                        let off = (t * ch + k) * ns;
                        let h = &hs[off..off + ns];
                        let hprev = if t > 0 {
                            &hs[off - ch * ns..off - ch * ns + ns]
                        } else {
                            &zero[..]
                        };
                        let (ab, ph) = (&trace.abar[off..off + ns], &trace.phi[off..off + ns]);
                        let ak = &a[k * ns..(k + 1) * ns];
                        let carry = &mut carry[k * ns..(k + 1) * ns];
                        let ga = &mut ga[k * ns..(k + 1) * ns];
                        let gc = &mut gc[t * ns..(t + 1) * ns];
                        let gb = &mut gb[t * ns..(t + 1) * ns];
                        for n in 0..ns {
                            let gh = gy * ct[n] + carry[n];
                            gc[n] += gy * h[n];
                            let (abar, phi, an) = (ab[n], ph[n], ak[n]);
                            let (dabar_dstep, dabar_da, dphi_dstep, dphi_da) =
                                zoh_grad_from(step, an, abar);
                            let g_abar = gh * hprev[n];
                            let g_bbar = gh * x;
                            gx += gh * phi * bt[n];
                            gb[n] += g_bbar * phi;
                            let g_phi = g_bbar * bt[n];
                            gstep += g_abar * dabar_dstep + g_phi * dphi_dstep;
                            ga[n] += g_abar * dabar_da + g_phi * dphi_da;
                            carry[n] = gh * abar;
                        }
                        gu[t * ch + k] = gx;
                        gdl[t * ch + k] = gstep;
                    }
                }
                // chain through a = −exp(a_log)
                let g_alog: Vec<T> = ga.iter().zip(&a).map(|(g, a)| *g * *a).collect();
                vec![
                    need[0].then_some(gu),
                    need[1].then_some(gdl),
                    need[2].then_some(g_alog),
                    need[3].then_some(gb),
                    need[4].then_some(gc),
                    need[5].then_some(gd),
                ]
            },
        ))
    }
}
