use super::as_matrix;
use crate::error::{shape_err, AutodiffError, Result};
use crate::{Scalar, Tensor, Var};

/// ITU-R BT.601 luma weights for (R, G, B).
pub const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Bin of `v ∈ [0, 1]` among `bins` equal-width bins; values outside the
/// range fall into the end bins.
pub fn hard_bin(v: f64, bins: usize) -> usize {
    let u = (v * bins as f64).floor();
    if u.is_nan() || u < 0.0 {
        0
    } else {
        (u as usize).min(bins - 1)
    }
}

fn tri_cdf(s: f64, h: f64) -> f64 {
    if s <= -h {
        0.0
    } else if s <= 0.0 {
        (s + h) * (s + h) / (2.0 * h * h)
    } else if s < h {
        1.0 - (h - s) * (h - s) / (2.0 * h * h)
    } else {
        1.0
    }
}

fn tri_pdf(s: f64, h: f64) -> f64 {
    if s.abs() < h {
        (h - s.abs()) / (h * h)
    } else {
        0.0
    }
}

/// Soft bin assignment of `v ∈ [0, 1]`: the mass a triangular kernel of
/// half-width `bandwidth` (in bins) centred on `v · bins` places in each bin,
/// with the tails folded into the end bins. Returns `(bin, weight, d weight / d v)`
/// for every bin that can receive mass; the weights sum to one.
pub fn soft_bin_weights(v: f64, bins: usize, bandwidth: f64) -> Vec<(usize, f64, f64)> {
    let n = bins as f64;
    let u = v * n;
    let h = bandwidth;
    let last = bins - 1;
    let clamp = |x: f64| -> usize {
        if x <= 0.0 {
            0
        } else {
            (x as usize).min(last)
        }
    };
    let (lo, hi) = (clamp((u - h).floor()), clamp((u + h).floor()));
    (lo..=hi)
        .map(|i| {
            let fi = i as f64;
            let (upper_cdf, upper_pdf) = if i == last {
                (1.0, 0.0)
            } else {
                (tri_cdf(fi + 1.0 - u, h), tri_pdf(fi + 1.0 - u, h))
            };
            let (lower_cdf, lower_pdf) = if i == 0 {
                (0.0, 0.0)
            } else {
                (tri_cdf(fi - u, h), tri_pdf(fi - u, h))
            };
            (i, upper_cdf - lower_cdf, n * (lower_pdf - upper_pdf))
        })
        .collect()
}

/// How values are assigned to histogram bins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Binning {
    /// Integer counts; no gradient.
    Hard,
    /// Triangular-kernel soft assignment, half-width in bins.
    Soft { bandwidth: f64 },
}

fn weights_for(v: f64, bins: usize, binning: Binning) -> Vec<(usize, f64, f64)> {
    match binning {
        Binning::Hard => vec![(hard_bin(v, bins), 1.0, 0.0)],
        Binning::Soft { bandwidth } => soft_bin_weights(v, bins, bandwidth),
    }
}

fn check_bins(op: &'static str, bins: usize, binning: Binning) -> Result<()> {
    if bins < 2 {
        return Err(AutodiffError::Argument(format!(
            "{op}: need at least 2 bins, got {bins}"
        )));
    }
    if let Binning::Soft { bandwidth } = binning {
        if !(bandwidth > 0.0) {
            return Err(AutodiffError::Argument(format!(
                "{op}: bandwidth must be positive, got {bandwidth}"
            )));
        }
    }
    Ok(())
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Luminance of channel-last RGB rows: `[rows, 3·n] -> [rows, n]`.
    pub fn rgb_to_gray(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (rows, cols) = as_matrix("rgb_to_gray", x.shape())?;
        if cols % 3 != 0 {
            return shape_err(
                "rgb_to_gray",
                format!("{cols} columns is not a multiple of 3"),
            );
        }
        let w = GRAY_WEIGHTS.map(T::of);
        let data = x
            .data()
            .chunks(3)
            .map(|px| w[0] * px[0] + w[1] * px[1] + w[2] * px[2])
            .collect();
        let out = Tensor::new(vec![rows, cols / 3], data)?;
        Ok(self
            .tape()
            .record("rgb_to_gray", out, &[*self], move |g, _| {
                let mut gx = Vec::with_capacity(rows * cols);
                for gv in g {
                    gx.extend([*gv * w[0], *gv * w[1], *gv * w[2]]);
                }
                vec![Some(gx)]
            }))
    }

    /// Normalized histogram (frequencies) of every element of `self`.
    pub fn soft_histogram(&self, bins: usize, binning: Binning) -> Result<Var<'t, T>> {
        check_bins("soft_histogram", bins, binning)?;
        let x = self.value();
        let n = x.len();
        if n == 0 {
            return shape_err("soft_histogram", "empty input");
        }
        let inv_n = 1.0 / n as f64;
        let mut hist = vec![0.0f64; bins];
        let mut taps = Vec::with_capacity(n);
        for v in x.data() {
            let w = weights_for(v.as_f64(), bins, binning);
            for &(b, wt, _) in &w {
                hist[b] += wt * inv_n;
            }
            taps.push(w);
        }
        let out = Tensor::new(vec![bins], hist.into_iter().map(T::of).collect())?;
        Ok(self
            .tape()
            .record("soft_histogram", out, &[*self], move |g, _| {
                let gx = taps
                    .iter()
                    .map(|w| {
                        let s: f64 = w.iter().map(|&(b, _, d)| g[b].as_f64() * d).sum();
                        T::of(s * inv_n)
                    })
                    .collect();
                vec![Some(gx)]
            }))
    }

    /// Joint histogram of element-aligned pairs `(self[i], other[i])`:
    /// `out[a, b]` is the frequency of pairs with `self` in bin `a` and
    /// `other` in bin `b`.
    pub fn soft_joint_histogram(
        &self,
        other: &Var<'t, T>,
        bins: usize,
        binning: Binning,
    ) -> Result<Var<'t, T>> {
        check_bins("soft_joint_histogram", bins, binning)?;
        let (x, y) = (self.value(), other.value());
        let n = x.len();
        if n == 0 || y.len() != n {
            return shape_err(
                "soft_joint_histogram",
                format!("{} vs {} elements", n, y.len()),
            );
        }
        let inv_n = 1.0 / n as f64;
        let mut hist = vec![0.0f64; bins * bins];
        let mut taps = Vec::with_capacity(n);
        for (a, b) in x.data().iter().zip(y.data()) {
            let wa = weights_for(a.as_f64(), bins, binning);
            let wb = weights_for(b.as_f64(), bins, binning);
            for &(i, wi, _) in &wa {
                for &(j, wj, _) in &wb {
                    hist[i * bins + j] += wi * wj * inv_n;
                }
            }
            taps.push((wa, wb));
        }
        let out = Tensor::new(vec![bins, bins], hist.into_iter().map(T::of).collect())?;
        Ok(self.tape().record(
            "soft_joint_histogram",
            out,
            &[*self, *other],
            move |g, need| {
                let mut ga = Vec::with_capacity(if need[0] { n } else { 0 });
                let mut gb = Vec::with_capacity(if need[1] { n } else { 0 });
                for (wa, wb) in &taps {
                    let (mut sa, mut sb) = (0.0, 0.0);
                    for &(i, wi, di) in wa {
                        for &(j, wj, dj) in wb {
                            let gv = g[i * bins + j].as_f64();
                            sa += gv * di * wj;
                            sb += gv * wi * dj;
                        }
                    }
                    if need[0] {
                        ga.push(T::of(sa * inv_n));
                    }
                    if need[1] {
                        gb.push(T::of(sb * inv_n));
                    }
                }
                vec![need[0].then_some(ga), need[1].then_some(gb)]
            },
        ))
    }

    /// Shannon entropy `-Σ p ln p` of a probability vector (`0 ln 0 = 0`).
    pub fn entropy(&self) -> Var<'t, T> {
        let p = self.value();
        let h: f64 = p
            .data()
            .iter()
            .map(|v| v.as_f64())
            .filter(|&v| v > 0.0)
            .map(|v| -v * v.ln())
            .sum();
        self.tape().record(
            "entropy",
            Tensor::scalar(T::of(h)),
            &[*self],
            move |g, _| {
                let gx = p
                    .data()
                    .iter()
                    .map(|v| {
                        let v = v.as_f64();
                        if v > 0.0 {
                            T::of(-(v.ln() + 1.0)) * g[0]
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![Some(gx)]
            },
        )
    }

    /// Mutual information `Σ J ln(J / (P Q))` of a joint distribution matrix,
    /// with marginals taken from the joint itself.
    pub fn mutual_information(&self) -> Result<Var<'t, T>> {
        let j = self.value();
        let (r, c) = as_matrix("mutual_information", j.shape())?;
        let jd: Vec<f64> = j.data().iter().map(|v| v.as_f64()).collect();
        let mut pr = vec![0.0; r];
        let mut pc = vec![0.0; c];
        for a in 0..r {
            for b in 0..c {
                pr[a] += jd[a * c + b];
                pc[b] += jd[a * c + b];
            }
        }
        let xlogx = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
        let mi = jd.iter().map(|&v| xlogx(v)).sum::<f64>()
            - pr.iter().map(|&v| xlogx(v)).sum::<f64>()
            - pc.iter().map(|&v| xlogx(v)).sum::<f64>();
        Ok(self.tape().record(
            "mutual_information",
            Tensor::scalar(T::of(mi)),
            &[*self],
            move |g, _| {
                let dlog = |v: f64| if v > 0.0 { v.ln() + 1.0 } else { 0.0 };
                let mut gx = Vec::with_capacity(r * c);
                for a in 0..r {
                    for b in 0..c {
                        let d = dlog(jd[a * c + b]) - dlog(pr[a]) - dlog(pc[b]);
                        gx.push(T::of(d) * g[0]);
                    }
                }
                vec![Some(gx)]
            },
        ))
    }
}
