//! Selection-guiding losses: within-frame entropy, inter-frame mutual
//! information of coordinate-weighted gray levels, the padding penalty on
//! the selection mask, and their combination with cross-entropy.

use evssm_autodiff::ops::{Binning, GRAY_WEIGHTS};
use evssm_autodiff::{Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::peas::SelectionMask;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramConfig {
    pub bins: usize,
    /// Half-width of the triangular soft-binning kernel, in bins.
    pub bandwidth: f64,
    /// Multiplier on `C_x + C_y` before it is added to the gray level.
    pub coord_weight: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bins: 256,
            bandwidth: 1.0,
            coord_weight: 0.5,
        }
    }
}

impl HistogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(CoreError::Argument(format!(
                "need at least 2 bins, got {}",
                self.bins
            )));
        }
        if !(self.bandwidth > 0.0) {
            return Err(CoreError::Argument(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }

    pub fn soft(&self) -> Binning {
        Binning::Soft {
            bandwidth: self.bandwidth,
        }
    }
}

/// `C_x + C_y` for every pixel slot, where slot `i` holds row-major pixel
/// `order[i]` of an `h × w` frame; `C_x = c/(w−1)`, `C_y = r/(h−1)`.
pub fn coordinate_sum(h: usize, w: usize, order: &[usize]) -> Vec<f64> {
    let norm = |v: usize, n: usize| {
        if n > 1 {
            v as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    order
        .iter()
        .map(|&px| norm(px % w, w) + norm(px / w, h))
        .collect()
}

/// Per-pixel luminance of a channel-last RGB frame.
pub fn gray(frame: &[f32]) -> Vec<f64> {
    frame
        .chunks_exact(3)
        .map(|px| {
            GRAY_WEIGHTS
                .iter()
                .zip(px)
                .map(|(w, v)| w * *v as f64)
                .sum()
        })
        .collect()
}

/// Mean entropy of the gray-level histograms of the `K` rows of
/// `frames` (`[K, n·3]`).
pub fn weie_var<'t, T: Scalar>(
    frames: &Var<'t, T>,
    cfg: &HistogramConfig,
    binning: Binning,
) -> Result<Var<'t, T>> {
    cfg.validate()?;
    let g = frames.rgb_to_gray()?;
    let k = g.shape()[0];
    let terms = (0..k)
        .map(|i| {
            Ok(g.slice_rows(i, 1)?
                .soft_histogram(cfg.bins, binning)?
                .entropy())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Var::sum_all(&terms)?.scale(T::of(1.0 / k as f64)))
}

/// Mean mutual information between consecutive rows of `frames` after
/// `clamp(gray + coord_weight · coord, 0, 1)`. Zero for a single frame.
pub fn iemi_var<'t, T: Scalar>(
    frames: &Var<'t, T>,
    coord: &[f64],
    cfg: &HistogramConfig,
    binning: Binning,
) -> Result<Var<'t, T>> {
    cfg.validate()?;
    let g = frames.rgb_to_gray()?;
    let (k, n) = (g.shape()[0], g.shape()[1]);
    if coord.len() != n {
        return Err(CoreError::Shape(format!(
            "{} coordinates for {n} pixels",
            coord.len()
        )));
    }
    let tape = frames.tape();
    if k < 2 {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let offset: Vec<T> = (0..k)
        .flat_map(|_| coord.iter().map(|c| T::of(cfg.coord_weight * c)))
        .collect();
    let offset = tape.constant(Tensor::new(vec![k, n], offset)?);
    let weighted = g.add(&offset)?.clamp(T::zero(), T::one());
    let rows = (0..k)
        .map(|i| weighted.slice_rows(i, 1))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let terms = rows
        .windows(2)
        .map(|p| {
            Ok(p[0]
                .soft_joint_histogram(&p[1], cfg.bins, binning)?
                .mutual_information()?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Var::sum_all(&terms)?.scale(T::of(1.0 / (k - 1) as f64)))
}

/// Mask mass on the padded columns, `Σ M[:, ori..] / (K · pad)`; zero
/// without padding.
pub fn ms_var<'t, T: Scalar>(mask: &Var<'t, T>, ori: usize, pad: usize) -> Result<Var<'t, T>> {
    let shape = mask.shape();
    let (k, p) = match shape.as_slice() {
        [k, p] => (*k, *p),
        _ => return Err(CoreError::Shape(format!("mask must be K×P, got {shape:?}"))),
    };
    if p != ori + pad {
        return Err(CoreError::Shape(format!(
            "mask has {p} columns, Ori + Pad = {}",
            ori + pad
        )));
    }
    if pad == 0 {
        return Ok(mask.tape().constant(Tensor::scalar(T::zero())));
    }
    let w = T::of(1.0 / (k * pad) as f64);
    let weights = Tensor::from_fn(vec![k, p], |i| if i % p >= ori { w } else { T::zero() });
    Ok(mask.dot_const(&weights)?)
}

fn on_tape<F>(frames: &Tensor<f64>, f: F) -> Result<f64>
where
    F: for<'t> Fn(&Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let x = tape.constant(frames.clone());
    Ok(f(&x)?.item())
}

/// Hard-count WEIE of `[K, n·3]` frames.
pub fn weie(frames: &Tensor<f64>, cfg: &HistogramConfig) -> Result<f64> {
    on_tape(frames, |x| weie_var(x, cfg, Binning::Hard))
}

/// Hard-count IEMI of `[K, n·3]` frames with pixel coordinates `coord`.
pub fn iemi(frames: &Tensor<f64>, coord: &[f64], cfg: &HistogramConfig) -> Result<f64> {
    on_tape(frames, |x| iemi_var(x, coord, cfg, Binning::Hard))
}

pub fn ms_loss(mask: &SelectionMask, ori: usize, pad: usize) -> Result<f64> {
    if mask.p != ori + pad {
        return Err(CoreError::Shape(format!(
            "mask has {} columns, Ori + Pad = {}",
            mask.p,
            ori + pad
        )));
    }
    if pad == 0 {
        return Ok(0.0);
    }
    let mass: f64 = (0..mask.k)
        .map(|r| mask.row(r)[ori..].iter().sum::<f64>())
        .sum();
    Ok(mass / (mask.k * pad) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub weie: f64,
    pub iemi: f64,
    pub ms: f64,
    pub cls: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `total = iemi − weie + ms + cls`.
    pub fn new(weie: f64, iemi: f64, ms: f64, cls: f64) -> Self {
        Self {
            weie,
            iemi,
            ms,
            cls,
            total: iemi - weie + ms + cls,
        }
    }
}

/// Combines the selection terms with the cross-entropy of `logits`.
pub fn total_loss(
    weie: f64,
    iemi: f64,
    ms: f64,
    logits: &[f64],
    label: usize,
) -> Result<LossBreakdown> {
    if label >= logits.len() {
        return Err(CoreError::Argument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Numeric("non-finite logits".into()));
    }
    let tape = Tape::new();
    let l = tape.constant(Tensor::new(vec![logits.len()], logits.to_vec())?);
    let cls = l.cross_entropy(label)?.item();
    Ok(LossBreakdown::new(weie, iemi, ms, cls))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peas::{make_mask, MaskMode};

    fn frames_from_gray(rows: &[Vec<f64>]) -> Tensor<f64> {
        // R = G = B = v gives gray v exactly up to the weight sum
        let n = rows[0].len();
        let data = rows
            .iter()
            .flat_map(|r| r.iter().flat_map(|&v| [v, v, v]))
            .collect();
        Tensor::new(vec![rows.len(), n * 3], data).unwrap()
    }

    #[test]
    fn gray_coefficients() {
        assert_eq!(gray(&[0.0; 6]), vec![0.0, 0.0]);
        let g = gray(&[1.0, 0.0, 0.0]);
        assert!((g[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn weie_constant_and_two_level() {
        let cfg = HistogramConfig::default();
        let c = frames_from_gray(&[vec![0.3; 16]]);
        assert_eq!(weie(&c, &cfg).unwrap(), 0.0);
        let half: Vec<f64> = (0..16).map(|i| if i < 8 { 0.0 } else { 1.0 }).collect();
        let h = weie(&frames_from_gray(&[half]), &cfg).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-9, "{h}");
    }

    #[test]
    fn iemi_single_frame_is_zero() {
        let f = frames_from_gray(&[vec![0.5; 4]]);
        assert_eq!(
            iemi(&f, &[0.0; 4], &HistogramConfig::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn ms_examples() {
        let s = Tensor::new(
            vec![2, 6],
            vec![9.0, 0., 0., 0., 0., 0., 0., 9., 0., 0., 0., 0.],
        )
        .unwrap();
        let m = make_mask(&s, MaskMode::Eval, None).unwrap();
        assert_eq!(ms_loss(&m, 2, 4).unwrap(), 0.0);
        let s = Tensor::new(
            vec![2, 6],
            vec![0., 0., 9., 0., 0., 0., 0., 0., 0., 0., 0., 9.],
        )
        .unwrap();
        let m = make_mask(&s, MaskMode::Eval, None).unwrap();
        assert_eq!(ms_loss(&m, 2, 4).unwrap(), 0.25);
        let s = Tensor::new(vec![1, 3], vec![0., 1., 0.]).unwrap();
        assert_eq!(
            ms_loss(&make_mask(&s, MaskMode::Eval, None).unwrap(), 3, 0).unwrap(),
            0.0
        );
    }

    #[test]
    fn ms_var_matches_plain() {
        let tape = Tape::new();
        let mask = tape.constant(
            Tensor::new(
                vec![2, 6],
                vec![0., 0., 1., 0., 0., 0., 0., 0., 0., 0., 0., 1.],
            )
            .unwrap(),
        );
        assert_eq!(ms_var(&mask, 2, 4).unwrap().item(), 0.25);
        assert_eq!(ms_var(&mask, 6, 0).unwrap().item(), 0.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        let b = total_loss(1.0, 0.3, 0.0, &[0.0; 10], 3).unwrap();
        assert!((b.cls - 10f64.ln()).abs() < 1e-12);
        let b = LossBreakdown::new(1.0, 0.3, 0.0, 2.0);
        assert!((b.total - 1.3).abs() < 1e-15);
        assert_eq!(b.total, b.iemi - b.weie + b.ms + b.cls);
        // rearranging the sum costs at most a couple of rounding steps
        assert!((b.total - b.cls - b.ms + b.weie - b.iemi).abs() <= 4.0 * f64::EPSILON);
        assert!(matches!(
            total_loss(0.0, 0.0, 0.0, &[0.0; 3], 3),
            Err(CoreError::Argument(_))
        ));
    }

    #[test]
    fn coordinate_sum_corners() {
        let order: Vec<usize> = (0..6).collect();
        assert_eq!(
            coordinate_sum(2, 3, &order),
            vec![0.0, 0.5, 1.0, 1.0, 1.5, 2.0]
        );
    }
}
