//! Adaptive frame selection: a small 3-D convolutional score predictor, a
//! Gumbel-softmax selection mask with temporal reordering, mask-weighted
//! frame gathering, and the bidirectional token scan order.

use evssm_autodiff::ops::{argmax_lowest, Conv3dSpec};
use evssm_autodiff::optim::{ParamId, ParamStore};
use evssm_autodiff::{Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::EventFrameStack;
use crate::error::{CoreError, Result};
use crate::init::{self, mix_seed};

pub const HIDDEN_CHANNELS: usize = 16;
const KERNEL: [usize; 3] = [3, 7, 7];
const CONV: Conv3dSpec = Conv3dSpec {
    stride: [1, 4, 4],
    pad: [1, 3, 3],
};

/// Two strided 3-D convolutions with GELU between them, followed by a
/// spatial mean, mapping a `[3, P, H, W]` volume to `[K, P]` scores.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScorePredictor {
    pub k: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl ScorePredictor {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(CoreError::Argument("K must be positive".into()));
        }
        let vol = KERNEL.iter().product::<usize>();
        let (fan1, fan2) = ((3 * vol) as f64, (HIDDEN_CHANNELS * vol) as f64);
        let [kt, kh, kw] = KERNEL;
        Ok(Self {
            k,
            w1: init::uniform(
                store,
                &format!("{prefix}.conv1.weight"),
                &[HIDDEN_CHANNELS, 3, kt, kh, kw],
                fan1.sqrt().recip(),
                true,
                rng,
            )?,
            b1: init::constant(
                store,
                &format!("{prefix}.conv1.bias"),
                &[HIDDEN_CHANNELS],
                0.0,
                false,
            )?,
            w2: init::uniform(
                store,
                &format!("{prefix}.conv2.weight"),
                &[k, HIDDEN_CHANNELS, kt, kh, kw],
                fan2.sqrt().recip(),
                true,
                rng,
            )?,
            b2: init::constant(store, &format!("{prefix}.conv2.bias"), &[k], 0.0, false)?,
        })
    }

    /// Scores `[K, P]` for a `[3, P, H, W]` volume; `params` are the store's
    /// variables bound on the same tape.
    pub fn forward<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        volume: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let p = volume.shape()[1];
        if p < self.k {
            return Err(CoreError::SelectionInfeasible { k: self.k, p });
        }
        let h = volume
            .conv3d(&params[self.w1.0], &params[self.b1.0], CONV)?
            .gelu();
        let s = h.conv3d(&params[self.w2.0], &params[self.b2.0], CONV)?;
        Ok(s.spatial_mean()?)
    }
}

/// Scores of a whole stack outside of training.
pub fn predict_scores<T: Scalar>(
    stack: &EventFrameStack,
    predictor: &ScorePredictor,
    store: &ParamStore<T>,
) -> Result<Tensor<T>> {
    if stack.total() < predictor.k {
        return Err(CoreError::SelectionInfeasible {
            k: predictor.k,
            p: stack.total(),
        });
    }
    let tape = Tape::new();
    let params: Vec<_> = store
        .entries()
        .iter()
        .map(|e| tape.constant(e.value.clone()))
        .collect();
    let volume = tape.constant(init::frame_volume(stack));
    let scores = predictor.forward(&params, &volume)?;
    let out = scores.value();
    if !out.is_finite() {
        return Err(CoreError::Numeric("non-finite frame scores".into()));
    }
    Ok((*out).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MaskMode {
    /// Gumbel noise, tempered softmax, hardened with a straight-through
    /// gradient.
    Train { tau: f64 },
    /// Argmax of the plain scores, ties to the lowest index.
    Eval,
}

/// Row-one-hot `K × P` selection, rows ordered by selected frame index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub k: usize,
    pub p: usize,
    pub weights: Vec<f64>,
    pub selected: Vec<usize>,
    pub mode: MaskMode,
}

impl SelectionMask {
    fn from_selected(selected: Vec<usize>, p: usize, mode: MaskMode) -> Self {
        let k = selected.len();
        let mut weights = vec![0.0; k * p];
        for (r, &c) in selected.iter().enumerate() {
            weights[r * p + c] = 1.0;
        }
        Self {
            k,
            p,
            weights,
            selected,
            mode,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.p..(r + 1) * self.p]
    }

    pub fn is_row_one_hot(&self) -> bool {
        (0..self.k).all(|r| {
            let row = self.row(r);
            row.iter().filter(|&&v| v == 1.0).count() == 1
                && row.iter().all(|&v| v == 0.0 || v == 1.0)
        })
    }

    pub fn is_temporally_sorted(&self) -> bool {
        self.selected.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Gumbel(0, 1) draws for one sample. Row `r` comes from its own stream
/// keyed by `(seed, epoch, sample, r)`, so the noise does not depend on
/// evaluation order.
pub fn gumbel_noise<T: Scalar>(
    seed: u64,
    epoch: u64,
    sample: u64,
    k: usize,
    p: usize,
) -> Tensor<T> {
    let mut data = Vec::with_capacity(k * p);
    for r in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, epoch, sample, r as u64]));
        for _ in 0..p {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            data.push(T::of(-(-u.ln()).ln()));
        }
    }
    Tensor::new(vec![k, p], data).expect("noise shape")
}

fn sorted_rows(selected: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..selected.len()).collect();
    order.sort_by_key(|&r| selected[r]);
    order
}

/// Builds the mask variable on the score's tape. Training mode needs `noise`
/// of the score shape; in eval mode the mask is a constant.
pub fn make_mask_var<'t, T: Scalar>(
    scores: &Var<'t, T>,
    mode: MaskMode,
    noise: Option<&Tensor<T>>,
) -> Result<(Var<'t, T>, SelectionMask)> {
    let s = scores.value();
    let (k, p) = match s.shape() {
        [k, p] => (*k, *p),
        other => {
            return Err(CoreError::Shape(format!(
                "scores must be K×P, got {other:?}"
            )))
        }
    };
    if !s.is_finite() {
        return Err(CoreError::Numeric("non-finite selection scores".into()));
    }
    match mode {
        MaskMode::Train { tau } => {
            let noise = noise
                .ok_or_else(|| CoreError::Argument("training mask needs Gumbel noise".into()))?;
            if !(tau > 0.0) {
                return Err(CoreError::Argument(format!(
                    "temperature must be positive, got {tau}"
                )));
            }
            let hard = scores.gumbel_softmax_st(noise, T::of(tau))?;
            let hv = hard.value();
            let selected: Vec<usize> = (0..k).map(|r| argmax_lowest(hv.row(r))).collect();
            let order = sorted_rows(&selected);
            let mask = hard.permute_rows(&order)?;
            let sorted = order.iter().map(|&r| selected[r]).collect();
            Ok((mask, SelectionMask::from_selected(sorted, p, mode)))
        }
        MaskMode::Eval => {
            let mut selected: Vec<usize> = (0..k).map(|r| argmax_lowest(s.row(r))).collect();
            selected.sort_unstable();
            let m = SelectionMask::from_selected(selected, p, mode);
            let t = Tensor::new(vec![k, p], m.weights.iter().map(|&v| T::of(v)).collect())?;
            Ok((scores.tape().constant(t), m))
        }
    }
}

/// Mask construction without gradient tracking.
pub fn make_mask(
    scores: &Tensor<f64>,
    mode: MaskMode,
    noise: Option<&Tensor<f64>>,
) -> Result<SelectionMask> {
    let tape = Tape::new();
    let s = tape.constant(scores.clone());
    Ok(make_mask_var(&s, mode, noise)?.1)
}

/// `F′[k] = Σ_p M[k,p] · F[p]` over channel-last frames: `[K, H·W·3]`.
pub fn apply_selection(mask: &SelectionMask, stack: &EventFrameStack) -> Result<Vec<f32>> {
    if mask.p != stack.total() {
        return Err(CoreError::Shape(format!(
            "mask has {} columns, stack has {} frames",
            mask.p,
            stack.total()
        )));
    }
    let n = stack.frame_len();
    let mut out = vec![0.0f32; mask.k * n];
    for k in 0..mask.k {
        let dst = &mut out[k * n..(k + 1) * n];
        for (p, &w) in mask.row(k).iter().enumerate() {
            if w != 0.0 {
                for (d, s) in dst.iter_mut().zip(stack.frame(p)) {
                    *d += w as f32 * *s;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanDirection {
    Forward,
    Backward,
}

/// Token visiting order `(frame, row, col)` over `K` frames of `h × w`
/// token grids: frame-major, then row-major; backward is the reversal.
pub fn scan_order(
    k: usize,
    h: usize,
    w: usize,
    direction: ScanDirection,
) -> Vec<(usize, usize, usize)> {
    let mut order = Vec::with_capacity(k * h * w);
    for f in 0..k {
        for r in 0..h {
            for c in 0..w {
                order.push((f, r, c));
            }
        }
    }
    if direction == ScanDirection::Backward {
        order.reverse();
    }
    order
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoresSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Per selected row, the softmax mass of the chosen frame.
    pub row_confidence: Vec<f64>,
}

/// Qualitative record of one selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectionRecord {
    pub selected_indices: Vec<usize>,
    #[serde(rename = "Ori")]
    pub ori: usize,
    #[serde(rename = "Pad")]
    pub pad: usize,
    pub scores_summary: ScoresSummary,
}

impl InspectionRecord {
    pub fn new(scores: &Tensor<f64>, mask: &SelectionMask, ori: usize, pad: usize) -> Self {
        let d = scores.data();
        let (k, p) = (mask.k, mask.p);
        let mut confidence: Vec<(usize, f64)> = (0..k)
            .map(|r| {
                let row = &d[r * p..(r + 1) * p];
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                let best = argmax_lowest(row);
                (best, 1.0 / z)
            })
            .collect();
        confidence.sort_by_key(|c| c.0);
        Self {
            selected_indices: mask.selected.clone(),
            ori,
            pad,
            scores_summary: ScoresSummary {
                min: d.iter().copied().fold(f64::INFINITY, f64::min),
                max: d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean: d.iter().sum::<f64>() / d.len().max(1) as f64,
                row_confidence: confidence.into_iter().map(|c| c.1).collect(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::EventFrameStack;

    fn zero_stack(p: usize, side: usize) -> EventFrameStack {
        EventFrameStack {
            frames: vec![0.0; p * side * side * 3],
            height: side,
            width: side,
            original: p,
            pad: 0,
            tick_times: (0..p).map(|i| i as f64).collect(),
        }
    }

    fn predictor(k: usize, seed: u64) -> (ScorePredictor, ParamStore<f32>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = ScorePredictor::init(&mut store, "peas", k, &mut rng).unwrap();
        (pred, store)
    }

    #[test]
    fn score_shape_and_symmetry() {
        let (pred, mut store) = predictor(8, 1);
        // nonzero biases so the zero input still produces distinct rows
        let b = store.id_of("peas.conv2.bias").unwrap();
        store
            .get_mut(b)
            .data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f32);
        let s = predict_scores(&zero_stack(32, 32), &pred, &store).unwrap();
        assert_eq!(s.shape(), &[8, 32]);
        for r in 0..8 {
            assert!(s.row(r).iter().all(|&v| v == s.row(r)[0]));
        }
        let again = predict_scores(&zero_stack(32, 32), &pred, &store).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn too_few_frames_is_infeasible() {
        let (pred, store) = predictor(8, 1);
        assert!(matches!(
            predict_scores(&zero_stack(4, 32), &pred, &store),
            Err(CoreError::SelectionInfeasible { k: 8, p: 4 })
        ));
    }

    #[test]
    fn eval_mask_argmax_and_reorder() {
        let s = Tensor::new(vec![1, 3], vec![0.1, 3.0, -2.0]).unwrap();
        let m = make_mask(&s, MaskMode::Eval, None).unwrap();
        assert_eq!(m.selected, vec![1]);
        let mut data = vec![0.0; 20];
        data[7] = 5.0;
        data[10 + 2] = 5.0;
        let s = Tensor::new(vec![2, 10], data).unwrap();
        let m = make_mask(&s, MaskMode::Eval, None).unwrap();
        assert_eq!(m.selected, vec![2, 7]);
        assert_eq!(m.row(0)[2], 1.0);
        assert!(m.is_row_one_hot() && m.is_temporally_sorted());
    }

    #[test]
    fn eval_ties_go_low() {
        let s = Tensor::new(vec![1, 4], vec![1.0, 2.0, 2.0, 0.0]).unwrap();
        assert_eq!(
            make_mask(&s, MaskMode::Eval, None).unwrap().selected,
            vec![1]
        );
    }

    #[test]
    fn training_hard_sample_is_noisy_argmax() {
        let (k, p) = (4, 9);
        let s = Tensor::from_fn(vec![k, p], |i| ((i * 37) % 11) as f64 * 0.1);
        let noise = gumbel_noise::<f64>(3, 1, 2, k, p);
        let m = make_mask(&s, MaskMode::Train { tau: 1e-3 }, Some(&noise)).unwrap();
        let mut direct: Vec<usize> = (0..k)
            .map(|r| {
                let z: Vec<f64> = s
                    .row(r)
                    .iter()
                    .zip(noise.row(r))
                    .map(|(a, b)| a + b)
                    .collect();
                argmax_lowest(&z)
            })
            .collect();
        direct.sort_unstable();
        assert_eq!(m.selected, direct);
        assert!(m.is_row_one_hot());
    }

    #[test]
    fn non_finite_scores_rejected() {
        let s = Tensor::new(vec![1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(
            make_mask(&s, MaskMode::Eval, None),
            Err(CoreError::Numeric(_))
        ));
    }

    #[test]
    fn noise_is_keyed() {
        let a = gumbel_noise::<f64>(1, 2, 3, 4, 5);
        assert_eq!(a, gumbel_noise::<f64>(1, 2, 3, 4, 5));
        assert_ne!(a, gumbel_noise::<f64>(1, 2, 4, 4, 5));
        // row streams are independent of the row count
        assert_eq!(a.row(1), gumbel_noise::<f64>(1, 2, 3, 2, 5).row(1));
    }

    #[test]
    fn identity_and_gather_selection() {
        let mut st = zero_stack(10, 2);
        st.frames
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f32);
        let id = SelectionMask::from_selected((0..10).collect(), 10, MaskMode::Eval);
        assert_eq!(apply_selection(&id, &st).unwrap(), st.frames);
        let pick = SelectionMask::from_selected(vec![2, 5, 9], 10, MaskMode::Eval);
        let out = apply_selection(&pick, &st).unwrap();
        let expect: Vec<f32> = [2, 5, 9]
            .iter()
            .flat_map(|&i| st.frame(i).to_vec())
            .collect();
        assert_eq!(out, expect);
        let bad = SelectionMask::from_selected(vec![0], 4, MaskMode::Eval);
        assert!(matches!(
            apply_selection(&bad, &st),
            Err(CoreError::Shape(_))
        ));
    }

    #[test]
    fn scan_orders() {
        assert_eq!(
            scan_order(1, 2, 2, ScanDirection::Forward),
            vec![(0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1)]
        );
        assert_eq!(
            scan_order(2, 1, 1, ScanDirection::Forward),
            vec![(0, 0, 0), (1, 0, 0)]
        );
        let mut f = scan_order(2, 2, 2, ScanDirection::Forward);
        f.reverse();
        assert_eq!(scan_order(2, 2, 2, ScanDirection::Backward), f);
    }

    #[test]
    fn inspection_record_json_fields() {
        let s = Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        let m = make_mask(&s, MaskMode::Eval, None).unwrap();
        let rec = InspectionRecord::new(&s, &m, 2, 1);
        let v = serde_json::to_value(&rec).unwrap();
        assert_eq!(v["selected_indices"], serde_json::json!([0, 1]));
        assert_eq!(v["Ori"], 2);
        assert_eq!(v["Pad"], 1);
        assert_eq!(rec.scores_summary.max, 2.0);
    }
}
