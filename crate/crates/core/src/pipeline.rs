//! The full classifier as trained and evaluated: frame aggregation, optional
//! learned frame selection, the SSM classifier and the combined loss.

use evssm_autodiff::ops::Binning;
use evssm_autodiff::optim::ParamStore;
use evssm_autodiff::{Scalar, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationMode, EventFrameStack, SamplingConfig};
use crate::error::{CoreError, Result};
use crate::events::SensorGeometry;
use crate::init;
use crate::msg_loss::{coordinate_sum, iemi_var, ms_var, weie_var, HistogramConfig, LossBreakdown};
use crate::peas::{make_mask_var, MaskMode, ScorePredictor, SelectionMask};
use crate::ssm::{Classifier, ModelConfig};

/// What the classifier sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Every time-window frame.
    TimeWindows,
    /// Every event-count frame.
    EventCounts,
    /// `K` event-count frames chosen by the score predictor.
    EventCountsPeas,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::TimeWindows,
        Variant::EventCounts,
        Variant::EventCountsPeas,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::TimeWindows => "time-windows",
            Variant::EventCounts => "event-counts",
            Variant::EventCountsPeas => "event-counts-peas",
        }
    }

    pub fn mode(self) -> AggregationMode {
        match self {
            Variant::TimeWindows => AggregationMode::TimeWindows,
            _ => AggregationMode::EventCounts,
        }
    }

    pub fn selects(self) -> bool {
        self == Variant::EventCountsPeas
    }
}

impl std::str::FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CoreError::Argument(format!("unknown variant {s:?}")))
    }
}

/// Everything needed to rebuild a [`Pipeline`]; stored next to checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub variant: Variant,
    pub model: ModelConfig,
    pub sampling: SamplingConfig,
    pub histogram: HistogramConfig,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    #[serde(default)]
    pub classes: Vec<String>,
    /// Sensor the training data came from, for loading bare event files.
    #[serde(default)]
    pub sensor: Option<SensorGeometry>,
}

impl PipelineSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sampling.validate()?;
        self.histogram.validate()?;
        if self.sampling.mode != self.variant.mode() {
            return Err(CoreError::Argument(format!(
                "variant {} needs {:?} aggregation",
                self.variant.name(),
                self.variant.mode()
            )));
        }
        if (self.sampling.height, self.sampling.width) != (self.model.height, self.model.width) {
            return Err(CoreError::Shape(
                "frame size differs between sampling and model".into(),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(CoreError::Argument(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    /// `K`, the number of frames handed to the classifier under selection.
    pub fn k(&self) -> usize {
        self.model.frames
    }
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    pub spec: PipelineSpec,
    pub predictor: Option<ScorePredictor>,
    pub classifier: Classifier,
    /// Pixel visiting order of the classifier's frame rows.
    order: Vec<usize>,
    coord: Vec<f64>,
}

/// Per-sample result of a forward pass.
#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub logits: Vec<f64>,
    pub loss: LossBreakdown,
    pub mask: Option<SelectionMask>,
    pub scores: Option<Tensor<f64>>,
}

impl SampleOutput {
    pub fn prediction(&self) -> usize {
        evssm_autodiff::ops::argmax_lowest(&self.logits)
    }
}

impl Pipeline {
    pub fn init<T: Scalar, R: Rng>(
        spec: &PipelineSpec,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let predictor = if spec.variant.selects() {
            Some(ScorePredictor::init(store, "peas", spec.k(), rng)?)
        } else {
            None
        };
        let classifier = Classifier::init(store, &spec.model, rng)?;
        let (h, w) = (spec.model.height, spec.model.width);
        let order = init::patch_major(h, w, spec.model.patch);
        let coord = coordinate_sum(h, w, &order);
        Ok(Self {
            spec: spec.clone(),
            predictor,
            classifier,
            order,
            coord,
        })
    }

    /// Rebuilds the parameter layout of `spec` and fills it from `loaded`,
    /// which must hold exactly the same names and shapes.
    pub fn restore<T: Scalar>(
        spec: &PipelineSpec,
        loaded: ParamStore<T>,
    ) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::<T>::new();
        let pipeline = Self::init(
            spec,
            &mut store,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        if store.len() != loaded.len() {
            return Err(CoreError::Checkpoint(format!(
                "checkpoint has {} tensors, model needs {}",
                loaded.len(),
                store.len()
            )));
        }
        for (want, got) in store.entries().iter().zip(loaded.entries()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(CoreError::Checkpoint(format!(
                    "expected {} {:?}, found {} {:?}",
                    want.name,
                    want.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        Ok((pipeline, loaded))
    }

    pub fn sampling_at(&self, frequency_hz: f64) -> SamplingConfig {
        SamplingConfig {
            frequency_hz,
            ..self.spec.sampling.clone()
        }
    }

    /// Builds the loss for one stack on `tape`. `noise` selects training
    /// mode for the frame selection; without it the argmax mask is used.
    pub fn forward<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        stack: &EventFrameStack,
        label: usize,
        noise: Option<&Tensor<T>>,
        binning: Binning,
    ) -> Result<(Var<'t, T>, SampleOutput)> {
        if label >= self.spec.model.num_classes {
            return Err(CoreError::Argument(format!(
                "label {label} out of range for {} classes",
                self.spec.model.num_classes
            )));
        }
        if (stack.height, stack.width) != (self.spec.model.height, self.spec.model.width) {
            return Err(CoreError::Shape(format!(
                "stack frames are {}x{}, model expects {}x{}",
                stack.height, stack.width, self.spec.model.height, self.spec.model.width
            )));
        }
        let tape = params
            .first()
            .ok_or_else(|| CoreError::Argument("no parameters bound".into()))?
            .tape();
        let rows = tape.constant(init::frame_rows::<T>(stack, &self.order));
        let (frames, sel) = match &self.predictor {
            Some(pred) => {
                let volume = tape.constant(init::frame_volume::<T>(stack));
                let scores = pred.forward(params, &volume)?;
                let mode = match noise {
                    Some(_) => MaskMode::Train { tau: self.spec.tau },
                    None => MaskMode::Eval,
                };
                let (mask, sel) = make_mask_var(&scores, mode, noise)?;
                let frames = mask.gather_contract(&rows)?;
                (frames, Some((mask, sel, scores)))
            }
            None => {
                // without selection, the classifier sees the stack's own frames
                let frames = if stack.pad > 0 {
                    rows.slice_rows(0, stack.original)?
                } else {
                    rows
                };
                (frames, None)
            }
        };
        let logits = self.classifier.forward(params, &frames)?;
        let cls = logits.cross_entropy(label)?;
        let (loss, breakdown, mask, scores) = match sel {
            Some((mask_var, sel, scores)) => {
                let hist = &self.spec.histogram;
                let weie = weie_var(&frames, hist, binning)?;
                let iemi = iemi_var(&frames, &self.coord, hist, binning)?;
                let ms = ms_var(&mask_var, stack.original, stack.pad)?;
                let total = iemi.sub(&weie)?.add(&ms)?.add(&cls)?;
                let b = LossBreakdown::new(
                    weie.item().as_f64(),
                    iemi.item().as_f64(),
                    ms.item().as_f64(),
                    cls.item().as_f64(),
                );
                (total, b, Some(sel), Some(scores.value().cast::<f64>()))
            }
            None => (
                cls,
                LossBreakdown::new(0.0, 0.0, 0.0, cls.item().as_f64()),
                None,
                None,
            ),
        };
        let logits_out: Vec<f64> = logits.value().data().iter().map(|v| v.as_f64()).collect();
        if !loss.item().is_finite() || logits_out.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Numeric("non-finite loss".into()));
        }
        Ok((
            loss,
            SampleOutput {
                logits: logits_out,
                loss: breakdown,
                mask,
                scores,
            },
        ))
    }

    /// Gradient-free evaluation of one stack with the argmax mask.
    pub fn infer<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        stack: &EventFrameStack,
        label: usize,
    ) -> Result<SampleOutput> {
        let tape = Tape::new();
        let params: Vec<_> = store
            .entries()
            .iter()
            .map(|e| tape.constant(e.value.clone()))
            .collect();
        Ok(self.forward(&params, stack, label, None, Binning::Hard)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{build_stack, Representation};
    use crate::synth::{generate_synthetic, MotionClass, SyntheticSceneSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(variant: Variant) -> PipelineSpec {
        PipelineSpec {
            variant,
            model: ModelConfig::custom(1, 8, 4, 3, 32, 32),
            sampling: SamplingConfig {
                frequency_hz: 10.0,
                mode: variant.mode(),
                group_size: 200,
                window_us: None,
                height: 32,
                width: 32,
                representation: Representation::Rgb,
                normalize: true,
            },
            histogram: HistogramConfig::default(),
            tau: 1.0,
            classes: vec![],
            sensor: None,
        }
    }

    fn stack(pipeline: &Pipeline, pad_to: Option<usize>) -> EventFrameStack {
        let scene = SyntheticSceneSpec {
            motion_class: MotionClass::Expand,
            duration_us: 800_000,
            event_rate: 5000.0,
            noise_fraction: 0.05,
            geometry: SensorGeometry::new(64, 64),
            seed: 3,
        };
        build_stack(
            &generate_synthetic(&scene).unwrap().0,
            &pipeline.spec.sampling,
            pad_to,
        )
        .unwrap()
    }

    #[test]
    fn selection_loss_adds_up() {
        let mut store = ParamStore::<f64>::new();
        let p = Pipeline::init(
            &spec(Variant::EventCountsPeas),
            &mut store,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let s = stack(&p, Some(12));
        assert_eq!((s.original, s.pad), (8, 4));
        let tape = Tape::new();
        let params = store.bind(&tape);
        let noise = crate::peas::gumbel_noise(0, 0, 0, 4, 12);
        let (loss, out) = p
            .forward(
                &params,
                &s,
                2,
                Some(&noise),
                Binning::Soft { bandwidth: 1.0 },
            )
            .unwrap();
        let b = out.loss;
        assert!((loss.item() - b.total).abs() < 1e-12);
        assert!(b.weie > 0.0 && b.cls > 0.0);
        let m = out.mask.unwrap();
        assert!(m.is_row_one_hot() && m.is_temporally_sorted());
        let grads = tape.backward(loss).unwrap();
        // the score predictor receives gradient through the straight-through mask
        assert!(grads.wrt(params[0]).data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn baseline_ignores_padding() {
        let mut store = ParamStore::<f64>::new();
        let p = Pipeline::init(
            &spec(Variant::EventCounts),
            &mut store,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!(p.predictor.is_none());
        let a = p.infer(&store, &stack(&p, None), 0).unwrap();
        let b = p.infer(&store, &stack(&p, Some(20)), 0).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.loss.total, a.loss.cls);
    }

    #[test]
    fn restore_checks_layout() {
        let sp = spec(Variant::EventCountsPeas);
        let mut store = ParamStore::<f32>::new();
        Pipeline::init(&sp, &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (_, back) = Pipeline::restore(&sp, store.clone()).unwrap();
        assert_eq!(back.entries()[3].value, store.entries()[3].value);
        assert!(Pipeline::restore(&spec(Variant::EventCounts), store).is_err());
        let mut bad = spec(Variant::TimeWindows);
        bad.sampling.mode = AggregationMode::EventCounts;
        assert!(bad.validate().is_err());
    }
}
