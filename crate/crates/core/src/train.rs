//! Training loop, evaluation, frequency sweeps and selection inspection.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use evssm_autodiff::optim::{reduce_gradients, AdamW, ParamStore};
use evssm_autodiff::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::aggregation::{augment, build_stack, EventFrameStack, SamplingConfig};
use crate::error::{CoreError, Result};
use crate::events::{load_events, DatasetManifest, EventStream};
use crate::init::mix_seed;
use crate::msg_loss::{HistogramConfig, LossBreakdown};
use crate::par::*;
use crate::peas::{gumbel_noise, InspectionRecord};
use crate::pipeline::{Pipeline, PipelineSpec, SampleOutput, Variant};
use crate::ssm::{load_checkpoint, save_checkpoint, ModelConfig, Preset};

/// Element type used for training and inference.
pub type Real = f32;

pub const CHECKPOINT_FILE: &str = "model.pssm";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Augmentation {
    /// Largest random shift in pixels; 0 disables cropping.
    pub random_crop: usize,
    /// Mirrors left and right, which also swaps leftward and rightward motion,
    /// so it is off by default.
    pub horizontal_flip: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub manifest: PathBuf,
    pub variant: Variant,
    pub sampling: SamplingConfig,
    /// Frames kept by the selection; also the size of the temporal embedding.
    pub k: usize,
    pub preset: Preset,
    /// Overrides of the preset's depth and width.
    pub layers: Option<usize>,
    pub dim: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub augmentation: Augmentation,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    pub histogram: HistogramConfig,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("data/manifest.json"),
            variant: Variant::EventCountsPeas,
            sampling: SamplingConfig::default(),
            k: 8,
            preset: Preset::Tiny,
            layers: None,
            dim: None,
            epochs: 100,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.05,
            warmup_epochs: 5,
            schedule: Schedule::Cosine,
            seed: 0,
            augmentation: Augmentation::default(),
            tau: 1.0,
            histogram: HistogramConfig::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Sets `dotted.key` in a JSON object. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CoreError::Argument(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            CoreError::Argument(format!(
                "override {key:?}: {part:?} is not inside an object"
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(CoreError::Argument("empty override key".into()))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.histogram.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.k == 0 {
            return Err(CoreError::Argument(
                "epochs, batch_size and k must be positive".into(),
            ));
        }
        if self.warmup_epochs > self.epochs {
            return Err(CoreError::Argument(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.tau > 0.0) {
            return Err(CoreError::Argument(
                "lr and tau must be positive, weight_decay non-negative".into(),
            ));
        }
        if self.sampling.mode != self.variant.mode() {
            return Err(CoreError::Argument(format!(
                "variant {} needs sampling.mode {:?}",
                self.variant.name(),
                self.variant.mode()
            )));
        }
        Ok(())
    }

    /// Reads a JSON config and applies `key=value` overrides on top.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CoreError::from(e).context(format!("reading {}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        let mut m = ModelConfig::preset(
            self.preset,
            self.k,
            num_classes,
            self.sampling.height,
            self.sampling.width,
        );
        if let Some(l) = self.layers {
            m.layers = l;
        }
        if let Some(d) = self.dim {
            m.dim = d;
        }
        m
    }

    pub fn pipeline_spec(&self, manifest: &DatasetManifest) -> PipelineSpec {
        PipelineSpec {
            variant: self.variant,
            model: self.model_config(manifest.classes.len()),
            sampling: self.sampling.clone(),
            histogram: self.histogram,
            tau: self.tau,
            classes: manifest.classes.clone(),
            sensor: manifest.sensor,
        }
    }
}

/// Linear warmup from 0 over `warmup_epochs`, then cosine decay to 0 at the
/// end of the last epoch.
pub fn lr_at(step: usize, cfg: &TrainConfig, steps_per_epoch: usize) -> f64 {
    let warm = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.epochs * steps_per_epoch;
    if step < warm {
        return cfg.lr * step as f64 / warm as f64;
    }
    let span = total.saturating_sub(warm).max(1);
    let progress = ((step - warm) as f64 / span as f64).min(1.0);
    match cfg.schedule {
        Schedule::Cosine => 0.5 * cfg.lr * (1.0 + (PI * progress).cos()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: usize,
    pub weie: f64,
    pub iemi: f64,
    pub ms: f64,
    pub cls: f64,
    pub total: f64,
    /// Training-mode accuracy over the epoch.
    pub top1: f64,
    pub lr: f64,
    /// Mean MS loss over the samples that carried padding; NaN if none did.
    pub ms_padded: f64,
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub struct TrainOutcome {
    pub pipeline: Pipeline,
    pub store: ParamStore<Real>,
    pub metrics: Vec<MetricsRecord>,
    pub checkpoint: PathBuf,
}

fn load_streams(manifest: &DatasetManifest) -> Result<Vec<(EventStream, usize)>> {
    (0..manifest.samples.len())
        .into_par_iter()
        .map(|i| manifest.load_sample(i))
        .collect()
}

fn build_stacks(
    streams: &[(EventStream, usize)],
    cfg: &SamplingConfig,
) -> Result<Vec<EventFrameStack>> {
    streams
        .par_iter()
        .enumerate()
        .map(|(i, (s, _))| build_stack(s, cfg, None).map_err(|e| e.context(format!("sample {i}"))))
        .collect()
}

fn sample_step(
    pipeline: &Pipeline,
    store: &ParamStore<Real>,
    stack: &EventFrameStack,
    label: usize,
    noise: Option<&Tensor<Real>>,
) -> Result<(Vec<Tensor<Real>>, SampleOutput)> {
    let tape = Tape::new();
    let params = store.bind(&tape);
    let binning = pipeline.spec.histogram.soft();
    let (loss, out) = pipeline.forward(&params, stack, label, noise, binning)?;
    let grads = tape.backward(loss)?;
    Ok((params.iter().map(|p| grads.wrt(*p)).collect(), out))
}

/// Trains per `cfg`, writing the checkpoint and metrics into `cfg.out_dir`.
/// `progress` sees every epoch's record as it completes.
pub fn train(cfg: &TrainConfig, mut progress: impl FnMut(&MetricsRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&cfg.manifest)
        .map_err(|e| e.context(format!("manifest {}", cfg.manifest.display())))?;
    manifest.validate()?;
    if manifest.samples.is_empty() {
        return Err(CoreError::Argument("manifest has no samples".into()));
    }
    let spec = cfg.pipeline_spec(&manifest);
    let mut store = ParamStore::<Real>::new();
    let pipeline = Pipeline::init(
        &spec,
        &mut store,
        &mut ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x1417])),
    )?;
    let streams = load_streams(&manifest)?;
    let stacks = build_stacks(&streams, &cfg.sampling)?;

    let n = stacks.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut opt = AdamW::new(0.9, 0.999, 1e-8);
    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    let augmenting = cfg.augmentation.random_crop > 0 || cfg.augmentation.horizontal_flip;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[
            cfg.seed,
            epoch as u64,
            0x5eed,
        ])));
        let mut sums = [0.0f64; 5];
        let (mut correct, mut ms_pad, mut n_pad) = (0usize, 0.0f64, 0usize);
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let pad_to = batch.iter().map(|&i| stacks[i].original).max().unwrap_or(0);
            if spec.variant.selects() && pad_to < spec.k() {
                return Err(CoreError::SelectionInfeasible {
                    k: spec.k(),
                    p: pad_to,
                }
                .context(format!("epoch {epoch}, step {step}")));
            }
            let results: Vec<(Vec<Tensor<Real>>, SampleOutput, usize)> = batch
                .par_iter()
                .map(|&i| {
                    let ctx =
                        |e: CoreError| e.context(format!("sample {i}, epoch {epoch}, step {step}"));
                    let mut stack = stacks[i].repad(pad_to).map_err(ctx)?;
                    if augmenting {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                            cfg.seed,
                            epoch as u64,
                            i as u64,
                            0xa06,
                        ]));
                        augment(
                            &mut stack,
                            cfg.augmentation.horizontal_flip,
                            cfg.augmentation.random_crop,
                            &mut rng,
                        );
                    }
                    let noise = spec.variant.selects().then(|| {
                        gumbel_noise::<Real>(
                            cfg.seed,
                            epoch as u64,
                            i as u64,
                            spec.k(),
                            stack.total(),
                        )
                    });
                    let (g, out) =
                        sample_step(&pipeline, &store, &stack, streams[i].1, noise.as_ref())
                            .map_err(ctx)?;
                    Ok((g, out, stack.pad))
                })
                .collect::<Result<_>>()?;
            let mut per_sample = Vec::with_capacity(results.len());
            for ((g, out, pad), &i) in results.into_iter().zip(batch) {
                let b = out.loss;
                for (s, v) in sums.iter_mut().zip([b.weie, b.iemi, b.ms, b.cls, b.total]) {
                    *s += v;
                }
                correct += (out.prediction() == streams[i].1) as usize;
                if pad > 0 {
                    ms_pad += b.ms;
                    n_pad += 1;
                }
                per_sample.push(g);
            }
            let grads = reduce_gradients(&per_sample)?;
            lr = lr_at(step, cfg, steps_per_epoch);
            opt.step(&mut store, &grads, lr as Real, cfg.weight_decay as Real)?;
            if store.entries().iter().any(|e| !e.value.is_finite()) {
                return Err(CoreError::Numeric("parameters diverged".into())
                    .context(format!("epoch {epoch}, step {step}")));
            }
            step += 1;
        }
        let m = n as f64;
        let record = MetricsRecord {
            epoch,
            step,
            weie: sums[0] / m,
            iemi: sums[1] / m,
            ms: sums[2] / m,
            cls: sums[3] / m,
            total: sums[4] / m,
            top1: correct as f64 / m,
            lr,
            ms_padded: if n_pad > 0 {
                ms_pad / n_pad as f64
            } else {
                f64::NAN
            },
        };
        progress(&record);
        metrics.push(record);
    }

    fs::create_dir_all(&cfg.out_dir)?;
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &store, &spec)?;
    write_metrics(&cfg.out_dir.join(METRICS_FILE), &metrics)?;
    Ok(TrainOutcome {
        pipeline,
        store,
        metrics,
        checkpoint,
    })
}

pub fn load_pipeline(checkpoint: &Path) -> Result<(Pipeline, ParamStore<Real>)> {
    let (store, spec): (ParamStore<Real>, PipelineSpec) = load_checkpoint(checkpoint)
        .map_err(|e| e.context(format!("checkpoint {}", checkpoint.display())))?;
    Pipeline::restore(&spec, store)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Accuracy of a trained pipeline on pre-loaded streams, re-aggregated at
/// `frequency_hz`, with the argmax selection.
pub fn evaluate_streams(
    pipeline: &Pipeline,
    store: &ParamStore<Real>,
    streams: &[(EventStream, usize)],
    frequency_hz: f64,
) -> Result<EvalReport> {
    if streams.is_empty() {
        return Err(CoreError::Argument("nothing to evaluate".into()));
    }
    let sampling = pipeline.sampling_at(frequency_hz);
    let predictions: Vec<usize> = streams
        .par_iter()
        .enumerate()
        .map(|(i, (s, label))| {
            let run = || -> Result<usize> {
                let stack = build_stack(s, &sampling, None)?;
                Ok(pipeline.infer(store, &stack, *label)?.prediction())
            };
            run().map_err(|e| e.context(format!("sample {i} at {frequency_hz} Hz")))
        })
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = streams.iter().map(|s| s.1).collect();
    let correct = predictions
        .iter()
        .zip(&labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(EvalReport {
        top1: correct as f64 / labels.len() as f64,
        predictions,
        labels,
    })
}

pub fn evaluate(checkpoint: &Path, manifest: &Path, frequency_hz: f64) -> Result<EvalReport> {
    let (pipeline, store) = load_pipeline(checkpoint)?;
    let manifest = DatasetManifest::load(manifest)?;
    manifest.validate()?;
    let streams = load_streams(&manifest)?;
    evaluate_streams(&pipeline, &store, &streams, frequency_hz)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub train_frequencies: Vec<f64>,
    pub eval_frequencies: Vec<f64>,
    #[serde(default = "all_variants")]
    pub variants: Vec<Variant>,
    pub template: TrainConfig,
    /// Evaluation set; the training manifest when absent.
    #[serde(default)]
    pub eval_manifest: Option<PathBuf>,
}

fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: &[f64]| !v.is_empty() && v.iter().all(|f| *f > 0.0 && f.is_finite());
        if !ok(&self.train_frequencies) || !ok(&self.eval_frequencies) {
            return Err(CoreError::Argument(
                "frequency lists must be non-empty and positive".into(),
            ));
        }
        if self.variants.is_empty() {
            return Err(CoreError::Argument("no variants to sweep".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_reader(
            File::open(path)
                .map_err(|e| CoreError::from(e).context(format!("reading {}", path.display())))?,
        )?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The training config of one grid cell.
    pub fn cell(&self, variant: Variant, train_f: f64, out_root: &Path) -> TrainConfig {
        let mut cfg = self.template.clone();
        cfg.variant = variant;
        cfg.sampling.mode = variant.mode();
        cfg.sampling.frequency_hz = train_f;
        cfg.out_dir = out_root.join(format!("{}_{}hz", variant.name(), train_f));
        cfg
    }
}

/// One cell of the sweep. `top1` and `drop` are empty when the cell failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: Variant,
    pub train_f: f64,
    pub eval_f: f64,
    pub top1: Option<f64>,
    /// Diagonal accuracy minus this cell's accuracy.
    pub drop: Option<f64>,
}

/// Trains one model per `(variant, train frequency)` under `out_root` and
/// evaluates it across the whole eval grid. Failed cells are logged through
/// `log` and reported with empty values.
pub fn sweep_frequency(
    sweep: &SweepConfig,
    out_root: &Path,
    mut log: impl FnMut(&str),
) -> Result<Vec<SweepRow>> {
    sweep.validate()?;
    let eval_manifest = sweep
        .eval_manifest
        .as_ref()
        .unwrap_or(&sweep.template.manifest);
    let manifest = DatasetManifest::load(eval_manifest)?;
    manifest.validate()?;
    let streams = load_streams(&manifest)?;
    let mut rows = Vec::new();
    for &variant in &sweep.variants {
        for &train_f in &sweep.train_frequencies {
            let cfg = sweep.cell(variant, train_f, out_root);
            let trained = train(&cfg, |_| {});
            let acc = |f: f64| -> Result<f64> {
                let t = trained
                    .as_ref()
                    .map_err(|e| CoreError::Argument(format!("training failed: {e}")))?;
                Ok(evaluate_streams(&t.pipeline, &t.store, &streams, f)?.top1)
            };
            let diagonal = acc(train_f);
            if let Err(e) = &diagonal {
                log(&format!("{} @ {train_f} Hz: {e}", variant.name()));
            }
            for &eval_f in &sweep.eval_frequencies {
                let top1 = if eval_f == train_f {
                    diagonal.as_ref().ok().copied()
                } else {
                    match acc(eval_f) {
                        Ok(a) => Some(a),
                        Err(e) => {
                            log(&format!("{} {train_f} -> {eval_f} Hz: {e}", variant.name()));
                            None
                        }
                    }
                };
                let drop = match (&diagonal, top1) {
                    (Ok(d), Some(a)) => Some(d - a),
                    _ => None,
                };
                rows.push(SweepRow {
                    variant,
                    train_f,
                    eval_f,
                    top1,
                    drop,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "variant,train_f,eval_f,top1,drop")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.variant.name(),
            r.train_f,
            r.eval_f,
            opt(r.top1),
            opt(r.drop)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Largest accuracy drop of `variant` over every train and eval frequency.
pub fn max_drop(rows: &[SweepRow], variant: Variant) -> Option<f64> {
    rows.iter()
        .filter(|r| r.variant == variant)
        .map(|r| r.drop)
        .collect::<Option<Vec<f64>>>()?
        .into_iter()
        .reduce(f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inspection {
    pub prediction: usize,
    pub label: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<InspectionRecord>,
    pub loss: LossBreakdown,
}

/// Selection and loss breakdown for one event file, aggregated at the
/// training frequency and padded to `pad_to` frames if given. Without a
/// label the cross-entropy is taken against the prediction.
pub fn inspect(
    checkpoint: &Path,
    sample: &Path,
    label: Option<usize>,
    pad_to: Option<usize>,
) -> Result<Inspection> {
    let (pipeline, store) = load_pipeline(checkpoint)?;
    let sensor = pipeline.spec.sensor.ok_or_else(|| {
        CoreError::Argument("checkpoint does not record the sensor geometry".into())
    })?;
    let stream = load_events(sample, sensor)?;
    let stack = build_stack(&stream, &pipeline.spec.sampling, pad_to)?;
    let first = pipeline.infer(&store, &stack, label.unwrap_or(0))?;
    let prediction = first.prediction();
    let label = label.unwrap_or(prediction);
    let out = if label == 0 {
        first
    } else {
        pipeline.infer(&store, &stack, label)?
    };
    let selection = match (&out.scores, &out.mask) {
        (Some(s), Some(m)) => Some(InspectionRecord::new(s, m, stack.original, stack.pad)),
        _ => None,
    };
    Ok(Inspection {
        prediction,
        label,
        selection,
        loss: out.loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig {
            epochs: 100,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &cfg, 4), 0.0);
        assert!((lr_at(20, &cfg, 4) - 1e-3).abs() < 1e-15);
        assert!((lr_at(10, &cfg, 4) - 5e-4).abs() < 1e-15);
        assert!(lr_at(399, &cfg, 4) <= 1e-6);
        let lrs: Vec<f64> = (20..400).map(|s| lr_at(s, &cfg, 4)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn overrides() {
        let mut v = serde_json::to_value(TrainConfig::default()).unwrap();
        apply_override(&mut v, "epochs=3").unwrap();
        apply_override(&mut v, "sampling.frequency_hz=60").unwrap();
        apply_override(&mut v, "out_dir=runs/x").unwrap();
        apply_override(&mut v, "variant=event-counts").unwrap();
        let cfg: TrainConfig = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.sampling.frequency_hz, 60.0);
        assert_eq!(cfg.out_dir, PathBuf::from("runs/x"));
        assert_eq!(cfg.variant, Variant::EventCounts);
        assert!(apply_override(&mut v, "epochs").is_err());
        assert!(apply_override(&mut v, "epochs.x=1").is_err());
    }

    #[test]
    fn config_invariants() {
        let mut cfg = TrainConfig {
            warmup_epochs: 6,
            epochs: 5,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.warmup_epochs = 5;
        cfg.validate().unwrap();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn max_drop_over_cells() {
        let row = |v, d: Option<f64>| SweepRow {
            variant: v,
            train_f: 20.0,
            eval_f: 40.0,
            top1: d.map(|d| 1.0 - d),
            drop: d,
        };
        let rows = vec![
            row(Variant::EventCounts, Some(0.0)),
            row(Variant::EventCounts, Some(0.25)),
            row(Variant::TimeWindows, None),
        ];
        assert_eq!(max_drop(&rows, Variant::EventCounts), Some(0.25));
        assert_eq!(max_drop(&rows, Variant::TimeWindows), None);
        assert_eq!(max_drop(&rows, Variant::EventCountsPeas), None);
    }
}
