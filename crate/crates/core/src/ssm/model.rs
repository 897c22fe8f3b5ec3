//! Patch embedding, CLS token and positional embeddings, bidirectional
//! Mamba blocks and the classification head.

use evssm_autodiff::optim::{ParamId, ParamStore};
use evssm_autodiff::{Scalar, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::init;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    Small,
    Middle,
}

impl Preset {
    /// `(layers, dim)`.
    pub fn shape(self) -> (usize, usize) {
        match self {
            Preset::Tiny => (24, 192),
            Preset::Small => (24, 384),
            Preset::Middle => (32, 576),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "small" => Ok(Preset::Small),
            "middle" => Ok(Preset::Middle),
            _ => Err(CoreError::Argument(format!("unknown preset {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    /// Number of frames the temporal embedding is sized for.
    pub frames: usize,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "ModelConfig::default_patch")]
    pub patch: usize,
    #[serde(default = "ModelConfig::default_state")]
    pub state_dim: usize,
    #[serde(default = "ModelConfig::default_expand")]
    pub expand: usize,
    #[serde(default = "ModelConfig::default_conv")]
    pub conv_width: usize,
}

impl ModelConfig {
    fn default_patch() -> usize {
        16
    }
    fn default_state() -> usize {
        16
    }
    fn default_expand() -> usize {
        2
    }
    fn default_conv() -> usize {
        4
    }

    pub fn preset(
        preset: Preset,
        frames: usize,
        num_classes: usize,
        height: usize,
        width: usize,
    ) -> Self {
        let (layers, dim) = preset.shape();
        Self::custom(layers, dim, frames, num_classes, height, width)
    }

    pub fn custom(
        layers: usize,
        dim: usize,
        frames: usize,
        num_classes: usize,
        height: usize,
        width: usize,
    ) -> Self {
        Self {
            layers,
            dim,
            frames,
            num_classes,
            height,
            width,
            patch: 16,
            state_dim: 16,
            expand: 2,
            conv_width: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0
            || !self.height.is_multiple_of(self.patch)
            || !self.width.is_multiple_of(self.patch)
            || self.height == 0
            || self.width == 0
        {
            return Err(CoreError::Shape(format!(
                "frame {}x{} is not a positive multiple of patch {}",
                self.height, self.width, self.patch
            )));
        }
        if self.dim == 0
            || self.frames == 0
            || self.num_classes == 0
            || self.state_dim == 0
            || self.expand == 0
            || self.conv_width == 0
        {
            return Err(CoreError::Argument(
                "model dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn tokens_per_frame(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.dim
    }

    pub fn dt_rank(&self) -> usize {
        self.dim.div_ceil(16)
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * 3
    }
}

/// Per-direction parameters of a bidirectional block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectionParams {
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub x_proj: ParamId,
    pub dt_w: ParamId,
    pub dt_b: ParamId,
    pub a_log: ParamId,
    pub d: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockParams {
    pub norm: ParamId,
    pub in_proj: ParamId,
    pub out_proj: ParamId,
    /// Forward, then backward.
    pub dirs: [DirectionParams; 2],
}

/// Parameter handles of the SSM classifier inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub config: ModelConfig,
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    pub cls: ParamId,
    pub pos_spatial: ParamId,
    pub pos_temporal: ParamId,
    pub blocks: Vec<BlockParams>,
    pub head_gamma: ParamId,
    pub head_beta: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

const NORM_EPS: f64 = 1e-5;

fn bound(fan_in: usize) -> f64 {
    (fan_in as f64).sqrt().recip()
}

impl Classifier {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (dm, di, ns, r) = (
            config.dim,
            config.d_inner(),
            config.state_dim,
            config.dt_rank(),
        );
        let pl = config.patch_len();
        let hw = config.tokens_per_frame();
        let patch_w = init::uniform(store, "embed.patch.weight", &[pl, dm], bound(pl), true, rng)?;
        let patch_b = init::constant(store, "embed.patch.bias", &[dm], 0.0, false)?;
        let cls = init::uniform(store, "embed.cls", &[1, dm], 0.02, false, rng)?;
        let pos_spatial =
            init::uniform(store, "embed.pos_spatial", &[1 + hw, dm], 0.02, false, rng)?;
        let pos_temporal = init::uniform(
            store,
            "embed.pos_temporal",
            &[config.frames, dm],
            0.02,
            false,
            rng,
        )?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("blocks.{l}");
            let norm = init::constant(store, &format!("{p}.norm.weight"), &[dm], 1.0, false)?;
            let in_proj = init::uniform(
                store,
                &format!("{p}.in_proj.weight"),
                &[dm, 2 * di],
                bound(dm),
                true,
                rng,
            )?;
            let out_proj = init::uniform(
                store,
                &format!("{p}.out_proj.weight"),
                &[di, dm],
                bound(di),
                true,
                rng,
            )?;
            let mut dir = |name: &str, rng: &mut R| -> Result<DirectionParams> {
                let q = format!("{p}.{name}");
                let dt_b = {
                    let vals: Vec<T> = (0..di)
                        .map(|_| {
                            let dt: f64 = rng.gen_range(1e-3f64.ln()..1e-1f64.ln()).exp();
                            T::of(dt + (-(-dt).exp_m1()).ln())
                        })
                        .collect();
                    store.insert(
                        format!("{q}.dt_proj.bias"),
                        Tensor::new(vec![di], vals)?,
                        false,
                    )?
                };
                let a_vals = (0..di * ns)
                    .map(|i| T::of((((i % ns) + 1) as f64).ln()))
                    .collect();
                Ok(DirectionParams {
                    conv_w: init::uniform(
                        store,
                        &format!("{q}.conv.weight"),
                        &[di, config.conv_width],
                        bound(config.conv_width),
                        true,
                        rng,
                    )?,
                    conv_b: init::constant(store, &format!("{q}.conv.bias"), &[di], 0.0, false)?,
                    x_proj: init::uniform(
                        store,
                        &format!("{q}.x_proj.weight"),
                        &[di, r + 2 * ns],
                        bound(di),
                        true,
                        rng,
                    )?,
                    dt_w: init::uniform(
                        store,
                        &format!("{q}.dt_proj.weight"),
                        &[r, di],
                        bound(r),
                        true,
                        rng,
                    )?,
                    dt_b,
                    a_log: store.insert(
                        format!("{q}.a_log"),
                        Tensor::new(vec![di, ns], a_vals)?,
                        false,
                    )?,
                    d: init::constant(store, &format!("{q}.d"), &[di], 1.0, false)?,
                })
            };
            let fwd = dir("forward", rng)?;
            let bwd = dir("backward", rng)?;
            blocks.push(BlockParams {
                norm,
                in_proj,
                out_proj,
                dirs: [fwd, bwd],
            });
        }
        Ok(Self {
            config: config.clone(),
            patch_w,
            patch_b,
            cls,
            pos_spatial,
            pos_temporal,
            blocks,
            head_gamma: init::constant(store, "head.norm.weight", &[dm], 1.0, false)?,
            head_beta: init::constant(store, "head.norm.bias", &[dm], 0.0, false)?,
            head_w: init::uniform(
                store,
                "head.weight",
                &[dm, config.num_classes],
                bound(dm),
                true,
                rng,
            )?,
            head_b: init::constant(store, "head.bias", &[config.num_classes], 0.0, false)?,
        })
    }

    /// Logits `[num_classes]` for frames `[F, H·W·3]` laid out patch-major
    /// (see [`init::patch_major`]). `F` may differ from the configured frame
    /// count, in which case the temporal embedding is linearly resampled.
    pub fn forward<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        frames: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let tokens = patch_embed(params, self, frames)?;
        let mut x = assemble_sequence(params, self, &tokens)?;
        for (l, block) in self.blocks.iter().enumerate() {
            x = mamba_block(params, block, &x).map_err(|e| e.context(format!("layer {l}")))?;
        }
        let cls = x.slice_rows(0, 1)?;
        let h = cls.layer_norm(
            &params[self.head_gamma.0],
            &params[self.head_beta.0],
            T::of(NORM_EPS),
        )?;
        let logits = h
            .matmul(&params[self.head_w.0])?
            .add_bias(&params[self.head_b.0])?;
        Ok(logits.reshape(vec![self.config.num_classes])?)
    }
}

/// Non-overlapping `patch × patch` projection of every frame:
/// `[F, H·W·3] -> [F·h·w, dim]`. Equivalent to a 3-D convolution with a
/// `1 × patch × patch` kernel and matching stride.
pub fn patch_embed<'t, T: Scalar>(
    params: &[Var<'t, T>],
    model: &Classifier,
    frames: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    let cfg = &model.config;
    cfg.validate()?;
    let shape = frames.shape();
    let frame_len = cfg.height * cfg.width * 3;
    if shape.len() != 2 || shape[1] != frame_len {
        return Err(CoreError::Shape(format!(
            "frames {shape:?} do not match {}x{}x3",
            cfg.height, cfg.width
        )));
    }
    let n_tok = shape[0] * cfg.tokens_per_frame();
    let patches = frames.reshape(vec![n_tok, cfg.patch_len()])?;
    Ok(patches
        .matmul(&params[model.patch_w.0])?
        .add_bias(&params[model.patch_b.0])?)
}

/// Linear resampling matrix `[to, from]` over normalized frame positions.
fn resample_matrix(to: usize, from: usize) -> Vec<f64> {
    let mut m = vec![0.0; to * from];
    for i in 0..to {
        let pos = if to > 1 {
            i as f64 * (from - 1) as f64 / (to - 1) as f64
        } else {
            0.0
        };
        let lo = (pos.floor() as usize).min(from - 1);
        let hi = (lo + 1).min(from - 1);
        let frac = pos - lo as f64;
        m[i * from + lo] += 1.0 - frac;
        m[i * from + hi] += frac;
    }
    m
}

/// `[x_cls ‖ tokens]` plus the spatial embedding (CLS takes slot 0, spatial
/// position `i` of every frame takes slot `1 + i`) and the temporal embedding
/// of each token's frame.
pub fn assemble_sequence<'t, T: Scalar>(
    params: &[Var<'t, T>],
    model: &Classifier,
    tokens: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    let hw = model.config.tokens_per_frame();
    let n_tok = tokens.shape()[0];
    if !n_tok.is_multiple_of(hw) || n_tok == 0 {
        return Err(CoreError::Shape(format!(
            "{n_tok} tokens is not a multiple of {hw}"
        )));
    }
    let frames = n_tok / hw;
    let seq = Var::concat_rows(&[params[model.cls.0], *tokens])?;
    let spatial: Vec<Option<usize>> = std::iter::once(Some(0))
        .chain((0..n_tok).map(|i| Some(1 + i % hw)))
        .collect();
    let temporal: Vec<Option<usize>> = std::iter::once(None)
        .chain((0..n_tok).map(|i| Some(i / hw)))
        .collect();
    let pt = params[model.pos_temporal.0];
    let k = model.config.frames;
    let table = if frames == k {
        pt
    } else {
        let m = resample_matrix(frames, k).into_iter().map(T::of).collect();
        tokens
            .tape()
            .constant(Tensor::new(vec![frames, k], m)?)
            .matmul(&pt)?
    };
    Ok(seq
        .embed_add(&params[model.pos_spatial.0], &spatial)?
        .embed_add(&table, &temporal)?)
}

fn direction<'t, T: Scalar>(
    params: &[Var<'t, T>],
    p: &DirectionParams,
    xs: &Var<'t, T>,
    reverse: bool,
) -> Result<Var<'t, T>> {
    let u = if reverse { xs.reverse_rows()? } else { *xs };
    let u = u
        .depthwise_conv1d(&params[p.conv_w.0], &params[p.conv_b.0])?
        .silu();
    let (r, ns) = {
        let s = params[p.a_log.0].shape();
        let pw = params[p.x_proj.0].shape()[1];
        (pw - 2 * s[1], s[1])
    };
    let proj = u.matmul(&params[p.x_proj.0])?;
    let dt = proj
        .slice_cols(0, r)?
        .matmul(&params[p.dt_w.0])?
        .add_bias(&params[p.dt_b.0])?
        .softplus();
    let b = proj.slice_cols(r, ns)?;
    let c = proj.slice_cols(r + ns, ns)?;
    let y = u.selective_scan(&dt, &params[p.a_log.0], &b, &c, &params[p.d.0])?;
    Ok(if reverse { y.reverse_rows()? } else { y })
}

/// Block output before the residual add: RMS norm, input projection into a
/// scan branch and a gate, forward and backward scans averaged, SiLU gate,
/// output projection.
pub fn mamba_branch<'t, T: Scalar>(
    params: &[Var<'t, T>],
    block: &BlockParams,
    x: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    let h = x.rms_norm(&params[block.norm.0], T::of(NORM_EPS))?;
    let xz = h.matmul(&params[block.in_proj.0])?;
    let di = xz.shape()[1] / 2;
    let xs = xz.slice_cols(0, di)?;
    let z = xz.slice_cols(di, di)?;
    let yf = direction(params, &block.dirs[0], &xs, false)?;
    let yb = direction(params, &block.dirs[1], &xs, true)?;
    let y = yf.add(&yb)?.scale(T::of(0.5)).mul(&z.silu())?;
    Ok(y.matmul(&params[block.out_proj.0])?)
}

pub fn mamba_block<'t, T: Scalar>(
    params: &[Var<'t, T>],
    block: &BlockParams,
    x: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    Ok(x.add(&mamba_branch(params, block, x)?)?)
}

/// Inference-only logits for patch-major frames `[F, H·W·3]`.
pub fn forward_classify<T: Scalar>(
    frames: &Tensor<T>,
    model: &Classifier,
    store: &ParamStore<T>,
) -> Result<Vec<T>> {
    let tape = Tape::new();
    let params: Vec<_> = store
        .entries()
        .iter()
        .map(|e| tape.constant(e.value.clone()))
        .collect();
    let x = tape.constant(frames.clone());
    let logits = model.forward(&params, &x)?;
    let out = logits.value().data().to_vec();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Numeric("non-finite logits".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use evssm_autodiff::ops::Conv3dSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(frames: usize) -> (Classifier, ParamStore<f64>) {
        let cfg = ModelConfig::custom(2, 8, frames, 3, 32, 16);
        let mut store = ParamStore::new();
        let m = Classifier::init(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (m, store)
    }

    fn random_frames(f: usize, n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![f, n], |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn token_count() {
        let cfg = ModelConfig::preset(Preset::Tiny, 8, 10, 224, 224);
        assert_eq!(cfg.frames * cfg.tokens_per_frame(), 1568);
        let cfg = ModelConfig::custom(1, 4, 1, 2, 16, 16);
        assert_eq!(cfg.tokens_per_frame(), 1);
        assert!(ModelConfig::custom(1, 4, 1, 2, 20, 16).validate().is_err());
    }

    #[test]
    fn patch_embed_matches_conv3d() {
        // a 1×p×p kernel with stride p over a [3, F, H, W] volume
        let (m, store) = small(2);
        let cfg = &m.config;
        let (f, h, w, p) = (2, cfg.height, cfg.width, cfg.patch);
        let rm = random_frames(f, h * w * 3, 1);
        let order = init::patch_major(h, w, p);
        let pm: Vec<f64> = (0..f)
            .flat_map(|i| {
                order
                    .iter()
                    .flat_map(move |&px| (0..3).map(move |c| (i, px, c)))
            })
            .map(|(i, px, c)| rm.data()[i * h * w * 3 + px * 3 + c])
            .collect();
        let tape = Tape::new();
        let params = store.bind(&tape);
        let tok = patch_embed(
            &params,
            &m,
            &tape.constant(Tensor::new(vec![f, h * w * 3], pm).unwrap()),
        )
        .unwrap();
        let tv = tok.value();
        // conv weight [dim, 3, 1, p, p] rearranged from the [p·p·3, dim] matrix
        let pw = store.get(m.patch_w);
        let dim = cfg.dim;
        let cw = Tensor::from_fn(vec![dim, 3, 1, p, p], |i| {
            let (o, rest) = (i / (3 * p * p), i % (3 * p * p));
            let (c, rest) = (rest / (p * p), rest % (p * p));
            pw.data()[(rest * 3 + c) * dim + o]
        });
        let vol = Tensor::from_fn(vec![3, f, h, w], |i| {
            let (c, rest) = (i / (f * h * w), i % (f * h * w));
            rm.data()[rest * 3 + c]
        });
        let conv = tape
            .constant(vol)
            .conv3d(
                &tape.constant(cw),
                &params[m.patch_b.0],
                Conv3dSpec {
                    stride: [1, p, p],
                    pad: [0; 3],
                },
            )
            .unwrap();
        let cv = conv.value();
        let (gh, gw) = cfg.grid();
        for o in 0..dim {
            for fi in 0..f {
                for t in 0..gh * gw {
                    let a = cv.data()[(o * f + fi) * gh * gw + t];
                    let b = tv.data()[(fi * gh * gw + t) * dim + o];
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_embeddings_keep_tokens() {
        let (m, mut store) = small(2);
        for id in [m.pos_spatial, m.pos_temporal] {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let params = store.bind(&tape);
        let tokens = tape.constant(random_frames(4, 8, 2));
        let seq = assemble_sequence(&params, &m, &tokens).unwrap().value();
        assert_eq!(seq.shape(), &[5, 8]);
        assert_eq!(seq.row(0), store.get(m.cls).data());
        assert_eq!(&seq.data()[8..], tokens.value().data());
    }

    #[test]
    fn temporal_embedding_difference() {
        let (m, store) = small(2);
        let tape = Tape::new();
        let params = store.bind(&tape);
        // identical patches in both frames
        let row = random_frames(1, 8, 3);
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(row.data());
        }
        let tokens = tape.constant(Tensor::new(vec![4, 8], data).unwrap());
        let seq = assemble_sequence(&params, &m, &tokens).unwrap().value();
        let pt = store.get(m.pos_temporal);
        for slot in 0..2 {
            for j in 0..8 {
                let diff = seq.row(3 + slot)[j] - seq.row(1 + slot)[j];
                assert!((diff - (pt.row(1)[j] - pt.row(0)[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resample_rows_sum_to_one() {
        for (to, from) in [(5, 3), (1, 4), (8, 8), (3, 1)] {
            let m = resample_matrix(to, from);
            for r in 0..to {
                let s: f64 = m[r * from..(r + 1) * from].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(
            resample_matrix(3, 3),
            vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]
        );
    }

    #[test]
    fn zero_output_projection_is_identity() {
        let (m, mut store) = small(2);
        let block = m.blocks[0].clone();
        store.get_mut(block.out_proj).data_mut().fill(0.0);
        let tape = Tape::new();
        let params = store.bind(&tape);
        let x = tape.constant(random_frames(9, 8, 4));
        let y = mamba_block(&params, &block, &x).unwrap();
        assert_eq!(y.value().data(), x.value().data());
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn reversal_symmetry() {
        let (m, store) = small(2);
        let block = m.blocks[1].clone();
        let swapped = BlockParams {
            dirs: [block.dirs[1].clone(), block.dirs[0].clone()],
            ..block.clone()
        };
        let tape = Tape::new();
        let params = store.bind(&tape);
        let x = tape.constant(random_frames(11, 8, 6));
        let y = mamba_branch(&params, &block, &x).unwrap().value();
        let yr = mamba_branch(&params, &swapped, &x.reverse_rows().unwrap())
            .unwrap()
            .value();
        for t in 0..11 {
            for (a, b) in y.row(t).iter().zip(yr.row(10 - t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logits_shape_and_determinism() {
        let (m, store) = small(2);
        let frames = random_frames(2, 32 * 16 * 3, 7);
        let a = forward_classify(&frames, &m, &store).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, forward_classify(&frames, &m, &store).unwrap());
        let mx = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = a.iter().map(|v| (v - mx).exp()).sum();
        let s: f64 = a.iter().map(|v| (v - mx).exp() / z).sum();
        assert!((s - 1.0).abs() < 1e-6);
        // more frames than configured go through the resampled embedding
        assert_eq!(
            forward_classify(&random_frames(5, 32 * 16 * 3, 8), &m, &store)
                .unwrap()
                .len(),
            3
        );
    }

    #[test]
    fn tiny_preset_size() {
        let cfg = ModelConfig::preset(Preset::Tiny, 8, 10, 224, 224);
        let mut store = ParamStore::<f32>::new();
        Classifier::init(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let n = store.num_scalars() as f64;
        assert!((n - 7e6).abs() <= 0.15 * 7e6, "{n}");
    }
}
