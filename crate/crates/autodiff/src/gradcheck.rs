//! Central finite-difference gradient checks at `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ops::{Binning, Conv3dSpec};
use crate::{Result, Tape, Tensor, Var};

/// Settings for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference perturbation.
    pub step: f64,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error.
    pub floor: f64,
    /// Check at most this many coordinates per input (deterministic subset).
    pub max_coords: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-3,
            max_coords: 64,
        }
    }
}

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares tape gradients of the scalar `f(inputs)` against central
/// differences over every input coordinate, or over a fixed pseudo-random
/// subset of `max_coords` coordinates for larger inputs.
pub fn grad_check<F>(inputs: &[Tensor<f64>], cfg: GradCheck, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for coord in coordinate_subset(input.len(), cfg.max_coords, i as u64) {
            let orig = input.data()[coord];
            work[i].data_mut()[coord] = orig + cfg.step;
            let plus = eval(&work)?;
            work[i].data_mut()[coord] = orig - cfg.step;
            let minus = eval(&work)?;
            work[i].data_mut()[coord] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[i].data()[coord];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            if rel > report.max_rel_err {
                report = GradCheckReport {
                    max_rel_err: rel,
                    input: i,
                    coord,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

fn coordinate_subset(len: usize, max: usize, salt: u64) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut state = 0x9E37_79B9_7F4A_7C15u64 ^ salt.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    let mut picked = Vec::with_capacity(max);
    let mut taken = vec![false; len];
    while picked.len() < max {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        let i = ((z ^ (z >> 31)) % len as u64) as usize;
        if !std::mem::replace(&mut taken[i], true) {
            picked.push(i);
        }
    }
    picked.sort_unstable();
    picked
}

/// Result of one entry of [`op_suite`].
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub op: &'static str,
    pub report: GradCheckReport,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Reduces an output of any shape to a scalar with fixed random weights, so
/// every output coordinate contributes a distinct sensitivity.
fn project<'t>(v: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, &v.shape(), -1.0, 1.0);
    v.dot_const(&w)
}

/// Gradient checks of every differentiable op on fixed random inputs,
/// including the selective scan with all six inputs on several shapes.
pub fn op_suite() -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let mut run = |op: &'static str,
                   inputs: &[Tensor<f64>],
                   f: &dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>|
     -> Result<()> {
        let report = grad_check(inputs, GradCheck::default(), f)?;
        out.push(SuiteEntry { op, report });
        Ok(())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
    let b = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
    let bias = rand_tensor(&mut rng, &[4], -1.0, 1.0);
    run("add", &[a.clone(), b.clone()], &|_, v| {
        project(v[0].add(&v[1])?, 1)
    })?;
    run("sub", &[a.clone(), b.clone()], &|_, v| {
        project(v[0].sub(&v[1])?, 2)
    })?;
    run("mul", &[a.clone(), b.clone()], &|_, v| {
        project(v[0].mul(&v[1])?, 3)
    })?;
    run("scale", std::slice::from_ref(&a), &|_, v| {
        project(v[0].scale(-0.7), 4)
    })?;
    run("add_scalar", std::slice::from_ref(&a), &|_, v| {
        project(v[0].add_scalar(0.3), 5)
    })?;
    run("exp", std::slice::from_ref(&a), &|_, v| {
        project(v[0].exp(), 5)
    })?;
    run("square", std::slice::from_ref(&a), &|_, v| {
        project(v[0].square(), 6)
    })?;
    run("sigmoid", std::slice::from_ref(&a), &|_, v| {
        project(v[0].sigmoid(), 7)
    })?;
    run("silu", std::slice::from_ref(&a), &|_, v| {
        project(v[0].silu(), 8)
    })?;
    run("gelu", std::slice::from_ref(&a), &|_, v| {
        project(v[0].gelu(), 9)
    })?;
    run("softplus", std::slice::from_ref(&a), &|_, v| {
        project(v[0].softplus(), 10)
    })?;
    run("add_bias", &[a.clone(), bias.clone()], &|_, v| {
        project(v[0].add_bias(&v[1])?, 11)
    })?;
    run("mul_row", &[a.clone(), bias.clone()], &|_, v| {
        project(v[0].mul_row(&v[1])?, 12)
    })?;
    run("sum", std::slice::from_ref(&a), &|_, v| {
        Ok(v[0].square().sum())
    })?;
    run("mean", std::slice::from_ref(&a), &|_, v| {
        Ok(v[0].square().mean())
    })?;
    run("sum_all", &[a.clone(), b.clone()], &|_, v| {
        Var::sum_all(&[v[0].square().sum(), v[1].exp().sum()])
    })?;
    // points kept away from the clamp corners
    let c = Tensor::new(vec![4], vec![-0.5, 0.2, 0.7, 1.6])?;
    run("clamp", &[c], &|_, v| project(v[0].clamp(0.0, 1.0), 13))?;

    let a = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[5, 2], -1.0, 1.0);
    let t = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
    run("matmul", &[a.clone(), b], &|_, v| {
        project(v[0].matmul(&v[1])?, 1)
    })?;
    run("transpose", std::slice::from_ref(&a), &|_, v| {
        project(v[0].transpose()?, 2)
    })?;
    run("concat_rows", &[a.clone(), t.clone()], &|_, v| {
        project(Var::concat_rows(&[v[0], v[1]])?, 3)
    })?;
    run("slice_cols", std::slice::from_ref(&a), &|_, v| {
        project(v[0].slice_cols(1, 3)?, 4)
    })?;
    run("slice_rows", std::slice::from_ref(&t), &|_, v| {
        project(v[0].slice_rows(1, 2)?, 5)
    })?;
    run("reverse_rows", std::slice::from_ref(&t), &|_, v| {
        project(v[0].reverse_rows()?, 6)
    })?;
    run("permute_rows", std::slice::from_ref(&t), &|_, v| {
        project(v[0].permute_rows(&[2, 0, 3, 1])?, 7)
    })?;
    run("gather_rows", std::slice::from_ref(&t), &|_, v| {
        project(v[0].gather_rows(&[3, 3, 0, 1, 3])?, 8)
    })?;
    run("embed_add", &[a.clone(), t], &|_, v| {
        project(v[0].embed_add(&v[1], &[Some(1), None, Some(1)])?, 9)
    })?;
    run("reshape", &[a], &|_, v| {
        project(v[0].reshape(vec![5, 3])?, 10)
    })?;

    let x = rand_tensor(&mut rng, &[2, 3, 9, 9], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3, 3], -0.5, 0.5);
    let cb = rand_tensor(&mut rng, &[3], -0.5, 0.5);
    let spec = Conv3dSpec {
        stride: [1, 2, 2],
        pad: [1, 1, 1],
    };
    run("conv3d", &[x.clone(), w, cb], &|_, v| {
        project(v[0].conv3d(&v[1], &v[2], spec)?, 1)
    })?;
    run("spatial_mean", &[x], &|_, v| {
        project(v[0].spatial_mean()?, 2)
    })?;
    let seq = rand_tensor(&mut rng, &[7, 3], -1.0, 1.0);
    let dw = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let db = rand_tensor(&mut rng, &[3], -1.0, 1.0);
    run("depthwise_conv1d", &[seq, dw, db], &|_, v| {
        project(v[0].depthwise_conv1d(&v[1], &v[2])?, 3)
    })?;

    let x = rand_tensor(&mut rng, &[3, 6], -2.0, 2.0);
    let g = rand_tensor(&mut rng, &[6], 0.5, 1.5);
    let nb = rand_tensor(&mut rng, &[6], -0.5, 0.5);
    run("layer_norm", &[x.clone(), g.clone(), nb], &|_, v| {
        project(v[0].layer_norm(&v[1], &v[2], 1e-5)?, 1)
    })?;
    run("rms_norm", &[x.clone(), g], &|_, v| {
        project(v[0].rms_norm(&v[1], 1e-5)?, 2)
    })?;
    run("softmax", std::slice::from_ref(&x), &|_, v| {
        project(v[0].softmax(), 3)
    })?;
    run("log_softmax", &[x], &|_, v| project(v[0].log_softmax(), 4))?;
    let logits = rand_tensor(&mut rng, &[7], -2.0, 2.0);
    run("cross_entropy", &[logits], &|_, v| v[0].cross_entropy(4))?;

    let rgb = rand_tensor(&mut rng, &[2, 12], 0.0, 1.0);
    run("rgb_to_gray", &[rgb], &|_, v| {
        project(v[0].rgb_to_gray()?, 1)
    })?;
    let vals = rand_tensor(&mut rng, &[40], 0.02, 0.98);
    let other = rand_tensor(&mut rng, &[40], 0.02, 0.98);
    let soft = Binning::Soft { bandwidth: 1.0 };
    run("soft_histogram", std::slice::from_ref(&vals), &|_, v| {
        project(v[0].soft_histogram(8, soft)?, 2)
    })?;
    run(
        "soft_joint_histogram",
        &[vals.clone(), other.clone()],
        &|_, v| project(v[0].soft_joint_histogram(&v[1], 6, soft)?, 3),
    )?;
    let p = rand_tensor(&mut rng, &[9], 0.05, 1.0);
    run("entropy", &[p], &|_, v| Ok(v[0].entropy()))?;
    let j = rand_tensor(&mut rng, &[4, 5], 0.01, 0.1);
    run("mutual_information", &[j], &|_, v| {
        v[0].mutual_information()
    })?;
    run("histogram+entropy", std::slice::from_ref(&vals), &|_, v| {
        Ok(v[0].soft_histogram(8, soft)?.entropy())
    })?;
    run("joint+mutual_information", &[vals, other], &|_, v| {
        v[0].soft_joint_histogram(&v[1], 6, soft)?
            .mutual_information()
    })?;

    let mask = rand_tensor(&mut rng, &[3, 5], 0.0, 1.0);
    let frames = rand_tensor(&mut rng, &[5, 8], 0.0, 1.0);
    run("gather_contract", &[mask, frames], &|_, v| {
        project(v[0].gather_contract(&v[1])?, 1)
    })?;
    let scores = rand_tensor(&mut rng, &[3, 6], -1.0, 1.0);
    let noise = Tensor::from_fn(vec![3, 6], |_| -(-rng.gen_range(1e-9f64..1.0).ln()).ln());
    run("gumbel_softmax_soft", &[scores], &|_, v| {
        project(v[0].gumbel_softmax_soft(&noise, 0.8)?, 2)
    })?;

    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let len = rng.gen_range(1..=16);
        let ch = rng.gen_range(1..=4);
        let ns = rng.gen_range(1..=4);
        let u = rand_tensor(&mut rng, &[len, ch], -1.0, 1.0);
        // tiny steps exercise the series branch of the ZOH derivative
        let delta = rand_tensor(&mut rng, &[len, ch], 1e-3, 2.0);
        let a_log = rand_tensor(&mut rng, &[ch, ns], -3.0, 1.5);
        let b = rand_tensor(&mut rng, &[len, ns], -1.0, 1.0);
        let c = rand_tensor(&mut rng, &[len, ns], -1.0, 1.0);
        let d = rand_tensor(&mut rng, &[ch], -1.0, 1.0);
        run("selective_scan", &[u, delta, a_log, b, c, d], &|_, v| {
            project(
                v[0].selective_scan(&v[1], &v[2], &v[3], &v[4], &v[5])?,
                seed,
            )
        })?;
    }
    Ok(out)
}
