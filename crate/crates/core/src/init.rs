//! Parameter initialization and frame-layout helpers shared by the model
//! components.

use evssm_autodiff::optim::{ParamId, ParamStore};
use evssm_autodiff::{Scalar, Tensor};
use rand::Rng;

use crate::aggregation::EventFrameStack;
use crate::error::Result;

/// Inserts a tensor drawn from `U(-bound, bound)`.
pub fn uniform<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: &[usize],
    bound: f64,
    decay: bool,
    rng: &mut R,
) -> Result<ParamId> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.gen_range(-bound..=bound)))
        .collect();
    Ok(store.insert(name, Tensor::new(shape.to_vec(), data)?, decay)?)
}

pub fn constant<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: &[usize],
    value: f64,
    decay: bool,
) -> Result<ParamId> {
    Ok(store.insert(name, Tensor::full(shape.to_vec(), T::of(value)), decay)?)
}

/// Pixel visiting order that makes each `patch × patch` tile contiguous:
/// slot `i` of the returned vector is the row-major pixel index `r·w + c`.
/// Tiles are themselves visited row-major.
pub fn patch_major(h: usize, w: usize, patch: usize) -> Vec<usize> {
    let (th, tw) = (h / patch, w / patch);
    let mut order = Vec::with_capacity(h * w);
    for tr in 0..th {
        for tc in 0..tw {
            for r in 0..patch {
                for c in 0..patch {
                    order.push((tr * patch + r) * w + tc * patch + c);
                }
            }
        }
    }
    order
}

/// Stack frames as rows `[P, H·W·3]` with pixels in `order` (channel-last
/// within a pixel).
pub fn frame_rows<T: Scalar>(stack: &EventFrameStack, order: &[usize]) -> Tensor<T> {
    let n = stack.frame_len();
    let mut data = Vec::with_capacity(stack.total() * n);
    for f in 0..stack.total() {
        let frame = stack.frame(f);
        for &px in order {
            data.extend(frame[px * 3..px * 3 + 3].iter().map(|&v| T::of(v as f64)));
        }
    }
    Tensor::new(vec![stack.total(), n], data).expect("frame rows shape")
}

/// Stack as a channel-first volume `[3, P, H, W]`.
pub fn frame_volume<T: Scalar>(stack: &EventFrameStack) -> Tensor<T> {
    let (p, hw) = (stack.total(), stack.height * stack.width);
    let mut data = vec![T::zero(); 3 * p * hw];
    for f in 0..p {
        for (px, rgb) in stack.frame(f).chunks_exact(3).enumerate() {
            for ch in 0..3 {
                data[(ch * p + f) * hw + px] = T::of(rgb[ch] as f64);
            }
        }
    }
    Tensor::new(vec![3, p, stack.height, stack.width], data).expect("volume shape")
}

/// splitmix64-style hash of a key tuple, used to derive independent RNG
/// streams.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x9e37_79b9_7f4a_7c15, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_major_groups_tiles() {
        // 2x4 image, 2x2 patches: left tile then right tile
        assert_eq!(patch_major(2, 4, 2), vec![0, 1, 4, 5, 2, 3, 6, 7]);
        let mut o = patch_major(32, 32, 16);
        o.sort_unstable();
        assert_eq!(o, (0..1024).collect::<Vec<_>>());
    }
}
