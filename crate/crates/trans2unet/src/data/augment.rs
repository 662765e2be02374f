//! Flip augmentation, applied identically to image and mask.

use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::SegmentationSample;

/// Deterministic flip of a sample along the chosen axes.
pub fn flip(sample: &SegmentationSample, horizontal: bool, vertical: bool) -> SegmentationSample {
    if !horizontal && !vertical {
        return sample.clone();
    }
    let shape = sample.image.shape().to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let img = sample.image.to_vec();
    let msk = sample.mask.to_vec();
    let src = |y: usize, x: usize| {
        let sy = if vertical { h - 1 - y } else { y };
        let sx = if horizontal { w - 1 - x } else { x };
        sy * w + sx
    };
    let mut image = Vec::with_capacity(img.len());
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                image.push(plane[src(y, x)]);
            }
        }
    }
    let mut mask = Vec::with_capacity(msk.len());
    for y in 0..h {
        for x in 0..w {
            mask.push(msk[src(y, x)]);
        }
    }
    SegmentationSample {
        id: sample.id.clone(),
        image: Tensor::from_vec(&shape, image).expect("flip keeps shape"),
        mask: Tensor::from_vec(&[h, w], mask).expect("flip keeps shape"),
    }
}

/// Randomly flips along each axis with probability 1/2.
pub fn augment_flip(sample: &SegmentationSample, rng: &mut SeededRng) -> SegmentationSample {
    let horizontal = rng.coin(0.5);
    let vertical = rng.coin(0.5);
    flip(sample, horizontal, vertical)
}
