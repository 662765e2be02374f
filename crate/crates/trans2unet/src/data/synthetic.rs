//! Synthetic nuclei-style samples: noisy dark background with a handful of
//! bright, possibly overlapping ellipses; the mask is the exact union of
//! the ellipse interiors.

use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};
use crate::tensor::Tensor;

use super::SegmentationSample;

pub fn generate_synthetic(n: usize, size: usize, seed: u64) -> Result<Vec<SegmentationSample>> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::Data(format!(
            "synthetic size must be a positive multiple of 16, got {size}"
        )));
    }
    let mut rng = SeededRng::new(seed, Stream::Synth);
    let s = size as f64;
    (0..n)
        .map(|i| {
            let bg = rng.uniform_in(0.05, 0.15);
            let sigma = rng.uniform_in(0.01, 0.03);
            let noise: Vec<f64> = (0..size * size).map(|_| rng.normal(0.0, 1.0)).collect();
            let mut image: Vec<f32> = noise.iter().map(|&z| (bg + sigma * z) as f32).collect();
            let mut mask = vec![0.0f32; size * size];
            let count = 1 + rng.below(3);
            for _ in 0..count {
                let cx = rng.uniform_in(0.2, 0.8) * s;
                let cy = rng.uniform_in(0.2, 0.8) * s;
                // Semi-axes of at least size/8 guarantee the ellipse
                // covers the pixel center nearest its own center, so every
                // mask has foreground.
                let a = rng.uniform_in(s / 8.0, s / 4.0);
                let b = rng.uniform_in(s / 8.0, s / 4.0);
                let theta = rng.uniform_in(0.0, std::f64::consts::PI);
                let bright = rng.uniform_in(0.7, 0.95);
                let (sin, cos) = theta.sin_cos();
                for y in 0..size {
                    for x in 0..size {
                        let dx = (x as f64 + 0.5) - cx;
                        let dy = (y as f64 + 0.5) - cy;
                        let u = (dx * cos + dy * sin) / a;
                        let v = (-dx * sin + dy * cos) / b;
                        if u * u + v * v <= 1.0 {
                            let p = y * size + x;
                            image[p] = (bright + sigma * noise[p]) as f32;
                            mask[p] = 1.0;
                        }
                    }
                }
            }
            for v in &mut image {
                *v = v.clamp(0.0, 1.0);
            }
            SegmentationSample::new(
                format!("synth{i:04}"),
                Tensor::from_vec(&[1, size, size], image)?,
                Tensor::from_vec(&[size, size], mask)?,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contract_holds_for_the_overfit_suite() {
        let samples = generate_synthetic(8, 32, 7).unwrap();
        assert_eq!(samples.len(), 8);
        for s in &samples {
            assert_eq!(s.image.shape(), &[1, 32, 32]);
            assert_eq!(s.mask.shape(), &[32, 32]);
            let mask = s.mask.to_vec();
            assert!(mask.iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(mask.iter().any(|&v| v == 1.0), "{} has empty mask", s.id);
            assert!(s.image.to_vec().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic(4, 32, 123).unwrap();
        let b = generate_synthetic(4, 32, 123).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.image.to_vec(), y.image.to_vec());
            assert_eq!(x.mask.to_vec(), y.mask.to_vec());
        }
        let c = generate_synthetic(4, 32, 124).unwrap();
        assert_ne!(a[0].image.to_vec(), c[0].image.to_vec());
    }

    #[test]
    fn mean_foreground_fraction_is_moderate() {
        let samples = generate_synthetic(100, 32, 42).unwrap();
        let mut total = 0.0;
        for s in &samples {
            let m = s.mask.to_vec();
            total += m.iter().sum::<f32>() as f64 / m.len() as f64;
        }
        let mean = total / 100.0;
        assert!((0.05..=0.5).contains(&mean), "mean foreground fraction {mean}");
    }

    #[test]
    fn size_must_be_multiple_of_16() {
        assert!(generate_synthetic(1, 24, 0).is_err());
        assert!(generate_synthetic(1, 0, 0).is_err());
    }
}
