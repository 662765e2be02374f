//! Dataset ingestion, splitting, and synthesis.
//!
//! On-disk layout: `<dir>/images/*.pgm|*.ppm` with `<dir>/masks/<stem>.pgm`,
//! matched by filename stem. Images come out as `[C, H, W]` tensors in
//! [0, 1]; masks as binary `[H, W]` tensors. All ingestion is deterministic:
//! files are processed in id order, resizes are pure functions.

mod augment;
mod pnm;
mod resize;
mod synthetic;

pub use augment::{augment_flip, flip};
pub use pnm::{read_pnm, write_pgm, PnmImage};
pub use resize::{bilinear_resize, nearest_resize};
pub use synthetic::generate_synthetic;

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SegmentationSample {
    pub id: String,
    /// `[C, H, W]`, values in [0, 1].
    pub image: Tensor<f32>,
    /// `[H, W]`, values exactly 0 or 1.
    pub mask: Tensor<f32>,
}

impl SegmentationSample {
    pub fn new(id: String, image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let is = image.shape();
        let ms = mask.shape();
        if is.len() != 3 || ms.len() != 2 || is[1] != ms[0] || is[2] != ms[1] {
            return Err(Error::Data(format!(
                "sample {id}: image shape {is:?} does not pair with mask shape {ms:?}"
            )));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("sample {id}: mask is not binary")));
        }
        Ok(SegmentationSample { id, image, mask })
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

/// Loads every image/mask pair under `dir`, rescaled to
/// `target_size x target_size` (bilinear for images, nearest for masks),
/// sorted by id. Mask pixels binarize at half the file's maxval.
pub fn load_dataset(dir: &Path, target_size: usize) -> Result<Vec<SegmentationSample>> {
    if target_size == 0 {
        return Err(Error::Data("target_size must be positive".into()));
    }
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    let entries = std::fs::read_dir(&images_dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", images_dir.display())))?;
    let mut image_paths = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", images_dir.display())))?
            .path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") | Some("ppm") => image_paths.push(path),
            _ => {}
        }
    }
    if image_paths.is_empty() {
        return Err(Error::Data(format!(
            "no .pgm or .ppm images found in {}",
            images_dir.display()
        )));
    }
    image_paths.sort();
    let mut samples = Vec::with_capacity(image_paths.len());
    for path in image_paths {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("bad filename {}", path.display())))?
            .to_string();
        let mask_path = masks_dir.join(format!("{id}.pgm"));
        if !mask_path.is_file() {
            return Err(Error::Data(format!(
                "image {id} has no mask at {}",
                mask_path.display()
            )));
        }
        let img = read_pnm(&path)?;
        let msk = read_pnm(&mask_path)?;
        if msk.channels != 1 {
            return Err(Error::Data(format!("mask for {id} must be grayscale")));
        }
        if (img.width, img.height) != (msk.width, msk.height) {
            return Err(Error::Data(format!(
                "image {id} is {}x{} but its mask is {}x{}",
                img.width, img.height, msk.width, msk.height
            )));
        }
        let maxval = img.maxval as f32;
        let plane = img.width * img.height;
        let mut image = Vec::with_capacity(img.channels * target_size * target_size);
        for c in 0..img.channels {
            let channel: Vec<f32> = (0..plane)
                .map(|p| img.data[p * img.channels + c] as f32 / maxval)
                .collect();
            image.extend(bilinear_resize(
                &channel,
                img.width,
                img.height,
                target_size,
                target_size,
            ));
        }
        let half = msk.maxval as f32 / 2.0;
        let binary: Vec<f32> = msk
            .data
            .iter()
            .map(|&v| (v as f32 > half) as u8 as f32)
            .collect();
        let mask = nearest_resize(&binary, msk.width, msk.height, target_size, target_size);
        samples.push(SegmentationSample::new(
            id,
            Tensor::from_vec(&[img.channels, target_size, target_size], image)?,
            Tensor::from_vec(&[target_size, target_size], mask)?,
        )?);
    }
    let channels = samples[0].channels();
    if let Some(odd) = samples.iter().find(|s| s.channels() != channels) {
        return Err(Error::Data(format!(
            "mixed channel counts: {} has {}, {} has {channels}",
            odd.id,
            odd.channels(),
            samples[0].id
        )));
    }
    Ok(samples)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    /// FNV-1a over the full id assignment; logged so runs that must share
    /// a split can prove they did.
    pub fn hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        };
        for (tag, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            eat(tag.as_bytes());
            eat(b":");
            for id in ids {
                eat(id.as_bytes());
                eat(b",");
            }
            eat(b"|");
        }
        h
    }
}

/// Seeded shuffle, then contiguous slices sized by floors of the ratios.
/// Leftovers land in test; val and test are then topped up to at least one
/// sample each (taking from test, then train), keeping every part within
/// one sample of its configured share.
pub fn split_dataset(ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (rt, rv, rs) = ratios;
    if !(rt > 0.0 && rv >= 0.0 && rs >= 0.0) || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let n = ids.len();
    if n < 3 {
        return Err(Error::Data(format!(
            "need at least 3 samples to split, have {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed, Stream::Shuffle).shuffle(&mut order);
    let mut n_train = (rt * n as f64).floor() as usize;
    let mut n_val = (rv * n as f64).floor() as usize;
    if n_val == 0 {
        n_val = 1;
    }
    while n_train + n_val + 1 > n {
        n_train -= 1;
    }
    let pick = |r: std::ops::Range<usize>| order[r].iter().map(|&i| ids[i].clone()).collect();
    Ok(DatasetSplit {
        train: pick(0..n_train),
        val: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..n),
        seed,
    })
}

/// Resolves split ids back to samples, erroring on unknown ids.
pub fn select<'a>(
    samples: &'a [SegmentationSample],
    ids: &[String],
) -> Result<Vec<&'a SegmentationSample>> {
    let by_id: HashMap<&str, &SegmentationSample> =
        samples.iter().map(|s| (s.id.as_str(), s)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("split references unknown sample {id}")))
        })
        .collect()
}
