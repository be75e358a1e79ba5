use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::text::Split;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
const STD_FLOOR: f64 = 1e-8;

/// Normalized NHWC images with labels. Indices `[..train_end]` are
/// training, `[train_end..valid_end]` validation, the rest test.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub pixels: Vec<f64>,
    pub labels: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub train_end: usize,
    pub valid_end: usize,
}

impl ImageSet {
    /// Builds a set from raw NHWC bytes. The last `valid_fraction` of the
    /// training images become validation; `test` images are appended.
    /// Channel statistics come from the training images only.
    #[allow(clippy::too_many_arguments)]
    pub fn from_bytes(
        dims: [usize; 3],
        classes: usize,
        train: (&[u8], &[usize]),
        test: (&[u8], &[usize]),
        valid_fraction: f64,
    ) -> Result<Self> {
        let [h, w, c] = dims;
        let per = h * w * c;
        if per == 0 || classes == 0 {
            return Err(Error::InvalidArgument("image dimensions and class count must be positive".into()));
        }
        if !(0.0..1.0).contains(&valid_fraction) {
            return Err(Error::InvalidArgument(format!("validation fraction {valid_fraction}")));
        }
        for (bytes, labels) in [train, test] {
            if bytes.len() != labels.len() * per {
                return Err(Error::Data(format!("{} bytes for {} images of {per}", bytes.len(), labels.len())));
            }
            if let Some(l) = labels.iter().find(|l| **l >= classes) {
                return Err(Error::Data(format!("label {l} not below {classes}")));
            }
        }
        let n_train = train.1.len();
        if n_train == 0 {
            return Err(Error::Empty("no training images".into()));
        }
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for (i, b) in train.0.iter().enumerate() {
            let v = *b as f64;
            mean[i % c] += v;
            sq[i % c] += v * v;
        }
        let count = (n_train * h * w) as f64;
        let std: Vec<f64> = (0..c)
            .map(|k| {
                mean[k] /= count;
                let var = (sq[k] / count - mean[k] * mean[k]).max(0.0);
                let s = var.sqrt();
                if s < STD_FLOOR {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        let pixels = train
            .0
            .iter()
            .chain(test.0)
            .enumerate()
            .map(|(i, b)| (*b as f64 - mean[i % c]) / std[i % c])
            .collect();
        let labels: Vec<usize> = train.1.iter().chain(test.1).copied().collect();
        let n_valid = (n_train as f64 * valid_fraction).round() as usize;
        Ok(ImageSet {
            height: h,
            width: w,
            channels: c,
            classes,
            pixels,
            labels,
            mean,
            std,
            train_end: n_train - n_valid,
            valid_end: n_train,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Valid => self.train_end..self.valid_end,
            Split::Test => self.valid_end..self.len(),
        }
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.range(split).len()
    }

    /// Gathers absolute image indices into an NHWC tensor.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.pixels[i * per..(i + 1) * per]);
        }
        let x = Tensor::new(vec![indices.len(), self.height, self.width, self.channels], data).expect("consistent image size");
        (x, indices.iter().map(|i| self.labels[*i]).collect())
    }

    /// Shuffled minibatches covering a split once; the last one may be short.
    pub fn epoch_batches<R: Rng + ?Sized>(&self, split: Split, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = self.range(split).collect();
        idx.shuffle(rng);
        idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
    }

    /// `batch` indices of a split drawn uniformly with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, split: Split, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        let r = self.range(split);
        if r.is_empty() {
            return Err(Error::Empty(format!("{} split has no images", split.name())));
        }
        Ok((0..batch).map(|_| rng.gen_range(r.clone())).collect())
    }

    /// Undoes normalization for image `index`, recovering the stored bytes.
    pub fn denormalize(&self, index: usize) -> Vec<u8> {
        let per = self.image_len();
        self.pixels[index * per..(index + 1) * per]
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let ch = k % self.channels;
                (v * self.std[ch] + self.mean[ch]).round().clamp(0.0, 255.0) as u8
            })
            .collect()
    }
}

/// Decodes CIFAR-10 binary records into NHWC bytes and labels.
pub fn decode_cifar(bytes: &[u8]) -> Result<(Vec<u8>, Vec<usize>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let offset = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(Error::Data(format!("truncated record at byte offset {offset}")));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut pixels = Vec::with_capacity(bytes.len() / CIFAR_RECORD * 3 * plane);
    let mut labels = Vec::new();
    for (r, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::Data(format!("label {label} at byte offset {}", r * CIFAR_RECORD)));
        }
        labels.push(label);
        for p in 0..plane {
            for ch in 0..3 {
                pixels.push(rec[1 + ch * plane + p]);
            }
        }
    }
    Ok((pixels, labels))
}

/// Loads a CIFAR-10 training file, reserving its last 10% as validation.
/// An optional test file fills the test split.
pub fn load_images_cifar_binary(train: &Path, test: Option<&Path>) -> Result<ImageSet> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())));
    let (tp, tl) = decode_cifar(&read(train)?)?;
    let (sp, sl) = match test {
        Some(p) => decode_cifar(&read(p)?)?,
        None => (vec![], vec![]),
    };
    ImageSet::from_bytes([CIFAR_SIDE, CIFAR_SIDE, 3], 10, (&tp, &tl), (&sp, &sl), 0.1)
}

/// Pads by `H/8` per side, crops back at `offset` and optionally flips
/// horizontally. Padding is zero in normalized space.
pub fn augment_with(images: &Tensor, offsets: &[(usize, usize)], flips: &[bool]) -> Result<Tensor> {
    let s = images.shape();
    if s.len() != 4 || offsets.len() != s[0] || flips.len() != s[0] {
        return Err(Error::InvalidArgument(format!("augment of {s:?} with {} offsets", offsets.len())));
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let pad = h / 8;
    let src = images.values();
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        let (dy, dx) = offsets[b];
        if dy > 2 * pad || dx > 2 * pad {
            return Err(Error::InvalidArgument(format!("crop offset {:?} beyond pad {pad}", offsets[b])));
        }
        for y in 0..h {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let xx = if flips[b] { w - 1 - x } else { x };
                let sx = (xx + dx) as isize - pad as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let o = ((b * h + y) * w + x) * c;
                let i = ((b * h + sy as usize) * w + sx as usize) * c;
                out[o..o + c].copy_from_slice(&src[i..i + c]);
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}

/// Random pad-crop-flip for a training batch.
pub fn augment<R: Rng + ?Sized>(images: &Tensor, rng: &mut R) -> Result<Tensor> {
    let s = images.shape();
    if s.len() != 4 {
        return Err(Error::InvalidArgument(format!("augment of {s:?}")));
    }
    let pad = s[1] / 8;
    let offsets: Vec<(usize, usize)> = (0..s[0]).map(|_| (rng.gen_range(0..=2 * pad), rng.gen_range(0..=2 * pad))).collect();
    let flips: Vec<bool> = (0..s[0]).map(|_| rng.gen_bool(0.5)).collect();
    augment_with(images, &offsets, &flips)
}

/// Procedural 4-class RGB set: horizontal bar, vertical bar, X cross and
/// hollow square, each with random position, size, colour and noise. Every
/// class is its own mirror image, so horizontal flips keep labels valid.
pub fn shapes_dataset<R: Rng + ?Sized>(side: usize, per_class: usize, test_per_class: usize, rng: &mut R) -> Result<ImageSet> {
    if side < 4 {
        return Err(Error::InvalidArgument(format!("shape images need side >= 4, got {side}")));
    }
    let make = |count: usize, rng: &mut R| {
        let mut bytes = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..count {
            for class in 0..4 {
                bytes.extend(draw_shape(side, class, rng));
                labels.push(class);
            }
        }
        (bytes, labels)
    };
    let (tb, tl) = make(per_class, rng);
    let (sb, sl) = make(test_per_class, rng);
    ImageSet::from_bytes([side, side, 3], 4, (&tb, &tl), (&sb, &sl), 0.1)
}

/// Background noise is uniform below this; stroke colours start at `INK`.
/// The ranges overlap, so single pixels are ambiguous.
const NOISE: u8 = 208;
const INK: u8 = 64;

fn draw_shape<R: Rng + ?Sized>(side: usize, class: usize, rng: &mut R) -> Vec<u8> {
    draw_shape_with(side, class, NOISE, rng)
}

fn draw_shape_with<R: Rng + ?Sized>(side: usize, class: usize, noise: u8, rng: &mut R) -> Vec<u8> {
    let mut img: Vec<u8> = (0..side * side * 3).map(|_| if noise == 0 { 0 } else { rng.gen_range(0..noise) }).collect();
    let colour: [u8; 3] = [rng.gen_range(INK..=255), rng.gen_range(INK..=255), rng.gen_range(INK..=255)];
    let len = rng.gen_range(side / 2..=side);
    let mut paint = |y: usize, x: usize| {
        let o = (y * side + x) * 3;
        img[o..o + 3].copy_from_slice(&colour);
    };
    match class {
        0 => {
            let y = rng.gen_range(0..side);
            let x0 = rng.gen_range(0..=side - len);
            (x0..x0 + len).for_each(|x| paint(y, x));
        }
        1 => {
            let x = rng.gen_range(0..side);
            let y0 = rng.gen_range(0..=side - len);
            (y0..y0 + len).for_each(|y| paint(y, x));
        }
        2 => {
            let y0 = rng.gen_range(0..=side - len);
            let x0 = rng.gen_range(0..=side - len);
            for t in 0..len {
                paint(y0 + t, x0 + t);
                paint(y0 + t, x0 + len - 1 - t);
            }
        }
        _ => {
            let y0 = rng.gen_range(0..=side - len);
            let x0 = rng.gen_range(0..=side - len);
            for t in 0..len {
                paint(y0, x0 + t);
                paint(y0 + len - 1, x0 + t);
                paint(y0 + t, x0);
                paint(y0 + t, x0 + len - 1);
            }
        }
    }
    img
}
