//! Procedurally rendered glyph images with a seeded train/test split.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use tdi_autodiff::{read_tnsr, write_tnsr, Tensor};

use crate::error::{CoreError, Result};
use crate::rng;

/// Stroke endpoints in a unit box, y pointing down.
const STROKES: [((f64, f64), (f64, f64)); 9] = [
    ((0.0, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 0.5)),
    ((1.0, 0.5), (1.0, 1.0)),
    ((0.0, 1.0), (1.0, 1.0)),
    ((0.0, 0.5), (0.0, 1.0)),
    ((0.0, 0.0), (0.0, 0.5)),
    ((0.0, 0.5), (1.0, 0.5)),
    ((0.0, 0.0), (1.0, 1.0)),
    ((1.0, 0.0), (0.0, 1.0)),
];

/// Seven-segment digits; bit i selects `STROKES[i]`.
const DIGITS: [u16; 10] = [
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110, 0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111,
];

fn class_masks(n: usize) -> Vec<u16> {
    let mut masks: Vec<u16> = DIGITS.iter().copied().take(n).collect();
    let mut m: u16 = 1;
    while masks.len() < n && m < 512 {
        if m.count_ones() >= 2 && !masks.contains(&m) {
            masks.push(m);
        }
        m += 1;
    }
    masks
}

/// Maximum class count the stroke alphabet can render distinctly.
pub const MAX_CLASSES: usize = 502;

#[derive(Clone, Debug, PartialEq)]
pub struct GlyphDataset {
    pub width: usize,
    pub height: usize,
    pub n_classes: usize,
    pub n_per_class: usize,
    pub seed: u64,
    images: Vec<Vec<f64>>,
    labels: Vec<usize>,
    train: Vec<usize>,
    test: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    width: usize,
    height: usize,
    n_classes: usize,
    n_per_class: usize,
    seed: u64,
    class_counts: Vec<usize>,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn render(mask: u16, width: usize, height: usize, r: &mut rng::Rng) -> Vec<f64> {
    let unit = width.min(height) as f64 / 32.0;
    let scale = r.random_range(0.85..1.1);
    let (bw, bh) = (14.0 * unit * scale, 22.0 * unit * scale);
    let cx = width as f64 / 2.0 + r.random_range(-2.0..2.0) * unit;
    let cy = height as f64 / 2.0 + r.random_range(-2.0..2.0) * unit;
    let shear = r.random_range(-0.15..0.15);
    let thick = r.random_range(1.5..2.5) * unit;
    let place = |(u, v): (f64, f64)| {
        let y = cy + (v - 0.5) * bh;
        let x = cx + (u - 0.5) * bw - shear * (y - cy);
        (x, y)
    };
    let strokes: Vec<_> = STROKES
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, &(a, b))| (place(a), place(b)))
        .collect();
    let mut img = vec![0.0; width * height];
    for py in 0..height {
        for px in 0..width {
            let p = (px as f64 + 0.5, py as f64 + 0.5);
            let d = strokes
                .iter()
                .map(|&(a, b)| seg_dist(p, a, b))
                .fold(f64::INFINITY, f64::min);
            let ink = (thick / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            let noise = r.random_range(-0.1..0.1);
            img[py * width + px] = (ink + noise).clamp(0.0, 1.0);
        }
    }
    img
}

/// Render `n_classes × n_per_class` glyphs. Example `i` has class
/// `i mod n_classes` and is rendered from its own seed-derived stream, so the
/// example index doubles as the environment seed. The default split puts the
/// first half of the indices in train and the rest in test.
pub fn glyph_generate(
    n_classes: usize,
    n_per_class: usize,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<GlyphDataset> {
    if n_per_class < 1 {
        return Err(CoreError::InvalidArgument("n_per_class must be at least 1".into()));
    }
    if n_classes < 1 || n_classes > MAX_CLASSES {
        return Err(CoreError::InvalidArgument(format!(
            "n_classes must be in 1..={MAX_CLASSES}"
        )));
    }
    if width < 3 || height < 3 {
        return Err(CoreError::InvalidArgument("images must be at least 3×3".into()));
    }
    let masks = class_masks(n_classes);
    let base = rng::derive(seed, "glyph");
    let total = n_classes * n_per_class;
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let class = i % n_classes;
        let mut r = rng::seeded(rng::mix64(base ^ i as u64));
        images.push(render(masks[class], width, height, &mut r));
        labels.push(class);
    }
    let half = total / 2;
    Ok(GlyphDataset {
        width,
        height,
        n_classes,
        n_per_class,
        seed,
        images,
        labels,
        train: (0..half).collect(),
        test: (half..total).collect(),
    })
}

impl GlyphDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Result<usize> {
        self.labels
            .get(i)
            .copied()
            .ok_or(CoreError::OutOfRange { index: i, len: self.len() })
    }

    pub fn pixels(&self, i: usize) -> Result<&[f64]> {
        self.images
            .get(i)
            .map(|v| v.as_slice())
            .ok_or(CoreError::OutOfRange { index: i, len: self.len() })
    }

    /// Image `i` as a `[1, H, W]` tensor.
    pub fn image(&self, i: usize) -> Result<Tensor> {
        Ok(Tensor::new(vec![1, self.height, self.width], self.pixels(i)?.to_vec())?)
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    /// Train = the first `n_train` indices, test = the next `n_test`.
    /// Class order is interleaved, so both sides stay class-balanced.
    pub fn with_split(mut self, n_train: usize, n_test: usize) -> Result<Self> {
        if n_train + n_test > self.len() {
            return Err(CoreError::InsufficientData(format!(
                "split {n_train}+{n_test} exceeds {} examples",
                self.len()
            )));
        }
        self.train = (0..n_train).collect();
        self.test = (n_train..n_train + n_test).collect();
        Ok(self)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// `images.tnsr` `[N,1,H,W]`, `labels.tnsr` `[N]`, `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let flat: Vec<f64> = self.images.iter().flatten().copied().collect();
        let imgs = Tensor::new(vec![self.len(), 1, self.height, self.width], flat)?;
        write_tnsr(BufWriter::new(File::create(dir.join("images.tnsr"))?), &imgs)?;
        let labels = Tensor::vector(self.labels.iter().map(|&l| l as f64).collect());
        write_tnsr(BufWriter::new(File::create(dir.join("labels.tnsr"))?), &labels)?;
        let m = Manifest {
            width: self.width,
            height: self.height,
            n_classes: self.n_classes,
            n_per_class: self.n_per_class,
            seed: self.seed,
            class_counts: self.class_counts(),
            train: self.train.clone(),
            test: self.test.clone(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("manifest.json"))?), &m)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
        let imgs = read_tnsr(BufReader::new(File::open(dir.join("images.tnsr"))?))?;
        let labels = read_tnsr(BufReader::new(File::open(dir.join("labels.tnsr"))?))?;
        let px = m.width * m.height;
        if imgs.shape() != [labels.len(), 1, m.height, m.width] {
            return Err(CoreError::InvalidArgument("image tensor shape disagrees with manifest".into()));
        }
        let images = imgs.data().chunks(px).map(|c| c.to_vec()).collect();
        Ok(GlyphDataset {
            width: m.width,
            height: m.height,
            n_classes: m.n_classes,
            n_per_class: m.n_per_class,
            seed: m.seed,
            images,
            labels: labels.data().iter().map(|&l| l as usize).collect(),
            train: m.train,
            test: m.test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = glyph_generate(10, 3, 11, 32, 32).unwrap();
        let b = glyph_generate(10, 3, 11, 32, 32).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pixels(0).unwrap(), glyph_generate(10, 3, 12, 32, 32).unwrap().pixels(0).unwrap());
        assert_eq!(a.class_counts(), vec![3; 10]);
        assert!(a.pixels(4).unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn split_is_disjoint() {
        let d = glyph_generate(4, 5, 0, 16, 16).unwrap().with_split(8, 12).unwrap();
        assert!(d.train().iter().all(|i| !d.test().contains(i)));
        assert_eq!(d.train().len() + d.test().len(), 20);
        assert!(glyph_generate(4, 5, 0, 16, 16).unwrap().with_split(15, 6).is_err());
    }

    #[test]
    fn classes_are_distinct_shapes() {
        let masks = class_masks(40);
        for i in 0..masks.len() {
            for j in 0..i {
                assert_ne!(masks[i], masks[j]);
            }
        }
        assert_eq!(class_masks(MAX_CLASSES).len(), MAX_CLASSES);
    }

    #[test]
    fn rejects_empty_classes() {
        assert!(glyph_generate(10, 0, 0, 32, 32).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = glyph_generate(3, 2, 9, 12, 10).unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(GlyphDataset::load(dir.path()).unwrap(), d);
    }
}
