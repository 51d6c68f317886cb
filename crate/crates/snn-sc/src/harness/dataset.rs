//! Synthetic image dataset with a compact binary container.
//!
//! Images are Gaussian blobs: each class has a fixed spatial center on a
//! ring plus a per-channel amplitude signature, and samples perturb the
//! blob with pixel noise and a small center jitter. The classes are
//! linearly well separated, so even heavily compressed features keep most
//! of the label information.
//!
//! File layout ("SIDS"):
//!
//! ```text
//! magic "SIDS" | version u32 | n u32 | c u32 | h u32 | w u32
//! | classes u32 | n_train u32 | pixels u8 (n*c*h*w) | labels u8 (n)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"SIDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub struct DatasetSpec {
    pub n: usize,
    pub channels: usize,
    pub img: usize,
    pub classes: usize,
    /// Fraction of samples in the training split (the rest is test).
    pub train_fraction: f64,
    /// Pixel noise standard deviation, in [0, 1] intensity units.
    pub noise: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n: 1200,
            channels: 3,
            img: 16,
            classes: 10,
            train_fraction: 0.8,
            noise: 0.08,
            seed: 1,
        }
    }
}

pub struct Dataset {
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub classes: usize,
    pub n_train: usize,
}

/// Class prototype in [0, 1] intensity, shape (c, h, w) row-major.
pub fn class_prototype(k: usize, classes: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
    let cy = h as f64 / 2.0 + h as f64 / 4.0 * angle.sin();
    let cx = w as f64 / 2.0 + w as f64 / 4.0 * angle.cos();
    let sigma = h as f64 / 5.0;
    let mut proto = vec![0.0; c * h * w];
    for ch in 0..c {
        // amplitude signature: each channel gets a distinct phase
        let amp = 0.45 + 0.55 * (angle * (ch + 1) as f64).cos().abs();
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                proto[(ch * h + y) * w + x] = amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    proto
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 in (0, 1] to avoid log(0)
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl Dataset {
    pub fn generate(spec: DatasetSpec) -> Result<Self> {
        if spec.n == 0 || spec.classes == 0 || spec.classes > 256 {
            return Err(Error::InvalidArgument("bad dataset size or class count".into()));
        }
        if !(0.0..=1.0).contains(&spec.train_fraction) {
            return Err(Error::InvalidArgument("train_fraction outside [0, 1]".into()));
        }
        let (c, h, w) = (spec.channels, spec.img, spec.img);
        let protos: Vec<Vec<f64>> = (0..spec.classes)
            .map(|k| class_prototype(k, spec.classes, c, h, w))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut pixels = Vec::with_capacity(spec.n * c * h * w);
        let mut labels = Vec::with_capacity(spec.n);
        for i in 0..spec.n {
            let k = i % spec.classes; // balanced classes
            labels.push(k as u8);
            let jitter_y = gaussian(&mut rng) * 0.5;
            let jitter_x = gaussian(&mut rng) * 0.5;
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        // approximate center jitter by sampling the prototype
                        // at a shifted integer position
                        let sy = (y as f64 - jitter_y).round().clamp(0.0, h as f64 - 1.0) as usize;
                        let sx = (x as f64 - jitter_x).round().clamp(0.0, w as f64 - 1.0) as usize;
                        let v = protos[k][(ch * h + sy) * w + sx]
                            + spec.noise * gaussian(&mut rng);
                        pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
        }
        let n_train = ((spec.n as f64) * spec.train_fraction).round() as usize;
        Ok(Self {
            pixels,
            labels,
            n: spec.n,
            c,
            h,
            w,
            classes: spec.classes,
            n_train,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(&MAGIC)?;
        for v in [
            VERSION,
            self.n as u32,
            self.c as u32,
            self.h as u32,
            self.w as u32,
            self.classes as u32,
            self.n_train as u32,
        ] {
            f.write_all(&v.to_le_bytes())?;
        }
        f.write_all(&self.pixels)?;
        f.write_all(&self.labels)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Format("not a dataset file".into()));
        }
        let mut u = || -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = u()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let (n, c, h, w, classes, n_train) = (
            u()? as usize,
            u()? as usize,
            u()? as usize,
            u()? as usize,
            u()? as usize,
            u()? as usize,
        );
        if n_train > n || classes == 0 || classes > 256 || n.saturating_mul(c * h * w) > (1 << 30) {
            return Err(Error::Format("implausible dataset header".into()));
        }
        let mut pixels = vec![0u8; n * c * h * w];
        r.read_exact(&mut pixels)?;
        let mut labels = vec![0u8; n];
        r.read_exact(&mut labels)?;
        if labels.iter().any(|&l| l as usize >= classes) {
            return Err(Error::Format("label out of range".into()));
        }
        Ok(Self { pixels, labels, n, c, h, w, classes, n_train })
    }

    fn images_range(&self, lo: usize, hi: usize) -> ArrayD<f64> {
        let plane = self.c * self.h * self.w;
        let vals: Vec<f64> = self.pixels[lo * plane..hi * plane]
            .iter()
            .map(|&p| p as f64 / 255.0)
            .collect();
        ArrayD::from_shape_vec(IxDyn(&[hi - lo, self.c, self.h, self.w]), vals)
            .expect("pixel count matches header")
    }

    /// Training images as (n_train, c, h, w) in [0, 1].
    pub fn train_images(&self) -> ArrayD<f64> {
        self.images_range(0, self.n_train)
    }

    pub fn train_labels(&self) -> &[u8] {
        &self.labels[..self.n_train]
    }

    pub fn test_images(&self) -> ArrayD<f64> {
        self.images_range(self.n_train, self.n)
    }

    pub fn test_labels(&self) -> &[u8] {
        &self.labels[self.n_train..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec { n: 300, ..DatasetSpec::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Dataset::generate(small_spec()).unwrap();
        let b = Dataset::generate(small_spec()).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.sids");
        let a = Dataset::generate(small_spec()).unwrap();
        a.save(&path).unwrap();
        let b = Dataset::load(&path).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.labels, b.labels);
        assert_eq!((a.n, a.c, a.h, a.w, a.classes, a.n_train), (b.n, b.c, b.h, b.w, b.classes, b.n_train));
    }

    #[test]
    fn corrupt_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.sids");
        std::fs::write(&path, b"SIDSgarbage").unwrap();
        assert!(Dataset::load(&path).is_err());
        std::fs::write(&path, b"nope").unwrap();
        assert!(Dataset::load(&path).is_err());
    }

    #[test]
    fn classes_are_balanced_and_split_sized() {
        let d = Dataset::generate(small_spec()).unwrap();
        assert_eq!(d.n_train, 240);
        assert_eq!(d.test_labels().len(), 60);
        let mut counts = vec![0usize; d.classes];
        for &l in &d.labels {
            counts[l as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 30));
    }

    /// The classes must be easy: a nearest-prototype classifier on raw
    /// pixels has to clear 90% on the test split.
    #[test]
    fn nearest_prototype_classifier_exceeds_90_percent() {
        let d = Dataset::generate(small_spec()).unwrap();
        let protos: Vec<Vec<f64>> = (0..d.classes)
            .map(|k| class_prototype(k, d.classes, d.c, d.h, d.w))
            .collect();
        let test = d.test_images();
        let labels = d.test_labels();
        let plane = d.c * d.h * d.w;
        let xs = test.as_slice().unwrap();
        let mut correct = 0;
        for (i, &label) in labels.iter().enumerate() {
            let img = &xs[i * plane..][..plane];
            let best = protos
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = a.iter().zip(img).map(|(p, x)| (p - x).powi(2)).sum();
                    let db: f64 = b.iter().zip(img).map(|(p, x)| (p - x).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(k, _)| k)
                .unwrap();
            if best == label as usize {
                correct += 1;
            }
        }
        let acc = correct as f64 / labels.len() as f64;
        assert!(acc > 0.9, "nearest-prototype accuracy {acc}");
    }

    #[test]
    fn pixel_values_cover_a_sensible_range() {
        let d = Dataset::generate(small_spec()).unwrap();
        let hi = *d.pixels.iter().max().unwrap();
        let lo = *d.pixels.iter().min().unwrap();
        assert!(hi > 128, "blobs should saturate bright pixels");
        assert_eq!(lo, 0);
    }
}
