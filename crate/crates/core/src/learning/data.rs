//! In-memory labelled datasets, the synthetic Gaussian-mixture generator and
//! the IDX file reader.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major feature matrix with one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        input_dim: usize,
        classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Dataset> {
        if input_dim == 0 || classes == 0 {
            return Err(Error::argument("dataset needs positive input_dim and classes"));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::argument(format!(
                "{} features do not fit {} rows of width {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::argument(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset {
            input_dim,
            classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            input_dim: self.input_dim,
            classes: self.classes,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Isotropic Gaussian mixture: class `c` is centered at `separation * e_c`
/// (a vertex of a scaled simplex) with per-coordinate noise `noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train_size: usize,
    pub test_size: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_size: 20_000,
            test_size: 4_000,
            dim: 32,
            classes: 10,
            separation: 3.0,
            noise: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim < self.classes {
            return Err(Error::config(format!(
                "synthetic data needs 2 <= classes <= dim, got classes={} dim={}",
                self.classes, self.dim
            )));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::config("synthetic train and test sizes must be positive"));
        }
        if !(self.noise >= 0.0 && self.separation.is_finite() && self.noise.is_finite()) {
            return Err(Error::config("synthetic noise must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Balanced train and test sets (labels cycle through the classes).
    pub fn generate(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let train = self.sample(self.train_size, &mut rng::stream(seed, Domain::Dataset, &[0]));
        let test = self.sample(self.test_size, &mut rng::stream(seed, Domain::Dataset, &[1]));
        Ok((train, test))
    }

    fn sample(&self, n: usize, rng: &mut impl Rng) -> Dataset {
        let mut features = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.classes;
            for d in 0..self.dim {
                let mean = if d == c { self.separation } else { 0.0 };
                let z: f64 = StandardNormal.sample(rng);
                features.push(mean + self.noise * z);
            }
            labels.push(c);
        }
        Dataset {
            input_dim: self.dim,
            classes: self.classes,
            features,
            labels,
        }
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: "truncated IDX header".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("bad IDX magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

/// Reads an IDX image file. Returns `(count, rows, cols, pixels)` with
/// pixels scaled to `[0, 1]`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes, path)
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let body = &bytes[16..];
    let want = count * rows * cols;
    if body.len() != want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected {want} pixel bytes, found {}", body.len()),
        });
    }
    Ok((count, rows, cols, body.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_labels(&bytes, path)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected {count} labels, found {}", body.len()),
        });
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Loads an image/label file pair as a dataset with `classes` classes.
pub fn load_idx(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let (count, rows, cols, pixels) = read_idx_images(images)?;
    let lbls = read_idx_labels(labels)?;
    if lbls.len() != count {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            message: format!("{} labels for {count} images", lbls.len()),
        });
    }
    Dataset::new(rows * cols, classes, pixels, lbls).map_err(|e| Error::Format {
        path: labels.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, px: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(px);
        v
    }

    #[test]
    fn idx_images_parse_and_scale() {
        let bytes = idx_images(2, 1, 2, &[0, 255, 51, 102]);
        let (n, r, c, px) = parse_idx_images(&bytes, Path::new("x")).unwrap();
        assert_eq!((n, r, c), (2, 1, 2));
        assert_eq!(px, vec![0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn idx_rejects_wrong_magic_and_truncation() {
        let mut bytes = idx_images(1, 1, 1, &[7]);
        bytes[3] = 0x01;
        assert!(matches!(parse_idx_images(&bytes, Path::new("x")), Err(Error::Format { .. })));
        let bytes = idx_images(2, 1, 1, &[7]);
        assert!(parse_idx_images(&bytes, Path::new("x")).is_err());
        // label magic on an image reader
        let mut lbl = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        lbl.extend_from_slice(&1u32.to_be_bytes());
        lbl.push(3);
        assert!(parse_idx_images(&lbl, Path::new("x")).is_err());
        assert_eq!(parse_idx_labels(&lbl, Path::new("x")).unwrap(), vec![3]);
    }

    #[test]
    fn synthetic_is_balanced_and_seeded() {
        let spec = SyntheticSpec {
            train_size: 100,
            test_size: 20,
            ..SyntheticSpec::default()
        };
        let (a, ta) = spec.generate(5).unwrap();
        let (b, _) = spec.generate(5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label_histogram(), vec![10; 10]);
        assert_eq!(ta.len(), 20);
        assert_ne!(a, spec.generate(6).unwrap().0);
    }

    #[test]
    fn dataset_shape_checks() {
        assert!(Dataset::new(2, 2, vec![0.0; 3], vec![0, 1]).is_err());
        assert!(Dataset::new(1, 2, vec![0.0; 2], vec![0, 2]).is_err());
        let d = Dataset::new(1, 2, vec![1.0, 2.0, 3.0], vec![0, 1, 1]).unwrap();
        let s = d.subset(&[2, 0]);
        assert_eq!(s.row(0), &[3.0]);
        assert_eq!(s.labels(), &[1, 0]);
    }
}
