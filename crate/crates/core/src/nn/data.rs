use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled samples; `inputs` has the sample index as its leading dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::ShapeMismatch {
                expected: vec![inputs.rows()],
                actual: vec![labels.len()],
            });
        }
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside {classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of a single sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Gathers the given sample indices into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let width = self.inputs.row_len();
        let src = self.inputs.data();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = indices.len();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::from_parts_unchecked(shape, data), labels)
    }

    /// Deterministic split into the first `n` samples and the rest.
    pub fn split(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "split point {n} outside 1..{}",
                self.len()
            )));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        let (a, la) = self.batch(&head);
        let (b, lb) = self.batch(&tail);
        Ok((
            Dataset::new(a, la, self.classes)?,
            Dataset::new(b, lb, self.classes)?,
        ))
    }
}

/// Two interleaving half circles in the plane with Gaussian jitter.
pub fn two_moons(samples: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if samples < 2 {
        return Err(Error::InvalidArgument(
            "two_moons needs at least 2 samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = normal(noise)?;
    let mut data = Vec::with_capacity(samples * 2);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = i % 2;
        let t = rng.random_range(0.0..PI);
        let (x, y) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        data.push(x + jitter.sample(&mut rng));
        data.push(y + jitter.sample(&mut rng));
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![samples, 2], data)?, labels, 2)
}

/// `classes` isotropic Gaussian clusters in `dims` dimensions, with centres
/// drawn uniformly from `[-1, 1]^dims`.
pub fn gaussian_blobs(
    samples: usize,
    classes: usize,
    dims: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if samples == 0 || classes == 0 || dims == 0 {
        return Err(Error::InvalidArgument(
            "gaussian_blobs needs positive samples, classes and dims".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = normal(spread)?;
    let centres: Vec<f64> = (0..classes * dims)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let mut data = Vec::with_capacity(samples * dims);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = i % classes;
        for d in 0..dims {
            data.push(centres[label * dims + d] + jitter.sample(&mut rng));
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![samples, dims], data)?, labels, classes)
}

fn normal(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(format!("noise level {std}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_are_seeded() {
        let a = two_moons(50, 0.1, 3).unwrap();
        let b = two_moons(50, 0.1, 3).unwrap();
        let c = two_moons(50, 0.1, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.inputs.shape(), &[50, 2]);
        assert_eq!(a.labels.iter().filter(|&&l| l == 1).count(), 25);
    }

    #[test]
    fn blobs_and_batches() {
        let d = gaussian_blobs(30, 3, 4, 0.2, 1).unwrap();
        assert_eq!(d.sample_shape(), &[4]);
        let (x, y) = d.batch(&[2, 0]);
        assert_eq!(x.shape(), &[2, 4]);
        assert_eq!(&x.data()[4..8], &d.inputs.data()[0..4]);
        assert_eq!(y, vec![2, 0]);
        let (tr, te) = d.split(20).unwrap();
        assert_eq!((tr.len(), te.len()), (20, 10));
    }

    #[test]
    fn rejects_bad_labels() {
        let x = Tensor::zeros(vec![2, 1]).unwrap();
        assert!(Dataset::new(x.clone(), vec![0, 3], 2).is_err());
        assert!(Dataset::new(x, vec![0], 2).is_err());
    }
}
