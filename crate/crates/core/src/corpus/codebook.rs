//! k-means codebooks for turning continuous descriptors into word ids.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::parallel::Execution;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansOptions {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub execution: Execution,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iterations: 100,
            relative_tolerance: 1e-6,
            execution: Execution::Parallel,
        }
    }
}

/// Distortion after the seeding step and after every Lloyd iteration.
#[derive(Debug, Clone)]
pub struct KMeansReport {
    pub distortion_trace: Vec<f64>,
    pub iterations: usize,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Nearest centroid by squared Euclidean distance; ties go to the lowest id.
    pub fn nearest(&self, descriptor: &[f64]) -> (u32, f64) {
        let mut best = (0u32, f64::INFINITY);
        for (id, c) in self.centroids.iter().enumerate() {
            let d = squared_distance(descriptor, c);
            if d < best.1 {
                best = (id as u32, d);
            }
        }
        best
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("codebook serialises");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Codebook> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cb: Codebook = serde_json::from_str(&text).map_err(|e| Error::parse(1, e))?;
        if cb.centroids.iter().any(|c| c.len() != cb.dim) {
            return Err(Error::validation(
                "codebook",
                "centroid length differs from dim",
            ));
        }
        Ok(cb)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn build_codebook(
    descriptors: &[Vec<f64>],
    k: usize,
    seed: u64,
    options: &KMeansOptions,
) -> Result<(Codebook, KMeansReport)> {
    if descriptors.is_empty() {
        return Err(Error::Domain(
            "cannot build a codebook from no descriptors".into(),
        ));
    }
    if k == 0 || k > descriptors.len() {
        return Err(Error::Domain(format!(
            "codebook size {k} must be in 1..={}",
            descriptors.len()
        )));
    }
    let dim = descriptors[0].len();
    if descriptors.iter().any(|d| d.len() != dim) {
        return Err(Error::Shape("descriptors have differing dimensions".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(descriptors, k, &mut rng);
    let mut codebook = Codebook {
        dim,
        centroids: centroids.clone(),
    };

    let assign = |cb: &Codebook| -> Vec<(u32, f64)> {
        options.execution.map(descriptors, |d| cb.nearest(d))
    };
    let mut assignment = assign(&codebook);
    let mut distortion: f64 = assignment.iter().map(|a| a.1).sum();
    let mut trace = vec![distortion];
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        // Update step; an empty cluster keeps its previous centroid.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (d, &(id, _)) in descriptors.iter().zip(&assignment) {
            counts[id as usize] += 1;
            for (s, x) in sums[id as usize].iter_mut().zip(d) {
                *s += x;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(&sums).zip(&counts) {
            if n > 0 {
                for (ci, si) in c.iter_mut().zip(s) {
                    *ci = si / n as f64;
                }
            }
        }
        codebook.centroids.clone_from(&centroids);
        assignment = assign(&codebook);
        let next: f64 = assignment.iter().map(|a| a.1).sum();
        trace.push(next);
        let change = (distortion - next).abs();
        distortion = next;
        if change <= options.relative_tolerance * distortion.abs() || distortion == 0.0 {
            break;
        }
    }

    Ok((
        codebook,
        KMeansReport {
            distortion_trace: trace,
            iterations,
        },
    ))
}

fn seed_plus_plus(descriptors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = descriptors.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(descriptors[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = descriptors
        .iter()
        .map(|d| squared_distance(d, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Rounding can walk past the end; fall back to the last positive weight.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = descriptors[pick].clone();
        for (w, d) in d2.iter_mut().zip(descriptors) {
            *w = w.min(squared_distance(d, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Map each descriptor to its nearest codeword, preserving order.
pub fn quantize(descriptors: &[Vec<f64>], codebook: &Codebook) -> Result<Vec<u32>> {
    if let Some(bad) = descriptors.iter().find(|d| d.len() != codebook.dim) {
        return Err(Error::Shape(format!(
            "descriptor has dimension {}, codebook has {}",
            bad.len(),
            codebook.dim
        )));
    }
    Ok(descriptors.iter().map(|d| codebook.nearest(d).0).collect())
}
