use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const TOLERANCE: f64 = 1e-9;

/// Symmetric class-by-class similarity with unit diagonal, entries in `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    size: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn identity(size: usize) -> Self {
        let mut values = vec![0.0; size * size];
        for i in 0..size {
            values[i * size + i] = 1.0;
        }
        SimilarityMatrix { size, values }
    }

    /// Validate and symmetrise a row-major matrix.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if size == 0 {
            return Err(Error::validation("similarity matrix", "empty matrix"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::validation(
                    "similarity matrix",
                    format!("row {i} has {} entries, expected {size}", row.len()),
                ));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::validation(
                        "similarity matrix",
                        format!("entry ({i},{j}) = {v} outside [0,1]"),
                    ));
                }
            }
            if (row[i] - 1.0).abs() > TOLERANCE {
                return Err(Error::validation(
                    "similarity matrix",
                    format!("diagonal entry ({i},{i}) = {} is not 1", row[i]),
                ));
            }
        }
        let mut asymmetry = 0.0f64;
        let mut values = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..size {
                asymmetry = asymmetry.max((rows[i][j] - rows[j][i]).abs());
                values[i * size + j] = if i == j {
                    1.0
                } else {
                    0.5 * (rows[i][j] + rows[j][i])
                };
            }
        }
        if asymmetry > TOLERANCE {
            log::warn!("similarity matrix asymmetric by {asymmetry:.3e}; using (M + M^T)/2");
        }
        Ok(SimilarityMatrix { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    /// Identity plus a constant off-diagonal.
    pub fn uniform_off_diagonal(size: usize, value: f64) -> Result<Self> {
        let rows = (0..size)
            .map(|i| {
                (0..size)
                    .map(|j| if i == j { 1.0 } else { value })
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }
}

/// Parse a headerless CSV with one matrix row per line.
pub fn parse_similarity_csv(text: &str) -> Result<SimilarityMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(i + 1, e))?;
        let row = record
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::parse(i + 1, format!("{s:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    SimilarityMatrix::from_rows(rows)
}

pub fn load_similarity_matrix(path: impl AsRef<Path>) -> Result<SimilarityMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_similarity_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_file() {
        let m = parse_similarity_csv("1,0,0\n0,1,0\n0,0,1\n").unwrap();
        assert_eq!(m, SimilarityMatrix::identity(3));
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(parse_similarity_csv("1,1.5\n1.5,1\n").is_err());
        assert!(parse_similarity_csv("1,-0.1\n-0.1,1\n").is_err());
    }

    #[test]
    fn shape_and_diagonal_rejected() {
        assert!(parse_similarity_csv("1,0\n0,1\n0,0\n").is_err());
        assert!(parse_similarity_csv("0.9,0\n0,1\n").is_err());
    }

    #[test]
    fn tiny_asymmetry_symmetrised() {
        let m = parse_similarity_csv("1,0.5\n0.500000000001,1\n").unwrap();
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert!((m.get(0, 1) - 0.5).abs() < 1e-11);
    }

    #[test]
    fn large_asymmetry_symmetrised() {
        let m = parse_similarity_csv("1,0.2\n0.6,1\n").unwrap();
        assert!((m.get(0, 1) - 0.4).abs() < 1e-15);
        assert!((m.get(1, 0) - 0.4).abs() < 1e-15);
    }
}
