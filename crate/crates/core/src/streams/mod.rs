//! Per-learner data sources: a drifting synthetic stream and file-backed
//! datasets (CSV, IDX) with partitioning.

mod dataset;
mod drift;
pub mod idx;

pub use dataset::{csv, partition, Dataset, DatasetStreams, PartitionPolicy};
pub use drift::{Concept, DriftEvent, DriftStream, DriftStreamSpec};

use crate::error::{Error, Result};

/// A mini-batch: row-major features plus one label per row.
///
/// Labels are `f64` regardless of task; classification losses validate the
/// encoding themselves (±1 for logistic, integral class index for
/// cross-entropy).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    features: Vec<f64>,
    width: usize,
    labels: Vec<f64>,
}

impl LabeledBatch {
    pub fn new(features: Vec<f64>, width: usize, labels: Vec<f64>) -> Result<Self> {
        if width == 0 {
            return Err(Error::Data("zero feature width".into()));
        }
        if labels.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        if features.len() != width * labels.len() {
            return Err(Error::Data(format!(
                "{} feature values do not tile {} rows of width {width}",
                features.len(),
                labels.len()
            )));
        }
        Ok(LabeledBatch {
            features,
            width,
            labels,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut features = Vec::with_capacity(width * rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::Data(format!(
                    "row {i} has {} values, expected {width}",
                    r.len()
                )));
            }
            features.extend_from_slice(r);
        }
        LabeledBatch::new(features, width, labels)
    }

    /// Concatenates batches of equal width in the given order.
    pub fn concat(batches: &[LabeledBatch]) -> Result<Self> {
        let Some(first) = batches.first() else {
            return Err(Error::Data("nothing to concatenate".into()));
        };
        let width = first.width;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for b in batches {
            if b.width != width {
                return Err(Error::Data(format!(
                    "cannot concatenate widths {width} and {}",
                    b.width
                )));
            }
            features.extend_from_slice(&b.features);
            labels.extend_from_slice(&b.labels);
        }
        LabeledBatch::new(features, width, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    /// All features, row-major.
    pub fn row_data(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

#[cfg(test)]
mod batch_tests {
    use super::*;

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(LabeledBatch::new(vec![], 2, vec![]).is_err());
        assert!(LabeledBatch::new(vec![1.0, 2.0, 3.0], 2, vec![0.0, 1.0]).is_err());
        assert!(LabeledBatch::from_rows(vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn indexing_round_trip() {
        let b = LabeledBatch::from_rows(
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            vec![-1.0, 1.0, -1.0],
        )
        .unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.width(), 2);
        assert_eq!(b.row(1), &[3.0, 4.0]);
        assert_eq!(b.label(2), -1.0);
    }

    #[test]
    fn concat_keeps_order() {
        let a = LabeledBatch::from_rows(vec![vec![1.0]], vec![1.0]).unwrap();
        let b = LabeledBatch::from_rows(vec![vec![2.0], vec![3.0]], vec![-1.0, 1.0]).unwrap();
        let c = LabeledBatch::concat(&[a, b]).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.row(0), &[1.0]);
        assert_eq!(c.row(2), &[3.0]);
        assert_eq!(c.labels(), &[1.0, -1.0, 1.0]);
    }
}
