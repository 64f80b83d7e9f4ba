//! In-memory datasets, seeded partitioning into per-learner shards, and
//! numeric CSV ingestion.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::streams::LabeledBatch;

/// Row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    width: usize,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, width: usize, labels: Vec<f64>) -> Result<Self> {
        if width == 0 {
            return Err(Error::Data("zero feature width".into()));
        }
        if labels.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        if features.len() != width * labels.len() {
            return Err(Error::Data(format!(
                "{} feature values do not tile {} rows of width {width}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Dataset {
            features,
            width,
            labels,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let batch = LabeledBatch::from_rows(rows, labels)?;
        Dataset::new(
            batch.row_data().to_vec(),
            batch.width(),
            batch.labels().to_vec(),
        )
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

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

/// How a dataset is split into per-learner shards.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionPolicy {
    /// Seeded global shuffle, then a round-robin deal. Shard sizes differ by
    /// at most one.
    ShuffledIid,
    /// Consecutive ranges in file order, sizes differing by at most one.
    ContiguousShards,
    /// Seeded shuffle, then a deal in waves of the given per-learner batch
    /// sizes, so learner i consumes data at rate `B_i`.
    Unbalanced(Vec<usize>),
}

/// Splits `0..dataset.len()` into `m` disjoint index shards covering it.
pub fn partition(
    dataset: &Dataset,
    m: usize,
    policy: &PartitionPolicy,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(Error::Data("cannot partition into zero shards".into()));
    }
    let n = dataset.len();
    let mut shards = vec![Vec::new(); m];
    match policy {
        PartitionPolicy::ShuffledIid => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            for (pos, idx) in order.into_iter().enumerate() {
                shards[pos % m].push(idx);
            }
        }
        PartitionPolicy::ContiguousShards => {
            if m > n {
                return Err(Error::Data(format!(
                    "contiguous partition needs at least one sample per shard: m = {m}, n = {n}"
                )));
            }
            let base = n / m;
            let extra = n % m;
            let mut start = 0;
            for (i, shard) in shards.iter_mut().enumerate() {
                let size = base + usize::from(i < extra);
                shard.extend(start..start + size);
                start += size;
            }
        }
        PartitionPolicy::Unbalanced(rates) => {
            if rates.len() != m {
                return Err(Error::Data(format!(
                    "{} rates for {m} shards",
                    rates.len()
                )));
            }
            if rates.iter().any(|&r| r == 0) {
                return Err(Error::Data("zero per-learner rate".into()));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut it = order.into_iter();
            'deal: loop {
                for (shard, &rate) in shards.iter_mut().zip(rates) {
                    for _ in 0..rate {
                        match it.next() {
                            Some(idx) => shard.push(idx),
                            None => break 'deal,
                        }
                    }
                }
            }
        }
    }
    Ok(shards)
}

/// Per-learner sequential readers over a partitioned dataset.
pub struct DatasetStreams {
    data: Arc<Dataset>,
    shards: Vec<Vec<usize>>,
    cursors: Vec<usize>,
}

impl DatasetStreams {
    pub fn new(data: Arc<Dataset>, shards: Vec<Vec<usize>>) -> Result<Self> {
        for shard in &shards {
            if let Some(&bad) = shard.iter().find(|&&i| i >= data.len()) {
                return Err(Error::Data(format!(
                    "shard index {bad} out of range for {} samples",
                    data.len()
                )));
            }
        }
        let cursors = vec![0; shards.len()];
        Ok(DatasetStreams {
            data,
            shards,
            cursors,
        })
    }

    pub fn learners(&self) -> usize {
        self.shards.len()
    }

    pub fn remaining(&self, learner: usize) -> usize {
        self.shards[learner].len() - self.cursors[learner]
    }

    /// True when every learner can still draw its next batch.
    pub fn has_full_round(&self, batch_sizes: &[usize]) -> bool {
        batch_sizes
            .iter()
            .enumerate()
            .all(|(i, &b)| self.remaining(i) >= b)
    }

    pub fn next_batch(&mut self, learner: usize, batch: usize) -> Result<LabeledBatch> {
        if learner >= self.shards.len() {
            return Err(Error::Data(format!(
                "learner {learner} out of range (m = {})",
                self.shards.len()
            )));
        }
        if self.remaining(learner) < batch {
            return Err(Error::EndOfStream);
        }
        let cursor = self.cursors[learner];
        let idxs = &self.shards[learner][cursor..cursor + batch];
        let width = self.data.width();
        let mut features = Vec::with_capacity(batch * width);
        let mut labels = Vec::with_capacity(batch);
        for &i in idxs {
            features.extend_from_slice(self.data.row(i));
            labels.push(self.data.label(i));
        }
        self.cursors[learner] += batch;
        LabeledBatch::new(features, width, labels)
    }
}

/// Numeric CSV with the label in the last column. A header row is detected
/// by a non-numeric first line and skipped.
pub mod csv {
    use super::Dataset;
    use crate::error::{Error, Result};
    use std::path::Path;

    pub fn read(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        parse(&text).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub(crate) fn parse(text: &str) -> Result<Dataset> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels: Vec<f64> = Vec::new();
        let mut width = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let mut values = Vec::with_capacity(fields.len());
            let mut parse_failure = None;
            for (col, tok) in fields.iter().enumerate() {
                match tok.trim().parse::<f64>() {
                    Ok(v) => values.push(v),
                    Err(_) => {
                        parse_failure = Some(col);
                        break;
                    }
                }
            }
            if let Some(col) = parse_failure {
                // a non-numeric first line is a header
                if lineno == 0 {
                    continue;
                }
                return Err(Error::Data(format!(
                    "line {}, column {}: not a number: {:?}",
                    lineno + 1,
                    col + 1,
                    fields[col]
                )));
            }
            let w = match width {
                None => {
                    if values.len() < 2 {
                        return Err(Error::Data(format!(
                            "line {}: need at least one feature column plus a label",
                            lineno + 1
                        )));
                    }
                    width = Some(values.len());
                    values.len()
                }
                Some(w) => w,
            };
            if values.len() != w {
                return Err(Error::Data(format!(
                    "line {}: expected {w} fields, got {}",
                    lineno + 1,
                    values.len()
                )));
            }
            let label = values.pop().expect("at least two fields");
            rows.push(values);
            labels.push(label);
        }
        if rows.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        Dataset::from_rows(rows, labels)
    }

    /// Writes `x0..x{d-1},y` rows; `read` inverts this exactly because float
    /// formatting round-trips.
    pub fn write(path: &Path, ds: &Dataset) -> Result<()> {
        let mut out = String::new();
        for j in 0..ds.width() {
            out.push_str(&format!("x{j},"));
        }
        out.push_str("y\n");
        for i in 0..ds.len() {
            for v in ds.row(i) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{}\n", ds.label(i)));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
