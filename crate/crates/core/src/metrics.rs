//! Continual-learning metrics over an accuracy matrix.
//!
//! `R[k][i]` is the macro-averaged test accuracy on task `i` after training
//! through task `k`; row 0 holds the untrained model. Task and stage
//! indices in this module are 1-based to match that convention.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};

/// Unweighted mean over true classes of per-class recall.
pub fn macro_accuracy(pairs: &[(ClassId, ClassId)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    let mut per_class: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    for &(truth, pred) in pairs {
        let e = per_class.entry(truth).or_default();
        e.1 += 1;
        if truth == pred {
            e.0 += 1;
        }
    }
    let sum: f64 = per_class
        .values()
        .map(|&(hit, n)| hit as f64 / n as f64)
        .sum();
    Ok(sum / per_class.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    /// `T + 1` rows of `T` entries; a row is `None` until evaluated.
    pub rows: Vec<Option<Vec<f64>>>,
    pub test_sizes: Vec<usize>,
}

impl AccuracyMatrix {
    pub fn new(test_sizes: Vec<usize>) -> Self {
        let t = test_sizes.len();
        AccuracyMatrix {
            rows: vec![None; t + 1],
            test_sizes,
        }
    }

    /// Builds a fully populated matrix.
    pub fn from_rows(rows: Vec<Vec<f64>>, test_sizes: Vec<usize>) -> Result<Self> {
        let t = test_sizes.len();
        if rows.len() != t + 1 || rows.iter().any(|r| r.len() != t) {
            return Err(Error::Shape(format!(
                "accuracy matrix must be {}×{t}",
                t + 1
            )));
        }
        Ok(AccuracyMatrix {
            rows: rows.into_iter().map(Some).collect(),
            test_sizes,
        })
    }

    pub fn tasks(&self) -> usize {
        self.test_sizes.len()
    }

    pub fn set_row(&mut self, stage: usize, row: Vec<f64>) -> Result<()> {
        if stage > self.tasks() || row.len() != self.tasks() {
            return Err(Error::OutOfRange(format!("row {stage}")));
        }
        self.rows[stage] = Some(row);
        Ok(())
    }

    fn row(&self, stage: usize) -> Result<&[f64]> {
        self.rows
            .get(stage)
            .and_then(|r| r.as_deref())
            .ok_or_else(|| Error::OutOfRange(format!("row {stage}")))
    }

    /// `R[stage][task]`, 1-based task.
    pub fn get(&self, stage: usize, task: usize) -> Result<f64> {
        let row = self.row(stage)?;
        task.checked_sub(1)
            .and_then(|i| row.get(i).copied())
            .ok_or_else(|| Error::OutOfRange(format!("task {task}")))
    }

    /// `ACC_t = (1/t) Σ_{i≤t} R[t][i]`.
    pub fn acc(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.tasks() {
            return Err(Error::OutOfRange(format!("ACC stage {t}")));
        }
        let row = self.row(t)?;
        Ok(row[..t].iter().sum::<f64>() / t as f64)
    }

    /// Test-size weighted mean of the last row.
    pub fn overall(&self) -> Result<f64> {
        let t = self.tasks();
        let row = self.row(t)?;
        let total: usize = self.test_sizes.iter().sum();
        if total == 0 {
            return Err(Error::Empty("test sets"));
        }
        Ok(row
            .iter()
            .zip(&self.test_sizes)
            .map(|(r, &n)| r * n as f64)
            .sum::<f64>()
            / total as f64)
    }

    /// `BWT_k = (1/(k−1)) Σ_{i<k} (R[k][i] − R[i][i])`.
    pub fn bwt(&self, k: usize) -> Result<f64> {
        if k < 2 || k > self.tasks() {
            return Err(Error::OutOfRange(format!("BWT stage {k}")));
        }
        let mut sum = 0.0;
        for i in 1..k {
            sum += self.get(k, i)? - self.get(i, i)?;
        }
        Ok(sum / (k - 1) as f64)
    }

    /// `FWT_k = (1/(k−1)) Σ_{2≤i≤k} (R[i][i] − R[0][i])`.
    pub fn fwt(&self, k: usize) -> Result<f64> {
        if k < 2 || k > self.tasks() {
            return Err(Error::OutOfRange(format!("FWT stage {k}")));
        }
        let mut sum = 0.0;
        for i in 2..=k {
            sum += self.get(i, i)? - self.get(0, i)?;
        }
        Ok(sum / (k - 1) as f64)
    }

    pub fn summary(&self) -> Result<MetricSummary> {
        let t = self.tasks();
        Ok(MetricSummary {
            acc: (1..=t).map(|k| self.acc(k)).collect::<Result<_>>()?,
            bwt: (1..=t)
                .map(|k| if k < 2 { Ok(None) } else { self.bwt(k).map(Some) })
                .collect::<Result<_>>()?,
            fwt: (1..=t)
                .map(|k| if k < 2 { Ok(None) } else { self.fwt(k).map(Some) })
                .collect::<Result<_>>()?,
            overall: self.overall()?,
        })
    }
}

/// Per-stage metrics; BWT and FWT are undefined at stage 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: Vec<f64>,
    pub bwt: Vec<Option<f64>>,
    pub fwt: Vec<Option<f64>>,
    pub overall: f64,
}

impl MetricSummary {
    pub fn final_acc(&self) -> f64 {
        self.acc.last().copied().unwrap_or(0.0)
    }

    pub fn final_bwt(&self) -> Option<f64> {
        self.bwt.last().copied().flatten()
    }

    pub fn final_fwt(&self) -> Option<f64> {
        self.fwt.last().copied().flatten()
    }
}
