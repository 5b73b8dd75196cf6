//! Compositional-data primitives: closure, zero replacement, log-ratio
//! transforms and log-contrast evaluation.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Whether rows carry absolute abundances or proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbundanceKind {
    Absolute,
    Relative,
}

/// N x D abundance matrix with sample ids and feature names.
///
/// Entries are finite and nonnegative. Relative matrices have rows summing to
/// one within `1e-9`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionMatrix {
    values: Matrix,
    sample_ids: Vec<String>,
    feature_names: Vec<String>,
    kind: AbundanceKind,
}

const RELATIVE_SUM_TOL: f64 = 1e-9;

impl CompositionMatrix {
    pub fn new(
        values: Matrix,
        sample_ids: Vec<String>,
        feature_names: Vec<String>,
        kind: AbundanceKind,
    ) -> Result<Self> {
        if sample_ids.len() != values.rows() {
            return Err(Error::invalid(format!(
                "{} sample ids for {} rows",
                sample_ids.len(),
                values.rows()
            )));
        }
        if feature_names.len() != values.cols() {
            return Err(Error::invalid(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                values.cols()
            )));
        }
        for (i, row) in values.iter_rows().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::invalid(format!(
                    "row {i} contains invalid abundance {v}"
                )));
            }
            if kind == AbundanceKind::Relative {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > RELATIVE_SUM_TOL {
                    return Err(Error::invalid(format!(
                        "relative row {i} sums to {s}, not 1"
                    )));
                }
            }
        }
        Ok(Self {
            values,
            sample_ids,
            feature_names,
            kind,
        })
    }

    /// Builds a matrix with generated ids `s1..sN` and names `f1..fD`.
    pub fn with_default_names(values: Matrix, kind: AbundanceKind) -> Result<Self> {
        let ids = (1..=values.rows()).map(|i| format!("s{i}")).collect();
        let names = (1..=values.cols()).map(|j| format!("f{j}")).collect();
        Self::new(values, ids, names, kind)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn kind(&self) -> AbundanceKind {
        self.kind
    }

    pub fn n_samples(&self) -> usize {
        self.values.rows()
    }

    pub fn n_features(&self) -> usize {
        self.values.cols()
    }

    pub fn has_zeros(&self) -> bool {
        self.values.as_slice().contains(&0.0)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.values.as_slice().iter().all(|&v| v > 0.0)
    }

    /// Rows re-closed to proportions.
    pub fn to_relative(&self) -> Result<Self> {
        let mut values = self.values.clone();
        for i in 0..values.rows() {
            let closed = closure(values.row(i)).map_err(|e| e.context(format!("row {i}")))?;
            values.row_mut(i).copy_from_slice(&closed);
        }
        Ok(Self {
            values,
            sample_ids: self.sample_ids.clone(),
            feature_names: self.feature_names.clone(),
            kind: AbundanceKind::Relative,
        })
    }

    /// Subset of rows, keeping ids.
    pub fn select_samples(&self, idx: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(idx),
            sample_ids: idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            kind: self.kind,
        }
    }
}

/// Binary outcome vector with entries in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self(labels))
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_positive(&self) -> usize {
        self.0.iter().filter(|&&l| l == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.count_positive();
        pos > 0 && pos < self.0.len()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self(idx.iter().map(|&i| self.0[i]).collect())
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&l| f64::from(l)).collect()
    }
}

/// Divides a nonnegative vector by its sum.
pub fn closure(v: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::invalid(format!("closure of invalid entry {bad}")));
    }
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("closure of an all-zero vector"));
    }
    Ok(v.iter().map(|x| x / total).collect())
}

/// Default fraction of the smallest nonzero row entry used as a zero substitute.
pub const DEFAULT_DELTA_FRACTION: f64 = 0.5;

/// Multiplicative zero replacement.
///
/// In row `i` every zero becomes `delta_i = delta_fraction * min_nonzero(row)`
/// and the nonzero entries are scaled by `1 - k_i * delta_i / row_sum`, where
/// `k_i` is the number of zeros. Row sums and all ratios among the originally
/// nonzero parts are preserved. A matrix without zeros is returned unchanged.
pub fn replace_zeros(m: &CompositionMatrix, delta_fraction: f64) -> Result<CompositionMatrix> {
    if !(delta_fraction > 0.0 && delta_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "delta fraction {delta_fraction} outside (0, 1)"
        )));
    }
    if !m.has_zeros() {
        return Ok(m.clone());
    }
    let mut values = m.values.clone();
    for i in 0..values.rows() {
        let row = values.row_mut(i);
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if zeros == 0 {
            continue;
        }
        let min_nonzero = row
            .iter()
            .copied()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !min_nonzero.is_finite() {
            return Err(Error::invalid(format!("row {i} is all zeros")));
        }
        let total: f64 = row.iter().sum();
        let delta = delta_fraction * min_nonzero;
        let scale = 1.0 - zeros as f64 * delta / total;
        if scale <= 0.0 {
            return Err(Error::invalid(format!(
                "row {i}: {zeros} zeros at delta {delta} exceed the row total {total}; \
                 use a smaller delta fraction"
            )));
        }
        for v in row.iter_mut() {
            *v = if *v == 0.0 { delta } else { *v * scale };
        }
    }
    Ok(CompositionMatrix {
        values,
        sample_ids: m.sample_ids.clone(),
        feature_names: m.feature_names.clone(),
        kind: m.kind,
    })
}

fn check_positive(x: &[f64]) -> Result<()> {
    match x.iter().position(|&v| v.is_nan() || v <= 0.0 || v.is_infinite()) {
        Some(j) => Err(Error::invalid(format!(
            "entry {j} = {} is not strictly positive",
            x[j]
        ))),
        None => Ok(()),
    }
}

/// Centered log-ratio: `ln(x_j / gmean(x))`.
pub fn clr(x: &[f64]) -> Result<Vec<f64>> {
    check_positive(x)?;
    let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(logs.into_iter().map(|l| l - mean).collect())
}

/// `beta0 + sum_d beta_d ln x_d`.
pub fn log_contrast(x: &[f64], beta: &[f64], beta0: f64) -> Result<f64> {
    if x.len() != beta.len() {
        return Err(Error::invalid(format!(
            "{} parts but {} powers",
            x.len(),
            beta.len()
        )));
    }
    check_positive(x)?;
    Ok(beta0 + x.iter().zip(beta).map(|(v, b)| b * v.ln()).sum::<f64>())
}

/// Restricts to the `keep` columns; relative matrices are re-closed.
pub fn subcomposition(m: &CompositionMatrix, keep: &[usize]) -> Result<CompositionMatrix> {
    if keep.is_empty() {
        return Err(Error::invalid("subcomposition needs at least one part"));
    }
    if let Some(&j) = keep.iter().find(|&&j| j >= m.n_features()) {
        return Err(Error::invalid(format!(
            "part index {j} out of range for {} parts",
            m.n_features()
        )));
    }
    let sub = CompositionMatrix {
        values: m.values.select_cols(keep),
        sample_ids: m.sample_ids.clone(),
        feature_names: keep.iter().map(|&j| m.feature_names[j].clone()).collect(),
        kind: m.kind,
    };
    match m.kind {
        AbundanceKind::Relative => sub.to_relative(),
        AbundanceKind::Absolute => Ok(sub),
    }
}
