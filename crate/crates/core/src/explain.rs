//! Two-level interpretability.
//!
//! Level 1 splits each prediction logit into per-bottleneck product scores
//! `w_b * z_b`. Level 2 lists which features enter each log-contrast and with
//! what power, and relates the sample weights to the log-contrast values by
//! Pearson and canonical correlation.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{self, DeepCodaParams, Head};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Logit sum above zero.
    Positive,
    Negative,
}

impl Decision {
    pub fn from_logit(s: f64) -> Self {
        if s > 0.0 {
            Decision::Positive
        } else {
            Decision::Negative
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Positive => "positive",
            Decision::Negative => "negative",
        }
    }
}

/// Applies the zero-logit decision rule to a set of product scores.
pub fn decide(products: &[f64]) -> Decision {
    Decision::from_logit(products.iter().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub sample_id: String,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub products: Vec<f64>,
    pub prediction: f64,
    pub decision: Decision,
}

impl Explanation {
    /// Sum of the product scores, i.e. the prediction logit.
    pub fn logit(&self) -> f64 {
        self.products.iter().fold(0.0, |acc, p| acc + p)
    }
}

/// Decomposes one sample's prediction. Requires the self-explanation head.
pub fn explain_sample(p: &DeepCodaParams, x: &[f64], sample_id: &str) -> Result<Explanation> {
    if p.head != Head::SelfExplain {
        return Err(Error::UnsupportedHead(format!(
            "explanations need the self_explain head, model uses {}",
            p.head
        )));
    }
    let t = net::forward(p, x)?;
    let products: Vec<f64> = t.w.iter().zip(&t.z).map(|(w, z)| w * z).collect();
    let logit = products.iter().fold(0.0, |acc, v| acc + v);
    Ok(Explanation {
        sample_id: sample_id.to_string(),
        prediction: net::logistic(logit),
        decision: Decision::from_logit(logit),
        z: t.z,
        w: t.w,
        products,
    })
}

/// Explains every row.
pub fn explain_all(p: &DeepCodaParams, x: &Matrix, ids: &[String]) -> Result<Vec<Explanation>> {
    if ids.len() != x.rows() {
        return Err(Error::invalid("one sample id per row is required"));
    }
    crate::par::map_range(x.rows(), |i| explain_sample(p, x.row(i), &ids[i]))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipEntry {
    pub feature: String,
    pub power: f64,
}

/// Features of one log-contrast, largest |power| first. Positive powers form
/// the numerator, negative ones the denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMembership {
    pub bottleneck: usize,
    pub entries: Vec<MembershipEntry>,
}

impl ContrastMembership {
    pub fn numerator(&self) -> impl Iterator<Item = &MembershipEntry> {
        self.entries.iter().filter(|e| e.power > 0.0)
    }

    pub fn denominator(&self) -> impl Iterator<Item = &MembershipEntry> {
        self.entries.iter().filter(|e| e.power < 0.0)
    }
}

pub const DEFAULT_MEMBERSHIP_THRESHOLD: f64 = 1e-3;

pub fn contrast_membership(
    p: &DeepCodaParams,
    b: usize,
    feature_names: &[String],
    magnitude_threshold: f64,
) -> Result<ContrastMembership> {
    if b >= p.n_bottlenecks {
        return Err(Error::invalid(format!(
            "bottleneck {b} out of range for {}",
            p.n_bottlenecks
        )));
    }
    if feature_names.len() != p.n_features {
        return Err(Error::invalid(format!(
            "{} feature names for {} features",
            feature_names.len(),
            p.n_features
        )));
    }
    let mut entries: Vec<MembershipEntry> = p
        .beta_column(b)
        .into_iter()
        .zip(feature_names)
        .filter(|(power, _)| power.abs() > magnitude_threshold)
        .map(|(power, name)| MembershipEntry {
            feature: name.clone(),
            power,
        })
        .collect();
    // Stable sort keeps feature order among equal magnitudes.
    entries.sort_by(|a, b| b.power.abs().total_cmp(&a.power.abs()));
    Ok(ContrastMembership {
        bottleneck: b,
        entries,
    })
}

/// Correlation structure between sample weights and log-contrast values.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightContrastCorrelation {
    /// `pearson[i][j] = corr(w_i, z_j)`.
    pub pearson: Vec<Vec<f64>>,
    /// Canonical correlations, descending, in [0, 1].
    pub canonical: Vec<f64>,
    /// Weight columns with zero variance (correlations set to 0).
    pub constant_w: Vec<usize>,
    /// Contrast columns with zero variance.
    pub constant_z: Vec<usize>,
}

/// Diagonal jitter added to the within-block correlation matrices.
pub const CCA_RIDGE: f64 = 1e-8;

/// Columns centered and scaled to unit norm; constant columns become zero.
fn unit_columns(m: &Matrix) -> (DMatrix<f64>, Vec<usize>) {
    let (n, k) = (m.rows(), m.cols());
    let mut out = DMatrix::zeros(n, k);
    let mut constant = Vec::new();
    for j in 0..k {
        let col = m.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let norm = ss.sqrt();
        if norm.is_nan() || norm <= 1e-14 * mean.abs().max(1.0) * (n as f64).sqrt() {
            constant.push(j);
            continue;
        }
        for i in 0..n {
            out[(i, j)] = (col[i] - mean) / norm;
        }
    }
    (out, constant)
}

fn block_correlation(u: &DMatrix<f64>, constant: &[usize]) -> DMatrix<f64> {
    let mut c = u.transpose() * u;
    for &j in constant {
        c[(j, j)] = 1.0;
    }
    for j in 0..c.nrows() {
        c[(j, j)] += CCA_RIDGE;
    }
    c
}

fn inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| l.is_nan() || l <= 0.0) {
        return Err(Error::Numeric("correlation matrix is not positive definite".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn weight_contrast_correlation(w: &Matrix, z: &Matrix) -> Result<WeightContrastCorrelation> {
    if w.rows() != z.rows() {
        return Err(Error::invalid(format!(
            "{} weight rows but {} contrast rows",
            w.rows(),
            z.rows()
        )));
    }
    let n = w.rows();
    if n <= w.cols().max(z.cols()) {
        return Err(Error::InsufficientSamples(format!(
            "{n} samples for {} weight and {} contrast columns",
            w.cols(),
            z.cols()
        )));
    }
    let (uw, constant_w) = unit_columns(w);
    let (uz, constant_z) = unit_columns(z);
    let cross = uw.transpose() * &uz;
    let pearson = (0..w.cols())
        .map(|i| (0..z.cols()).map(|j| cross[(i, j)].clamp(-1.0, 1.0)).collect())
        .collect();

    let rww = block_correlation(&uw, &constant_w);
    let rzz = block_correlation(&uz, &constant_z);
    let rww_is = inv_sqrt(&rww)?;
    let rzz_is = inv_sqrt(&rzz)?;
    // Singular values of Rww^-1/2 Rwz Rzz^-1/2 are the canonical correlations.
    let k = rww_is * cross * rzz_is;
    let gram = &k * k.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut canonical: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt().clamp(0.0, 1.0))
        .collect();
    canonical.sort_by(|a, b| b.total_cmp(a));
    canonical.truncate(w.cols().min(z.cols()));
    Ok(WeightContrastCorrelation {
        pearson,
        canonical,
        constant_w,
        constant_z,
    })
}

/// Stacks the `w` and `z` vectors of explanations into N x B matrices.
pub fn stack_wz(explanations: &[Explanation]) -> Result<(Matrix, Matrix)> {
    let w: Vec<Vec<f64>> = explanations.iter().map(|e| e.w.clone()).collect();
    let z: Vec<Vec<f64>> = explanations.iter().map(|e| e.z.clone()).collect();
    Ok((Matrix::from_rows(&w)?, Matrix::from_rows(&z)?))
}

/// CSV artifacts of an explanation report.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub explanations_csv: String,
    pub memberships_csv: String,
    pub correlations_csv: String,
    /// Short human-readable summary.
    pub summary: String,
}

/// Serializes explanations, memberships and correlations.
///
pub fn render_report(
    explanations: &[Explanation],
    memberships: &[ContrastMembership],
    correlations: Option<&WeightContrastCorrelation>,
) -> Report {
    use crate::io::fmt_f64;
    use std::fmt::Write;

    let nb = explanations
        .first()
        .map_or(memberships.len(), |e| e.z.len());
    let mut ex = String::from("sample_id");
    for prefix in ["z", "w", "prod"] {
        for b in 1..=nb {
            let _ = write!(ex, ",{prefix}_{b}");
        }
    }
    ex.push_str(",prob,decision\n");
    for e in explanations {
        ex.push_str(&e.sample_id);
        for v in e.z.iter().chain(&e.w).chain(&e.products) {
            ex.push(',');
            ex.push_str(&fmt_f64(*v));
        }
        let _ = writeln!(ex, ",{},{}", fmt_f64(e.prediction), e.decision.as_str());
    }

    let mut mem = String::from("bottleneck,rank,feature,power,role\n");
    for m in memberships {
        for (r, e) in m.entries.iter().enumerate() {
            let role = if e.power > 0.0 { "numerator" } else { "denominator" };
            let _ = writeln!(
                mem,
                "{},{},{},{},{role}",
                m.bottleneck + 1,
                r + 1,
                e.feature,
                fmt_f64(e.power)
            );
        }
    }

    let mut cor = String::from("kind,row,col,value\n");
    if let Some(c) = correlations {
        for (i, row) in c.pearson.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let _ = writeln!(cor, "pearson,w_{},z_{},{}", i + 1, j + 1, fmt_f64(*v));
            }
        }
        for (k, v) in c.canonical.iter().enumerate() {
            let _ = writeln!(cor, "canonical,{},,{}", k + 1, fmt_f64(*v));
        }
    }

    let positives = explanations
        .iter()
        .filter(|e| e.decision == Decision::Positive)
        .count();
    let mut summary = format!(
        "{} samples explained ({} positive, {} negative) over {} log-contrasts\n",
        explanations.len(),
        positives,
        explanations.len() - positives,
        nb
    );
    for m in memberships {
        let num: Vec<&str> = m.numerator().take(3).map(|e| e.feature.as_str()).collect();
        let den: Vec<&str> = m.denominator().take(3).map(|e| e.feature.as_str()).collect();
        let _ = writeln!(
            summary,
            "contrast {}: numerator [{}] / denominator [{}]",
            m.bottleneck + 1,
            num.join(", "),
            den.join(", ")
        );
    }
    if let Some(c) = correlations {
        let cc: Vec<String> = c.canonical.iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(summary, "canonical correlations: [{}]", cc.join(", "));
    }
    Report {
        explanations_csv: ex,
        memberships_csv: mem,
        correlations_csv: cor,
        summary,
    }
}
