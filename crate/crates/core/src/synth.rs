//! Seeded generators for the two synthetic case/control studies.
//!
//! Both produce absolute abundances with one part that never changes, plus the
//! row-wise closure of those abundances. Controls occupy the first half of the
//! rows, cases the second.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::coda::{AbundanceKind, CompositionMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Absolute value of the part held constant across samples.
pub const CONSTANT_LEVEL: f64 = 100.0;
/// Log-scale spread of the varying parts.
pub const LOG_SD: f64 = 0.2;
/// Default sample count for the synthetic studies.
pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub absolute: CompositionMatrix,
    pub relative: CompositionMatrix,
    pub labels: LabelVector,
    pub constant_feature_index: usize,
}

/// Generator parameters. `gen_toy` and `gen_cmyc` are fixed instances.
#[derive(Debug, Clone, Copy)]
pub struct Design {
    pub n_features: usize,
    /// Multiplier applied to every varying part in cases.
    pub case_factor: f64,
}

pub const TOY: Design = Design {
    n_features: 4,
    case_factor: 4.0,
};

pub const CMYC: Design = Design {
    n_features: 10,
    case_factor: 3.0,
};

/// Four parts; parts 2-4 over-proliferate fourfold in cases.
pub fn gen_toy(n_samples: usize, seed: u64) -> Result<SyntheticDataset> {
    generate(TOY, n_samples, seed)
}

/// Ten parts; 90% of them are tripled in the positive class.
pub fn gen_cmyc(n_samples: usize, seed: u64) -> Result<SyntheticDataset> {
    generate(CMYC, n_samples, seed)
}

pub fn generate(design: Design, n_samples: usize, seed: u64) -> Result<SyntheticDataset> {
    if n_samples < 4 {
        return Err(Error::invalid(format!(
            "need at least 4 samples, got {n_samples}"
        )));
    }
    if design.n_features < 2 {
        return Err(Error::invalid("need at least 2 parts"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = LogNormal::new(CONSTANT_LEVEL.ln(), LOG_SD)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let n_controls = n_samples / 2;
    let d = design.n_features;

    let mut values = Matrix::zeros(n_samples, d);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let case = i >= n_controls;
        let factor = if case { design.case_factor } else { 1.0 };
        let row = values.row_mut(i);
        row[0] = CONSTANT_LEVEL;
        for v in row.iter_mut().skip(1) {
            *v = base.sample(&mut rng) * factor;
        }
        labels.push(u8::from(case));
    }

    let ids: Vec<String> = (1..=n_samples).map(|i| format!("s{i}")).collect();
    let names: Vec<String> = (1..=d).map(|j| format!("feature_{j}")).collect();
    let absolute = CompositionMatrix::new(values, ids, names, AbundanceKind::Absolute)?;
    let relative = absolute.to_relative()?;
    Ok(SyntheticDataset {
        absolute,
        relative,
        labels: LabelVector::new(labels)?,
        constant_feature_index: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_means(m: &Matrix, labels: &LabelVector, j: usize) -> (f64, f64) {
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0.0, 0.0, 0.0);
        for (i, &l) in labels.as_slice().iter().enumerate() {
            if l == 1 {
                s1 += m.get(i, j);
                n1 += 1.0;
            } else {
                s0 += m.get(i, j);
                n0 += 1.0;
            }
        }
        (s0 / n0, s1 / n1)
    }

    #[test]
    fn toy_constant_column_and_effect() {
        let ds = gen_toy(1000, 7).unwrap();
        let col = ds.absolute.values().column(0);
        assert!(col.iter().all(|&v| v == CONSTANT_LEVEL));
        let (c, k) = class_means(ds.absolute.values(), &ds.labels, 2);
        let ratio = k / c;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        assert!(ds.labels.has_both_classes());
        assert_eq!(ds.labels.count_positive(), 500);
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(gen_toy(50, 3).unwrap(), gen_toy(50, 3).unwrap());
        assert_eq!(gen_cmyc(50, 3).unwrap(), gen_cmyc(50, 3).unwrap());
        assert_ne!(gen_toy(50, 3).unwrap(), gen_toy(50, 4).unwrap());
    }

    #[test]
    fn too_few_samples() {
        assert!(gen_toy(3, 0).is_err());
        assert!(gen_cmyc(0, 0).is_err());
    }

    #[test]
    fn cmyc_ninety_percent_change() {
        let ds = gen_cmyc(1000, 11).unwrap();
        let ratios: Vec<f64> = (0..10)
            .map(|j| {
                let (c, k) = class_means(ds.absolute.values(), &ds.labels, j);
                k / c
            })
            .collect();
        assert_eq!(ratios.iter().filter(|&&r| r > 2.0).count(), 9);
        assert_eq!(ratios[0], 1.0);
        let (c, k) = class_means(ds.relative.values(), &ds.labels, 0);
        assert!(k < c);
    }

    #[test]
    fn relative_rows_close_and_constant_separates() {
        let ds = gen_toy(1000, 1).unwrap();
        for row in ds.relative.values().iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let rel = ds.relative.values();
        let max_case = (500..1000).map(|i| rel.get(i, 0)).fold(f64::MIN, f64::max);
        let min_control = (0..500).map(|i| rel.get(i, 0)).fold(f64::MAX, f64::min);
        assert!(max_case < min_control);
    }
}
