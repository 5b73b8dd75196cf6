//! Train/test splits, AUC, the repeated-split benchmark and the
//! hyper-parameter grid.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coda::{CompositionMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::lasso::{self, CvConfig, Transform};
use crate::net::{self, Head};
use crate::par;
use crate::train::{self, TrainConfig};

pub const DEFAULT_SPLITS: usize = 20;
pub const DEFAULT_TEST_FRACTION: f64 = 0.1;
pub const GRID_BOTTLENECKS: [usize; 4] = [1, 3, 5, 10];
pub const GRID_LAMBDA_S: [f64; 4] = [0.001, 0.01, 0.1, 1.0];

/// Uniform random split of `0..n`; `|test| = round(test_fraction * n)`.
pub fn split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n_test = (test_fraction * n as f64).round() as usize;
    if n < 10 || n_test == 0 || n_test >= n {
        return Err(Error::InsufficientSamples(format!(
            "{n} samples cannot give a nonempty test set at fraction {test_fraction}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Area under the ROC curve via the Mann-Whitney rank statistic, ties counted
/// half.
pub fn auc(scores: &[f64], labels: &LabelVector) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if !labels.has_both_classes() {
        return Err(Error::invalid("AUC needs both classes"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let y = labels.as_slice();
    // Sum of positive ranks, with ranks doubled to keep tie midranks integral.
    let mut rank2_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based start+1..=end); doubled midrank = start+1+end.
        let mid2 = (start + 1 + end) as u64;
        let pos = order[start..end].iter().filter(|&&i| y[i] == 1).count() as u64;
        rank2_sum += pos * mid2;
        start = end;
    }
    let n_pos = labels.count_positive() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    // 2U = 2R - n_pos (n_pos + 1)
    let u2 = rank2_sum - n_pos * (n_pos + 1);
    Ok(u2 as f64 / 2.0 / (n_pos * n_neg) as f64)
}

/// A labelled strictly positive dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub data: CompositionMatrix,
    pub labels: LabelVector,
}

impl Dataset {
    pub fn new(name: impl Into<String>, data: CompositionMatrix, labels: LabelVector) -> Result<Self> {
        if data.n_samples() != labels.len() {
            return Err(Error::invalid(format!(
                "{} samples but {} labels",
                data.n_samples(),
                labels.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            data,
            labels,
        })
    }
}

/// A model-fitting procedure evaluated by the benchmark.
#[derive(Debug, Clone)]
pub enum Method {
    /// DeepCoDA; the training seed is replaced by the split seed.
    DeepCoda(TrainConfig),
    /// LASSO logistic regression with the penalty chosen by cross-validation.
    Lasso(Transform, CvConfig),
    /// Scores every test sample the same.
    Constant,
}

impl Method {
    pub fn deepcoda(n_bottlenecks: usize, lambda_s: f64, head: Head) -> Self {
        Method::DeepCoda(TrainConfig {
            n_bottlenecks,
            lambda_s,
            head,
            ..TrainConfig::default()
        })
    }

    pub fn name(&self) -> String {
        match self {
            Method::DeepCoda(cfg) => format!(
                "deepcoda_{}_B{}_ls{}",
                cfg.head, cfg.n_bottlenecks, cfg.lambda_s
            ),
            Method::Lasso(t, _) => format!("lasso_{}", t.as_str()),
            Method::Constant => "constant".to_string(),
        }
    }

    /// Fits on the training rows and returns scores for the test rows.
    pub fn fit_score(
        &self,
        train_x: &CompositionMatrix,
        train_y: &LabelVector,
        test_x: &CompositionMatrix,
        seed: u64,
    ) -> Result<Vec<f64>> {
        match self {
            Method::DeepCoda(cfg) => {
                let cfg = TrainConfig {
                    seed,
                    ..cfg.clone()
                };
                let report = train::train(train_x.values(), train_y, &cfg)?;
                net::predict_proba(&report.params, test_x.values())
            }
            Method::Lasso(t, cv) => {
                let cv = CvConfig {
                    seed,
                    ..cv.clone()
                };
                let model = lasso::fit_cv(train_x, train_y, *t, &cv)?;
                lasso::score(&model, test_x)
            }
            Method::Constant => Ok(vec![0.5; test_x.n_samples()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub method: String,
    pub dataset: String,
    pub split_index: usize,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedResult {
    pub result: BenchmarkResult,
    /// AUC minus the mean AUC of all rows for the same dataset.
    pub standardized_auc: f64,
}

/// Fits every method on `n_splits` random 90/10 splits and records test AUC.
///
/// Split `s` uses seed `base_seed + s` for both the split and the method.
/// Rows come back sorted by (method, split).
pub fn benchmark(
    dataset: &Dataset,
    methods: &[Method],
    n_splits: usize,
    base_seed: u64,
) -> Result<Vec<BenchmarkResult>> {
    if !dataset.data.is_strictly_positive() {
        return Err(Error::invalid(format!(
            "dataset {} has nonpositive entries; replace zeros first",
            dataset.name
        )));
    }
    let names: Vec<String> = methods.iter().map(Method::name).collect();
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
        return Err(Error::invalid(format!("method {dup} listed twice")));
    }
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..n_splits)
        .map(|s| split(dataset.labels.len(), DEFAULT_TEST_FRACTION, base_seed + s as u64))
        .collect::<Result<_>>()?;

    let cells = par::map_range(methods.len() * n_splits, |c| {
        let (mi, s) = (c / n_splits, c % n_splits);
        let (train_idx, test_idx) = &splits[s];
        let seed = base_seed + s as u64;
        let run = || -> Result<f64> {
            let train_x = dataset.data.select_samples(train_idx);
            let train_y = dataset.labels.select(train_idx);
            let test_x = dataset.data.select_samples(test_idx);
            let test_y = dataset.labels.select(test_idx);
            let scores = methods[mi].fit_score(&train_x, &train_y, &test_x, seed)?;
            auc(&scores, &test_y)
        };
        run()
            .map(|auc| BenchmarkResult {
                method: names[mi].clone(),
                dataset: dataset.name.clone(),
                split_index: s,
                auc,
            })
            .map_err(|e| e.context(format!("method {}, split {s}", names[mi])))
    });
    let mut rows: Vec<BenchmarkResult> = cells.into_iter().collect::<Result<_>>()?;
    sort_results(&mut rows);
    Ok(rows)
}

pub fn sort_results(rows: &mut [BenchmarkResult]) {
    rows.sort_by(|a, b| {
        (&a.dataset, &a.method, a.split_index).cmp(&(&b.dataset, &b.method, b.split_index))
    });
}

/// Centers AUCs on the per-dataset mean.
pub fn standardize_scores(results: &[BenchmarkResult]) -> Vec<StandardizedResult> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in results {
        let e = sums.entry(r.dataset.as_str()).or_insert((0.0, 0));
        e.0 += r.auc;
        e.1 += 1;
    }
    results
        .iter()
        .map(|r| {
            let (s, n) = sums[r.dataset.as_str()];
            StandardizedResult {
                result: r.clone(),
                standardized_auc: r.auc - s / n as f64,
            }
        })
        .collect()
}

/// Hyper-parameter grid over bottleneck count, L1 weight and head.
#[derive(Debug, Clone)]
pub struct Grid {
    pub bottlenecks: Vec<usize>,
    pub lambda_s: Vec<f64>,
    pub heads: Vec<Head>,
    /// Template for the remaining training settings.
    pub base: TrainConfig,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            bottlenecks: GRID_BOTTLENECKS.to_vec(),
            lambda_s: GRID_LAMBDA_S.to_vec(),
            heads: vec![Head::SelfExplain, Head::Linear],
            base: TrainConfig::default(),
        }
    }
}

impl Grid {
    pub fn methods(&self) -> Vec<Method> {
        let mut out = Vec::new();
        for &head in &self.heads {
            for &b in &self.bottlenecks {
                for &ls in &self.lambda_s {
                    out.push(Method::DeepCoda(TrainConfig {
                        n_bottlenecks: b,
                        lambda_s: ls,
                        head,
                        ..self.base.clone()
                    }));
                }
            }
        }
        out
    }
}

/// Benchmarks every grid configuration.
pub fn grid_search(
    dataset: &Dataset,
    grid: &Grid,
    n_splits: usize,
    base_seed: u64,
) -> Result<Vec<BenchmarkResult>> {
    benchmark(dataset, &grid.methods(), n_splits, base_seed)
}

/// One configuration's standardized AUC distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSummary {
    pub method: String,
    pub n: usize,
    pub median: f64,
    pub mean: f64,
}

/// Per-configuration summary of standardized AUC, sorted by method name.
pub fn config_table(rows: &[StandardizedResult]) -> Vec<ConfigSummary> {
    let mut by_method: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_method
            .entry(r.result.method.as_str())
            .or_default()
            .push(r.standardized_auc);
    }
    by_method
        .into_iter()
        .map(|(m, mut v)| {
            v.sort_by(f64::total_cmp);
            ConfigSummary {
                method: m.to_string(),
                n: v.len(),
                median: median_sorted(&v),
                mean: v.iter().sum::<f64>() / v.len() as f64,
            }
        })
        .collect()
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median AUC of one method's rows.
pub fn median_auc(rows: &[BenchmarkResult], method: &str) -> Option<f64> {
    let mut v: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method)
        .map(|r| r.auc)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(median_sorted(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_toy;

    fn labels(v: &[u8]) -> LabelVector {
        LabelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn split_examples() {
        let (train, test) = split(10, 0.1, 3).unwrap();
        assert_eq!(test.len(), 1);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split(10, 0.1, 3).unwrap(), (train, test));
        assert_eq!(split(1000, 0.1, 0).unwrap().1.len(), 100);
        assert!(split(9, 0.1, 0).is_err());
        assert!(split(12, 0.01, 0).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &labels(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &labels(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(auc(&[0.3; 5], &labels(&[1, 0, 1, 0, 0])).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &labels(&[0, 0, 1, 1])).unwrap(), 0.75);
        assert!(auc(&[0.1, 0.2], &labels(&[1, 1])).is_err());
        assert!(auc(&[0.1, f64::NAN], &labels(&[1, 0])).is_err());
    }

    #[test]
    fn standardize_examples() {
        let mk = |d: &str, s, a| BenchmarkResult {
            method: "m".into(),
            dataset: d.into(),
            split_index: s,
            auc: a,
        };
        let out = standardize_scores(&[mk("a", 0, 0.8), mk("a", 1, 0.6)]);
        assert!((out[0].standardized_auc - 0.1).abs() < 1e-15);
        assert!((out[1].standardized_auc + 0.1).abs() < 1e-15);
        let rows = vec![mk("a", 0, 0.9), mk("b", 0, 0.55), mk("a", 1, 0.7), mk("b", 1, 0.65)];
        let out = standardize_scores(&rows);
        for d in ["a", "b"] {
            let m: f64 = out
                .iter()
                .filter(|r| r.result.dataset == d)
                .map(|r| r.standardized_auc)
                .sum();
            assert!(m.abs() < 1e-12);
        }
        let shifted: Vec<_> = rows
            .iter()
            .map(|r| BenchmarkResult {
                auc: if r.dataset == "a" { r.auc - 0.2 } else { r.auc },
                ..r.clone()
            })
            .collect();
        let out2 = standardize_scores(&shifted);
        for (x, y) in out.iter().zip(&out2) {
            assert!((x.standardized_auc - y.standardized_auc).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_method_benchmark() {
        let ds = gen_toy(100, 2).unwrap();
        let d = Dataset::new("toy", ds.relative, ds.labels).unwrap();
        let rows = benchmark(&d, &[Method::Constant], DEFAULT_SPLITS, 7).unwrap();
        assert_eq!(rows.len(), 20);
        assert!(rows.iter().all(|r| r.auc == 0.5));
        assert_eq!(rows, benchmark(&d, &[Method::Constant], DEFAULT_SPLITS, 7).unwrap());
    }

    #[test]
    fn grid_row_count_and_singleton() {
        let ds = gen_toy(60, 2).unwrap();
        let d = Dataset::new("toy", ds.relative, ds.labels).unwrap();
        let base = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let grid = Grid {
            bottlenecks: vec![1, 2],
            lambda_s: vec![0.01, 0.1],
            heads: vec![Head::SelfExplain, Head::Linear],
            base: base.clone(),
        };
        assert_eq!(grid_search(&d, &grid, 3, 0).unwrap().len(), 2 * 2 * 2 * 3);
        let single = Grid {
            bottlenecks: vec![2],
            lambda_s: vec![0.1],
            heads: vec![Head::Linear],
            base: base.clone(),
        };
        let m = Method::DeepCoda(TrainConfig {
            n_bottlenecks: 2,
            lambda_s: 0.1,
            head: Head::Linear,
            ..base
        });
        assert_eq!(
            grid_search(&d, &single, 3, 0).unwrap(),
            benchmark(&d, &[m], 3, 0).unwrap()
        );
        assert_eq!(Grid::default().methods().len(), 32);
    }

    #[test]
    fn benchmark_annotates_errors() {
        let ds = gen_toy(20, 2).unwrap();
        let d = Dataset::new("toy", ds.relative, ds.labels).unwrap();
        // A 2-sample test set drawn from 20 rows often holds one class.
        let err = benchmark(&d, &[Method::Constant], 20, 0).unwrap_err();
        assert!(err.to_string().contains("method constant, split"), "{err}");
    }

    #[test]
    fn config_table_layout() {
        let mk = |m: &str, s, a| BenchmarkResult {
            method: m.into(),
            dataset: "d".into(),
            split_index: s,
            auc: a,
        };
        let rows = vec![mk("b", 0, 0.9), mk("a", 0, 0.5), mk("b", 1, 0.7), mk("a", 1, 0.7)];
        let t = config_table(&standardize_scores(&rows));
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].method, "a");
        assert_eq!(t[0].n, 2);
        assert!((t[1].median - 0.1).abs() < 1e-12);
    }
}
