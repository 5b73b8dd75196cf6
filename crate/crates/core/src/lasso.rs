//! L1-penalized logistic regression baselines with cross-validated penalty.
//!
//! The objective is `(1/N) sum_i logloss(b0 + x_i . coef, y_i) + lambda * |coef|_1`
//! with an unpenalized intercept. It is minimized by accelerated proximal
//! gradient with backtracking on centered, scaled columns; the L1 prox stays
//! separable under the per-column rescaling, so the optimum is that of the
//! objective on the original scale.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coda::{self, CompositionMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::matrix::Matrix;
use crate::par;

/// Feature transform applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    None,
    Clr,
}

impl Transform {
    pub fn as_str(self) -> &'static str {
        match self {
            Transform::None => "none",
            Transform::Clr => "clr",
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Transform::None),
            "clr" => Ok(Transform::Clr),
            other => Err(Error::invalid(format!("unknown transform `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub transform: Transform,
}

impl LassoModel {
    /// Linear predictor `b0 + x . coef` for every row.
    pub fn decision_function(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows()
            .map(|r| self.intercept + r.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    pub fn nonzero_count(&self) -> usize {
        self.coef.iter().filter(|&&c| c != 0.0).count()
    }
}

/// Solver limits.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// Default penalty grid: 8 log-spaced values from 1e-4 to 1.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..8).map(|k| 10f64.powf(-4.0 + 4.0 * k as f64 / 7.0)).collect()
}

pub fn soft_threshold(u: f64, threshold: f64) -> f64 {
    u.signum() * (u.abs() - threshold).max(0.0)
}

#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Mean logistic loss of linear predictor `eta`.
fn mean_logloss(eta: &[f64], y: &[f64]) -> f64 {
    eta.iter().zip(y).map(|(e, yi)| softplus(*e) - yi * e).sum::<f64>() / eta.len() as f64
}

/// The penalized objective on the original scale.
pub fn objective(x: &Matrix, y: &LabelVector, coef: &[f64], intercept: f64, lambda: f64) -> f64 {
    let eta: Vec<f64> = x
        .iter_rows()
        .map(|r| intercept + r.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    mean_logloss(&eta, &y.as_f64()) + lambda * coef.iter().map(|c| c.abs()).sum::<f64>()
}

fn check_fit_input(x: &Matrix, y: &LabelVector, lambda: f64) -> Result<()> {
    if x.rows() < 2 || x.rows() != y.len() {
        return Err(Error::invalid(format!(
            "need at least 2 samples with one label each, got {} rows and {} labels",
            x.rows(),
            y.len()
        )));
    }
    if !y.has_both_classes() {
        return Err(Error::invalid("labels contain a single class"));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(())
}

/// Centered, unit-variance copy of `x`; constant columns become zero.
struct Standardized {
    z: Matrix,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn standardize(x: &Matrix) -> Standardized {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for r in x.iter_rows() {
        for j in 0..d {
            var[j] += (r[j] - mean[j]).powi(2);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let sd = (v / n as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let mut z = Matrix::zeros(n, d);
    for i in 0..n {
        let (src, dst) = (x.row(i), z.row_mut(i));
        for j in 0..d {
            dst[j] = (src[j] - mean[j]) / scale[j];
        }
    }
    Standardized { z, mean, scale }
}

fn predictor(z: &Matrix, u: &[f64], u0: f64) -> Vec<f64> {
    z.iter_rows()
        .map(|r| u0 + r.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

fn smooth_grad(z: &Matrix, eta: &[f64], y: &[f64]) -> (Vec<f64>, f64) {
    let n = z.rows() as f64;
    let mut g = vec![0.0; z.cols()];
    let mut g0 = 0.0;
    for (i, r) in z.iter_rows().enumerate() {
        let resid = crate::net::logistic(eta[i]) - y[i];
        g0 += resid;
        g.iter_mut().zip(r).for_each(|(gj, v)| *gj += resid * v);
    }
    g.iter_mut().for_each(|gj| *gj /= n);
    (g, g0 / n)
}

/// Fits at a single penalty value.
pub fn lasso_logistic_fit(x: &Matrix, y: &LabelVector, lambda: f64) -> Result<LassoModel> {
    lasso_logistic_fit_with(x, y, lambda, SolverOptions::default())
}

pub fn lasso_logistic_fit_with(
    x: &Matrix,
    y: &LabelVector,
    lambda: f64,
    opts: SolverOptions,
) -> Result<LassoModel> {
    check_fit_input(x, y, lambda)?;
    let solver = Solver::new(x, y);
    let (u, u0) = solver.solve(lambda, None, opts)?;
    solver.to_model(&u, u0, lambda)
}

/// Fits a sequence of penalties, warm-starting each from the previous
/// solution in decreasing-penalty order. Models are returned in input order.
pub fn lasso_path(x: &Matrix, y: &LabelVector, lambdas: &[f64]) -> Result<Vec<LassoModel>> {
    for &l in lambdas {
        check_fit_input(x, y, l)?;
    }
    let solver = Solver::new(x, y);
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut out: Vec<Option<LassoModel>> = vec![None; lambdas.len()];
    let mut warm: Option<(Vec<f64>, f64)> = None;
    for k in order {
        let (u, u0) = solver.solve(lambdas[k], warm.take(), SolverOptions::default())?;
        out[k] = Some(solver.to_model(&u, u0, lambdas[k])?);
        warm = Some((u, u0));
    }
    Ok(out.into_iter().map(|m| m.expect("every penalty fitted")).collect())
}

/// Problem data in standardized coordinates.
struct Solver {
    std: Standardized,
    y: Vec<f64>,
    prevalence: f64,
}

impl Solver {
    fn new(x: &Matrix, y: &LabelVector) -> Self {
        Self {
            std: standardize(x),
            y: y.as_f64(),
            prevalence: y.count_positive() as f64 / y.len() as f64,
        }
    }

    /// Accelerated proximal gradient with backtracking and adaptive restart.
    /// Works in `u_j = coef_j * scale_j`; returns `(u, intercept)`.
    fn solve(
        &self,
        lambda: f64,
        warm: Option<(Vec<f64>, f64)>,
        opts: SolverOptions,
    ) -> Result<(Vec<f64>, f64)> {
        let z = &self.std.z;
        let yf = &self.y;
        let d = z.cols();
        let weights: Vec<f64> = self.std.scale.iter().map(|s| lambda / s).collect();
        let penalty = |u: &[f64]| u.iter().zip(&weights).map(|(a, w)| w * a.abs()).sum::<f64>();

        let (mut u, mut u0) = warm.unwrap_or_else(|| {
            (vec![0.0; d], (self.prevalence / (1.0 - self.prevalence)).ln())
        });
        let mut f_cur = mean_logloss(&predictor(z, &u, u0), yf) + penalty(&u);

        // Momentum point.
        let (mut v, mut v0) = (u.clone(), u0);
        let mut theta = 1.0f64;
        let mut step = 1.0;

        for _ in 0..opts.max_iter {
            let eta_v = predictor(z, &v, v0);
            let smooth_v = mean_logloss(&eta_v, yf);
            let (g, g0) = smooth_grad(z, &eta_v, yf);
            let (cand, cand0, smooth_cand) = loop {
                let cand: Vec<f64> = (0..d)
                    .map(|j| soft_threshold(v[j] - step * g[j], step * weights[j]))
                    .collect();
                let cand0 = v0 - step * g0;
                let smooth_cand = mean_logloss(&predictor(z, &cand, cand0), yf);
                let diff: Vec<f64> = cand.iter().zip(&v).map(|(a, b)| a - b).collect();
                let diff0 = cand0 - v0;
                let lin = g.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>() + g0 * diff0;
                let sq = diff.iter().map(|a| a * a).sum::<f64>() + diff0 * diff0;
                if smooth_cand <= smooth_v + lin + sq / (2.0 * step) + 1e-15 {
                    break (cand, cand0, smooth_cand);
                }
                step *= 0.5;
                if step < 1e-20 {
                    return Err(Error::Numeric("line search failed in lasso fit".into()));
                }
            };
            let f_new = smooth_cand + penalty(&cand);
            if f_new > f_cur {
                if theta == 1.0 {
                    // A plain prox step from the iterate itself did not improve it.
                    break;
                }
                // Objective went up: drop momentum and restart from the last iterate.
                v.clone_from(&u);
                v0 = u0;
                theta = 1.0;
                continue;
            }
            let theta_next = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
            let mom = (theta - 1.0) / theta_next;
            v = cand.iter().zip(&u).map(|(c, p)| c + mom * (c - p)).collect();
            v0 = cand0 + mom * (cand0 - u0);
            theta = theta_next;
            let rel = (f_cur - f_new).abs() / f_cur.abs().max(f64::MIN_POSITIVE);
            u = cand;
            u0 = cand0;
            f_cur = f_new;
            if rel < opts.tol {
                break;
            }
            // Let the step grow back after a run of backtracking.
            step *= 1.1;
        }
        Ok((u, u0))
    }

    fn to_model(&self, u: &[f64], u0: f64, lambda: f64) -> Result<LassoModel> {
        let coef: Vec<f64> = u.iter().zip(&self.std.scale).map(|(a, s)| a / s).collect();
        let intercept = u0 - coef.iter().zip(&self.std.mean).map(|(c, m)| c * m).sum::<f64>();
        if !intercept.is_finite() || coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("lasso fit produced non-finite coefficients".into()));
        }
        Ok(LassoModel {
            coef,
            intercept,
            lambda,
            transform: Transform::None,
        })
    }
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &LabelVector, n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if n_folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0usize; y.len()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y.as_slice()[i] == class).collect();
        if idx.len() < n_folds {
            return Err(Error::Stratification(format!(
                "class {class} has {} samples, fewer than {n_folds} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            fold[i] = k % n_folds;
        }
    }
    Ok(fold)
}

/// Picks the grid value with the best mean held-out AUC; ties go to the larger
/// (sparser) penalty.
pub fn cv_select_lambda(
    x: &Matrix,
    y: &LabelVector,
    n_folds: usize,
    lambda_grid: &[f64],
    seed: u64,
) -> Result<f64> {
    if lambda_grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    if lambda_grid.len() == 1 {
        return Ok(lambda_grid[0]);
    }
    if x.rows() < n_folds {
        return Err(Error::invalid(format!(
            "{} samples cannot fill {n_folds} folds",
            x.rows()
        )));
    }
    let folds = stratified_folds(y, n_folds, seed)?;
    let per_fold = par::map_range(n_folds, |f| -> Result<Vec<f64>> {
        let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
        let test_x = x.select_rows(&test);
        let test_y = y.select(&test);
        lasso_path(&x.select_rows(&train), &y.select(&train), lambda_grid)?
            .iter()
            .map(|m| auc(&m.decision_function(&test_x), &test_y))
            .collect()
    });
    let per_fold: Vec<Vec<f64>> = per_fold.into_iter().collect::<Result<_>>()?;
    let mut best: Option<(f64, f64)> = None;
    for (li, &lambda) in lambda_grid.iter().enumerate() {
        let sum: f64 = per_fold.iter().map(|fold| fold[li]).sum();
        let mean = sum / n_folds as f64;
        best = match best {
            None => Some((lambda, mean)),
            Some((bl, bm)) => {
                if mean > bm || (mean == bm && lambda > bl) {
                    Some((lambda, mean))
                } else {
                    Some((bl, bm))
                }
            }
        };
    }
    Ok(best.map(|(l, _)| l).expect("grid is nonempty"))
}

/// Applies the baseline transform to a composition.
pub fn apply_transform(x: &CompositionMatrix, transform: Transform) -> Result<Matrix> {
    match transform {
        Transform::None => Ok(x.values().clone()),
        Transform::Clr => {
            let v = x.values();
            let mut out = Matrix::zeros(v.rows(), v.cols());
            for i in 0..v.rows() {
                let c = coda::clr(v.row(i)).map_err(|e| e.context(format!("row {i}")))?;
                out.row_mut(i).copy_from_slice(&c);
            }
            Ok(out)
        }
    }
}

/// Cross-validation settings for [`fit_cv`].
#[derive(Debug, Clone)]
pub struct CvConfig {
    pub n_folds: usize,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_folds: 5,
            lambda_grid: default_lambda_grid(),
            seed: 0,
        }
    }
}

/// Transform, select the penalty by cross-validation, then refit on all rows.
pub fn fit_cv(
    x: &CompositionMatrix,
    y: &LabelVector,
    transform: Transform,
    cv: &CvConfig,
) -> Result<LassoModel> {
    let features = apply_transform(x, transform)?;
    let lambda = cv_select_lambda(&features, y, cv.n_folds, &cv.lambda_grid, cv.seed)?;
    let mut model = lasso_logistic_fit(&features, y, lambda)?;
    model.transform = transform;
    Ok(model)
}

/// Scores rows of a composition with a fitted model, applying its transform.
pub fn score(model: &LassoModel, x: &CompositionMatrix) -> Result<Vec<f64>> {
    Ok(model.decision_function(&apply_transform(x, model.transform)?))
}

/// `|coef|` min-max scaled to [0, 1]; all zeros if every magnitude is equal.
pub fn minmax_scaled_magnitudes(coef: &[f64]) -> Vec<f64> {
    let mags: Vec<f64> = coef.iter().map(|c| c.abs()).collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.is_nan() || hi <= lo {
        return vec![0.0; mags.len()];
    }
    mags.iter().map(|m| (m - lo) / (hi - lo)).collect()
}
