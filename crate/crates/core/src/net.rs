//! Log-bottleneck network with a self-explanation head.
//!
//! Each of the `B` bottlenecks computes `z_b = beta0_b + sum_d beta_db ln x_d`.
//! The self-explanation head maps `z` through a one-hidden-layer ReLU network
//! to per-sample weights `w`, and the prediction is `Phi(w . z)`. The linear
//! head replaces `w` with a global vector and adds an intercept.

use crate::coda::LabelVector;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

/// Hidden width of the self-explanation network.
pub const HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    SelfExplain,
    Linear,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::SelfExplain => "self_explain",
            Head::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_explain" => Ok(Head::SelfExplain),
            "linear" => Ok(Head::Linear),
            other => Err(Error::invalid(format!("unknown head `{other}`"))),
        }
    }
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Model parameters.
///
/// `beta` is D x B and `mlp_w1` is B x H, `mlp_w2` is H x B, all row-major.
/// The MLP tensors are only used by the self-explanation head and
/// `linear_v`/`linear_v0` only by the linear head; both sets are always
/// present so the same structure doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepCodaParams {
    pub n_features: usize,
    pub n_bottlenecks: usize,
    pub hidden: usize,
    pub head: Head,
    pub beta: Vec<f64>,
    pub beta0: Vec<f64>,
    pub mlp_w1: Vec<f64>,
    pub mlp_b1: Vec<f64>,
    pub mlp_w2: Vec<f64>,
    pub mlp_b2: Vec<f64>,
    pub linear_v: Vec<f64>,
    pub linear_v0: f64,
}

/// Gradients share the parameter layout.
pub type Gradients = DeepCodaParams;

impl DeepCodaParams {
    pub fn zeros(n_features: usize, n_bottlenecks: usize, hidden: usize, head: Head) -> Self {
        let (d, b, h) = (n_features, n_bottlenecks, hidden);
        Self {
            n_features: d,
            n_bottlenecks: b,
            hidden: h,
            head,
            beta: vec![0.0; d * b],
            beta0: vec![0.0; b],
            mlp_w1: vec![0.0; b * h],
            mlp_b1: vec![0.0; h],
            mlp_w2: vec![0.0; h * b],
            mlp_b2: vec![0.0; b],
            linear_v: vec![0.0; b],
            linear_v0: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_features, self.n_bottlenecks, self.hidden, self.head)
    }

    #[inline]
    pub fn beta_at(&self, d: usize, b: usize) -> f64 {
        self.beta[d * self.n_bottlenecks + b]
    }

    /// Powers of bottleneck `b`, one per feature.
    pub fn beta_column(&self, b: usize) -> Vec<f64> {
        (0..self.n_features).map(|d| self.beta_at(d, b)).collect()
    }

    /// `sum_d beta_db` for every bottleneck; zero for an exact log-contrast.
    pub fn constraint_residuals(&self) -> Vec<f64> {
        (0..self.n_bottlenecks)
            .map(|b| (0..self.n_features).map(|d| self.beta_at(d, b)).sum())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, b, h) = (self.n_features, self.n_bottlenecks, self.hidden);
        if d == 0 || b == 0 || h == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        let expect = [
            ("beta", self.beta.len(), d * b),
            ("beta0", self.beta0.len(), b),
            ("mlp_w1", self.mlp_w1.len(), b * h),
            ("mlp_b1", self.mlp_b1.len(), h),
            ("mlp_w2", self.mlp_w2.len(), h * b),
            ("mlp_b2", self.mlp_b2.len(), b),
            ("linear_v", self.linear_v.len(), b),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::invalid(format!(
                    "{name} has {got} values, expected {want}"
                )));
            }
        }
        if !self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
            || !self.linear_v0.is_finite()
        {
            return Err(Error::invalid("model has non-finite parameters"));
        }
        Ok(())
    }

    /// All vector-valued tensors, in serialization order.
    pub fn tensors(&self) -> [&Vec<f64>; 7] {
        [
            &self.beta,
            &self.beta0,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
            &self.linear_v,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.beta,
            &mut self.beta0,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
            &mut self.linear_v,
        ]
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.linear_v0 += other.linear_v0;
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Log-contrast values.
    pub z: Vec<f64>,
    /// Weights applied to `z`; constant across samples for the linear head.
    pub w: Vec<f64>,
    /// Pre-activation.
    pub s: f64,
    pub yhat: f64,
}

/// Logistic function.
#[inline]
pub fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Element-wise `ln` of a strictly positive matrix.
pub fn log_matrix(x: &Matrix) -> Result<Matrix> {
    if let Some((pos, v)) = x
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, v)| v.is_nan() || **v <= 0.0 || v.is_infinite())
    {
        let (i, j) = (pos / x.cols().max(1), pos % x.cols().max(1));
        return Err(Error::invalid(format!(
            "entry ({i}, {j}) = {v} is not strictly positive"
        )));
    }
    Ok(x.map(f64::ln))
}

struct Activations {
    trace: ForwardTrace,
    /// Hidden pre-activations of the self-explanation MLP.
    hidden_pre: Vec<f64>,
}

fn forward_logs(p: &DeepCodaParams, logx: &[f64]) -> Activations {
    let (nb, nh) = (p.n_bottlenecks, p.hidden);
    let mut z = p.beta0.clone();
    for (d, &lx) in logx.iter().enumerate() {
        let row = &p.beta[d * nb..(d + 1) * nb];
        z.iter_mut().zip(row).for_each(|(zb, beta)| *zb += beta * lx);
    }
    match p.head {
        Head::SelfExplain => {
            let mut hidden_pre = p.mlp_b1.clone();
            for (b, &zb) in z.iter().enumerate() {
                let row = &p.mlp_w1[b * nh..(b + 1) * nh];
                hidden_pre.iter_mut().zip(row).for_each(|(a, w1)| *a += w1 * zb);
            }
            let mut w = p.mlp_b2.clone();
            for (h, &a) in hidden_pre.iter().enumerate() {
                let r = a.max(0.0);
                if r > 0.0 {
                    let row = &p.mlp_w2[h * nb..(h + 1) * nb];
                    w.iter_mut().zip(row).for_each(|(wb, w2)| *wb += w2 * r);
                }
            }
            let s = dot(&w, &z);
            Activations {
                trace: ForwardTrace {
                    yhat: logistic(s),
                    z,
                    w,
                    s,
                },
                hidden_pre,
            }
        }
        Head::Linear => {
            let s = p.linear_v0 + dot(&p.linear_v, &z);
            Activations {
                trace: ForwardTrace {
                    yhat: logistic(s),
                    z,
                    w: p.linear_v.clone(),
                    s,
                },
                hidden_pre: Vec::new(),
            }
        }
    }
}

/// Plain left-to-right dot product; explanations rely on this exact order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

fn check_dims(p: &DeepCodaParams, d: usize) -> Result<()> {
    if d != p.n_features {
        return Err(Error::invalid(format!(
            "input has {d} features, model expects {}",
            p.n_features
        )));
    }
    Ok(())
}

fn check_trace(t: &ForwardTrace) -> Result<()> {
    if !t.s.is_finite() || t.z.iter().chain(&t.w).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in forward pass".into()));
    }
    Ok(())
}

/// Forward pass for one strictly positive sample.
pub fn forward(p: &DeepCodaParams, x: &[f64]) -> Result<ForwardTrace> {
    check_dims(p, x.len())?;
    let logx: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(Error::invalid(format!(
                    "entry {j} = {v} is not strictly positive"
                )))
            }
        })
        .collect::<Result<_>>()?;
    let t = forward_logs(p, &logx).trace;
    check_trace(&t)?;
    Ok(t)
}

/// Forward pass from precomputed `ln x`.
pub fn forward_log(p: &DeepCodaParams, logx: &[f64]) -> Result<ForwardTrace> {
    check_dims(p, logx.len())?;
    let t = forward_logs(p, logx).trace;
    check_trace(&t)?;
    Ok(t)
}

/// Row-wise predicted probabilities.
pub fn predict_proba(p: &DeepCodaParams, x: &Matrix) -> Result<Vec<f64>> {
    check_dims(p, x.cols())?;
    let logx = log_matrix(x)?;
    predict_proba_log(p, &logx)
}

pub(crate) fn predict_proba_log(p: &DeepCodaParams, logx: &Matrix) -> Result<Vec<f64>> {
    par::map_range(logx.rows(), |i| forward_log(p, logx.row(i)).map(|t| t.yhat))
        .into_iter()
        .collect()
}

/// Penalty part of the loss.
fn penalty(p: &DeepCodaParams, lambda_c: f64, lambda_s: f64) -> f64 {
    let constraint: f64 = p.constraint_residuals().iter().map(|r| r * r).sum();
    let l1: f64 = p.beta.iter().map(|b| b.abs()).sum();
    lambda_c * constraint + lambda_s * l1
}

fn check_problem(
    p: &DeepCodaParams,
    logx: &Matrix,
    y: &LabelVector,
    lambda_c: f64,
    lambda_s: f64,
) -> Result<()> {
    check_dims(p, logx.cols())?;
    if y.len() != logx.rows() {
        return Err(Error::invalid(format!(
            "{} labels for {} samples",
            y.len(),
            logx.rows()
        )));
    }
    if !(lambda_c >= 0.0 && lambda_s >= 0.0) {
        return Err(Error::invalid("penalty weights must be nonnegative"));
    }
    Ok(())
}

/// Squared error plus the zero-sum and L1 penalties on `beta`.
pub fn loss(
    p: &DeepCodaParams,
    x: &Matrix,
    y: &LabelVector,
    lambda_c: f64,
    lambda_s: f64,
) -> Result<f64> {
    check_dims(p, x.cols())?;
    loss_log(p, &log_matrix(x)?, y, lambda_c, lambda_s)
}

/// [`loss`] from precomputed `ln X`.
pub fn loss_log(
    p: &DeepCodaParams,
    logx: &Matrix,
    y: &LabelVector,
    lambda_c: f64,
    lambda_s: f64,
) -> Result<f64> {
    check_problem(p, logx, y, lambda_c, lambda_s)?;
    let labels = y.as_slice();
    let partial = par::map_chunks(logx.rows(), |rows| -> Result<f64> {
        let mut sse = 0.0;
        for i in rows {
            let t = forward_logs(p, logx.row(i)).trace;
            check_trace(&t)?;
            let r = t.yhat - f64::from(labels[i]);
            sse += r * r;
        }
        Ok(sse)
    });
    let mut sse = 0.0;
    for part in partial {
        sse += part?;
    }
    Ok(sse + penalty(p, lambda_c, lambda_s))
}

/// Exact gradient of [`loss`].
///
/// At kinks the subgradient 0 is used: for `|beta|` at zero and for the ReLU
/// at a zero pre-activation.
pub fn gradients(
    p: &DeepCodaParams,
    x: &Matrix,
    y: &LabelVector,
    lambda_c: f64,
    lambda_s: f64,
) -> Result<Gradients> {
    check_dims(p, x.cols())?;
    gradients_log(p, &log_matrix(x)?, y, lambda_c, lambda_s).map(|(g, _)| g)
}

/// Gradient and loss value from precomputed `ln X`.
pub fn gradients_log(
    p: &DeepCodaParams,
    logx: &Matrix,
    y: &LabelVector,
    lambda_c: f64,
    lambda_s: f64,
) -> Result<(Gradients, f64)> {
    check_problem(p, logx, y, lambda_c, lambda_s)?;
    let labels = y.as_slice();
    let partial = par::map_chunks(logx.rows(), |rows| -> Result<(Gradients, f64)> {
        let mut g = p.zeros_like();
        let mut sse = 0.0;
        let mut grad_z = vec![0.0; p.n_bottlenecks];
        for i in rows {
            let lx = logx.row(i);
            let act = forward_logs(p, lx);
            check_trace(&act.trace)?;
            let r = act.trace.yhat - f64::from(labels[i]);
            sse += r * r;
            let yhat = act.trace.yhat;
            let grad_s = 2.0 * r * yhat * (1.0 - yhat);
            backprop_sample(p, &act, grad_s, &mut g, &mut grad_z);
            for (d, &l) in lx.iter().enumerate() {
                let row = &mut g.beta[d * p.n_bottlenecks..(d + 1) * p.n_bottlenecks];
                row.iter_mut().zip(&grad_z).for_each(|(gb, gz)| *gb += gz * l);
            }
            g.beta0.iter_mut().zip(&grad_z).for_each(|(gb, gz)| *gb += gz);
        }
        Ok((g, sse))
    });

    let mut total = p.zeros_like();
    let mut sse = 0.0;
    for part in partial {
        let (g, s) = part?;
        total.add_assign(&g);
        sse += s;
    }

    let residuals = p.constraint_residuals();
    let nb = p.n_bottlenecks;
    for (k, gb) in total.beta.iter_mut().enumerate() {
        let beta = p.beta[k];
        let sign = if beta > 0.0 {
            1.0
        } else if beta < 0.0 {
            -1.0
        } else {
            0.0
        };
        *gb += 2.0 * lambda_c * residuals[k % nb] + lambda_s * sign;
    }
    Ok((total, sse + penalty(p, lambda_c, lambda_s)))
}

/// Accumulates head gradients into `g` and writes `dL/dz` into `grad_z`.
#[allow(clippy::needless_range_loop)]
fn backprop_sample(
    p: &DeepCodaParams,
    act: &Activations,
    grad_s: f64,
    g: &mut Gradients,
    grad_z: &mut [f64],
) {
    let t = &act.trace;
    let (nb, nh) = (p.n_bottlenecks, p.hidden);
    match p.head {
        Head::Linear => {
            g.linear_v0 += grad_s;
            for b in 0..nb {
                g.linear_v[b] += grad_s * t.z[b];
                grad_z[b] = grad_s * p.linear_v[b];
            }
        }
        Head::SelfExplain => {
            // s = w . z with w = W2^T relu(W1^T z + b1) + b2
            for b in 0..nb {
                grad_z[b] = grad_s * t.w[b];
            }
            for (h, &a) in act.hidden_pre.iter().enumerate() {
                if a <= 0.0 {
                    continue;
                }
                let w2 = &p.mlp_w2[h * nb..(h + 1) * nb];
                let gw2 = &mut g.mlp_w2[h * nb..(h + 1) * nb];
                let mut grad_hidden = 0.0;
                for b in 0..nb {
                    let grad_w = grad_s * t.z[b];
                    gw2[b] += a * grad_w;
                    grad_hidden += w2[b] * grad_w;
                }
                g.mlp_b1[h] += grad_hidden;
                for b in 0..nb {
                    g.mlp_w1[b * nh + h] += t.z[b] * grad_hidden;
                    grad_z[b] += p.mlp_w1[b * nh + h] * grad_hidden;
                }
            }
            for b in 0..nb {
                g.mlp_b2[b] += grad_s * t.z[b];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(d: usize, b: usize, head: Head, seed: u64) -> DeepCodaParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = DeepCodaParams::zeros(d, b, HIDDEN, head);
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        p.linear_v0 = rng.random_range(-1.0..1.0);
        p
    }

    #[test]
    fn zero_mlp_gives_constant_weights() {
        let mut p = DeepCodaParams::zeros(3, 2, HIDDEN, Head::SelfExplain);
        p.mlp_b2 = vec![0.7, 0.7];
        p.beta = vec![1.0, -1.0, 0.5, 0.5, -1.5, 0.5];
        for x in [[1.0, 2.0, 3.0], [0.1, 0.7, 0.2]] {
            let t = forward(&p, &x).unwrap();
            assert_eq!(t.w, vec![0.7, 0.7]);
            assert!((t.s - 0.7 * (t.z[0] + t.z[1])).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_beta_column_gives_bias() {
        let mut p = random_params(4, 2, Head::SelfExplain, 1);
        for d in 0..4 {
            p.beta[d * 2 + 1] = 0.0;
        }
        p.beta0[1] = -0.3;
        for x in [[1.0, 2.0, 3.0, 4.0], [9.0, 0.1, 0.1, 5.0]] {
            assert_eq!(forward(&p, &x).unwrap().z[1], -0.3);
        }
    }

    #[test]
    fn forward_rejects_nonpositive() {
        let p = random_params(3, 1, Head::SelfExplain, 0);
        assert!(matches!(forward(&p, &[1.0, 0.0, 1.0]), Err(Error::InvalidInput(_))));
        assert!(forward(&p, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn decomposition_identity() {
        let p = random_params(5, 3, Head::SelfExplain, 2);
        let t = forward(&p, &[0.1, 0.2, 0.3, 0.15, 0.25]).unwrap();
        assert_eq!(t.s, dot(&t.w, &t.z));
        assert_eq!(t.yhat, logistic(t.s));
    }

    #[test]
    fn linear_single_bottleneck_is_log_linear() {
        let mut p = random_params(4, 1, Head::Linear, 3);
        p.linear_v = vec![1.0];
        p.linear_v0 = 0.0;
        let x: [f64; 4] = [0.4, 0.1, 0.3, 0.2];
        let direct =
            p.beta0[0] + x.iter().enumerate().map(|(d, v)| p.beta[d] * v.ln()).sum::<f64>();
        let expect = 1.0 / (1.0 + (-direct).exp());
        assert!((forward(&p, &x).unwrap().yhat - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_sum_beta_is_scale_invariant() {
        let mut p = random_params(4, 2, Head::SelfExplain, 4);
        for b in 0..2 {
            let r = p.constraint_residuals()[b] / 4.0;
            for d in 0..4 {
                p.beta[d * 2 + b] -= r;
            }
        }
        let x = [0.3, 1.2, 4.0, 0.05];
        let scaled: Vec<f64> = x.iter().map(|v| v * 37.5).collect();
        let a = forward(&p, &x).unwrap();
        let c = forward(&p, &scaled).unwrap();
        assert!((a.yhat - c.yhat).abs() < 1e-9);
    }

    #[test]
    fn loss_zero_beta_is_plain_sse() {
        let mut p = DeepCodaParams::zeros(2, 2, HIDDEN, Head::Linear);
        p.linear_v0 = 0.4;
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let y = LabelVector::new(vec![1, 0, 1]).unwrap();
        let yhat = logistic(0.4);
        let expect = 2.0 * (yhat - 1.0).powi(2) + yhat.powi(2);
        let got = loss(&p, &x, &y, 1.0, 0.5).unwrap();
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn constraint_gradient_closed_form() {
        let p = random_params(4, 2, Head::SelfExplain, 5);
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 1.0, 1.0, 3.0]]).unwrap();
        let y = LabelVector::new(vec![1, 0]).unwrap();
        let with = gradients(&p, &x, &y, 2.5, 0.0).unwrap();
        let without = gradients(&p, &x, &y, 0.0, 0.0).unwrap();
        let res = p.constraint_residuals();
        for d in 0..4 {
            for (b, r) in res.iter().enumerate() {
                let k = d * 2 + b;
                let diff = with.beta[k] - without.beta[k];
                assert!((diff - 2.0 * 2.5 * r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bias_gradient_vanishes_at_perfect_fit() {
        // Saturated predictions: huge bias makes yhat == y to machine precision.
        let mut p = DeepCodaParams::zeros(2, 1, HIDDEN, Head::Linear);
        p.linear_v = vec![1.0];
        p.beta0 = vec![800.0];
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let y = LabelVector::new(vec![1, 1]).unwrap();
        let g = gradients(&p, &x, &y, 0.0, 0.0).unwrap();
        assert_eq!(g.beta0, vec![0.0]);
        assert_eq!(loss(&p, &x, &y, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn predict_proba_rows() {
        let p = random_params(3, 2, Head::SelfExplain, 6);
        let rows = vec![vec![0.2, 0.3, 0.5], vec![1.0, 4.0, 2.0], vec![0.2, 0.3, 0.5]];
        let x = Matrix::from_rows(&rows).unwrap();
        let probs = predict_proba(&p, &x).unwrap();
        assert_eq!(probs[0], forward(&p, &rows[0]).unwrap().yhat);
        assert_eq!(probs[0], probs[2]);
        let perm = x.select_rows(&[2, 0, 1]);
        let pp = predict_proba(&p, &perm).unwrap();
        assert_eq!(pp, vec![probs[2], probs[0], probs[1]]);
    }
}
