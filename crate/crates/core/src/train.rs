//! Full-batch Adam training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::coda::LabelVector;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{self, DeepCodaParams, Head, HIDDEN};

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_bottlenecks: usize,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub head: Head,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_bottlenecks: 5,
            lambda_c: 1.0,
            lambda_s: 0.01,
            learning_rate: 0.01,
            epochs: 2000,
            seed: 0,
            head: Head::SelfExplain,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
        ];
        if self.n_bottlenecks == 0 {
            return Err(Error::invalid("n_bottlenecks must be at least 1"));
        }
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda_c", self.lambda_c), ("lambda_s", self.lambda_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before each update, one entry per epoch.
    pub loss_history: Vec<f64>,
    /// `sum_d beta_db` of the final parameters.
    pub final_constraint_residuals: Vec<f64>,
    pub params: DeepCodaParams,
}

/// Uniform(-0.1, 0.1) weights and zero biases from a ChaCha20 stream.
pub fn init_params(
    n_features: usize,
    n_bottlenecks: usize,
    hidden: usize,
    head: Head,
    seed: u64,
) -> Result<DeepCodaParams> {
    if n_features == 0 || n_bottlenecks == 0 || hidden == 0 {
        return Err(Error::invalid("model dimensions must be positive"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut p = DeepCodaParams::zeros(n_features, n_bottlenecks, hidden, head);
    for t in [&mut p.beta, &mut p.mlp_w1, &mut p.mlp_w2, &mut p.linear_v] {
        t.iter_mut()
            .for_each(|v| *v = rng.random_range(-INIT_SCALE..INIT_SCALE));
    }
    Ok(p)
}

struct Adam {
    m: DeepCodaParams,
    v: DeepCodaParams,
    m_v0: f64,
    v_v0: f64,
    step: i32,
}

impl Adam {
    fn new(p: &DeepCodaParams) -> Self {
        Self {
            m: p.zeros_like(),
            v: p.zeros_like(),
            m_v0: 0.0,
            v_v0: 0.0,
            step: 0,
        }
    }

    fn update(&mut self, p: &mut DeepCodaParams, g: &DeepCodaParams, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = cfg.learning_rate;
        let eps = cfg.adam_eps;
        let moment = |param: &mut f64, grad: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * grad;
            *v = b2 * *v + (1.0 - b2) * grad * grad;
            *param -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        let params = p.tensors_mut();
        let grads = g.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((pt, gt), mt), vt) in params.into_iter().zip(grads).zip(ms).zip(vs) {
            for k in 0..pt.len() {
                moment(&mut pt[k], gt[k], &mut mt[k], &mut vt[k]);
            }
        }
        moment(&mut p.linear_v0, g.linear_v0, &mut self.m_v0, &mut self.v_v0);
    }
}

/// Trains on strictly positive `x` for `cfg.epochs` full-batch Adam steps.
pub fn train(x: &Matrix, y: &LabelVector, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if x.rows() < 2 || y.len() != x.rows() {
        return Err(Error::invalid(format!(
            "need at least 2 samples with one label each, got {} rows and {} labels",
            x.rows(),
            y.len()
        )));
    }
    if !y.has_both_classes() {
        return Err(Error::invalid("training labels contain a single class"));
    }
    let logx = net::log_matrix(x)?;
    let mut p = init_params(x.cols(), cfg.n_bottlenecks, HIDDEN, cfg.head, cfg.seed)?;
    let mut adam = Adam::new(&p);
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (g, value) = match net::gradients_log(&p, &logx, y, cfg.lambda_c, cfg.lambda_s) {
            Ok(r) => r,
            Err(Error::Numeric(_)) => return Err(Error::TrainingDiverged { epoch }),
            Err(e) => return Err(e),
        };
        if !value.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        loss_history.push(value);
        adam.update(&mut p, &g, cfg);
    }
    if p.validate().is_err() {
        return Err(Error::TrainingDiverged { epoch: cfg.epochs });
    }
    Ok(TrainReport {
        loss_history,
        final_constraint_residuals: p.constraint_residuals(),
        params: p,
    })
}
