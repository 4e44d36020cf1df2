use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::integrate::Segment;
use super::loss::{FbLoss, FbProblem, LossWeights, SegmentAnchors};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// How the gradient step size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRule {
    /// Constant learning rate.
    Fixed { learning_rate: f64 },
    /// `1 / (safety * L)` with `L` the largest Hessian eigenvalue, estimated
    /// per segment by power iteration.
    Lipschitz { safety: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Lipschitz { safety: 1.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub steps: usize,
    pub weights: LossWeights,
    pub step_rule: StepRule,
    /// Nesterov momentum tuned from the regularization curvature, restarted
    /// whenever the step stops being a descent direction.
    pub accelerate: bool,
    /// Standard deviation of the Gaussian initialization.
    pub init_std: f64,
    pub power_iterations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            weights: LossWeights::default(),
            step_rule: StepRule::default(),
            accelerate: true,
            init_std: 0.01,
            power_iterations: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("fit steps must be positive"));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(Error::config("init_std must be finite and non-negative"));
        }
        match self.step_rule {
            StepRule::Fixed { learning_rate } if !(learning_rate.is_finite() && learning_rate > 0.0) => {
                Err(Error::config("learning_rate must be positive"))
            }
            StepRule::Lipschitz { safety } if !(safety.is_finite() && safety >= 1.0) => {
                Err(Error::config("Lipschitz safety factor must be >= 1"))
            }
            StepRule::Lipschitz { .. } if self.power_iterations == 0 => {
                Err(Error::config("power_iterations must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFit {
    /// Best corrections found, `N x D`.
    pub corrections: Array2<f64>,
    /// Corrected forward and backward trajectories at the best corrections,
    /// `(N+1) x D` including both anchors.
    pub forward_positions: Array2<f64>,
    pub forward_velocities: Array2<f64>,
    pub backward_positions: Array2<f64>,
    pub backward_velocities: Array2<f64>,
    pub initial_loss: FbLoss,
    pub final_loss: FbLoss,
    /// Step at which the best iterate was evaluated (0 is the initialization).
    pub best_step: usize,
    /// Best total loss seen after each step, length `steps + 1`.
    pub best_trace: Vec<f64>,
    pub step_size: f64,
}

impl SegmentFit {
    /// `(forward + backward) / 2`, `(N+1) x D`.
    pub fn pseudo_labels(&self) -> Array2<f64> {
        (&self.forward_positions + &self.backward_positions) * 0.5
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest eigenvalue of the (constant) loss Hessian via power iteration on
/// `H v = g(v) - g(0)`.
fn estimate_lipschitz(p: &mut FbProblem, iterations: usize) -> f64 {
    let len = p.len();
    let zero = vec![0.0; len];
    let mut g0 = vec![0.0; len];
    p.eval(&zero, Some(&mut g0));
    let mut v: Vec<f64> = (0..len).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7).sin()).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut hv = vec![0.0; len];
    let mut lambda = 0.0;
    for _ in 0..iterations {
        p.eval(&v, Some(&mut hv));
        hv.iter_mut().zip(&g0).for_each(|(h, g)| *h -= g);
        lambda = hv.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        let nh = norm(&hv);
        if !(nh > 0.0) {
            break;
        }
        v.iter_mut().zip(&hv).for_each(|(x, h)| *x = h / nh);
    }
    lambda
}

/// Minimizes the forward/backward loss over the acceleration corrections of
/// one segment.
pub fn fit_segment(
    segment: &Segment,
    cfg: &FitConfig,
    anchors: Option<&SegmentAnchors>,
    rng: &mut Rng,
) -> Result<SegmentFit> {
    cfg.validate()?;
    let mut p = FbProblem::new(segment, cfg.weights, anchors)?;
    let len = p.len();
    let (n, d) = (segment.steps(), segment.dims());

    let mut x: Vec<f64> = if cfg.init_std > 0.0 {
        let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::config(e.to_string()))?;
        (0..len).map(|_| normal.sample(rng)).collect()
    } else {
        vec![0.0; len]
    };

    let (eta, mu) = match cfg.step_rule {
        StepRule::Fixed { learning_rate } => (learning_rate, 0.0),
        StepRule::Lipschitz { safety } => {
            let l = estimate_lipschitz(&mut p, cfg.power_iterations);
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Numerical(format!("Hessian bound estimate {l} is not usable")));
            }
            (1.0 / (safety * l), 2.0 * cfg.weights.regularization)
        }
    };
    let beta = if cfg.accelerate {
        if mu > 0.0 {
            let q = (mu * eta).min(1.0).sqrt();
            (1.0 - q) / (1.0 + q)
        } else {
            0.9
        }
    } else {
        0.0
    };

    let mut y = x.clone();
    let mut grad = vec![0.0; len];
    let mut next = vec![0.0; len];
    let mut best = x.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_step = 0;
    let mut initial_loss = FbLoss::default();
    let mut best_trace = Vec::with_capacity(cfg.steps + 1);

    for step in 0..=cfg.steps {
        let need_grad = step < cfg.steps;
        let loss = p.eval(&y, need_grad.then_some(&mut grad[..]));
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!(
                "fit diverged at step {step}: loss {}",
                loss.total
            )));
        }
        if step == 0 {
            initial_loss = loss;
        }
        if loss.total < best_loss {
            best_loss = loss.total;
            best.copy_from_slice(&y);
            best_step = step;
        }
        best_trace.push(best_loss);
        if !need_grad {
            break;
        }
        for i in 0..len {
            next[i] = y[i] - eta * grad[i];
        }
        // gradient restart: drop momentum when it points uphill
        let uphill: f64 = (0..len).map(|i| grad[i] * (next[i] - x[i])).sum();
        let b = if uphill > 0.0 { 0.0 } else { beta };
        for i in 0..len {
            y[i] = next[i] + b * (next[i] - x[i]);
        }
        std::mem::swap(&mut x, &mut next);
    }

    let final_loss = p.eval(&best, None);
    let shape = (n + 1, d);
    Ok(SegmentFit {
        corrections: Array2::from_shape_vec((n, d), best).unwrap(),
        forward_positions: Array2::from_shape_vec(shape, p.xf.clone()).unwrap(),
        forward_velocities: Array2::from_shape_vec(shape, p.vf.clone()).unwrap(),
        backward_positions: Array2::from_shape_vec(shape, p.xb.clone()).unwrap(),
        backward_velocities: Array2::from_shape_vec(shape, p.vb.clone()).unwrap(),
        initial_loss,
        final_loss,
        best_step,
        best_trace,
        step_size: eta,
    })
}
