//! A single global network trained on the ODE residual.
//!
//! This is the undecomposed baseline, and it also trains the coarse network
//! in the first phase of the two-level scheme.

use crate::decomp::{sample_collocation, Interval};
use crate::diffnet::{eval_with_tape, loss_gradient_into, MlpParams, ParamGradient, PointLoss, Tape};
use crate::error::{FbpinnError, Result};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::problem::{apply_constraint, OdeProblem, ResidualInput};

/// One recorded point of a PINN training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinnRecord {
    pub step: usize,
    pub loss: f64,
    pub l2_error: f64,
}

/// A global network `u(x̂)` with `x̂ = 2(x − c)/w` mapping the domain onto `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct GlobalNet {
    pub params: MlpParams,
    pub center: f64,
    pub width: f64,
}

impl GlobalNet {
    pub fn new(params: MlpParams, domain: Interval) -> Self {
        GlobalNet {
            params,
            center: domain.center(),
            width: domain.width(),
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        2.0 * (x - self.center) / self.width
    }

    /// Value and `d/dx` (not `d/dx̂`) of the raw network.
    pub fn eval(&self, x: f64, tape: &mut Tape) -> ResidualInput {
        let e = eval_with_tape(&self.params, self.normalize(x), tape);
        ResidualInput::new(e.value, 2.0 / self.width * e.dvalue_dx)
    }
}

pub struct PinnTrainer {
    pub problem: OdeProblem,
    pub net: GlobalNet,
    pub points: Vec<f64>,
    optimizer: OptimizerState,
    inputs: Vec<f64>,
    tape: Tape,
    grad: ParamGradient,
    steps: usize,
}

impl PinnTrainer {
    pub fn new(
        problem: OdeProblem,
        params: MlpParams,
        n_points: usize,
        optimizer: OptimizerConfig,
    ) -> Result<Self> {
        if !problem.constraint.is_hard() {
            return Err(FbpinnError::InvalidTraining(
                "the global PINN path supports hard constraints only".into(),
            ));
        }
        let points = sample_collocation(problem.domain, n_points)?;
        let net = GlobalNet::new(params, problem.domain);
        let inputs = points.iter().map(|&x| net.normalize(x)).collect();
        let grad = net.params.zero_gradient();
        let optimizer = OptimizerState::new(optimizer, net.params.len());
        Ok(PinnTrainer {
            problem,
            net,
            points,
            optimizer,
            inputs,
            tape: Tape::new(),
            grad,
            steps: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Constrained solution value at `x`.
    pub fn solution(&mut self, x: f64) -> f64 {
        let raw = self.net.eval(x, &mut self.tape);
        apply_constraint(&self.problem.constraint, x, raw).u
    }

    /// `(1/N) Σ (𝒩[𝒞u](x_i) − f(x_i))²`.
    pub fn loss(&mut self) -> Result<f64> {
        let weight = 1.0 / self.points.len() as f64;
        let mut total = 0.0;
        for &x in &self.points {
            let raw = self.net.eval(x, &mut self.tape);
            let r = self
                .problem
                .residual(x, apply_constraint(&self.problem.constraint, x, raw));
            if !r.is_finite() {
                return Err(FbpinnError::numerical("non-finite residual", x));
            }
            total += weight * r * r;
        }
        Ok(total)
    }

    pub fn relative_l2_error(&mut self, grid: &[f64], target: impl Fn(f64) -> f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &x in grid {
            let exact = target(x);
            let d = self.solution(x) - exact;
            num += d * d;
            den += exact * exact;
        }
        (num / den).sqrt()
    }

    /// One optimizer step on the full residual loss; returns the pre-step loss.
    pub fn step(&mut self) -> Result<f64> {
        let weight = 1.0 / self.points.len() as f64;
        let scale = 2.0 / self.net.width;
        let (points, problem) = (&self.points, &self.problem);
        let loss = loss_gradient_into(
            &self.net.params,
            &self.inputs,
            |i, e| {
                let x = points[i];
                let (c, dc) = problem.constraint.multiplier(x);
                let u = e.value;
                let du = scale * e.dvalue_dx;
                let r = dc * u + c * du - problem.rhs(x);
                let g = 2.0 * weight * r;
                PointLoss {
                    loss: weight * r * r,
                    d_value: g * dc,
                    d_dvalue: g * c * scale,
                }
            },
            &mut self.tape,
            &mut self.grad,
        )?;
        self.optimizer.step(&mut self.net.params, &self.grad);
        self.steps += 1;
        Ok(loss)
    }

    /// Runs `steps` optimizer steps, recording the loss (and L2 error on `grid`)
    /// before every step whose index is a multiple of `record_interval`.
    pub fn train(
        &mut self,
        steps: usize,
        record_interval: usize,
        grid: &[f64],
    ) -> Result<Vec<PinnRecord>> {
        let target = self.problem.clone();
        let mut records = Vec::new();
        for _ in 0..steps {
            if self.steps % record_interval.max(1) == 0 {
                let loss = self.loss()?;
                let l2_error = self.relative_l2_error(grid, |x| target.exact(x));
                records.push(PinnRecord {
                    step: self.steps,
                    loss,
                    l2_error,
                });
            }
            self.step()?;
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::init_params;
    use crate::problem::make_single_frequency;

    #[test]
    fn zero_network_loss_is_mean_rhs_squared() {
        let dom = Interval::new(-1.0, 2.0).unwrap();
        let problem = make_single_frequency(2.0, dom).unwrap();
        let params =
            MlpParams::from_layers(vec![(vec![0.0; 2], vec![0.0; 2]), (vec![0.0; 2], vec![0.0])])
                .unwrap();
        let mut t = PinnTrainer::new(problem.clone(), params, 50, OptimizerConfig::adam(1e-3)).unwrap();
        let expect: f64 = t.points.iter().map(|&x| problem.rhs(x).powi(2)).sum::<f64>() / 50.0;
        assert!((t.loss().unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn low_frequency_problem_trains() {
        let dom = Interval::new(-2.0, 2.0).unwrap();
        let problem = make_single_frequency(1.0, dom).unwrap();
        let params = init_params(&[1, 8, 8, 1], 3).unwrap();
        let mut t = PinnTrainer::new(problem, params, 100, OptimizerConfig::adam(1e-2)).unwrap();
        let initial = t.loss().unwrap();
        let grid = sample_collocation(dom, 400).unwrap();
        let rec = t.train(2000, 500, &grid).unwrap();
        assert_eq!(rec.len(), 4);
        assert!(t.loss().unwrap() < 1e-2 * initial);
    }
}
