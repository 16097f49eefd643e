use super::mlp::{MlpGrads, MlpParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?} (expected adam or sgd)"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

/// Step-decayed learning rate: `initial · decay^⌊epoch / every⌋`.
pub fn learning_rate(initial: f64, decay: f64, every: usize, epoch: usize) -> f64 {
    let steps = if every == 0 { 0 } else { epoch / every };
    initial * decay.powi(steps as i32)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &mut MlpParams) -> Self {
        let sizes: Vec<usize> = params.slices_mut().iter().map(|s| s.len()).collect();
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Optimizer {
            kind,
            first: zeros(),
            second: zeros(),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads, lr: f64) {
        self.steps += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.steps);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.steps);
        for (s, (p, g)) in params.slices_mut().into_iter().zip(grads.slices()).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in p.iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first[s], &mut self.second[s]);
                    for i in 0..p.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_hundred_epochs() {
        let lr = |e| learning_rate(1e-3, 0.5, 100, e);
        assert_eq!(lr(0), 1e-3);
        assert_eq!(lr(99), 1e-3);
        assert_eq!(lr(100), 5e-4);
        assert_eq!(lr(250), 2.5e-4);
        assert_eq!(lr(400), 6.25e-5);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = MlpParams::zeros(2, 3);
        let mut g = MlpParams::zeros(2, 3);
        g.b2[0] = 0.3;
        g.b2[1] = -7.0;
        let grads = MlpGrads {
            w1: g.w1,
            b1: g.b1,
            bn_scale: g.bn_scale.map(|_| 0.0),
            bn_shift: g.bn_shift,
            w2: g.w2,
            b2: g.b2,
        };
        let mut opt = Optimizer::new(OptimizerKind::Adam, &mut p);
        opt.step(&mut p, &grads, 0.01);
        assert!((p.b2[0] + 0.01).abs() < 1e-9);
        assert!((p.b2[1] - 0.01).abs() < 1e-9);
        assert_eq!(p.w1[(0, 0)], 0.0);
    }

    #[test]
    fn sgd_is_plain_gradient_step() {
        let mut p = MlpParams::zeros(1, 1);
        let mut grads = MlpGrads {
            w1: p.w1.clone(),
            b1: p.b1.clone(),
            bn_scale: p.b1.clone(),
            bn_shift: p.b1.clone(),
            w2: p.w2.clone(),
            b2: p.b2.clone(),
        };
        grads.b1[0] = 2.0;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &mut p);
        opt.step(&mut p, &grads, 0.25);
        assert_eq!(p.b1[0], -0.5);
    }
}
