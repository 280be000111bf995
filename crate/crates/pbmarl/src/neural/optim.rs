//! Parameter updates: plain gradient descent and Adam.

use std::str::FromStr;

use ndarray::Zip;

use super::dense::{Dense, DenseGrad};
use super::policy::{PolicyGradients, QPolicy};
use super::NeuralError;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer '{other}', expected sgd or adam")),
        }
    }
}

/// Optimizer with per-parameter state where the method needs it.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    adam: Option<AdamState>,
}

#[derive(Debug, Clone)]
struct AdamState {
    first: PolicyGradients,
    second: PolicyGradients,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, policy: &QPolicy) -> Self {
        let adam = matches!(kind, OptimizerKind::Adam).then(|| AdamState {
            first: PolicyGradients::zeros_like(policy),
            second: PolicyGradients::zeros_like(policy),
            step: 0,
        });
        Optimizer { kind, adam }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update. SGD is exactly `w -= lr * g`; Adam keeps
    /// bias-corrected first and second moments.
    pub fn step(
        &mut self,
        policy: &mut QPolicy,
        grads: &PolicyGradients,
        learning_rate: f64,
    ) -> Result<(), NeuralError> {
        if !grads.matches(policy) {
            return Err(NeuralError::ShapeMismatch);
        }
        match self.kind {
            OptimizerKind::Sgd => {
                visit(policy, grads, |layer, grad| {
                    layer.weights.zip_mut_with(&grad.weights, |w, &g| {
                        *w -= learning_rate * g;
                    });
                    layer.biases.zip_mut_with(&grad.biases, |b, &g| {
                        *b -= learning_rate * g;
                    });
                });
            }
            OptimizerKind::Adam => {
                let adam = self.adam.as_mut().expect("adam state initialised");
                adam.step += 1;
                let bias1 = 1.0 - ADAM_BETA1.powi(adam.step as i32);
                let bias2 = 1.0 - ADAM_BETA2.powi(adam.step as i32);
                visit_adam(policy, grads, &mut adam.first, &mut adam.second, |layer,
                        grad,
                        first,
                        second| {
                    Zip::from(&mut layer.weights)
                        .and(&grad.weights)
                        .and(&mut first.weights)
                        .and(&mut second.weights)
                        .for_each(|w, &g, m, v| {
                            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                            let m_hat = *m / bias1;
                            let v_hat = *v / bias2;
                            *w -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                        });
                    Zip::from(&mut layer.biases)
                        .and(&grad.biases)
                        .and(&mut first.biases)
                        .and(&mut second.biases)
                        .for_each(|b, &g, m, v| {
                            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                            let m_hat = *m / bias1;
                            let v_hat = *v / bias2;
                            *b -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                        });
                });
            }
        }
        Ok(())
    }
}

fn visit(
    policy: &mut QPolicy,
    grads: &PolicyGradients,
    mut f: impl FnMut(&mut Dense, &DenseGrad),
) {
    for (layer, grad) in policy.trunk_mut().iter_mut().zip(&grads.trunk) {
        f(layer, grad);
    }
    for (head, head_grads) in policy.heads_mut().iter_mut().zip(&grads.heads) {
        for (layer, grad) in head.iter_mut().zip(head_grads) {
            f(layer, grad);
        }
    }
}

fn visit_adam(
    policy: &mut QPolicy,
    grads: &PolicyGradients,
    first: &mut PolicyGradients,
    second: &mut PolicyGradients,
    mut f: impl FnMut(&mut Dense, &DenseGrad, &mut DenseGrad, &mut DenseGrad),
) {
    for (((layer, grad), m), v) in policy
        .trunk_mut()
        .iter_mut()
        .zip(&grads.trunk)
        .zip(first.trunk.iter_mut())
        .zip(second.trunk.iter_mut())
    {
        f(layer, grad, m, v);
    }
    for (((head, head_grads), head_m), head_v) in policy
        .heads_mut()
        .iter_mut()
        .zip(&grads.heads)
        .zip(first.heads.iter_mut())
        .zip(second.heads.iter_mut())
    {
        for (((layer, grad), m), v) in head
            .iter_mut()
            .zip(head_grads)
            .zip(head_m.iter_mut())
            .zip(head_v.iter_mut())
        {
            f(layer, grad, m, v);
        }
    }
}
