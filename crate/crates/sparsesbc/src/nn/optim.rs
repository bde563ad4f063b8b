//! Gradient-ascent optimizers over named parameter tensors.
//!
//! Updates maximize the reward objective, so both optimizers step along
//! `+gradient`. Adam keeps first/second moment state per tensor, exposed
//! for checkpointing so a resumed run continues bit-exactly.

use super::Tensor;
use serde::{Deserialize, Serialize};

/// Which update rule to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer {other:?}, expected sgd or adam")),
        }
    }
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        hyper: AdamParams,
        step: u64,
        first: Vec<Tensor>,
        second: Vec<Tensor>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                hyper: AdamParams::default(),
                step: 0,
                first: Vec::new(),
                second: Vec::new(),
            },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Sgd { .. } => OptimizerKind::Sgd,
            Optimizer::Adam { .. } => OptimizerKind::Adam,
        }
    }

    /// One ascent step: params move along `+grads`.
    pub fn ascend(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) {
        assert_eq!(params.len(), grads.len());
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv += *lr * gv;
                    }
                }
            }
            Optimizer::Adam {
                lr,
                hyper,
                step,
                first,
                second,
            } => {
                if first.is_empty() {
                    *first = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
                    *second = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
                }
                assert_eq!(first.len(), grads.len());
                *step += 1;
                let t = *step as i32;
                let bias1 = 1.0 - hyper.beta1.powi(t);
                let bias2 = 1.0 - hyper.beta2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(first.iter_mut().zip(second.iter_mut()))
                {
                    for ((pv, gv), (mv, vv)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut()))
                    {
                        *mv = hyper.beta1 * *mv + (1.0 - hyper.beta1) * gv;
                        *vv = hyper.beta2 * *vv + (1.0 - hyper.beta2) * gv * gv;
                        let m_hat = *mv / bias1;
                        let v_hat = *vv / bias2;
                        *pv += *lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
                    }
                }
            }
        }
    }

    /// Adam moment tensors and step counter, for checkpoint persistence.
    pub fn state(&self) -> Option<(u64, &[Tensor], &[Tensor])> {
        match self {
            Optimizer::Sgd { .. } => None,
            Optimizer::Adam {
                step,
                first,
                second,
                ..
            } => Some((*step, first, second)),
        }
    }

    pub fn restore_state(&mut self, step: u64, first: Vec<Tensor>, second: Vec<Tensor>) {
        if let Optimizer::Adam {
            step: s,
            first: f,
            second: v,
            ..
        } = self
        {
            *s = step;
            *f = first;
            *v = second;
        }
    }
}
